//! Pole-assignment design at Nash_1 and its two realizations: a velocity
//! term for the mean dynamics and a reward/tax term for round-level play.
//!
//! Sign convention: the closed loop is `J + B·Kᵀ`. With this convention
//! single-input Ackermann placement reproduces the reference gain rows.

use nalgebra::{Complex, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{eigs, jacobian, JacobianMatrix, Matrix5, Replicator, VectorField};
use crate::error::{Error, Result};
use crate::game::{dot, PayoffMatrix, SimplexPoint, SocialState, StrategyPermutation, Vector, STRATEGIES};
use crate::scalar::{modulus, Real};

/// The channel through which the scalar control enters.
pub const CANONICAL_CHANNEL: Vector<f64> = [0.0, 0.0, 0.0, 1.0, 1.0];

/// Shift pattern applied to the open-loop spectrum: only the leading
/// (complex) pair moves.
pub const SHIFT_PATTERN: [f64; STRATEGIES] = [1.0, 1.0, 0.0, 0.0, 0.0];

/// Default payoff-mode gain scale, in payoff points per unit of `u`.
pub const DEFAULT_GAIN_SCALE: f64 = 6.0;

/// Published gain rows `(b, K)` for the canonical channel, four decimals.
pub const REFERENCE_GAINS: [(f64, Vector<f64>); 5] = [
    (-0.8, [0.5247, 0.9485, -1.4732, -1.8335, 0.2335]),
    (-0.4, [0.3834, 0.2623, -0.6458, -0.8476, 0.0476]),
    (0.0, [0.0, 0.0, 0.0, 0.0, 0.0]),
    (0.4, [-0.6256, 0.1614, 0.4641, 0.7092, 0.0908]),
    (0.8, [-1.4933, 0.7467, 0.7467, 1.2800, 0.3200]),
];

/// Value of `b` at which the shifted pair crosses the imaginary axis.
pub const STABILITY_MARGIN: f64 = 1.0 / 3.0;

/// Finite-difference step appropriate for the scalar type.
pub fn default_step<T: Real>() -> T {
    if T::default_epsilon() < T::lit(1e-10) {
        T::lit(crate::dynamics::DEFAULT_STEP)
    } else {
        T::lit(1e-3)
    }
}

/// Closed-loop sign convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignConvention {
    #[serde(rename = "J + B K^T")]
    Plus,
    #[serde(rename = "J - B K^T")]
    Minus,
}

impl SignConvention {
    pub fn apply<T: Real>(self, j: &Matrix5<T>, channel: &Vector<T>, gain: &Vector<T>) -> Matrix5<T> {
        let outer = SVector::from(*channel) * SVector::from(*gain).transpose();
        match self {
            SignConvention::Plus => j + outer,
            SignConvention::Minus => j - outer,
        }
    }

    /// Picks the convention under which `gain` realizes `target`, if either does.
    pub fn resolve<T: Real>(
        j: &Matrix5<T>,
        channel: &Vector<T>,
        gain: &Vector<T>,
        target: &[Complex<T>],
        tol: T,
    ) -> Result<Option<SignConvention>> {
        let mut best: Option<(T, SignConvention)> = None;
        for conv in [SignConvention::Plus, SignConvention::Minus] {
            let spec = eigs(&conv.apply(j, channel, gain))?;
            let d = spectrum_distance(&spec.values(), target);
            if d <= tol && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, conv));
            }
        }
        Ok(best.map(|(_, c)| c))
    }
}

/// `λc = λo + b·(1, 1, 0, 0, 0)`; `lambda_open` must be in canonical order.
pub fn target_spectrum<T: Real>(lambda_open: &[Complex<T>], b: T) -> Vec<Complex<T>> {
    lambda_open
        .iter()
        .zip(SHIFT_PATTERN)
        .map(|(l, s)| Complex::new(l.re + b * T::lit(s), l.im))
        .collect()
}

/// Largest distance between paired eigenvalues after greedy nearest matching.
pub fn spectrum_distance<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> T {
    if a.len() != b.len() {
        return T::max_value().unwrap_or(T::one());
    }
    let mut used = vec![false; b.len()];
    let mut worst = T::zero();
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, modulus(&(x - y))))
            .fold((usize::MAX, T::max_value().unwrap_or(T::one())), |acc, cur| {
                if cur.1 < acc.1 {
                    cur
                } else {
                    acc
                }
            });
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

/// Numerical rank of the controllability matrix `[B, JB, …, J⁴B]`.
pub fn controllability_rank<T: Real>(j: &Matrix5<T>, channel: &Vector<T>) -> usize {
    let c = controllability_matrix(j, channel);
    let sv = c.svd(false, false).singular_values;
    let max = sv.max();
    let tol = max * T::default_epsilon().sqrt() * T::lit(1e-2);
    sv.iter().filter(|s| **s > tol).count()
}

fn controllability_matrix<T: Real>(j: &Matrix5<T>, channel: &Vector<T>) -> Matrix5<T> {
    let mut c = Matrix5::zeros();
    let mut col = SVector::from(*channel);
    for k in 0..STRATEGIES {
        c.set_column(k, &col);
        col = j * col;
    }
    c
}

fn check_conjugate_closed<T: Real>(targets: &[Complex<T>]) -> Result<()> {
    let mut used = vec![false; targets.len()];
    for i in 0..targets.len() {
        let t = targets[i];
        let tol = T::lit(1e-9) * (T::one() + modulus(&t));
        if t.im.abs() <= tol || used[i] {
            continue;
        }
        let partner = (0..targets.len())
            .find(|&k| k != i && !used[k] && modulus(&(targets[k] - t.conj())) <= tol);
        match partner {
            Some(k) => {
                used[i] = true;
                used[k] = true;
            }
            None => return Err(Error::ConjugationViolation),
        }
    }
    Ok(())
}

/// Real coefficients `c_0..c_4` of the monic polynomial with the given roots.
fn characteristic_coefficients<T: Real>(roots: &[Complex<T>]) -> Vec<T> {
    let mut coeffs = vec![Complex::new(T::one(), T::zero())];
    for r in roots {
        let mut next = vec![Complex::new(T::zero(), T::zero()); coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k + 1] += *c;
            next[k] -= *r * c;
        }
        coeffs = next;
    }
    coeffs.iter().map(|c| c.re).collect()
}

/// Single-input placement: the returned `K` makes `J + B·Kᵀ` have spectrum
/// `targets`.
pub fn place_poles<T: Real>(
    j: &Matrix5<T>,
    channel: &Vector<T>,
    targets: &[Complex<T>],
) -> Result<Vector<T>> {
    if targets.len() != STRATEGIES {
        return Err(Error::InvalidConfig(format!(
            "expected {STRATEGIES} target poles, got {}",
            targets.len()
        )));
    }
    check_conjugate_closed(targets)?;
    let rank = controllability_rank(j, channel);
    if rank < STRATEGIES {
        return Err(Error::Uncontrollable(rank));
    }
    let coeffs = characteristic_coefficients(targets);
    // Horner: p(J) = J⁵ + c₄J⁴ + … + c₀I
    let identity = Matrix5::<T>::identity();
    let mut poly = identity;
    for k in (0..STRATEGIES).rev() {
        poly = poly * j + identity * coeffs[k];
    }
    let c = controllability_matrix(j, channel);
    let mut last = SVector::<T, STRATEGIES>::zeros();
    last[STRATEGIES - 1] = T::one();
    let row = c
        .transpose()
        .lu()
        .solve(&last)
        .ok_or(Error::Uncontrollable(rank))?;
    // Ackermann gives J − B·K_a; the stored gain is −K_a.
    let ackermann = poly.transpose() * row;
    Ok(std::array::from_fn(|i| -ackermann[i]))
}

/// `J + B·Kᵀ`.
pub fn closed_loop_jacobian<T: Real>(
    j: &JacobianMatrix<T>,
    channel: &Vector<T>,
    gain: &Vector<T>,
) -> JacobianMatrix<T> {
    j.with_entries(SignConvention::Plus.apply(&j.entries, channel, gain))
}

/// A complete treatment-level design.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlDesign<T> {
    pub b: T,
    pub channel: Vector<T>,
    pub gain: Vector<T>,
    pub lambda_open: Vec<Complex<T>>,
    pub lambda_target: Vec<Complex<T>>,
    pub anchor: SimplexPoint<T>,
}

impl<T: Real> ControlDesign<T> {
    /// Runs Jacobian → spectrum → target → placement at Nash_1 with the
    /// canonical channel. `b = 0` yields exactly zero gains.
    pub fn design(matrix: &PayoffMatrix<T>, b: T) -> Result<Self> {
        let anchor = SimplexPoint::nash_1();
        let j = open_loop_jacobian(matrix, &anchor)?;
        let lambda_open = j.eigs()?.values();
        let lambda_target = target_spectrum(&lambda_open, b);
        let channel = CANONICAL_CHANNEL.map(T::lit);
        let gain = if b == T::zero() {
            [T::zero(); STRATEGIES]
        } else {
            place_poles(&j.entries, &channel, &lambda_target)?
        };
        Ok(ControlDesign {
            b,
            channel,
            gain,
            lambda_open,
            lambda_target,
            anchor,
        })
    }

    /// Design with externally supplied gains (e.g. the reference rows).
    pub fn with_gain(matrix: &PayoffMatrix<T>, b: T, gain: Vector<T>) -> Result<Self> {
        let mut d = Self::design(matrix, T::zero())?;
        d.lambda_target = target_spectrum(&d.lambda_open, b);
        d.b = b;
        d.gain = gain;
        Ok(d)
    }

    /// Relabels channel, gain and anchor; spectra are permutation invariant.
    pub fn permuted(&self, perm: &StrategyPermutation) -> Self {
        ControlDesign {
            b: self.b,
            channel: perm.permute(&self.channel),
            gain: perm.permute(&self.gain),
            lambda_open: self.lambda_open.clone(),
            lambda_target: self.lambda_target.clone(),
            anchor: self.anchor.permuted(perm),
        }
    }

    /// Scalar feedback `u = K·(x − x*)`.
    pub fn input(&self, x: &Vector<T>) -> T {
        let dev: Vector<T> = std::array::from_fn(|i| x[i] - self.anchor.shares()[i]);
        dot(&self.gain, &dev)
    }
}

pub fn open_loop_jacobian<T: Real>(
    matrix: &PayoffMatrix<T>,
    at: &SimplexPoint<T>,
) -> Result<JacobianMatrix<T>> {
    jacobian(&Replicator::new(matrix.clone()), at.shares(), default_step())
}

/// How the per-strategy control term is split among the players of a
/// strategy in payoff mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    /// Every player on strategy `i` receives `γ·B_i·u`.
    #[default]
    Flat,
    /// Every player on strategy `i` receives `γ·B_i·u / x_i`, so the
    /// strategy as a whole receives a term independent of its share.
    PerCapita,
}

/// How the controller acts on the system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlMode {
    /// Additive velocity `B·u` on the mean dynamics.
    Velocity,
    /// Round-level reward (positive part) and tax (negative part).
    Payoff { gain_scale: f64, sharing: Sharing },
}

impl ControlMode {
    pub fn payoff(gain_scale: f64, sharing: Sharing) -> Result<Self> {
        if !(gain_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gain scale must be positive, got {gain_scale}"
            )));
        }
        Ok(ControlMode::Payoff { gain_scale, sharing })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ControlMode::Velocity => Ok(()),
            ControlMode::Payoff { gain_scale, sharing } => Self::payoff(gain_scale, sharing).map(|_| ()),
        }
    }
}

/// Reward and tax paid to one player of a strategy.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlTerm<T> {
    pub reward: T,
    pub tax: T,
}

impl<T: Real> ControlTerm<T> {
    pub fn total(&self) -> T {
        self.reward + self.tax
    }
}

/// Per-strategy reward/tax for a round in `state`:
/// `c_i = γ·B_i·u` (split by [`Sharing`]), reward = max(0, c), tax = min(0, c).
pub fn control_payoffs<T: Real>(
    design: &ControlDesign<T>,
    mode: &ControlMode,
    state: &SocialState,
) -> Result<[ControlTerm<T>; STRATEGIES]> {
    let (gain_scale, sharing) = match *mode {
        ControlMode::Payoff { gain_scale, sharing } => (T::lit(gain_scale), sharing),
        ControlMode::Velocity => {
            return Err(Error::InvalidConfig(
                "control payoffs require payoff mode".into(),
            ))
        }
    };
    let x = *state.to_simplex::<T>().shares();
    let u = design.input(&x);
    Ok(std::array::from_fn(|i| {
        let mut c = gain_scale * design.channel[i] * u;
        if sharing == Sharing::PerCapita {
            c = if x[i] > T::zero() { c / x[i] } else { T::zero() };
        }
        ControlTerm {
            reward: c.max(T::zero()),
            tax: c.min(T::zero()),
        }
    }))
}

/// Velocity-mode closed loop `f(x) + B·(K·(x − x*))`.
#[derive(Clone, Debug)]
pub struct ControlledReplicator<T: Real> {
    open_loop: Replicator<T>,
    design: ControlDesign<T>,
}

impl<T: Real> ControlledReplicator<T> {
    pub fn new(matrix: PayoffMatrix<T>, design: ControlDesign<T>) -> Self {
        ControlledReplicator {
            open_loop: Replicator::new(matrix),
            design,
        }
    }

    pub fn design(&self) -> &ControlDesign<T> {
        &self.design
    }
}

impl<T: Real> VectorField<T> for ControlledReplicator<T> {
    fn velocity(&self, x: &Vector<T>) -> Vector<T> {
        let f = self.open_loop.velocity(x);
        let u = self.design.input(x);
        std::array::from_fn(|i| f[i] + self.design.channel[i] * u)
    }

    fn label(&self) -> String {
        format!("closed-loop({:?})", self.design.b)
    }
}

/// `controlled_velocity(A, x, design)`.
pub fn controlled_velocity<T: Real>(
    matrix: &PayoffMatrix<T>,
    x: &SimplexPoint<T>,
    design: &ControlDesign<T>,
) -> Vector<T> {
    ControlledReplicator::new(matrix.clone(), design.clone()).velocity(x.shares())
}

/// Largest real part of the designed closed-loop spectrum for `b`.
pub fn closed_loop_max_real<T: Real>(matrix: &PayoffMatrix<T>, b: T) -> Result<T> {
    let design = ControlDesign::design(matrix, b)?;
    let j = open_loop_jacobian(matrix, &design.anchor)?;
    Ok(closed_loop_jacobian(&j, &design.channel, &design.gain).eigs()?.max_real())
}

/// Bisects the sign change of [`closed_loop_max_real`] on `[lo, hi]`.
pub fn bisect_stability_boundary<T: Real>(matrix: &PayoffMatrix<T>, mut lo: T, mut hi: T, tol: T) -> Result<T> {
    let mut f_lo = closed_loop_max_real(matrix, lo)?;
    let f_hi = closed_loop_max_real(matrix, hi)?;
    if (f_lo < T::zero()) == (f_hi < T::zero()) {
        return Err(Error::InvalidConfig("no sign change in bracket".into()));
    }
    while hi - lo > tol {
        let mid = (lo + hi) * T::lit(0.5);
        let f_mid = closed_loop_max_real(matrix, mid)?;
        if (f_mid < T::zero()) == (f_lo < T::zero()) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) * T::lit(0.5))
}

/// Machine-readable summary of a design, as emitted by `design --b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub b: f64,
    #[serde(rename = "B")]
    pub channel: Vector<f64>,
    #[serde(rename = "K")]
    pub gain: Vector<f64>,
    pub lambda_open: Vec<[f64; 2]>,
    pub lambda_target: Vec<[f64; 2]>,
    pub lambda_achieved: Vec<[f64; 2]>,
    pub controllability_rank: usize,
    pub sign_convention: SignConvention,
    pub max_real_part: f64,
    /// `stable`, `marginal` (|max Re| < 1e-3) or `unstable`.
    pub stability: String,
}

impl DesignReport {
    pub fn build<T: Real>(matrix: &PayoffMatrix<T>, b: T) -> Result<Self> {
        let design = ControlDesign::design(matrix, b)?;
        let j = open_loop_jacobian(matrix, &design.anchor)?;
        let achieved = closed_loop_jacobian(&j, &design.channel, &design.gain).eigs()?;
        let max_real = achieved.max_real().to_f64_lossy();
        let pairs = |v: &[Complex<T>]| -> Vec<[f64; 2]> {
            v.iter().map(|c| [c.re.to_f64_lossy(), c.im.to_f64_lossy()]).collect()
        };
        let stability = if max_real.abs() < 1e-3 {
            "marginal"
        } else if max_real < 0.0 {
            "stable"
        } else {
            "unstable"
        };
        Ok(DesignReport {
            b: b.to_f64_lossy(),
            channel: design.channel.map(|v| v.to_f64_lossy()),
            gain: design.gain.map(|v| v.to_f64_lossy()),
            lambda_open: pairs(&design.lambda_open),
            lambda_target: pairs(&design.lambda_target),
            lambda_achieved: pairs(&achieved.values()),
            controllability_rank: controllability_rank(&j.entries, &design.channel),
            sign_convention: SignConvention::Plus,
            max_real_part: max_real,
            stability: stability.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a() -> PayoffMatrix<f64> {
        PayoffMatrix::canonical()
    }

    fn j_nash1() -> JacobianMatrix<f64> {
        open_loop_jacobian(&a(), &SimplexPoint::nash_1()).unwrap()
    }

    fn lambda_open() -> Vec<Complex<f64>> {
        let s = 3f64.sqrt() / 3.0;
        vec![
            Complex::new(-1.0 / 3.0, s),
            Complex::new(-1.0 / 3.0, -s),
            Complex::new(-2.0 / 3.0, 0.0),
            Complex::new(-1.0, 0.0),
            Complex::new(-2.0, 0.0),
        ]
    }

    fn channel() -> Vector<f64> {
        CANONICAL_CHANNEL
    }

    #[test]
    fn target_spectrum_examples() {
        assert_eq!(target_spectrum(&lambda_open(), 0.0), lambda_open());
        let t = target_spectrum(&lambda_open(), 0.8);
        assert!((t[0] - Complex::new(0.8 - 1.0 / 3.0, 3f64.sqrt() / 3.0)).norm() < 1e-15);
        assert!((t[0].re - 0.4667).abs() < 1e-4 && (t[0].im - 0.5774).abs() < 1e-4);
        assert_eq!(&t[2..], &lambda_open()[2..]);
        let m = target_spectrum(&lambda_open(), 1.0 / 3.0);
        assert!(m[0].re.abs() < 1e-15 && m[1].re.abs() < 1e-15);
    }

    #[test]
    fn placement_reproduces_reference_rows() {
        let j = j_nash1();
        for (b, row) in REFERENCE_GAINS {
            let k = place_poles(&j.entries, &channel(), &target_spectrum(&lambda_open(), b)).unwrap();
            for (got, want) in k.iter().zip(row) {
                assert!((got - want).abs() < 2e-3, "b={b}: {k:?} vs {row:?}");
            }
        }
    }

    #[test]
    fn placement_round_trip() {
        let j = j_nash1();
        for b in [-0.8, -0.4, 0.0, 0.4, 0.8] {
            let target = target_spectrum(&lambda_open(), b);
            let k = place_poles(&j.entries, &channel(), &target).unwrap();
            let cl = closed_loop_jacobian(&j, &channel(), &k).eigs().unwrap();
            assert!(spectrum_distance(&cl.values(), &target) < 1e-6);
        }
    }

    #[test]
    fn reference_rows_resolve_to_plus_convention() {
        let j = j_nash1();
        for (b, row) in REFERENCE_GAINS.iter().filter(|(b, _)| *b != 0.0) {
            let target = target_spectrum(&lambda_open(), *b);
            let conv = SignConvention::resolve(&j.entries, &channel(), row, &target, 2e-3).unwrap();
            assert_eq!(conv, Some(SignConvention::Plus), "b={b}");
        }
    }

    #[test]
    fn closed_loop_with_reference_gains_matches_targets() {
        let j = j_nash1();
        for b in [0.8, -0.4] {
            let row = REFERENCE_GAINS.iter().find(|r| r.0 == b).unwrap().1;
            let cl = closed_loop_jacobian(&j, &channel(), &row).eigs().unwrap();
            assert!(spectrum_distance(&cl.values(), &target_spectrum(&lambda_open(), b)) < 2e-3);
        }
        let same = closed_loop_jacobian(&j, &channel(), &[0.0; 5]);
        assert_eq!(same.entries, j.entries);
    }

    #[test]
    fn uncontrollable_channel_is_rejected() {
        let j = j_nash1();
        let err = place_poles(&j.entries, &[0.0; 5], &lambda_open()).unwrap_err();
        assert!(matches!(err, Error::Uncontrollable(0)));
        let diag = Matrix5::from_diagonal(&SVector::from([1.0, 1.0, 2.0, 3.0, 4.0]));
        let err = place_poles(&diag, &[1.0; 5], &lambda_open()).unwrap_err();
        assert!(matches!(err, Error::Uncontrollable(4)), "{err:?}");
    }

    #[test]
    fn non_conjugate_targets_are_rejected() {
        let mut t = lambda_open();
        t[1] = Complex::new(-1.0 / 3.0, 0.2);
        let err = place_poles(&j_nash1().entries, &channel(), &t).unwrap_err();
        assert!(matches!(err, Error::ConjugationViolation));
    }

    #[test]
    fn design_at_zero_has_zero_gain() {
        let d = ControlDesign::design(&a(), 0.0).unwrap();
        assert_eq!(d.gain, [0.0; 5]);
        assert!(spectrum_distance(&d.lambda_target, &lambda_open()) < 1e-5);
    }

    #[test]
    fn stability_changes_sign_at_margin() {
        for k in 0..20 {
            let b = -1.0 + 2.0 * k as f64 / 19.0;
            let m = closed_loop_max_real(&a(), b).unwrap();
            if b < STABILITY_MARGIN {
                assert!(m < 0.0, "b={b}: {m}");
            } else {
                assert!(m > 0.0, "b={b}: {m}");
            }
        }
    }

    fn reference_design(b: f64) -> ControlDesign<f64> {
        let row = REFERENCE_GAINS.iter().find(|r| r.0 == b).unwrap().1;
        ControlDesign::with_gain(&a(), b, row).unwrap()
    }

    #[test]
    fn control_payoffs_vanish_at_anchor() {
        let mode = ControlMode::payoff(4.0, Sharing::Flat).unwrap();
        // 5 players cannot sit exactly on Nash_1; use 3 players
        let state = SocialState::new([1, 1, 1, 0, 0]);
        for (b, _) in REFERENCE_GAINS {
            let terms = control_payoffs(&reference_design(b), &mode, &state).unwrap();
            assert!(terms.iter().all(|t| t.reward == 0.0 && t.tax.abs() < 1e-15));
        }
    }

    #[test]
    fn control_payoffs_at_uniform_under_strong_stabilization() {
        let mode = ControlMode::payoff(4.0, Sharing::Flat).unwrap();
        let d = reference_design(-0.8);
        let u = d.input(SimplexPoint::<f64>::uniform().shares());
        assert!((u + 0.32).abs() < 1e-12);
        let terms = control_payoffs(&d, &mode, &SocialState::new([1; 5])).unwrap();
        for t in &terms[..3] {
            assert_eq!(*t, ControlTerm { reward: 0.0, tax: 0.0 });
        }
        for t in &terms[3..] {
            assert_eq!(t.reward, 0.0);
            assert!((t.tax + 1.28).abs() < 1e-12);
        }
    }

    #[test]
    fn control_payoffs_on_nash_2_side() {
        let mode = ControlMode::payoff(4.0, Sharing::Flat).unwrap();
        let d = reference_design(0.8);
        // u = K·((0,0,0,.6,.4) − (1/3,1/3,1/3,0,0))
        let dev = [-1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 0.6, 0.4];
        let u: f64 = dev.iter().zip(d.gain).map(|(a, b)| a * b).sum();
        assert!((u - 0.896).abs() < 1e-4);
        let terms = control_payoffs(&d, &mode, &SocialState::new([0, 0, 0, 3, 2])).unwrap();
        assert!((terms[3].reward - 4.0 * u).abs() < 1e-12);
        assert_eq!(terms[3].tax, 0.0);
        assert_eq!(terms[0].total(), 0.0);
    }

    #[test]
    fn per_capita_sharing_divides_by_share() {
        let mode = ControlMode::payoff(4.0, Sharing::PerCapita).unwrap();
        let d = reference_design(-0.8);
        let terms = control_payoffs(&d, &mode, &SocialState::new([1; 5])).unwrap();
        assert!((terms[3].tax + 1.28 / 0.2).abs() < 1e-12);
        let none = control_payoffs(&d, &mode, &SocialState::new([2, 2, 1, 0, 0])).unwrap();
        assert_eq!(none[3].total(), 0.0);
    }

    #[test]
    fn control_payoffs_reject_velocity_mode() {
        let d = reference_design(0.4);
        assert!(control_payoffs(&d, &ControlMode::Velocity, &SocialState::new([1; 5])).is_err());
        assert!(ControlMode::payoff(0.0, Sharing::Flat).is_err());
    }

    #[test]
    fn controlled_velocity_examples() {
        let n1 = SimplexPoint::nash_1();
        for (b, _) in REFERENCE_GAINS {
            let v = controlled_velocity(&a(), &n1, &reference_design(b));
            assert!(v.iter().all(|c| c.abs() < 1e-15));
        }
        let u = SimplexPoint::uniform();
        let open = crate::dynamics::replicator_velocity(&a(), &u);
        assert_eq!(controlled_velocity(&a(), &u, &reference_design(0.0)), open);
        let v = controlled_velocity(&a(), &u, &reference_design(-0.8));
        let want = [open[0], open[1], open[2], open[3] - 0.32, open[4] - 0.32];
        for (g, w) in v.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn design_report_keys() {
        let r = DesignReport::build(&a(), -0.8).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["b", "B", "K", "lambda_open", "lambda_target", "lambda_achieved", "controllability_rank", "sign_convention"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["sign_convention"], "J + B K^T");
        assert_eq!(r.controllability_rank, 5);
        assert_eq!(r.stability, "stable");
        let m = DesignReport::build(&a(), 1.0 / 3.0).unwrap();
        assert_eq!(m.stability, "marginal");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn permutation_covariance(w in proptest::array::uniform5(0.01f64..1.0), k in 0usize..7, r in 0usize..5) {
                let s: f64 = w.iter().sum();
                let x = SimplexPoint::new(w.map(|v| v / s)).unwrap();
                let perm = StrategyPermutation::all()[k];
                let d = reference_design(REFERENCE_GAINS[r].0);
                let v = controlled_velocity(&a(), &x, &d);
                let vp = controlled_velocity(&a().permuted(&perm), &x.permuted(&perm), &d.permuted(&perm));
                let expect = perm.permute(&v);
                for i in 0..STRATEGIES {
                    prop_assert!((vp[i] - expect[i]).abs() < 1e-10);
                }
            }
        }
    }
}
