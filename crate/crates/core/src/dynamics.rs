//! Replicator vector field, finite-difference Jacobian, complex
//! eigendecomposition and fixed-step trajectory integration.
//!
//! Everything here works in the ambient five-dimensional space: Jacobian
//! perturbations leave the simplex and are not re-normalized, which is what
//! produces the five-eigenvalue spectrum at an interior rest point.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{Complex, DMatrix, SMatrix, Schur};

use crate::error::{Error, Result};
use crate::game::{dot, PayoffMatrix, SimplexPoint, Vector, STRATEGIES};
use crate::scalar::{modulus, Real, Scalar};

pub type Matrix5<T> = SMatrix<T, STRATEGIES, STRATEGIES>;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;
/// Default integrator time step.
pub const DEFAULT_DT: f64 = 0.01;
/// Integration aborts once any coordinate exceeds this magnitude.
pub const BLOW_UP_LIMIT: f64 = 10.0;

/// A deterministic velocity map on the ambient state space.
pub trait VectorField<T: Real> {
    fn velocity(&self, x: &Vector<T>) -> Vector<T>;

    fn label(&self) -> String;
}

/// `ẋ_i = x_i[(Ax)_i − xᵀAx]`.
pub fn replicator_velocity<T: Scalar>(matrix: &PayoffMatrix<T>, x: &SimplexPoint<T>) -> Vector<T> {
    replicator_raw(matrix, x.shares())
}

fn replicator_raw<T: Scalar>(matrix: &PayoffMatrix<T>, x: &Vector<T>) -> Vector<T> {
    let payoffs = matrix.apply(x);
    let mean = dot(x, &payoffs);
    std::array::from_fn(|i| x[i].clone() * (payoffs[i].clone() - mean.clone()))
}

/// The open-loop replicator field of a game.
#[derive(Clone, Debug)]
pub struct Replicator<T> {
    matrix: PayoffMatrix<T>,
}

impl<T: Real> Replicator<T> {
    pub fn new(matrix: PayoffMatrix<T>) -> Self {
        Replicator { matrix }
    }

    pub fn matrix(&self) -> &PayoffMatrix<T> {
        &self.matrix
    }
}

impl<T: Real> VectorField<T> for Replicator<T> {
    fn velocity(&self, x: &Vector<T>) -> Vector<T> {
        replicator_raw(&self.matrix, x)
    }

    fn label(&self) -> String {
        "open-loop".into()
    }
}

/// `ẋ = Mx`.
#[derive(Clone, Debug)]
pub struct LinearField<T: Real> {
    pub matrix: Matrix5<T>,
}

impl<T: Real> VectorField<T> for LinearField<T> {
    fn velocity(&self, x: &Vector<T>) -> Vector<T> {
        let v = self.matrix * nalgebra::SVector::from(*x);
        v.into()
    }

    fn label(&self) -> String {
        "linear".into()
    }
}

/// Wraps a field with the re-normalization flow `g = F − x·ΣF`, the
/// continuous counterpart of rescaling onto the simplex after every step.
#[derive(Clone, Debug)]
pub struct SimplexProjected<F>(pub F);

impl<T: Real, F: VectorField<T>> VectorField<T> for SimplexProjected<F> {
    fn velocity(&self, x: &Vector<T>) -> Vector<T> {
        let v = self.0.velocity(x);
        let total = v.iter().fold(T::zero(), |a, b| a + *b);
        std::array::from_fn(|i| v[i] - x[i] * total)
    }

    fn label(&self) -> String {
        format!("{} (projected)", self.0.label())
    }
}

/// A 5×5 Jacobian together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix<T: Real> {
    pub entries: Matrix5<T>,
    pub base_point: Vector<T>,
    pub step: T,
}

impl<T: Real> JacobianMatrix<T> {
    pub fn with_entries(&self, entries: Matrix5<T>) -> Self {
        JacobianMatrix {
            entries,
            base_point: self.base_point,
            step: self.step,
        }
    }

    pub fn eigs(&self) -> Result<Spectrum<T>> {
        eigs(&self.entries)
    }
}

/// Central differences, `J[i][j] = (f_i(x0 + h e_j) − f_i(x0 − h e_j)) / 2h`.
pub fn jacobian<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &Vector<T>,
    h: T,
) -> Result<JacobianMatrix<T>> {
    let hf = h.to_f64_lossy();
    if !(1e-8 * (1.0 - 1e-6)..=1e-3 * (1.0 + 1e-6)).contains(&hf) {
        return Err(Error::InvalidStep(hf));
    }
    let two_h = h + h;
    let mut entries = Matrix5::zeros();
    for j in 0..STRATEGIES {
        let mut plus = *x0;
        let mut minus = *x0;
        plus[j] += h;
        minus[j] -= h;
        let fp = field.velocity(&plus);
        let fm = field.velocity(&minus);
        for i in 0..STRATEGIES {
            entries[(i, j)] = (fp[i] - fm[i]) / two_h;
        }
    }
    Ok(JacobianMatrix {
        entries,
        base_point: *x0,
        step: h,
    })
}

/// One eigenvalue with its unit-norm eigenvector.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair<T> {
    pub value: Complex<T>,
    pub vector: [Complex<T>; STRATEGIES],
}

/// Eigenpairs in canonical order: descending real part, ties broken by
/// descending imaginary part.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    pairs: Vec<EigenPair<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn pairs(&self) -> &[EigenPair<T>] {
        &self.pairs
    }

    pub fn values(&self) -> Vec<Complex<T>> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    pub fn max_real(&self) -> T {
        self.pairs
            .iter()
            .map(|p| p.value.re)
            .fold(T::min_value().unwrap_or(T::zero()), |a, b| if b > a { b } else { a })
    }

    /// Eigenpair whose value is closest to `target`.
    pub fn nearest(&self, target: Complex<T>) -> &EigenPair<T> {
        self.pairs
            .iter()
            .min_by(|a, b| {
                let da = modulus(&(a.value - target));
                let db = modulus(&(b.value - target));
                da.partial_cmp(&db).unwrap_or(Ordering::Equal)
            })
            .expect("spectrum is never empty")
    }
}

fn order_tol<T: Real>() -> T {
    T::lit(1e-9).max(T::default_epsilon() * T::lit(1e3))
}

/// Sorts eigenvalues into the canonical order.
pub fn canonical_order<T: Real>(values: &mut [Complex<T>]) {
    values.sort_by(|a, b| compare_canonical(a, b));
}

fn compare_canonical<T: Real>(a: &Complex<T>, b: &Complex<T>) -> Ordering {
    if (a.re - b.re).abs() > order_tol::<T>() {
        b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal)
    } else {
        b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal)
    }
}

/// Eigenvalues of any real square matrix via the real Schur form.
pub fn eigenvalues<T: Real>(m: DMatrix<T>) -> Result<Vec<Complex<T>>> {
    let schur = Schur::try_new(m, T::default_epsilon(), 10_000).ok_or(Error::EigenFailure)?;
    let mut values: Vec<_> = schur.complex_eigenvalues().iter().cloned().collect();
    if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::EigenFailure);
    }
    canonical_order(&mut values);
    Ok(values)
}

/// Full complex eigendecomposition. Each eigenvector has unit norm and its
/// largest-magnitude component (first one on ties) real and positive.
pub fn eigs<T: Real>(m: &Matrix5<T>) -> Result<Spectrum<T>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let values = eigenvalues(DMatrix::from_iterator(5, 5, m.iter().cloned()))?;
    let pairs = values
        .into_iter()
        .map(|value| {
            inverse_iteration(m, value).map(|v| EigenPair {
                value,
                vector: normalize_phase(v),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Spectrum { pairs })
}

fn inverse_iteration<T: Real>(m: &Matrix5<T>, value: Complex<T>) -> Result<[Complex<T>; STRATEGIES]> {
    let scale = m.norm() + T::one();
    let eps = T::default_epsilon().sqrt() * scale;
    let shift = value + Complex::new(eps, eps * T::lit(0.5));
    let shifted: SMatrix<Complex<T>, STRATEGIES, STRATEGIES> =
        m.map(|v| Complex::new(v, T::zero())) - SMatrix::identity() * shift;
    let lu = shifted.lu();
    let mut v: SMatrix<Complex<T>, STRATEGIES, 1> = SMatrix::from_fn(|i, _| {
        Complex::new(T::one() + T::lit(0.1 * i as f64), T::lit(0.03 * i as f64))
    });
    for _ in 0..4 {
        v = lu.solve(&v).ok_or(Error::EigenFailure)?;
        let n = v.norm();
        if !n.is_finite() || n == T::zero() {
            return Err(Error::EigenFailure);
        }
        v.unscale_mut(n);
    }
    Ok(std::array::from_fn(|i| v[i]))
}

/// Rotates a vector so its largest-magnitude component is real-positive and
/// rescales it to unit norm.
pub fn normalize_phase<T: Real>(v: [Complex<T>; STRATEGIES]) -> [Complex<T>; STRATEGIES] {
    let norm = v.iter().fold(T::zero(), |a, c| a + c.norm_sqr()).sqrt();
    if norm == T::zero() {
        return v;
    }
    let max = v.iter().map(|c| modulus(c)).fold(T::zero(), |a, b| a.max(b));
    let cutoff = max * (T::one() - T::lit(1e-6));
    let pivot = v.iter().find(|c| modulus(c) >= cutoff).copied().unwrap_or(v[0]);
    let rot = pivot.conj() / (modulus(&pivot) * norm);
    let mut out = v.map(|c| c * rot);
    if let Some(p) = out.iter_mut().find(|c| modulus(c) >= cutoff / norm) {
        p.im = T::zero();
    }
    out
}

/// Eigenvalues of `J` restricted to the tangent space `{v : Σv = 0}`.
///
/// Only meaningful when `J` leaves that subspace invariant, which holds for
/// the Jacobian of a simplex-preserving field at a rest point on the simplex.
pub fn tangent_spectrum<T: Real>(j: &Matrix5<T>) -> Result<Vec<Complex<T>>> {
    // orthonormal (Helmert) basis of the tangent space
    let basis = SMatrix::<T, STRATEGIES, 4>::from_fn(|row, k| {
        let k1 = k + 1;
        let norm = T::lit((k1 * (k1 + 1)) as f64).sqrt();
        match row.cmp(&k1) {
            Ordering::Less => T::one() / norm,
            Ordering::Equal => -T::lit(k1 as f64) / norm,
            Ordering::Greater => T::zero(),
        }
    });
    let restricted = basis.transpose() * j * basis;
    eigenvalues(DMatrix::from_iterator(4, 4, restricted.iter().cloned()))
}

/// States visited by [`integrate`], starting with the initial point.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub points: Vec<Vector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn last(&self) -> &Vector<T> {
        self.points.last().expect("trajectory holds the initial point")
    }

    /// CSV with header `t,x1,...,x5`; values carry 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x1,x2,x3,x4,x5")?;
        let dt = self.dt.to_f64_lossy();
        for (k, p) in self.points.iter().enumerate() {
            write!(w, "{}", format_sig(k as f64 * dt, 12))?;
            for v in p {
                write!(w, ",{}", format_sig(v.to_f64_lossy(), 12))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `%.{digits}g`-style formatting.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..digits as i32).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{:.*e}", digits - 1, v);
        match s.split_once('e') {
            Some((m, e)) if m.contains('.') => {
                format!("{}e{}", m.trim_end_matches('0').trim_end_matches('.'), e)
            }
            _ => s,
        }
    }
}

/// Classical fixed-step RK4. With `renormalize`, negatives are clipped to 0
/// and the state rescaled to sum 1 after every step.
pub fn integrate<T: Real, F: VectorField<T> + ?Sized>(
    field: &F,
    x0: &SimplexPoint<T>,
    dt: T,
    steps: usize,
    renormalize: bool,
) -> Result<Trajectory<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt:?}")));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    let half = dt * T::lit(0.5);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let limit = T::lit(BLOW_UP_LIMIT);
    let axpy = |x: &Vector<T>, a: T, v: &Vector<T>| -> Vector<T> {
        std::array::from_fn(|i| x[i] + a * v[i])
    };

    let mut points = Vec::with_capacity(steps + 1);
    let mut x = *x0.shares();
    points.push(x);
    for step in 1..=steps {
        let k1 = field.velocity(&x);
        let k2 = field.velocity(&axpy(&x, half, &k1));
        let k3 = field.velocity(&axpy(&x, half, &k2));
        let k4 = field.velocity(&axpy(&x, dt, &k3));
        x = std::array::from_fn(|i| x[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]));
        if renormalize {
            for v in x.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            let total = x.iter().fold(T::zero(), |a, b| a + *b);
            if total > T::zero() {
                for v in x.iter_mut() {
                    *v /= total;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            return Err(Error::BlowUp { step });
        }
        points.push(x);
    }
    Ok(Trajectory { dt, points })
}
