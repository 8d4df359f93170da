//! Pass/fail checks shared by `verify`, `reproduce` and the acceptance run.

use equisel_core::agents::Frame;
use equisel_core::controller::{
    bisect_stability_boundary, closed_loop_max_real, open_loop_jacobian, spectrum_distance, ControlledReplicator,
    SignConvention, REFERENCE_GAINS, STABILITY_MARGIN,
};
use equisel_core::dynamics::{integrate, jacobian, tangent_spectrum, Replicator, SimplexProjected};
use equisel_core::game::{SimplexPoint, StrategyPermutation};
use equisel_core::measurements::{
    angular_momentum, cycle_strength, eigencycle, euclidean_distance, exponential_rate, inner_cycle_fraction,
    AngularMomentumSet, StateSeries, TreatmentReport, PAIRS,
};
use equisel_core::{Design, ExactSeries, Payoffs, Point, Rational, Series};
use nalgebra::Matrix5;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(id: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            id: id.to_owned(),
            passed,
            detail: detail.into(),
        }
    }

    /// Combines parts; passes only if all do.
    pub fn all(id: &str, parts: Vec<Check>) -> Self {
        let passed = parts.iter().all(|c| c.passed);
        let detail = parts
            .iter()
            .map(|c| format!("[{} {}] {}", c.id, if c.passed { "ok" } else { "FAIL" }, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Check::new(id, passed, detail)
    }
}

/// Tolerance for the monotone-ordering comparisons across treatments.
pub const MONOTONE_SLACK: f64 = 0.01;
pub const SELECTION_MASS: f64 = 0.7;
pub const RATE_TOLERANCE: f64 = 0.2;

fn open_loop_reference() -> [Complex<f64>; 5] {
    let s = 3f64.sqrt() / 3.0;
    [
        Complex::new(-1.0 / 3.0, s),
        Complex::new(-1.0 / 3.0, -s),
        Complex::new(-2.0 / 3.0, 0.0),
        Complex::new(-1.0, 0.0),
        Complex::new(-2.0, 0.0),
    ]
}

/// Published eigenvector columns, three decimals.
fn eigenvector_reference() -> [[Complex<f64>; 5]; 5] {
    let c = Complex::new;
    let z = c(0.0, 0.0);
    [
        [c(-0.289, -0.5), c(-0.289, 0.5), c(0.577, 0.0), z, z],
        [c(-0.289, 0.5), c(-0.289, -0.5), c(0.577, 0.0), z, z],
        [c(0.577, 0.0), c(0.577, 0.0), c(0.577, 0.0), z, z],
        [c(0.151, 0.0), c(-0.030, 0.0), c(-0.757, 0.0), c(0.636, 0.0), z],
        [c(-0.161, 0.0), c(-0.462, 0.0), c(-0.221, 0.0), z, c(0.844, 0.0)],
    ]
}

fn open_loop_j() -> anyhow::Result<Matrix5<f64>> {
    let f = Replicator::new(Payoffs::canonical());
    Ok(jacobian(&f, Point::nash_1().shares(), 1e-6)?.entries)
}

pub fn open_loop_spectrum() -> anyhow::Result<Check> {
    let f = Replicator::new(Payoffs::canonical());
    let spec = jacobian(&f, Point::nash_1().shares(), 1e-6)?.eigs()?;
    let err = spec
        .values()
        .iter()
        .zip(open_loop_reference())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    Ok(Check::new("A1", err < 1e-5, format!("max eigenvalue error {err:.2e} (tol 1e-5)")))
}

/// Rotates and rescales `v` onto `r` before a componentwise comparison.
fn aligned_error(v: &[Complex<f64>; 5], r: &[Complex<f64>; 5]) -> f64 {
    let norm = |x: &[Complex<f64>; 5]| x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let (nv, nr) = (norm(v), norm(r));
    let dot: Complex<f64> = v.iter().zip(r).map(|(a, b)| a.conj() * b).sum();
    let phase = if dot.norm() > 0.0 { dot / dot.norm() } else { Complex::new(1.0, 0.0) };
    v.iter()
        .zip(r)
        .map(|(a, b)| (a * phase / nv - b / nr).norm())
        .fold(0.0, f64::max)
}

pub fn eigenvectors() -> anyhow::Result<Check> {
    let spec = jacobian(&Replicator::new(Payoffs::canonical()), Point::nash_1().shares(), 1e-6)?.eigs()?;
    let mut errs = Vec::new();
    for (lambda, r) in open_loop_reference().into_iter().zip(eigenvector_reference()) {
        errs.push(aligned_error(&spec.nearest(lambda).vector, &r));
    }
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let col4 = spec.nearest(Complex::new(-1.0, 0.0)).vector;
    let col4_str: Vec<String> = col4.iter().map(|c| format!("{:.3}", c.re)).collect();
    Ok(Check::new(
        "A2",
        worst < 5e-3,
        format!(
            "per-column max error {:?} (tol 5e-3); computed column 4 = ({})",
            errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>(),
            col4_str.join(", ")
        ),
    ))
}

pub fn gains() -> anyhow::Result<Check> {
    let a = Payoffs::canonical();
    let mut worst_gain: f64 = 0.0;
    let mut worst_spec: f64 = 0.0;
    let mut conventions = Vec::new();
    for (b, row) in REFERENCE_GAINS {
        let d = Design::design(&a, b)?;
        for (k, r) in d.gain.iter().zip(row) {
            worst_gain = worst_gain.max((k - r).abs());
        }
        let j = open_loop_jacobian(&a, &d.anchor)?;
        let conv = SignConvention::resolve(&j.entries, &d.channel, &d.gain, &d.lambda_target, 1e-6)?;
        let achieved = SignConvention::Plus.apply(&j.entries, &d.channel, &d.gain);
        let spec = equisel_core::dynamics::eigs(&achieved)?;
        worst_spec = worst_spec.max(spectrum_distance(&spec.values(), &d.lambda_target));
        conventions.push(conv);
    }
    let conv_ok = conventions.iter().all(|c| *c == Some(SignConvention::Plus));
    Ok(Check::new(
        "A3",
        worst_gain < 2e-3 && worst_spec < 1e-6 && conv_ok,
        format!("max |K - K_ref| {worst_gain:.1e} (tol 2e-3); max spectrum error {worst_spec:.1e} (tol 1e-6) under J + B K^T"),
    ))
}

pub fn stability_boundary() -> anyhow::Result<Check> {
    let a = Payoffs::canonical();
    let grid: Vec<f64> = (0..=40).map(|k| -1.0 + 0.05 * k as f64).collect();
    let signs = grid
        .iter()
        .map(|b| Ok(closed_loop_max_real(&a, *b)? < 0.0))
        .collect::<anyhow::Result<Vec<bool>>>()?;
    let flips: Vec<usize> = (1..signs.len()).filter(|&k| signs[k] != signs[k - 1]).collect();
    let &[k] = flips.as_slice() else {
        return Ok(Check::new("A4", false, format!("expected one sign change on the grid, found {}", flips.len())));
    };
    let boundary = bisect_stability_boundary(&a, grid[k - 1], grid[k], 1e-3)?;
    let off = (boundary - STABILITY_MARGIN).abs();
    Ok(Check::new(
        "A4",
        off < 0.01,
        format!("sign change at b = {boundary:.4} (|b - 1/3| = {off:.1e}, tol 0.01)"),
    ))
}

fn at(reports: &[TreatmentReport], b: f64) -> Option<&TreatmentReport> {
    reports.iter().find(|r| (r.b - b).abs() < 1e-9)
}

fn treatment_set(reports: &[TreatmentReport]) -> Option<Vec<&TreatmentReport>> {
    [-0.8, -0.4, 0.0, 0.4, 0.8].iter().map(|b| at(reports, *b)).collect()
}

/// Tail masses exceed 0.7 at the extremes and move monotonically with `b`.
pub fn selection(id: &str, reports: &[TreatmentReport]) -> Check {
    let Some(rs) = treatment_set(reports) else {
        return Check::new(id, false, "needs all five treatments");
    };
    let m123: Vec<f64> = rs.iter().map(|r| r.mass_123()).collect();
    let m45: Vec<f64> = rs.iter().map(|r| r.mass_45()).collect();
    let low = m123[0] > SELECTION_MASS;
    let high = m45[4] > SELECTION_MASS;
    let mono = m123.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK)
        && m45.windows(2).all(|w| w[1] + MONOTONE_SLACK >= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Check::new(
        id,
        low && high && mono,
        format!(
            "mass{{1,2,3}} by b: {} ; mass{{4,5}} by b: {} ; extremes {} / {}, monotone {}",
            fmt(&m123),
            fmt(&m45),
            low,
            high,
            mono
        ),
    )
}

fn earlier(fast: Option<usize>, slow: Option<usize>) -> bool {
    match (fast, slow) {
        (Some(f), Some(s)) => f < s,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Simulated part of the convergence-speed criterion.
pub fn convergence_simulated(reports: &[TreatmentReport]) -> Check {
    let get = |b| at(reports, b).map(|r| r.crossing);
    let (Some(n2), Some(n1), Some(p1), Some(p2)) = (get(-0.8), get(-0.4), get(0.4), get(0.8)) else {
        return Check::new("sim", false, "needs b = -0.8, -0.4, 0.4, 0.8");
    };
    let nash1 = earlier(n2, n1);
    let nash2 = earlier(p2, p1);
    Check::new(
        "sim",
        nash1 && nash2,
        format!(
            "first round below 0.15: Nash_1 side b=-0.8 {n2:?} vs b=-0.4 {n1:?} ({}), Nash_2 side b=0.8 {p2:?} vs b=0.4 {p1:?} ({})",
            if nash1 { "ok" } else { "FAIL" },
            if nash2 { "ok" } else { "FAIL" }
        ),
    )
}

pub const ODE_DT: f64 = 0.01;
pub const ODE_STEPS: usize = 4000;
/// Band of `d` used for the exponential fit.
pub const ODE_FIT: (f64, f64) = (1e-10, 1e-3);

#[derive(Clone, Debug, Serialize)]
pub struct OdeRun {
    pub b: f64,
    pub crossing_time: Option<f64>,
    pub fitted_rate: Option<f64>,
    pub leading_rate: f64,
}

/// Projected closed-loop flow from the uniform point, without clipping, so
/// the asymptotics follow the linearization at the target.
pub fn ode_run(b: f64) -> anyhow::Result<OdeRun> {
    let a = Payoffs::canonical();
    let field = SimplexProjected(ControlledReplicator::new(a.clone(), Design::design(&a, b)?));
    let target = if b < STABILITY_MARGIN { Point::nash_1() } else { Point::nash_2() };
    let j = jacobian(&field, target.shares(), 1e-6)?;
    let leading = tangent_spectrum(&j.entries)?
        .iter()
        .map(|v| v.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let traj = integrate(&field, &Point::uniform(), ODE_DT, ODE_STEPS, false)?;
    let times: Vec<f64> = (0..traj.points.len()).map(|k| k as f64 * ODE_DT).collect();
    let d: Vec<f64> = traj.points.iter().map(|p| euclidean_distance(p, target.shares())).collect();
    Ok(OdeRun {
        b,
        crossing_time: d.iter().position(|v| *v < 0.15).map(|k| times[k]),
        fitted_rate: exponential_rate(&times, &d, ODE_FIT.0, ODE_FIT.1).map(|s| -s),
        leading_rate: -leading,
    })
}

pub fn convergence_ode() -> anyhow::Result<Check> {
    let runs = [-0.8, -0.4, 0.4, 0.8].map(ode_run);
    let [n2, n1, p1, p2] = runs;
    let (n2, n1, p1, p2) = (n2?, n1?, p1?, p2?);
    let before = |f: &OdeRun, s: &OdeRun| match (f.crossing_time, s.crossing_time) {
        (Some(x), Some(y)) => x < y,
        _ => false,
    };
    let order = before(&n2, &n1) && before(&p2, &p1);
    let mut rates_ok = true;
    let mut parts = Vec::new();
    for r in [&n2, &n1, &p1, &p2] {
        let ok = r
            .fitted_rate
            .is_some_and(|f| (f - r.leading_rate).abs() <= RATE_TOLERANCE * r.leading_rate);
        rates_ok &= ok;
        parts.push(format!(
            "b={} rate {:.3} vs {:.3}",
            r.b,
            r.fitted_rate.unwrap_or(f64::NAN),
            r.leading_rate
        ));
    }
    Ok(Check::new(
        "ode",
        order && rates_ok,
        format!(
            "crossing times {:?}/{:?} and {:?}/{:?} (ordering {}); {}",
            n2.crossing_time,
            n1.crossing_time,
            p2.crossing_time,
            p1.crossing_time,
            order,
            parts.join(", ")
        ),
    ))
}

/// Support of the cycle carried by the leading complex eigenvector.
pub fn eigencycle_inner_fraction() -> anyhow::Result<f64> {
    let spec = jacobian(&Replicator::new(Payoffs::canonical()), Point::nash_1().shares(), 1e-6)?.eigs()?;
    let sigma = eigencycle(&spec.nearest(open_loop_reference()[0]).vector, true)?;
    Ok(inner_cycle_fraction(&AngularMomentumSet { values: sigma }))
}

pub fn cycles(reports: &[TreatmentReport]) -> anyhow::Result<Check> {
    let Some(rs) = treatment_set(reports) else {
        return Ok(Check::new("A7", false, "needs all five treatments"));
    };
    let mut parts = Vec::new();
    let significant: Vec<bool> = rs[..3].iter().map(|r| r.abs_l > 3.0 * r.abs_l_se).collect();
    parts.push(Check::new(
        "significant",
        significant.iter().all(|x| *x),
        rs[..3]
            .iter()
            .map(|r| format!("b={} |L|={:.4} se={:.4}", r.b, r.abs_l, r.abs_l_se))
            .collect::<Vec<_>>()
            .join(", "),
    ));
    let base = rs[2].abs_l;
    parts.push(Check::new(
        "suppressed",
        rs[3].abs_l < 0.2 * base && rs[4].abs_l < 0.2 * base,
        format!("b=0.4 {:.4}, b=0.8 {:.4} vs 0.2 x {:.4}", rs[3].abs_l, rs[4].abs_l, base),
    ));
    let fractions: Vec<f64> = rs[..3].iter().map(|r| r.inner_cycle_fraction()).collect();
    let support = eigencycle_inner_fraction()?;
    parts.push(Check::new(
        "support",
        fractions.iter().all(|f| *f > 0.5) && support > 1.0 - 1e-9,
        format!(
            "share of sum L^2 on pairs within {{1,2,3}}: {} (eigencycle {:.3})",
            fractions.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>().join(" "),
            support
        ),
    ));
    Ok(Check::all("A7", parts))
}

/// Direct double loop over all ordered pairs and transitions.
pub fn naive_angular_momentum(points: &[[f64; 5]]) -> [f64; 10] {
    let mut full = [[0.0; 5]; 5];
    for (m, row) in full.iter_mut().enumerate() {
        for (n, cell) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for t in 0..points.len() - 1 {
                s += points[t][m] * points[t + 1][n] - points[t][n] * points[t + 1][m];
            }
            *cell = s / (points.len() - 1) as f64;
        }
    }
    PAIRS.map(|(m, n)| full[m][n])
}

fn random_point(rng: &mut impl Rng) -> Point {
    let raw: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
    let total: f64 = raw.iter().sum();
    Point::new(raw.map(|v| v / total)).expect("normalized")
}

pub fn measurement_oracles() -> anyhow::Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(2..30);
        let pts: Vec<Point> = (0..len).map(|_| random_point(&mut rng)).collect();
        let raw: Vec<[f64; 5]> = pts.iter().map(|p| *p.shares()).collect();
        let l = angular_momentum(&Series::new(pts, Frame::Canonical), None)?;
        for (a, b) in l.values.iter().zip(naive_angular_momentum(&raw)) {
            worst = worst.max((a - b).abs());
        }
    }
    let oracle = Check::new("oracle", worst <= 1e-14, format!("max deviation {worst:.1e} on 100 series"));

    let cycle: Vec<SimplexPoint<Rational>> = [0, 1, 2, 0]
        .iter()
        .map(|&k| SimplexPoint::vertex(equisel_core::game::Strategy::from_index(k).expect("index")))
        .collect();
    let l = angular_momentum(&ExactSeries::new(cycle, Frame::Canonical), None)?;
    let third = Rational::new(1, 3);
    let exact = l.get(1, 0) == -third && l.get(2, 1) == -third && l.get(2, 0) == third;
    let three = Check::new(
        "3-cycle",
        exact,
        format!("L21={} L32={} L31={}", l.get(1, 0), l.get(2, 1), l.get(2, 0)),
    );

    let u = Point::uniform();
    let d1 = euclidean_distance(u.shares(), Point::nash_1().shares());
    let d2 = euclidean_distance(u.shares(), Point::nash_2().shares());
    let e1 = (d1 - 30f64.sqrt() / 15.0).abs();
    let e2 = (d2 - 30f64.sqrt() / 10.0).abs();
    let dist = Check::new(
        "distance",
        e1 <= 1e-12 && e2 <= 1e-12,
        format!("d(uniform, Nash_1) err {e1:.1e}, d(uniform, Nash_2) err {e2:.1e}"),
    );
    Ok(Check::all("A8", vec![oracle, three, dist]))
}

/// Jacobian conjugation and |L̄| invariance under every relabeling.
pub fn permutation_algebra(sample: &[Series]) -> anyhow::Result<Check> {
    let j = open_loop_j()?;
    let mut jac_err: f64 = 0.0;
    let mut l_err: f64 = 0.0;
    for perm in StrategyPermutation::all() {
        let fp = Replicator::new(Payoffs::canonical().permuted(&perm));
        let jp = jacobian(&fp, Point::nash_1().permuted(&perm).shares(), 1e-6)?.entries;
        let p = Matrix5::from_fn(|k, l| if perm.apply(k) == l { 1.0 } else { 0.0 });
        jac_err = jac_err.max((jp - p * j * p.transpose()).abs().max());
        for s in sample {
            let a = cycle_strength(&angular_momentum(s, None)?);
            let b = cycle_strength(&angular_momentum(&s.permuted(&perm), None)?);
            l_err = l_err.max((a - b).abs());
        }
    }
    Ok(Check::new(
        "algebra",
        jac_err <= 1e-8 && l_err <= 1e-12,
        format!("max |J' - P J P^T| {jac_err:.1e} (tol 1e-8); max |L| change {l_err:.1e} (tol 1e-12)"),
    ))
}

pub fn sample_series(logs: &[equisel_core::agents::SessionLog]) -> Vec<Series> {
    logs.iter().map(|l| StateSeries::from_log(l, Frame::Canonical)).collect()
}

/// Summary check: the dominant block flips between the extreme treatments.
pub fn selection_flip(reports: &[TreatmentReport]) -> Option<Check> {
    let (lo, hi) = (at(reports, -0.8)?, at(reports, 0.8)?);
    let ok = lo.mass_123() > lo.mass_45() && hi.mass_45() > hi.mass_123();
    Some(Check::new(
        "selection-flip",
        ok,
        format!(
            "b=-0.8 mass{{1,2,3}} {:.3} vs mass{{4,5}} {:.3}; b=0.8 mass{{1,2,3}} {:.3} vs mass{{4,5}} {:.3}",
            lo.mass_123(),
            lo.mass_45(),
            hi.mass_123(),
            hi.mass_45()
        ),
    ))
}

/// Summary check: strong destabilization suppresses cycles.
pub fn cycles_vanish(reports: &[TreatmentReport]) -> Option<Check> {
    let (zero, hi) = (at(reports, 0.0)?, at(reports, 0.8)?);
    Some(Check::new(
        "cycles-vanish",
        hi.abs_l < zero.abs_l,
        format!("|L|(0.8) = {:.4}, |L|(0) = {:.4}", hi.abs_l, zero.abs_l),
    ))
}

/// Design-side oracles run by `verify`.
pub fn verify_all() -> anyhow::Result<Vec<Check>> {
    Ok(vec![
        open_loop_spectrum()?,
        eigenvectors()?,
        gains()?,
        stability_boundary()?,
        measurement_oracles()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_oracle_on_a_known_cycle() {
        let e = |k: usize| {
            let mut v = [0.0; 5];
            v[k] = 1.0;
            v
        };
        let l = naive_angular_momentum(&[e(0), e(1), e(2), e(0)]);
        assert!((l[0] + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn aligned_error_ignores_phase_and_scale() {
        let r = eigenvector_reference()[0];
        let rot = Complex::from_polar(2.0, 0.7);
        let v = r.map(|c| c * rot);
        assert!(aligned_error(&v, &r) < 1e-12);
    }

    #[test]
    fn design_checks_pass() {
        for c in verify_all().unwrap() {
            assert!(c.passed, "{}: {}", c.id, c.detail);
        }
    }

    #[test]
    fn ode_rates_track_the_linearization() {
        let c = convergence_ode().unwrap();
        assert!(c.passed, "{}", c.detail);
    }

    #[test]
    fn earlier_treats_missing_as_never() {
        assert!(earlier(Some(3), None));
        assert!(!earlier(None, Some(3)));
        assert!(!earlier(None, None));
        assert!(!earlier(Some(4), Some(4)));
    }
}
