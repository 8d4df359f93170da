//! Mean distribution, distance-to-equilibrium curves, angular momentum over
//! the ten strategy pairs, cycle strength and eigencycles.

use std::io::Write;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::agents::{Frame, SessionLog};
use crate::dynamics::{format_sig, Trajectory};
use crate::error::{Error, Result};
use crate::game::{SimplexPoint, StrategyPermutation, Vector, STRATEGIES};
use crate::scalar::{Real, Scalar};

/// The ten pairs `(m, n)`, `m > n`, 0-based, in column order
/// `L_21, L_31, L_32, L_41, L_42, L_43, L_51, L_52, L_53, L_54`.
pub const PAIRS: [(usize, usize); 10] = [
    (1, 0),
    (2, 0),
    (2, 1),
    (3, 0),
    (3, 1),
    (3, 2),
    (4, 0),
    (4, 1),
    (4, 2),
    (4, 3),
];

pub const DEFAULT_SMOOTHING: usize = 20;
/// Threshold used for "has converged" in convergence-speed comparisons.
pub const CONVERGENCE_THRESHOLD: f64 = 0.15;
/// Rounds at the end of a session used for selection mass.
pub const DEFAULT_TAIL: usize = 100;

pub fn pair_labels() -> [String; 10] {
    PAIRS.map(|(m, n)| format!("L_{}{}", m + 1, n + 1))
}

fn pair_index(m: usize, n: usize) -> Option<usize> {
    PAIRS.iter().position(|&p| p == (m, n))
}

/// `ρ(t)` for `t = 1..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSeries<T> {
    points: Vec<SimplexPoint<T>>,
    pub frame: Frame,
}

impl<T: Scalar> StateSeries<T> {
    pub fn new(points: Vec<SimplexPoint<T>>, frame: Frame) -> Self {
        StateSeries { points, frame }
    }

    pub fn from_log(log: &SessionLog, frame: Frame) -> Self {
        StateSeries {
            points: log.counts(frame).map(|c| c.to_simplex()).collect(),
            frame,
        }
    }

    pub fn points(&self) -> &[SimplexPoint<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn permuted(&self, perm: &StrategyPermutation) -> Self {
        StateSeries {
            points: self.points.iter().map(|p| p.permuted(perm)).collect(),
            frame: self.frame,
        }
    }
}

impl<T: Real> StateSeries<T> {
    /// Fails if an integrated point left the simplex.
    pub fn from_trajectory(traj: &Trajectory<T>) -> Result<Self> {
        Ok(StateSeries {
            points: traj.points.iter().map(|p| SimplexPoint::new(*p)).collect::<Result<_>>()?,
            frame: Frame::Canonical,
        })
    }

    /// Centered moving average over `window` points, truncated at the ends.
    /// For even windows the extra point is taken from the past.
    pub fn smoothed(&self, window: usize) -> Self {
        if window <= 1 {
            return self.clone();
        }
        let n = self.points.len();
        let back = window / 2;
        let fwd = window - 1 - back;
        let points = (0..n)
            .map(|t| {
                let lo = t.saturating_sub(back);
                let hi = (t + fwd).min(n - 1);
                let count = T::from_count((hi - lo + 1) as u32);
                let mut acc = [T::zero(); STRATEGIES];
                for p in &self.points[lo..=hi] {
                    for (a, v) in acc.iter_mut().zip(p.shares()) {
                        *a += *v;
                    }
                }
                SimplexPoint::new(acc.map(|a| a / count))
                    .unwrap_or_else(|_| self.points[t].clone())
            })
            .collect();
        StateSeries {
            points,
            frame: self.frame,
        }
    }
}

/// Mean of `ρ(t)` over the 1-based inclusive window (default: whole series).
pub fn mean_distribution<T: Scalar>(series: &StateSeries<T>, window: Option<(usize, usize)>) -> Result<Vector<T>> {
    let (a, b) = window.unwrap_or((1, series.len()));
    if a < 1 || a > b || b > series.len() {
        return Err(Error::EmptyWindow);
    }
    let mut acc: Vector<T> = std::array::from_fn(|_| T::zero());
    for p in &series.points[a - 1..b] {
        for (s, v) in acc.iter_mut().zip(p.shares()) {
            *s = s.clone() + v.clone();
        }
    }
    let n = T::from_count((b - a + 1) as u32);
    Ok(acc.map(|s| s / n.clone()))
}

/// Mean over the last `tail` points (or the whole series if shorter).
pub fn tail_distribution<T: Scalar>(series: &StateSeries<T>, tail: usize) -> Result<Vector<T>> {
    let n = series.len();
    mean_distribution(series, Some((n.saturating_sub(tail) + 1, n)))
}

pub fn mass_on(v: &Vector<f64>, strategies: &[usize]) -> f64 {
    strategies.iter().map(|&i| v[i]).sum()
}

pub fn euclidean_distance<T: Real>(x: &Vector<T>, y: &Vector<T>) -> T {
    x.iter()
        .zip(y)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .fold(T::zero(), |s, v| s + v)
        .sqrt()
}

/// Which equilibrium a treatment is expected to select.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "Nash_1")]
    Nash1,
    #[serde(rename = "Nash_2")]
    Nash2,
}

impl Target {
    /// Nash_1 below the stability margin, Nash_2 above it.
    pub fn for_b(b: f64) -> Self {
        if b < crate::controller::STABILITY_MARGIN {
            Target::Nash1
        } else {
            Target::Nash2
        }
    }

    pub fn point<T: Scalar>(self) -> SimplexPoint<T> {
        match self {
            Target::Nash1 => SimplexPoint::nash_1(),
            Target::Nash2 => SimplexPoint::nash_2(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Target::Nash1 => "Nash_1",
            Target::Nash2 => "Nash_2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceCurve<T> {
    pub raw: Vec<T>,
    /// Distance of the smoothed state series, when a window was requested.
    pub smoothed: Option<Vec<T>>,
    pub window: usize,
}

/// `d(t) = ‖ρ(t) − target‖`; with `window > 1` also the distance of the
/// moving-averaged series.
pub fn distance_curve<T: Real>(series: &StateSeries<T>, target: &SimplexPoint<T>, window: usize) -> ConvergenceCurve<T> {
    let dist = |s: &StateSeries<T>| -> Vec<T> {
        s.points
            .iter()
            .map(|p| euclidean_distance(p.shares(), target.shares()))
            .collect()
    };
    ConvergenceCurve {
        raw: dist(series),
        smoothed: (window > 1).then(|| dist(&series.smoothed(window))),
        window,
    }
}

/// First 1-based index where `curve` is below `threshold`.
pub fn first_crossing(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|d| *d < threshold).map(|k| k + 1)
}

/// Least-squares slope of `ln d` against `t` over points with `d` in `(lo, hi)`.
pub fn exponential_rate(times: &[f64], d: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(d)
        .filter(|(_, v)| **v > lo && **v < hi)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `L̄_mn` for the ten pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularMomentumSet<T> {
    pub values: [T; 10],
}

impl<T: Scalar> AngularMomentumSet<T> {
    /// `L̄_mn` for any ordered pair of distinct 0-based indices; `L̄_nm = −L̄_mn`.
    pub fn get(&self, m: usize, n: usize) -> T {
        if let Some(k) = pair_index(m, n) {
            self.values[k].clone()
        } else if let Some(k) = pair_index(n, m) {
            T::zero() - self.values[k].clone()
        } else {
            T::zero()
        }
    }
}

/// `L̄_mn = (1/(T−1)) Σ_t [ρ_m(t)ρ_n(t+1) − ρ_n(t)ρ_m(t+1)]`, optionally
/// on `ρ − center`.
pub fn angular_momentum<T: Scalar>(
    series: &StateSeries<T>,
    center: Option<&Vector<T>>,
) -> Result<AngularMomentumSet<T>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::SeriesTooShort(n));
    }
    let shift = |p: &SimplexPoint<T>| -> Vector<T> {
        match center {
            None => p.shares().clone(),
            Some(c) => std::array::from_fn(|i| p.shares()[i].clone() - c[i].clone()),
        }
    };
    let mut acc: [T; 10] = std::array::from_fn(|_| T::zero());
    let mut prev = shift(&series.points[0]);
    for p in &series.points[1..] {
        let cur = shift(p);
        for (slot, &(m, k)) in acc.iter_mut().zip(PAIRS.iter()) {
            // cross product first, so swapping (m, n) negates exactly
            let cross = prev[m].clone() * cur[k].clone() - prev[k].clone() * cur[m].clone();
            *slot = slot.clone() + cross;
        }
        prev = cur;
    }
    let transitions = T::from_count((n - 1) as u32);
    Ok(AngularMomentumSet {
        values: acc.map(|v| v / transitions.clone()),
    })
}

/// `|L̄| = sqrt(Σ L̄_mn²)`.
pub fn cycle_strength<T: Real>(l: &AngularMomentumSet<T>) -> T {
    l.values.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt()
}

/// Share of `Σ L̄²` carried by pairs inside `{1,2,3}`.
pub fn inner_cycle_fraction(l: &AngularMomentumSet<f64>) -> f64 {
    let total: f64 = l.values.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let inner: f64 = PAIRS
        .iter()
        .zip(&l.values)
        .filter(|((m, n), _)| *m < 3 && *n < 3)
        .map(|(_, v)| v * v)
        .sum();
    inner / total
}

/// `σ_mn = Im(conj(η_m)·η_n)` for the ten pairs, scaled so `Σ|σ| = 1`
/// when `normalize` is set and the set is non-zero.
pub fn eigencycle<T: Real>(eta: &[Complex<T>; STRATEGIES], normalize: bool) -> Result<[T; 10]> {
    if eta.iter().all(|c| c.re == T::zero() && c.im == T::zero()) {
        return Err(Error::ZeroVector);
    }
    let sigma = PAIRS.map(|(m, n)| (eta[m].conj() * eta[n]).im);
    let total = sigma.iter().fold(T::zero(), |s, v| s + v.abs());
    if !normalize || total == T::zero() {
        return Ok(sigma);
    }
    Ok(sigma.map(|v| v / total))
}

/// Sample mean and standard error (`std/√n`, zero for a single value).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || values.iter().all(|v| *v == values[0]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    /// Window for the mean distribution (1-based inclusive); whole session by default.
    pub window: Option<(usize, usize)>,
    pub tail: usize,
    pub smoothing: usize,
    pub center: Option<Vector<f64>>,
    pub frame: Frame,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            window: None,
            tail: DEFAULT_TAIL,
            smoothing: DEFAULT_SMOOTHING,
            center: None,
            frame: Frame::Canonical,
        }
    }
}

/// Per-treatment figure data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentReport {
    pub b: f64,
    pub sessions: usize,
    pub rho_bar: Vector<f64>,
    pub rho_se: Vector<f64>,
    /// Mean distribution over the last `tail` rounds.
    pub tail_rho: Vector<f64>,
    pub target: Target,
    /// Session mean of the (smoothed, if requested) distance curve.
    pub d_mean: Vec<f64>,
    pub d_se: Vec<f64>,
    pub crossing: Option<usize>,
    pub l_mean: [f64; 10],
    pub l_se: [f64; 10],
    /// Mean over sessions of each session's `|L̄|`.
    pub abs_l: f64,
    pub abs_l_se: f64,
}

impl TreatmentReport {
    pub fn mass_123(&self) -> f64 {
        mass_on(&self.tail_rho, &[0, 1, 2])
    }

    pub fn mass_45(&self) -> f64 {
        mass_on(&self.tail_rho, &[3, 4])
    }

    pub fn inner_cycle_fraction(&self) -> f64 {
        inner_cycle_fraction(&AngularMomentumSet { values: self.l_mean })
    }
}

fn column_stats<const K: usize>(rows: &[[f64; K]]) -> ([f64; K], [f64; K]) {
    let mut mean = [0.0; K];
    let mut se = [0.0; K];
    for k in 0..K {
        let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        (mean[k], se[k]) = mean_se(&col);
    }
    (mean, se)
}

/// Aggregates sessions of one treatment; rejects mixed `b`.
pub fn aggregate_treatment(logs: &[SessionLog], opts: &AggregateOptions) -> Result<TreatmentReport> {
    let first = logs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no logs to aggregate".into()))?;
    let b = first.b();
    if let Some(other) = logs.iter().find(|l| l.b() != b) {
        return Err(Error::MixedTreatments(b, other.b()));
    }
    let target = Target::for_b(b);
    let target_point = target.point::<f64>();
    let mut rho = Vec::new();
    let mut tails = Vec::new();
    let mut curves = Vec::new();
    let mut ls = Vec::new();
    let mut abs = Vec::new();
    for log in logs {
        let series = StateSeries::<f64>::from_log(log, opts.frame);
        rho.push(mean_distribution(&series, opts.window)?);
        tails.push(tail_distribution(&series, opts.tail)?);
        let c = distance_curve(&series, &target_point, opts.smoothing);
        curves.push(c.smoothed.unwrap_or(c.raw));
        let l = angular_momentum(&series, opts.center.as_ref())?;
        abs.push(cycle_strength(&l));
        ls.push(l.values);
    }
    let (rho_bar, rho_se) = column_stats(&rho);
    let (tail_rho, _) = column_stats(&tails);
    let (l_mean, l_se) = column_stats(&ls);
    let (abs_l, abs_l_se) = mean_se(&abs);
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let (d_mean, d_se): (Vec<f64>, Vec<f64>) = (0..len)
        .map(|t| mean_se(&curves.iter().map(|c| c[t]).collect::<Vec<_>>()))
        .unzip();
    Ok(TreatmentReport {
        b,
        sessions: logs.len(),
        rho_bar,
        rho_se,
        tail_rho,
        target,
        crossing: first_crossing(&d_mean, CONVERGENCE_THRESHOLD),
        d_mean,
        d_se,
        l_mean,
        l_se,
        abs_l,
        abs_l_se,
    })
}

const CSV_DIGITS: usize = 12;

fn fmt(v: f64) -> String {
    format_sig(v, CSV_DIGITS)
}

/// `b,rho1..rho5,se1..se5`
pub fn write_fig3(reports: &[TreatmentReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "b,rho1,rho2,rho3,rho4,rho5,se1,se2,se3,se4,se5")?;
    for r in reports {
        let cols: Vec<String> = r.rho_bar.iter().chain(&r.rho_se).map(|v| fmt(*v)).collect();
        writeln!(w, "{},{}", fmt(r.b), cols.join(","))?;
    }
    Ok(())
}

/// `b,target,t,d_mean,d_se`
pub fn write_fig4(reports: &[TreatmentReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "b,target,t,d_mean,d_se")?;
    for r in reports {
        for (t, (m, s)) in r.d_mean.iter().zip(&r.d_se).enumerate() {
            writeln!(w, "{},{},{},{},{}", fmt(r.b), r.target.label(), t + 1, fmt(*m), fmt(*s))?;
        }
    }
    Ok(())
}

/// `b,L_21..L_54,absL,absL_se`
pub fn write_fig5(reports: &[TreatmentReport], mut w: impl Write) -> Result<()> {
    writeln!(w, "b,{},absL,absL_se", pair_labels().join(","))?;
    for r in reports {
        let cols: Vec<String> = r.l_mean.iter().map(|v| fmt(*v)).collect();
        writeln!(w, "{},{},{},{}", fmt(r.b), cols.join(","), fmt(r.abs_l), fmt(r.abs_l_se))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{run_session, SessionConfig};
    use crate::game::Strategy;
    use num_rational::Rational64;

    fn vertex<T: Scalar>(label: i64) -> SimplexPoint<T> {
        SimplexPoint::vertex(Strategy::from_label(label).unwrap())
    }

    fn series<T: Scalar>(labels: &[i64]) -> StateSeries<T> {
        StateSeries::new(labels.iter().map(|&l| vertex(l)).collect(), Frame::Canonical)
    }

    #[test]
    fn mean_of_constant_series() {
        let s = StateSeries::new(vec![SimplexPoint::<f64>::nash_2(); 10], Frame::Canonical);
        assert_eq!(mean_distribution(&s, None).unwrap(), [0.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn mean_of_alternating_vertices() {
        let labels: Vec<i64> = (0..100).map(|k| 1 + k % 2).collect();
        let s = series::<Rational64>(&labels);
        let half = Rational64::new(1, 2);
        let z = Rational64::from_integer(0);
        assert_eq!(mean_distribution(&s, None).unwrap(), [half, half, z, z, z]);
    }

    #[test]
    fn mean_window_checks() {
        let s = series::<f64>(&[1, 2, 3]);
        assert!(matches!(mean_distribution(&s, Some((0, 2))), Err(Error::EmptyWindow)));
        assert!(matches!(mean_distribution(&s, Some((3, 2))), Err(Error::EmptyWindow)));
        assert!(matches!(mean_distribution(&s, Some((1, 4))), Err(Error::EmptyWindow)));
        assert_eq!(mean_distribution(&s, Some((2, 2))).unwrap(), *vertex::<f64>(2).shares());
    }

    #[test]
    fn distances_from_uniform() {
        let s = StateSeries::new(vec![SimplexPoint::<f64>::uniform(); 4], Frame::Canonical);
        let d1 = distance_curve(&s, &SimplexPoint::nash_1(), 1);
        let d2 = distance_curve(&s, &SimplexPoint::nash_2(), 1);
        let w1 = (3.0 * (2.0f64 / 15.0).powi(2) + 2.0 * 0.2f64.powi(2)).sqrt();
        let w2 = (3.0 * 0.2f64.powi(2) + 2.0 * 0.3f64.powi(2)).sqrt();
        assert!(d1.raw.iter().all(|d| (d - w1).abs() < 1e-12 && (d - 0.36515).abs() < 1e-5));
        assert!(d2.raw.iter().all(|d| (d - w2).abs() < 1e-12 && (d - 0.54772).abs() < 1e-5));
        assert!(d1.smoothed.is_none());
        let at = StateSeries::new(vec![SimplexPoint::<f64>::nash_1(); 4], Frame::Canonical);
        let d = distance_curve(&at, &SimplexPoint::nash_1(), 20);
        assert!(d.raw.iter().chain(d.smoothed.as_ref().unwrap()).all(|v| *v == 0.0));
    }

    #[test]
    fn three_cycle_momentum() {
        let s = series::<Rational64>(&[1, 2, 3, 1]);
        let l = angular_momentum(&s, None).unwrap();
        let third = Rational64::new(1, 3);
        let zero = Rational64::from_integer(0);
        let mut want = [zero; 10];
        want[0] = -third; // L_21
        want[1] = third; // L_31
        want[2] = -third; // L_32
        assert_eq!(l.values, want);
        let lf = angular_momentum(&series::<f64>(&[1, 2, 3, 1]), None).unwrap();
        assert_eq!(lf.values[..3], [-1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0]);
        assert!((cycle_strength(&lf) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn back_and_forth_cancels() {
        let l = angular_momentum(&series::<Rational64>(&[1, 2, 1]), None).unwrap();
        assert_eq!(l.values[0], Rational64::from_integer(0));
    }

    #[test]
    fn constant_series_has_no_momentum() {
        let s = StateSeries::new(vec![SimplexPoint::<f64>::uniform(); 7], Frame::Canonical);
        let l = angular_momentum(&s, None).unwrap();
        assert!(l.values.iter().all(|v| *v == 0.0));
        assert_eq!(cycle_strength(&l), 0.0);
    }

    #[test]
    fn momentum_needs_two_points() {
        assert!(matches!(
            angular_momentum(&series::<f64>(&[1]), None),
            Err(Error::SeriesTooShort(1))
        ));
    }

    #[test]
    fn centering_changes_momentum() {
        let s = series::<f64>(&[1, 2, 3, 1]);
        let c = *SimplexPoint::<f64>::uniform().shares();
        let centered = angular_momentum(&s, Some(&c)).unwrap();
        assert_ne!(centered, angular_momentum(&s, None).unwrap());
    }

    #[test]
    fn antisymmetric_lookup() {
        let l = angular_momentum(&series::<f64>(&[1, 2, 3, 1]), None).unwrap();
        assert_eq!(l.get(1, 0), -1.0 / 3.0);
        assert_eq!(l.get(0, 1), 1.0 / 3.0);
        assert_eq!(l.get(2, 2), 0.0);
    }

    #[test]
    fn eigencycle_examples() {
        let s = 0.5f64.sqrt();
        let eta = [
            Complex::new(s, 0.0),
            Complex::new(0.0, s),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
            Complex::new(0.0, 0.0),
        ];
        let sigma = eigencycle(&eta, true).unwrap();
        assert!((sigma[0].abs() - 1.0).abs() < 1e-15);
        assert!(sigma[1..].iter().all(|v| *v == 0.0));
        let real = [1.0, -2.0, 0.5, 0.0, 3.0].map(|v| Complex::new(v, 0.0));
        assert!(eigencycle(&real, true).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(eigencycle(&[Complex::new(0.0, 0.0); 5], true), Err(Error::ZeroVector)));
    }

    #[test]
    fn eigencycle_of_leading_mode_lives_on_first_three_strategies() {
        let a = crate::game::PayoffMatrix::<f64>::canonical();
        let j = crate::controller::open_loop_jacobian(&a, &SimplexPoint::nash_1()).unwrap();
        let lead = j.eigs().unwrap().pairs()[0].clone();
        let sigma = eigencycle(&lead.vector, true).unwrap();
        let outside: f64 = PAIRS
            .iter()
            .zip(sigma)
            .filter(|((m, _), _)| *m >= 3)
            .map(|(_, v)| v.abs())
            .sum();
        assert!(outside < 1e-5, "{sigma:?}");
        assert!((sigma.iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_is_centered_and_truncated() {
        let s = series::<f64>(&[1, 2, 1, 2]);
        let m = s.smoothed(2);
        assert_eq!(m.points()[0].shares(), vertex::<f64>(1).shares());
        assert_eq!(m.points()[1].shares(), &[0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(s.smoothed(1), s);
    }

    #[test]
    fn crossing_and_rate() {
        assert_eq!(first_crossing(&[0.3, 0.2, 0.1, 0.2], 0.15), Some(3));
        assert_eq!(first_crossing(&[0.3], 0.15), None);
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let d: Vec<f64> = t.iter().map(|t| 0.5 * (-0.7 * t).exp()).collect();
        let r = exponential_rate(&t, &d, 1e-9, 1.0).unwrap();
        assert!((r + 0.7).abs() < 1e-12);
    }

    #[test]
    fn identical_logs_have_zero_standard_error() {
        let mut c = SessionConfig::treatment(0.0, 3);
        c.rounds = 40;
        let log = run_session(&c).unwrap();
        let logs = vec![log; 8];
        let r = aggregate_treatment(&logs, &AggregateOptions::default()).unwrap();
        assert!(r.rho_se.iter().chain(&r.l_se).chain(&r.d_se).all(|v| *v == 0.0));
        assert_eq!(r.abs_l_se, 0.0);
        assert_eq!(r.sessions, 8);
    }

    #[test]
    fn mixed_treatments_rejected_and_target_chosen() {
        let mut c = SessionConfig::treatment(0.4, 3);
        c.rounds = 10;
        let a = run_session(&c).unwrap();
        let r = aggregate_treatment(std::slice::from_ref(&a), &AggregateOptions::default()).unwrap();
        assert_eq!(r.target, Target::Nash2);
        c.b = 0.0;
        let b = run_session(&c).unwrap();
        assert!(matches!(
            aggregate_treatment(&[a, b], &AggregateOptions::default()),
            Err(Error::MixedTreatments(..))
        ));
        assert_eq!(Target::for_b(-0.4), Target::Nash1);
    }

    #[test]
    fn figure_csv_headers() {
        let mut c = SessionConfig::treatment(0.0, 3);
        c.rounds = 5;
        let r = aggregate_treatment(&[run_session(&c).unwrap()], &AggregateOptions::default()).unwrap();
        let mut out = Vec::new();
        write_fig3(std::slice::from_ref(&r), &mut out).unwrap();
        write_fig4(std::slice::from_ref(&r), &mut out).unwrap();
        write_fig5(std::slice::from_ref(&r), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "b,rho1,rho2,rho3,rho4,rho5,se1,se2,se3,se4,se5");
        assert_eq!(lines[2], "b,target,t,d_mean,d_se");
        assert!(lines[3].starts_with("0,Nash_1,1,"));
        assert_eq!(
            lines[8],
            "b,L_21,L_31,L_32,L_41,L_42,L_43,L_51,L_52,L_53,L_54,absL,absL_se"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use proptest::strategy::Strategy;

        fn point() -> impl proptest::strategy::Strategy<Value = SimplexPoint<f64>> {
            proptest::array::uniform5(0.0f64..1.0).prop_filter_map("degenerate", |w| {
                let s: f64 = w.iter().sum();
                (s > 1e-6).then(|| SimplexPoint::new(w.map(|v| v / s)).ok()).flatten()
            })
        }

        fn naive(points: &[SimplexPoint<f64>], m: usize, n: usize) -> f64 {
            let mut s = 0.0;
            for t in 0..points.len() - 1 {
                let a = points[t].shares();
                let b = points[t + 1].shares();
                s += a[m] * b[n] - a[n] * b[m];
            }
            s / (points.len() - 1) as f64
        }

        proptest! {
            #[test]
            fn matches_naive_double_loop(points in proptest::collection::vec(point(), 2..12)) {
                let l = angular_momentum(&StateSeries::new(points.clone(), Frame::Canonical), None).unwrap();
                for m in 0..5 {
                    for n in 0..5 {
                        if m != n {
                            prop_assert!((l.get(m, n) - naive(&points, m, n)).abs() < 1e-14);
                        }
                    }
                }
            }

            #[test]
            fn permutation_relabels_pairs(points in proptest::collection::vec(point(), 2..12), k in 0usize..7) {
                let perm = StrategyPermutation::all()[k];
                let s = StateSeries::new(points, Frame::Canonical);
                let l = angular_momentum(&s, None).unwrap();
                let lp = angular_momentum(&s.permuted(&perm), None).unwrap();
                for m in 0..5 {
                    for n in 0..5 {
                        prop_assert_eq!(lp.get(m, n), l.get(perm.apply(m), perm.apply(n)));
                    }
                }
                prop_assert!((cycle_strength(&lp) - cycle_strength(&l)).abs() < 1e-12);
            }

            #[test]
            fn distance_bounds(x in point(), y in point()) {
                let d = euclidean_distance(x.shares(), y.shares());
                prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&d));
            }

            #[test]
            fn window_means_are_linear(points in proptest::collection::vec(point(), 4..20), cut in 1usize..3) {
                let s = StateSeries::new(points, Frame::Canonical);
                let n = s.len();
                let a = mean_distribution(&s, Some((1, cut))).unwrap();
                let b = mean_distribution(&s, Some((cut + 1, n))).unwrap();
                let all = mean_distribution(&s, None).unwrap();
                for i in 0..5 {
                    let w = (a[i] * cut as f64 + b[i] * (n - cut) as f64) / n as f64;
                    prop_assert!((w - all[i]).abs() < 1e-12);
                }
            }

            #[test]
            fn antisymmetry(points in proptest::collection::vec(point(), 2..8)) {
                let l = angular_momentum(&StateSeries::new(points, Frame::Canonical), None).unwrap();
                for &(m, n) in &PAIRS {
                    prop_assert_eq!(l.get(n, m), -l.get(m, n));
                }
            }
        }
    }
}
