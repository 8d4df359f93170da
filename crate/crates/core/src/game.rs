//! The five-strategy symmetric game: payoff matrix, states, Nash verification
//! and the strategy relabelings used to vary sessions.
//!
//! Strategies are 0-based internally and 1-based (`X1`..`X5`) on every
//! external surface. [`Strategy`] is the only type that crosses that line.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{abs, Scalar};

pub const STRATEGIES: usize = 5;

/// A vector indexed by strategy.
pub type Vector<T> = [T; STRATEGIES];

/// Tolerance on the share sum of a [`SimplexPoint`].
pub const SIMPLEX_TOL: f64 = 1e-12;

const TABLE1: [[i64; STRATEGIES]; STRATEGIES] = [
    [0, 0, 2, 0, -2],
    [2, 0, 0, -2, 0],
    [0, 2, 0, 2, -1],
    [-2, 0, 1, 0, 1],
    [0, -2, -2, 1, 0],
];

/// One of the five strategies. Serialized as its 1-based label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Strategy(u8);

impl Strategy {
    pub const ALL: [Strategy; STRATEGIES] =
        [Strategy(0), Strategy(1), Strategy(2), Strategy(3), Strategy(4)];

    /// From a 1-based label.
    pub fn from_label(label: i64) -> Result<Self> {
        if (1..=STRATEGIES as i64).contains(&label) {
            Ok(Strategy((label - 1) as u8))
        } else {
            Err(Error::InvalidStrategy(label))
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::from_label(index as i64 + 1)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> u8 {
        self.0 + 1
    }
}

impl TryFrom<i64> for Strategy {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Strategy::from_label(v)
    }
}

impl From<Strategy> for u8 {
    fn from(s: Strategy) -> u8 {
        s.label()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X{}", self.label())
    }
}

/// Square payoff matrix; `entry(i, j)` is what strategy `i` earns against `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix<T> {
    entries: [Vector<T>; STRATEGIES],
}

impl<T: Scalar> PayoffMatrix<T> {
    pub fn new(entries: [Vector<T>; STRATEGIES]) -> Self {
        PayoffMatrix { entries }
    }

    /// The game studied throughout this crate.
    pub fn canonical() -> Self {
        PayoffMatrix {
            entries: TABLE1.map(|row| row.map(|v| T::from_i64(v).expect("small integer"))),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> &T {
        &self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vector<T>; STRATEGIES] {
        &self.entries
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> PayoffMatrix<U> {
        PayoffMatrix {
            entries: std::array::from_fn(|i| std::array::from_fn(|j| f(&self.entries[i][j]))),
        }
    }

    /// `A'[k][l] = A[π(k)][π(l)]`.
    pub fn permuted(&self, perm: &StrategyPermutation) -> Self {
        PayoffMatrix {
            entries: std::array::from_fn(|k| {
                std::array::from_fn(|l| self.entries[perm.apply(k)][perm.apply(l)].clone())
            }),
        }
    }

    /// Matrix-vector product on an arbitrary (not necessarily simplex) vector.
    pub fn apply(&self, x: &Vector<T>) -> Vector<T> {
        std::array::from_fn(|i| dot(&self.entries[i], x))
    }
}

pub(crate) fn dot<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

/// A mixed strategy or population state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexPoint<T> {
    shares: Vector<T>,
}

impl<T: Scalar> SimplexPoint<T> {
    pub fn new(shares: Vector<T>) -> Result<Self> {
        if let Some(i) = shares.iter().position(|s| *s < T::zero()) {
            return Err(Error::NotOnSimplex(format!("share {} is negative", i + 1)));
        }
        let total = shares.iter().cloned().fold(T::zero(), |a, b| a + b);
        if abs(total.clone() - T::one()) > T::lit(SIMPLEX_TOL) {
            return Err(Error::NotOnSimplex(format!("shares sum to {total:?}")));
        }
        Ok(SimplexPoint { shares })
    }

    /// `(1, 1, 1, 0, 0) / 3`
    pub fn nash_1() -> Self {
        let third = T::one() / T::from_count(3);
        SimplexPoint {
            shares: [third.clone(), third.clone(), third, T::zero(), T::zero()],
        }
    }

    /// `(0, 0, 0, 1, 1) / 2`
    pub fn nash_2() -> Self {
        let half = T::one() / T::from_count(2);
        SimplexPoint {
            shares: [T::zero(), T::zero(), T::zero(), half.clone(), half],
        }
    }

    pub fn uniform() -> Self {
        let fifth = T::one() / T::from_count(STRATEGIES as u32);
        SimplexPoint {
            shares: std::array::from_fn(|_| fifth.clone()),
        }
    }

    pub fn vertex(strategy: Strategy) -> Self {
        SimplexPoint {
            shares: std::array::from_fn(|i| {
                if i == strategy.index() {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        }
    }

    pub fn shares(&self) -> &Vector<T> {
        &self.shares
    }

    pub fn into_shares(self) -> Vector<T> {
        self.shares
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.shares
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > T::zero())
            .map(|(i, _)| i)
    }

    pub fn permuted(&self, perm: &StrategyPermutation) -> Self {
        SimplexPoint {
            shares: perm.permute(&self.shares),
        }
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> SimplexPoint<U> {
        SimplexPoint {
            shares: std::array::from_fn(|i| f(&self.shares[i])),
        }
    }
}

/// Number of players on each strategy in one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SocialState {
    counts: [u32; STRATEGIES],
}

impl SocialState {
    pub fn new(counts: [u32; STRATEGIES]) -> Self {
        SocialState { counts }
    }

    pub fn from_choices(choices: &[Strategy]) -> Self {
        let mut counts = [0; STRATEGIES];
        for c in choices {
            counts[c.index()] += 1;
        }
        SocialState { counts }
    }

    pub fn counts(&self) -> &[u32; STRATEGIES] {
        &self.counts
    }

    pub fn players(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// `counts / N`; exact when `T` is a rational type.
    pub fn to_simplex<T: Scalar>(&self) -> SimplexPoint<T> {
        let n = T::from_count(self.players().max(1));
        SimplexPoint {
            shares: self.counts.map(|c| T::from_count(c) / n.clone()),
        }
    }

    pub fn permuted(&self, perm: &StrategyPermutation) -> Self {
        SocialState {
            counts: perm.permute(&self.counts),
        }
    }

    /// Every way of distributing `players` over the five strategies.
    pub fn enumerate(players: u32) -> Vec<SocialState> {
        fn fill(slot: usize, left: u32, cur: &mut [u32; STRATEGIES], out: &mut Vec<SocialState>) {
            if slot == STRATEGIES - 1 {
                cur[slot] = left;
                out.push(SocialState::new(*cur));
                return;
            }
            for c in 0..=left {
                cur[slot] = c;
                fill(slot + 1, left - c, cur, out);
            }
        }
        let mut out = Vec::new();
        fill(0, players, &mut [0; STRATEGIES], &mut out);
        out
    }
}

/// A relabeling of strategies: identity (`"00"`) or a single transposition
/// `"ij"` with `i` in 1..=3 and `j` in 4..=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct StrategyPermutation {
    swap: Option<(u8, u8)>,
}

impl StrategyPermutation {
    pub const IDENTITY: StrategyPermutation = StrategyPermutation { swap: None };

    pub fn parse(code: &str) -> Result<Self> {
        let bad = || Error::InvalidPermutation(code.to_owned());
        let digits: Vec<u32> = code
            .chars()
            .map(|c| c.to_digit(10))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        match digits.as_slice() {
            [0, 0] => Ok(Self::IDENTITY),
            [i @ 1..=3, j @ 4..=5] => Ok(StrategyPermutation {
                swap: Some((*i as u8 - 1, *j as u8 - 1)),
            }),
            _ => Err(bad()),
        }
    }

    /// All seven codes accepted by [`parse`](Self::parse).
    pub fn all() -> Vec<StrategyPermutation> {
        let mut v = vec![Self::IDENTITY];
        for i in 0..3 {
            for j in 3..5 {
                v.push(StrategyPermutation { swap: Some((i, j)) });
            }
        }
        v
    }

    pub fn code(&self) -> String {
        match self.swap {
            None => "00".into(),
            Some((i, j)) => format!("{}{}", i + 1, j + 1),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.swap.is_none()
    }

    /// `π(k)` on 0-based indices.
    pub fn apply(&self, k: usize) -> usize {
        match self.swap {
            Some((i, j)) if k == i as usize => j as usize,
            Some((i, j)) if k == j as usize => i as usize,
            _ => k,
        }
    }

    pub fn apply_strategy(&self, s: Strategy) -> Strategy {
        Strategy(self.apply(s.index()) as u8)
    }

    /// `v'[k] = v[π(k)]`. Self-inverse.
    pub fn permute<V: Clone>(&self, v: &[V; STRATEGIES]) -> [V; STRATEGIES] {
        std::array::from_fn(|k| v[self.apply(k)].clone())
    }
}

impl fmt::Display for StrategyPermutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl Serialize for StrategyPermutation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for StrategyPermutation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        StrategyPermutation::parse(&code).map_err(serde::de::Error::custom)
    }
}

/// `(Ax)_i`: expected payoff of each pure strategy against `x`.
pub fn expected_payoffs<T: Scalar>(matrix: &PayoffMatrix<T>, x: &SimplexPoint<T>) -> Vector<T> {
    matrix.apply(&x.shares)
}

/// `xᵀAx`.
pub fn mean_payoff<T: Scalar>(matrix: &PayoffMatrix<T>, x: &SimplexPoint<T>) -> T {
    dot(&x.shares, &expected_payoffs(matrix, x))
}

/// Round earnings per strategy when every player meets every other player
/// once: a player on `i` earns `Σ_j (counts[j] − δ_ij)·A[i][j]`. Entries for
/// unoccupied strategies are `None`.
pub fn round_payoffs<T: Scalar>(
    matrix: &PayoffMatrix<T>,
    state: &SocialState,
) -> Result<[Option<T>; STRATEGIES]> {
    let n = state.players();
    if n < 2 {
        return Err(Error::TooFewPlayers(n));
    }
    Ok(std::array::from_fn(|i| {
        (state.counts[i] > 0).then(|| {
            let mut opponents = state.counts;
            opponents[i] -= 1;
            dot(&matrix.entries[i], &opponents.map(T::from_count))
        })
    }))
}

/// Outcome of [`is_nash`].
#[derive(Clone, Debug, PartialEq)]
pub struct NashCertificate<T> {
    pub is_nash: bool,
    pub payoffs: Vector<T>,
    pub best: T,
    /// First support strategy that falls short of the best reply.
    pub violator: Option<usize>,
}

/// Weak Nash test: every support strategy must earn at least the best
/// payoff minus `tol`. Off-support ties are accepted.
pub fn is_nash<T: Scalar>(
    matrix: &PayoffMatrix<T>,
    x: &SimplexPoint<T>,
    tol: T,
) -> NashCertificate<T> {
    let payoffs = expected_payoffs(matrix, x);
    let best = payoffs
        .iter()
        .skip(1)
        .fold(payoffs[0].clone(), |m, p| if *p > m { p.clone() } else { m });
    let violator = x
        .support()
        .find(|&i| payoffs[i].clone() < best.clone() - tol.clone());
    NashCertificate {
        is_nash: violator.is_none(),
        payoffs,
        best,
        violator,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint<T> {
    pub label: String,
    pub shares: SimplexPoint<T>,
}

/// The supplied equilibria of a game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EquilibriumSet<T> {
    points: Vec<LabeledPoint<T>>,
}

impl<T: Scalar> EquilibriumSet<T> {
    /// Builds the set, rejecting any point that fails [`is_nash`].
    pub fn verified(matrix: &PayoffMatrix<T>, points: Vec<LabeledPoint<T>>, tol: T) -> Result<Self> {
        for p in &points {
            let cert = is_nash(matrix, &p.shares, tol.clone());
            if !cert.is_nash {
                return Err(Error::InvalidConfig(format!(
                    "{} is not a Nash equilibrium (strategy {} falls short)",
                    p.label,
                    cert.violator.map_or(0, |i| i + 1)
                )));
            }
        }
        Ok(EquilibriumSet { points })
    }

    pub fn canonical() -> Self {
        EquilibriumSet {
            points: vec![
                LabeledPoint {
                    label: "Nash_1".into(),
                    shares: SimplexPoint::nash_1(),
                },
                LabeledPoint {
                    label: "Nash_2".into(),
                    shares: SimplexPoint::nash_2(),
                },
            ],
        }
    }

    pub fn points(&self) -> &[LabeledPoint<T>] {
        &self.points
    }

    pub fn get(&self, label: &str) -> Option<&SimplexPoint<T>> {
        self.points.iter().find(|p| p.label == label).map(|p| &p.shares)
    }
}

/// The game file read by the CLI and the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub payoff_matrix: [Vector<f64>; STRATEGIES],
    pub equilibria: Vec<LabeledPoint<f64>>,
}

impl GameFile {
    pub fn canonical() -> Self {
        GameFile {
            payoff_matrix: *PayoffMatrix::<f64>::canonical().rows(),
            equilibria: EquilibriumSet::<f64>::canonical().points,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: GameFile = serde_json::from_str(&text)?;
        file.equilibrium_set()?;
        Ok(file)
    }

    pub fn matrix(&self) -> PayoffMatrix<f64> {
        PayoffMatrix::new(self.payoff_matrix)
    }

    pub fn equilibrium_set(&self) -> Result<EquilibriumSet<f64>> {
        EquilibriumSet::verified(&self.matrix(), self.equilibria.clone(), 1e-9)
    }
}
