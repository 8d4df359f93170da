use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context};
use equisel_core::agents::{default_mode, AgentPolicy, SessionConfig, Treatment, DEFAULT_PLAYERS, DEFAULT_ROUNDS};
use equisel_core::controller::ControlMode;
use equisel_core::game::StrategyPermutation;
use equisel_core::measurements::AggregateOptions;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FORMAT: u32 = 1;
pub const DEFAULT_MASTER_SEED: u64 = 1;

/// Sessions per treatment and rounds per session of the `--quick` profile.
pub const QUICK_SESSIONS: usize = 3;
pub const QUICK_ROUNDS: u32 = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRun {
    pub b: f64,
    pub sessions: usize,
}

/// Everything `reproduce` needs; session seeds derive from `master_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub format: u32,
    pub master_seed: u64,
    pub rounds: u32,
    pub players: u32,
    pub policy: AgentPolicy,
    pub mode: ControlMode,
    pub permutation: StrategyPermutation,
    pub treatments: Vec<TreatmentRun>,
    pub analysis: AggregateOptions,
    /// Permits `b` values outside the treatment map.
    pub allow_any_b: bool,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            format: MANIFEST_FORMAT,
            master_seed: DEFAULT_MASTER_SEED,
            rounds: DEFAULT_ROUNDS,
            players: DEFAULT_PLAYERS,
            policy: AgentPolicy::default(),
            mode: default_mode(),
            permutation: StrategyPermutation::IDENTITY,
            treatments: Treatment::ALL
                .iter()
                .map(|t| TreatmentRun {
                    b: t.b(),
                    sessions: t.reference_sessions(),
                })
                .collect(),
            analysis: AggregateOptions::default(),
            allow_any_b: false,
        }
    }
}

impl RunManifest {
    pub fn quick() -> Self {
        let mut m = Self::default();
        m.rounds = QUICK_ROUNDS;
        for t in &mut m.treatments {
            t.sessions = QUICK_SESSIONS;
        }
        m
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        m.validate()?;
        Ok(m)
    }

    /// Seed of the first session of treatment `i`; sessions count up from it.
    pub fn seed_base(&self, i: usize) -> u64 {
        self.master_seed
            .wrapping_mul(1_000_000)
            .wrapping_add(i as u64 * 1_000)
    }

    pub fn session_seeds(&self, i: usize) -> Vec<u64> {
        let base = self.seed_base(i);
        (0..self.treatments[i].sessions as u64).map(|k| base.wrapping_add(k)).collect()
    }

    pub fn template(&self, b: f64) -> SessionConfig {
        SessionConfig {
            b,
            permutation: self.permutation,
            rounds: self.rounds,
            players: self.players,
            policy: self.policy,
            mode: self.mode,
            seed: 0,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.format != MANIFEST_FORMAT {
            bail!("unsupported manifest format {}", self.format);
        }
        if self.treatments.is_empty() {
            bail!("manifest lists no treatments");
        }
        let mut seen = HashSet::new();
        for (i, t) in self.treatments.iter().enumerate() {
            if t.sessions == 0 {
                bail!("treatment b={} has no sessions", t.b);
            }
            self.template(t.b).validate(self.allow_any_b)?;
            for s in self.session_seeds(i) {
                if !seen.insert(s) {
                    bail!("session seed {s} is used twice");
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mirrors_reference_counts() {
        let m = RunManifest::default();
        let counts: Vec<usize> = m.treatments.iter().map(|t| t.sessions).collect();
        assert_eq!(counts, [8, 8, 8, 12, 12]);
        assert_eq!(m.rounds, 360);
        m.validate().unwrap();
    }

    #[test]
    fn quick_profile() {
        let m = RunManifest::quick();
        assert!(m.treatments.iter().all(|t| t.sessions == 3));
        assert_eq!(m.rounds, 120);
    }

    #[test]
    fn seeds_are_unique_and_overlaps_are_caught() {
        let m = RunManifest::default();
        let all: Vec<u64> = (0..m.treatments.len()).flat_map(|i| m.session_seeds(i)).collect();
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());

        let mut bad = m.clone();
        bad.treatments[0].sessions = 1_500;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn off_map_b_needs_override() {
        let mut m = RunManifest::default();
        m.treatments.push(TreatmentRun { b: 0.5, sessions: 2 });
        assert!(m.validate().is_err());
        m.allow_any_b = true;
        m.validate().unwrap();
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let m: RunManifest = serde_json::from_str(r#"{"master_seed": 7, "treatments": [{"b": 0.8, "sessions": 2}]}"#).unwrap();
        assert_eq!(m.master_seed, 7);
        assert_eq!(m.rounds, 360);
        let back: RunManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
