use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use equisel_core::agents::{run_treatment, SessionLog};
use equisel_core::measurements::{aggregate_treatment, write_fig3, write_fig4, write_fig5, TreatmentReport};
use serde::Serialize;

use crate::checks::{self, Check};
use crate::manifest::RunManifest;

pub struct Reproduction {
    pub logs: Vec<Vec<SessionLog>>,
    pub reports: Vec<TreatmentReport>,
}

/// Runs every treatment of the manifest (sessions in parallel) and aggregates.
pub fn run(manifest: &RunManifest) -> anyhow::Result<Reproduction> {
    manifest.validate()?;
    let mut logs = Vec::with_capacity(manifest.treatments.len());
    let mut reports = Vec::with_capacity(manifest.treatments.len());
    for (i, t) in manifest.treatments.iter().enumerate() {
        let batch = run_treatment(&manifest.template(t.b), t.sessions, manifest.seed_base(i))
            .with_context(|| format!("simulating b={}", t.b))?;
        reports.push(aggregate_treatment(&batch, &manifest.analysis)?);
        logs.push(batch);
    }
    Ok(Reproduction { logs, reports })
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub master_seed: u64,
    pub rounds: u32,
    pub sessions: Vec<(f64, usize)>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn summarize(manifest: &RunManifest, reports: &[TreatmentReport]) -> Summary {
    let checks = [checks::selection_flip(reports), checks::cycles_vanish(reports)]
        .into_iter()
        .flatten()
        .collect();
    Summary {
        master_seed: manifest.master_seed,
        rounds: manifest.rounds,
        sessions: reports.iter().map(|r| (r.b, r.sessions)).collect(),
        checks,
    }
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes `fig3.csv`, `fig4.csv`, `fig5.csv` and `summary.json`.
pub fn write_outputs(dir: &Path, reports: &[TreatmentReport], summary: &Summary) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = create(dir, "fig3.csv")?;
    write_fig3(reports, &mut w)?;
    w.flush()?;
    let mut w = create(dir, "fig4.csv")?;
    write_fig4(reports, &mut w)?;
    w.flush()?;
    let mut w = create(dir, "fig5.csv")?;
    write_fig5(reports, &mut w)?;
    w.flush()?;
    let mut w = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::TreatmentRun;

    fn tiny() -> RunManifest {
        RunManifest {
            rounds: 40,
            treatments: vec![
                TreatmentRun { b: -0.8, sessions: 2 },
                TreatmentRun { b: 0.0, sessions: 2 },
                TreatmentRun { b: 0.8, sessions: 2 },
            ],
            ..RunManifest::default()
        }
    }

    #[test]
    fn outputs_are_deterministic() {
        let m = tiny();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let r = run(&m).unwrap();
            write_outputs(d.path(), &r.reports, &summarize(&m, &r.reports)).unwrap();
        }
        for f in ["fig3.csv", "fig4.csv", "fig5.csv", "summary.json"] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let fig3 = std::fs::read_to_string(dirs[0].path().join("fig3.csv")).unwrap();
        assert_eq!(fig3.lines().count(), 4);
    }

    #[test]
    fn sessions_use_distinct_seeds() {
        let r = run(&tiny()).unwrap();
        let seeds: std::collections::HashSet<u64> = r.logs.iter().flatten().map(|l| l.config.seed).collect();
        assert_eq!(seeds.len(), 6);
    }
}
