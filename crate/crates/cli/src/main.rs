use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use equisel_cli::checks::{self, Check};
use equisel_cli::manifest::{RunManifest, TreatmentRun};
use equisel_cli::{parse, reproduce};
use equisel_core::agents::{run_treatment, Frame, SessionConfig, SessionLog};
use equisel_core::controller::{ControlledReplicator, DesignReport};
use equisel_core::dynamics::{integrate, SimplexProjected};
use equisel_core::game::{GameFile, StrategyPermutation};
use equisel_core::measurements::{aggregate_treatment, write_fig3, write_fig4, write_fig5, AggregateOptions};
use equisel_core::{Design, Point};
use equisel_server::ServerConfig;

#[derive(Parser)]
#[command(name = "equisel", version, about = "Pole-assignment control of equilibrium selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameArg {
    Canonical,
    Permuted,
}

impl From<FrameArg> for Frame {
    fn from(f: FrameArg) -> Frame {
        match f {
            FrameArg::Canonical => Frame::Canonical,
            FrameArg::Permuted => Frame::Permuted,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the controller design report for one b.
    Design {
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        /// Game file (JSON); the bundled game by default.
        #[arg(long)]
        game: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the spectrum, eigenvector, gain, boundary and measurement oracles.
    Verify,
    /// Simulate sessions of one treatment and write their logs.
    Simulate {
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, default_value_t = 8)]
        sessions: usize,
        #[arg(long, default_value_t = 360)]
        rounds: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "logit")]
        policy: String,
        #[arg(long, default_value = "payoff")]
        mode: String,
        #[arg(long, default_value = "00")]
        perm: String,
        #[arg(long, default_value = "logs")]
        out: PathBuf,
        #[arg(long)]
        allow_any_b: bool,
    },
    /// Integrate the closed-loop flow and write the trajectory as CSV.
    Integrate {
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        /// Initial shares, comma separated.
        #[arg(long, default_value = "0.2,0.2,0.2,0.2,0.2")]
        x0: String,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        /// Clip negatives and renormalize after each step.
        #[arg(long)]
        clip: bool,
        #[arg(long)]
        game: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate session logs (files or directories of .jsonl) into figure data.
    Analyze {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "canonical")]
        frame: FrameArg,
        #[arg(long, default_value_t = 20)]
        smoothing: usize,
        #[arg(long, default_value_t = 100)]
        tail: usize,
    },
    /// Run all treatments of a manifest and write fig3/fig4/fig5 and a summary.
    Reproduce {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// 3 sessions per treatment, 120 rounds.
        #[arg(long)]
        quick: bool,
        /// Master seed; overrides the manifest.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        perm: Option<String>,
        /// Restrict to these b values.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        b: Vec<f64>,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
        /// Also export every session log under `<out>/logs`.
        #[arg(long)]
        logs: bool,
    },
    /// Host live sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        allow_any_b: bool,
        #[arg(long, default_value_t = 1)]
        server_code: u8,
    },
}

fn game_matrix(path: Option<&Path>) -> anyhow::Result<equisel_core::Payoffs> {
    Ok(match path {
        Some(p) => GameFile::load(p).with_context(|| format!("loading {}", p.display()))?.matrix(),
        None => equisel_core::Payoffs::canonical(),
    })
}

fn output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.detail);
    }
}

fn collect_logs(paths: &[PathBuf]) -> anyhow::Result<Vec<SessionLog>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in std::fs::read_dir(p)? {
                let f = entry?.path();
                if f.extension().is_some_and(|e| e == "jsonl") {
                    files.push(f);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    files
        .iter()
        .map(|f| SessionLog::load(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Design { b, game, out } => {
            let report = DesignReport::build(&game_matrix(game.as_deref())?, b)?;
            output(out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Verify => {
            let checks = checks::verify_all()?;
            print_checks(&checks);
            if !checks.iter().all(|c| c.passed) {
                bail!("verification failed");
            }
            Ok(())
        }
        Command::Simulate {
            b,
            sessions,
            rounds,
            seed,
            policy,
            mode,
            perm,
            out,
            allow_any_b,
        } => {
            let template = SessionConfig {
                b,
                rounds,
                policy: parse::policy(&policy)?,
                mode: parse::mode(&mode)?,
                permutation: StrategyPermutation::parse(&perm)?,
                ..SessionConfig::default()
            };
            template.validate(allow_any_b)?;
            let logs = run_treatment(&template, sessions, seed)?;
            std::fs::create_dir_all(&out)?;
            for log in &logs {
                log.export(&out)?;
            }
            let report = aggregate_treatment(&logs, &AggregateOptions::default())?;
            println!(
                "b={b}: {sessions} sessions x {rounds} rounds -> {}; tail mass {{1,2,3}} {:.3}, {{4,5}} {:.3}, |L| {:.4}",
                out.display(),
                report.mass_123(),
                report.mass_45(),
                report.abs_l
            );
            Ok(())
        }
        Command::Integrate {
            b,
            x0,
            dt,
            steps,
            clip,
            game,
            out,
        } => {
            let a = game_matrix(game.as_deref())?;
            let field = SimplexProjected(ControlledReplicator::new(a.clone(), Design::design(&a, b)?));
            let x0 = Point::new(parse::point(&x0)?)?;
            let traj = integrate(&field, &x0, dt, steps, clip)?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            output(out.as_deref(), &String::from_utf8(buf)?)
        }
        Command::Analyze {
            logs,
            out,
            frame,
            smoothing,
            tail,
        } => {
            let logs = collect_logs(&logs)?;
            let opts = AggregateOptions {
                smoothing,
                tail,
                frame: frame.into(),
                ..AggregateOptions::default()
            };
            let mut bs: Vec<f64> = logs.iter().map(SessionLog::b).collect();
            bs.sort_by(f64::total_cmp);
            bs.dedup();
            let reports = bs
                .iter()
                .map(|b| {
                    let group: Vec<SessionLog> = logs.iter().filter(|l| l.b() == *b).cloned().collect();
                    aggregate_treatment(&group, &opts)
                })
                .collect::<Result<Vec<_>, _>>()?;
            std::fs::create_dir_all(&out)?;
            write_fig3(&reports, std::fs::File::create(out.join("fig3.csv"))?)?;
            write_fig4(&reports, std::fs::File::create(out.join("fig4.csv"))?)?;
            write_fig5(&reports, std::fs::File::create(out.join("fig5.csv"))?)?;
            for r in &reports {
                println!(
                    "b={}: {} sessions; tail mass {{1,2,3}} {:.3}, {{4,5}} {:.3}; first crossing {:?}; |L| {:.4} +- {:.4}",
                    r.b,
                    r.sessions,
                    r.mass_123(),
                    r.mass_45(),
                    r.crossing,
                    r.abs_l,
                    r.abs_l_se
                );
            }
            Ok(())
        }
        Command::Reproduce {
            manifest,
            quick,
            seed,
            sessions,
            rounds,
            policy,
            mode,
            perm,
            b,
            out,
            logs,
        } => {
            let mut m = match (&manifest, quick) {
                (Some(p), _) => RunManifest::load(p)?,
                (None, true) => RunManifest::quick(),
                (None, false) => RunManifest::default(),
            };
            if quick && manifest.is_some() {
                m.rounds = equisel_cli::manifest::QUICK_ROUNDS;
                m.treatments.iter_mut().for_each(|t| t.sessions = equisel_cli::manifest::QUICK_SESSIONS);
            }
            if let Some(s) = seed {
                m.master_seed = s;
            }
            if let Some(r) = rounds {
                m.rounds = r;
            }
            if let Some(n) = sessions {
                m.treatments.iter_mut().for_each(|t| t.sessions = n);
            }
            if let Some(p) = policy {
                m.policy = parse::policy(&p)?;
            }
            if let Some(md) = mode {
                m.mode = parse::mode(&md)?;
            }
            if let Some(p) = perm {
                m.permutation = StrategyPermutation::parse(&p)?;
            }
            if !b.is_empty() {
                let n = m.treatments.first().map_or(8, |t| t.sessions);
                m.treatments = b.iter().map(|&b| TreatmentRun { b, sessions: n }).collect();
            }
            let r = reproduce::run(&m)?;
            let summary = reproduce::summarize(&m, &r.reports);
            reproduce::write_outputs(&out, &r.reports, &summary)?;
            if logs {
                let dir = out.join("logs");
                std::fs::create_dir_all(&dir)?;
                for log in r.logs.iter().flatten() {
                    log.export(&dir)?;
                }
            }
            println!("wrote {}", out.display());
            print_checks(&summary.checks);
            Ok(())
        }
        Command::Serve {
            addr,
            timeout_ms,
            log_dir,
            allow_any_b,
            server_code,
        } => {
            let config = ServerConfig {
                round_timeout: Duration::from_millis(timeout_ms),
                allow_any_b,
                log_dir,
                server_code,
                date: None,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(equisel_server::serve(addr, config))?;
            Ok(())
        }
    }
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
