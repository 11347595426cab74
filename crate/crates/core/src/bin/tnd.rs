use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use tnd::harness::pipeline::{self, Workspace};
use tnd::harness::{ExperimentConfig, OUTPUT_ROOT_ENV};
use tnd::tnd::RunMode;
use tnd::Error;

#[derive(Parser)]
#[command(name = "tnd", version, about = "Trial-and-demonstration language learning lab")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, short, global = true, default_value = "tnd.toml")]
    config: PathBuf,
    /// Overrides the config's output root.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    /// Overrides the config's seed (single-run commands) or seed list (suites).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the teacher and save its trajectory.
    TrainTeacher,
    /// Sample the trajectory and fit the age predictor.
    BuildReward,
    /// Train one student.
    TrainStudent {
        #[arg(long, default_value = "tnd")]
        mode: RunMode,
        /// Apply the configured mask to the teacher's demonstrations.
        #[arg(long)]
        masked: bool,
    },
    /// Every configured mode crossed with every seed.
    RunSuite {
        /// Restrict to one mode.
        #[arg(long)]
        mode: Option<RunMode>,
    },
    /// Surprisal curves, fits and nAoA tables for a suite.
    Evaluate {
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Source beta table and plateau regression for an evaluated suite.
    Analyze {
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Redraw the SVG figures of an evaluated suite.
    Plot {
        #[arg(long)]
        suite: Option<PathBuf>,
    },
    /// Masked TnD against unmasked TnD on the same seeds.
    MaskExperiment,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    eprintln!("{}", json!({"status": "error", "kind": kind, "exit_code": code, "message": message}));
    ExitCode::from(code)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::Index(_) => "index",
        Error::Contract(_) => "contract",
        Error::Input(_) => "input",
        Error::Config(_) => "config",
        Error::Integrity { .. } => "integrity",
        Error::Training(_) => "training",
        Error::Analysis(_) => "analysis",
        Error::Collinearity(..) => "collinearity",
        Error::Io { .. } => "io",
        Error::Serde(_) => "serde",
    }
}

fn run(cli: Cli) -> tnd::Result<serde_json::Value> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(root) = cli.output_root {
        cfg.output_root = root;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.suite.seeds = vec![s];
        cfg.mask.seeds = vec![s];
    }
    let jobs = cli.jobs.unwrap_or(cfg.suite.jobs).max(1);
    if let Cmd::RunSuite { mode: Some(m) } = &cli.cmd {
        cfg.suite.modes = vec![*m];
    }
    let ws = Workspace::open(&cfg)?;
    let suite_or = |s: Option<PathBuf>| s.unwrap_or_else(|| ws.layout.suite_dir());
    Ok(match cli.cmd {
        Cmd::TrainTeacher => {
            let t = pipeline::train_teacher(&ws)?;
            println!("teacher: {} checkpoints, held-out loss {:.4} nats/token", t.checkpoints, t.final_loss);
            serde_json::to_value(t)?
        }
        Cmd::BuildReward => {
            let r = pipeline::build_reward(&ws, jobs)?;
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "age predictor: {} samples, held-out MSE {}, held-out Spearman {}",
                r.n_samples,
                fmt(r.report.heldout_mse),
                fmt(r.report.heldout_spearman)
            );
            serde_json::to_value(r)?
        }
        Cmd::TrainStudent { mode, masked } => {
            let mask = if masked { Some(pipeline::choose_mask(&ws)?) } else { None };
            let e = pipeline::train_student(&ws, mode, cfg.seed, mask.as_ref())?;
            println!("student {}: {} checkpoints in {}", e.run_dir.display(), e.checkpoints.len(), ws.layout.suite_dir().join(&e.run_dir).display());
            serde_json::to_value(e)?
        }
        Cmd::RunSuite { .. } => {
            let m = pipeline::run_suite(&ws, jobs)?;
            println!("suite: {} runs, {} failed", m.runs.len(), m.failures());
            if m.failures() > 0 {
                return Err(Error::Training(format!("{} suite runs failed; see manifest.json", m.failures())));
            }
            serde_json::to_value(m)?
        }
        Cmd::Evaluate { suite } => {
            let s = pipeline::evaluate(&ws, &suite_or(suite), jobs)?;
            for g in &s.groups {
                println!(
                    "{:<18} n={} nAoA@0.5 {:.3} ± {:.3}  nAoA range {:.3} ± {:.3}  final surprisal {:.3} ± {:.3}",
                    g.label(),
                    g.n_seeds,
                    g.naoa50_mean,
                    g.naoa50_se,
                    g.naoa_range_mean,
                    g.naoa_range_se,
                    g.final_surprisal_mean,
                    g.final_surprisal_se
                );
            }
            json!({"groups": s.groups})
        }
        Cmd::Analyze { suite } => {
            let a = pipeline::analyze(&ws, &suite_or(suite))?;
            for r in &a.summary {
                println!("{:<10} {:<10} {:<7} beta {:+.3} ± {:.3} (n={})", r.mode.to_string(), r.group, r.source.to_string(), r.beta_mean, r.beta_se, r.n_runs);
            }
            for p in &a.plateau {
                println!("plateau vs unigram {}: r = {:.3} (n={})", p.run, p.regression.r, p.regression.n);
            }
            json!({"summary": a.summary, "plateau": a.plateau, "warnings": a.warnings})
        }
        Cmd::Plot { suite } => {
            let files = pipeline::plot(&suite_or(suite))?;
            for f in &files {
                println!("{}", f.display());
            }
            json!({"files": files})
        }
        Cmd::MaskExperiment => {
            let m = pipeline::mask_experiment(&ws, jobs)?;
            println!(
                "masked words nAoA@0.5: masked {:.3} ± {:.3}, unmasked {:.3} ± {:.3}; masked tokens in {} demos: {}",
                m.masked_mean, m.masked_se, m.unmasked_mean, m.unmasked_se, m.demos_scanned, m.masked_tokens_in_demos
            );
            serde_json::to_value(m)?
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return fail("usage", 1, &e.kind().to_string());
        }
    };
    match run(cli) {
        Ok(v) => {
            log::debug!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(error_kind(&e), exit_code(&e), &e.to_string()),
    }
}
