//! The whole experiment through the harness: teacher, reward, a reduced
//! ablation suite, evaluation and frequency analysis.
//!
//! cargo run --release --example desk_pipeline -- [out_dir] [student_steps]

use std::path::PathBuf;

use tnd::harness::pipeline::{self, Workspace};
use tnd::harness::ExperimentConfig;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk_pipeline_out".into()));
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);

    let mut cfg = ExperimentConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk.toml").as_ref())?;
    cfg.output_root = out;
    cfg.teacher.steps = 800;
    cfg.reward.contexts_per_checkpoint = 150;
    cfg.student.steps = steps;
    cfg.suite.seeds = vec![0, 1];
    let ws = Workspace::open(&cfg)?;

    let t = pipeline::train_teacher(&ws)?;
    println!("teacher: {} checkpoints, held-out loss {:.3}", t.checkpoints, t.final_loss);
    let r = pipeline::build_reward(&ws, 1)?;
    println!("reward: {} samples, held-out Spearman {:.3}", r.n_samples, r.report.heldout_spearman.unwrap_or(f64::NAN));
    let m = pipeline::run_suite(&ws, 1)?;
    println!("suite: {} runs, {} failed", m.runs.len(), m.failures());

    let suite = ws.layout.suite_dir();
    let ev = pipeline::evaluate(&ws, &suite, 1)?;
    for g in &ev.groups {
        println!("{:<6} nAoA@0.5 {:.3} ± {:.3}  final surprisal {:.3}", g.label(), g.naoa50_mean, g.naoa50_se, g.final_surprisal_mean);
    }
    let an = pipeline::analyze(&ws, &suite)?;
    for row in an.summary.iter().filter(|r| r.group == "all") {
        println!("{:<6} {:<7} beta {:+.3} ± {:.3}", row.mode.name(), row.source.name(), row.beta_mean, row.beta_se);
    }
    println!("outputs under {}", ws.layout.root.display());
    Ok(())
}
