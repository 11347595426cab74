use std::path::{Path, PathBuf};
use std::process::Command;

use tnd::harness::pipeline::{self, Workspace};
use tnd::harness::{synth, ExperimentConfig};
use tnd::tnd::{RunMode, SuiteManifest};

fn write_inputs(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("corpus.txt"), synth::generate_corpus(1500, 4).join("\n")).unwrap();
    std::fs::write(dir.join("words.txt"), "ball\ndog\nbaby\nbook\ncat\ncup\nsee\nwant\nbig\nlittle\n").unwrap();
    std::fs::write(dir.join("pos.txt"), synth::pos_map_text()).unwrap();
    let cfg = r#"
seed = 3
output_root = "out"
[corpus]
path = "corpus.txt"
vocab_size = 200
[model]
d_model = 16
n_heads = 2
n_layers = 1
context_len = 20
[teacher]
steps = 60
batch_size = 8
lr = 3e-3
checkpoints = 8
[reward]
contexts_per_checkpoint = 20
[student]
steps = 40
clm_batch_size = 4
clm_lr = 1e-3
prompts_per_step = 3
checkpoints = 12
resume_every = 10
[ppo]
lr = 1e-3
[suite]
modes = ["clm", "tnd"]
seeds = [0]
[eval]
words = "words.txt"
pos_map = "pos.txt"
min_occurrences = 5
max_samples = 20
[mask]
size = 3
seeds = [0]
"#;
    let p = dir.join("tiny.toml");
    std::fs::write(&p, cfg).unwrap();
    p
}

fn workspace(cfg_path: &Path, root: &Path) -> Workspace {
    let mut cfg = ExperimentConfig::load(cfg_path).unwrap();
    cfg.output_root = root.to_path_buf();
    Workspace::open(&cfg).unwrap()
}

#[test]
fn stages_compose_and_rerun_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());
    let run = |root: &Path| {
        let ws = workspace(&cfg, root);
        let t = pipeline::train_teacher(&ws).unwrap();
        assert!(t.checkpoints >= 6 && t.final_loss.is_finite());
        let r = pipeline::build_reward(&ws, 1).unwrap();
        assert!(r.scatter.is_file());
        let m = pipeline::run_suite(&ws, 1).unwrap();
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.failures(), 0);
        ws
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ws = run(&a);
    run(&b);
    for cell in ["clm_seed0", "tnd_seed0"] {
        for f in ["metrics.jsonl", "ledger.jsonl"] {
            let x = std::fs::read(a.join("suite").join(cell).join(f)).unwrap();
            let y = std::fs::read(b.join("suite").join(cell).join(f)).unwrap();
            assert!(x == y, "{cell}/{f} differs between reruns");
        }
    }
    assert_eq!(std::fs::read(a.join("reward/predictor.bin")).unwrap(), std::fs::read(b.join("reward/predictor.bin")).unwrap());

    let suite = ws.layout.suite_dir();
    let ev = pipeline::evaluate(&ws, &suite, 1).unwrap();
    assert_eq!(ev.runs.len(), 2);
    for f in ["suite_eval.json", "naoa_table.csv", "learning_curves.csv", "learning_curves.svg", "effective_vocab.svg"] {
        assert!(suite.join("eval").join(f).is_file(), "missing {f}");
    }
    let svg = std::fs::read_to_string(suite.join("eval/learning_curves.svg")).unwrap();
    assert!(svg.contains("<polyline"));
    let an = pipeline::analyze(&ws, &suite).unwrap();
    assert!(!an.betas.is_empty());
    assert!(suite.join("analysis/beta_table.csv").is_file());
    assert!(!pipeline::plot(&suite).unwrap().is_empty());

    // A single student lands in the same suite and manifest.
    pipeline::train_student(&ws, RunMode::Demo, 1, None).unwrap();
    let m = SuiteManifest::load(&suite).unwrap();
    assert_eq!(m.runs.len(), 3);
    assert!(suite.join("demo_seed1/metrics.jsonl").is_file());
}

#[test]
fn masked_demos_never_contain_masked_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());
    let ws = workspace(&cfg, &dir.path().join("out"));
    pipeline::train_teacher(&ws).unwrap();
    pipeline::build_reward(&ws, 1).unwrap();
    let m = pipeline::mask_experiment(&ws, 1).unwrap();
    assert_eq!(m.mask.len(), 3);
    assert!(m.demos_scanned > 0);
    assert_eq!(m.masked_tokens_in_demos, 0);
    assert_eq!(m.masked_words_in_demos, 0);
}

fn tnd_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tnd"))
}

fn last_stderr_json(out: &std::process::Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON line in stderr: {err}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn cli_exit_codes_and_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());

    let out = tnd_bin().args(["--config", "/nonexistent.toml", "train-teacher"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let j = last_stderr_json(&out);
    assert_eq!(j["status"], "error");
    assert_eq!(j["kind"], "config");
    assert_eq!(j["exit_code"], 1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[corpus]\npath = \"nope.txt\"\n").unwrap();
    let out = tnd_bin().arg("-c").arg(&bad).arg("train-teacher").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("runs").exists(), "validation must fail before any output is written");

    let out = tnd_bin().arg("-c").arg(&cfg).arg("train-student").output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing teacher is a validation failure");

    let empty = dir.path().join("empty_suite");
    std::fs::create_dir_all(&empty).unwrap();
    let out = tnd_bin().arg("-c").arg(&cfg).arg("plot").arg("--suite").arg(&empty).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let j = last_stderr_json(&out);
    assert!(j["message"].as_str().unwrap().contains("empty report"));

    let out = tnd_bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = tnd_bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in ["train-teacher", "build-reward", "train-student", "run-suite", "evaluate", "analyze", "plot", "mask-experiment"] {
        assert!(help.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn output_root_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_inputs(dir.path());
    let root = dir.path().join("elsewhere");
    let out = tnd_bin().arg("-c").arg(&cfg).env(tnd::harness::OUTPUT_ROOT_ENV, &root).arg("train-teacher").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("teacher/checkpoints").is_dir());
    assert!(root.join("experiment.toml").is_file());
    assert!(!dir.path().join("out").exists());
}
