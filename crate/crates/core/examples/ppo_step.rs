//! One interactive step by hand: a fresh student and a trained teacher continue
//! the same prompts, both texts are scored by the age predictor, and a PPO
//! update is applied to the mixed batch.
//!
//! cargo run --release --example ppo_step

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnd::autodiff::{Adam, AdamConfig};
use tnd::lm::{Sampler, TransformerLM};
use tnd::ppo::{collect_demonstrations, collect_trials, ppo_update, score_with_student, PPOConfig};
use tnd::reward::dataset::prompt_pool;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let setup = common::teacher(dir.path(), 600)?;
    let predictor = common::predictor(&setup, 100)?;
    let vocab = &setup.vocab;

    let mut student = TransformerLM::new(setup.model_cfg, 1)?;
    let cfg = PPOConfig { lr: 1e-3, ..PPOConfig::default() };
    let mut opt = Adam::new(student.params(), AdamConfig::with_lr(cfg.lr));
    let sampler = Sampler::new(20, setup.model_cfg.context_len, vocab.specials())?;
    let prompts: Vec<Vec<usize>> = prompt_pool(vocab, &setup.corpus.train, 5).into_iter().take(8).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let step = 20;

    let trials = collect_trials(&student, &sampler, vocab, &prompts, &predictor, step, &mut rng)?;
    let demos = collect_demonstrations(&setup.teacher, &student, &sampler, vocab, &prompts, &predictor, step, &mut rng)?;
    for (t, d) in trials.iter().zip(&demos).take(3) {
        println!("prompt {:?}", vocab.decode(&t.prompt));
        println!("  trial {:+.2}  {}", t.reward.value, t.continuation);
        println!("  demo  {:+.2}  {}", d.reward.value, d.continuation);
    }

    let pairs: Vec<(&[usize], &[usize])> = demos.iter().map(|d| (d.prompt.as_slice(), d.generated.as_slice())).collect();
    let demo_lp = |m: &TransformerLM| -> tnd::Result<f64> {
        Ok(score_with_student(m, vocab.bos(), &pairs)?.iter().map(|(lp, _)| lp.iter().sum::<f64>()).sum())
    };
    let before = demo_lp(&student)?;
    let batch: Vec<_> = trials.into_iter().chain(demos.iter().cloned()).collect();
    let stats = ppo_update(&mut student, &mut opt, vocab.bos(), &batch, &cfg)?;
    println!("{stats:#?}");
    println!("student log-prob of the demonstrations: {before:.2} -> {:.2}", demo_lp(&student)?);
    Ok(())
}
