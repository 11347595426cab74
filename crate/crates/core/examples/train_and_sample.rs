//! Trains a tiny transformer with the causal LM objective and samples from it with top-k.
//!
//! cargo run --release --example train_and_sample -- [steps]

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnd::autodiff::{Adam, AdamConfig};
use tnd::lm::train::eval_loss;
use tnd::lm::{clm_step, corpus::read_lines, train_bpe, training_sequence, Corpus, ModelConfig, Sampler, TransformerLM};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(400);
    let lines = read_lines(concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_corpus.txt").as_ref())?;
    let corpus = Corpus::split(lines, 0.9, 0)?;
    let vocab = train_bpe(&corpus.train, 384)?;
    let cfg = ModelConfig { d_model: 32, n_heads: 4, n_layers: 2, context_len: 24, vocab_size: vocab.len() };
    let seqs: Vec<Vec<usize>> = corpus.train.iter().map(|s| training_sequence(&vocab, s, cfg.context_len)).collect();
    let held: Vec<Vec<usize>> = corpus.eval.iter().take(200).map(|s| training_sequence(&vocab, s, cfg.context_len)).collect();

    let mut model = TransformerLM::new(cfg, 0)?;
    let mut opt = Adam::new(model.params(), AdamConfig::with_lr(3e-3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("step 0: held-out loss {:.3} (ln V = {:.3})", eval_loss(&model, &held)?, (vocab.len() as f64).ln());
    for step in 1..=steps {
        let batch: Vec<Vec<usize>> = seqs.choose_multiple(&mut rng, 16).cloned().collect();
        let loss = clm_step(&mut model, &mut opt, &batch)?;
        if step % 100 == 0 {
            println!("step {step}: train loss {loss:.3}, held-out loss {:.3}", eval_loss(&model, &held)?);
        }
    }

    let sampler = Sampler::new(20, cfg.context_len, vocab.specials())?;
    for prompt in ["look at the", "do you want", "the baby"] {
        let out = sampler.sample(&model, &vocab.encode(prompt), &mut rng)?;
        println!("{prompt} ... -> {}", vocab.decode(&out));
    }
    Ok(())
}
