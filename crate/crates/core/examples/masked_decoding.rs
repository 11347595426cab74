//! Teacher generation with a word mask: any masked word the sampler would emit
//! is replaced by the best unmasked token at that position.
//!
//! cargo run --release --example masked_decoding

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnd::lm::Sampler;
use tnd::reward::dataset::prompt_pool;
use tnd::tnd::MaskSet;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let setup = common::teacher(dir.path(), 600)?;
    let vocab = &setup.vocab;
    let mask = MaskSet::new(vocab, &["ball", "dog", "cup", "book", "baby"])?;
    let ctx = setup.model_cfg.context_len;
    let plain = Sampler::new(20, ctx, vocab.specials())?;
    let masked = mask.sampler(vocab, 20, ctx)?;
    let prompts: Vec<Vec<usize>> = prompt_pool(vocab, &setup.corpus.eval, 5).into_iter().take(300).collect();

    let count = |outs: &[Vec<usize>]| outs.iter().flatten().filter(|id| mask.token_ids.contains(id)).count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = plain.generate(&setup.teacher, &prompts, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = masked.generate(&setup.teacher, &prompts, &mut rng)?;
    // Prompts may contain masked words; only the continuations are controlled.
    let cont = |outs: &[Vec<usize>]| outs.iter().zip(&prompts).map(|(o, p)| o[p.len()..].to_vec()).collect::<Vec<_>>();
    println!("masked tokens in {} continuations: plain {}, masked {}", prompts.len(), count(&cont(&a)), count(&cont(&b)));
    for (x, y) in a.iter().zip(&b).filter(|(x, y)| x != y).take(4) {
        println!("plain:  {}\nmasked: {}\n", vocab.decode(x), vocab.decode(y));
    }
    Ok(())
}
