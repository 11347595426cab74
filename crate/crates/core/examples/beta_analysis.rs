//! Cumulative word-encounter ledgers by source, and the paired standardized
//! regressions of surprisal on trial, demonstration and corpus frequencies.
//!
//! cargo run --example beta_analysis

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnd::stats::{paired_beta_analysis, vif, FrequencyLedger, Source, DEFAULT_VIF_BOUND};

fn main() -> anyhow::Result<()> {
    let words: Vec<String> = ["ball", "dog", "cup", "book", "jump", "run"].iter().map(|s| s.to_string()).collect();
    let mut ledger = FrequencyLedger::new(&words);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid: Vec<u64> = (1..=20).map(|i| i * 50).collect();
    for step in 1..=1000u64 {
        let w = &words[rng.gen_range(0..words.len())];
        ledger.update(step, Source::Corpus, &format!("look at the {w}"))?;
        if step % 4 == 0 {
            // Trials drift towards the first words; demos stay uniform.
            let t = &words[rng.gen_range(0..3)];
            ledger.update(step, Source::Trial, &format!("{t} {t}"))?;
            let d = &words[rng.gen_range(0..words.len())];
            ledger.update(step, Source::Demo, &format!("the {d}"))?;
        }
    }
    let table = ledger.cumulative(&grid);

    // Surprisal that falls with trial exposure plus noise.
    let mut surprisal: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for w in &words {
        let trial = table.series(w, Source::Trial).expect("tracked");
        surprisal.insert(w.clone(), trial.iter().map(|&c| 9.0 - 0.9 * (1.0 + c as f64).ln() + rng.gen_range(-0.1..0.1)).collect());
    }
    let res = paired_beta_analysis(&table, &surprisal, "all", &words, DEFAULT_VIF_BOUND)?;
    for row in &res.rows {
        println!("{:>6}: beta {:+.3}  r {:+.3}  vif {:.2}", row.source.name(), row.beta.unwrap_or(f64::NAN), row.r.unwrap_or(f64::NAN), row.vif.unwrap_or(f64::NAN));
    }

    let mean_log = |s: Source| -> Vec<f64> {
        (0..grid.len())
            .map(|i| words.iter().map(|w| (1.0 + table.series(w, s).unwrap()[i] as f64).ln()).sum::<f64>() / words.len() as f64)
            .collect()
    };
    let v = vif(&[mean_log(Source::Trial), mean_log(Source::Demo), mean_log(Source::Corpus)])?;
    println!("VIF trial/demo/corpus: {:.1} {:.1} {:.1}", v[0].value, v[1].value, v[2].value);
    Ok(())
}
