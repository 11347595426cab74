//! Writes the synthetic desk corpus and its word lists.
//!
//! cargo run --example synth_corpus -- [out_dir] [n_sentences] [seed]

use std::path::PathBuf;

use tnd::harness::synth;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synth_data".into()));
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    std::fs::create_dir_all(&dir)?;
    let lines = synth::generate_corpus(n, seed);
    std::fs::write(dir.join("desk_corpus.txt"), lines.join("\n") + "\n")?;
    std::fs::write(dir.join("pos_map.txt"), synth::pos_map_text())?;
    let tracked: Vec<&str> = [synth::NOUNS, synth::VERBS, synth::ADJECTIVES, synth::INTRANSITIVE].concat();
    std::fs::write(dir.join("words.txt"), tracked.join("\n") + "\n")?;
    for l in lines.iter().take(5) {
        println!("{l}");
    }
    println!("{} sentences, {} tracked words -> {}", lines.len(), tracked.len(), dir.display());
    Ok(())
}
