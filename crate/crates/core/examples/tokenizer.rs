//! Trains the word-level BPE tokenizer on the bundled corpus and round-trips a sentence.
//!
//! cargo run --example tokenizer -- [vocab_size]

use tnd::lm::{corpus::read_lines, train_bpe};

fn main() -> anyhow::Result<()> {
    let size: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(384);
    let lines = read_lines(concat!(env!("CARGO_MANIFEST_DIR"), "/data/desk_corpus.txt").as_ref())?;
    let vocab = train_bpe(&lines, size)?;
    println!("{} tokens after {} merges", vocab.len(), vocab.merges().len());

    let text = "look at the big red ball on the table";
    let ids = vocab.encode(text);
    let pieces: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap_or("?")).collect();
    println!("{text:?} -> {ids:?}");
    println!("pieces: {}", pieces.join(" "));
    println!("decoded: {:?}", vocab.decode(&ids));
    for w in ["ball", "giraffe"] {
        match vocab.word_token(w) {
            Some(id) => println!("{w}: single token {id}"),
            None => println!("{w}: split into {} pieces", vocab.encode(w).len()),
        }
    }
    Ok(())
}
