//! Generates the desk corpus, splits off a validation part and writes both as
//! JSON lines.
//!
//!     cargo run --release --example generate_data -- /tmp/desk 0

use std::path::PathBuf;

use ctxbert::data::{split_corpus, Corpus, GeneratorConfig};

fn main() -> ctxbert::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "desk-corpus".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    std::fs::create_dir_all(&dir).map_err(|e| ctxbert::Error::io(&dir, e))?;

    let corpus = Corpus::generate(&GeneratorConfig::desk(seed), 1)?;
    let (train, val) = split_corpus(&corpus, 0.1, seed)?;
    for (name, part) in [("corpus", &corpus), ("train", &train), ("val", &val)] {
        let path = dir.join(format!("{name}.jsonl"));
        part.save(&path)?;
        println!(
            "{}  {} outfits  sha256 {}",
            path.display(),
            part.len(),
            part.checksum()
        );
    }

    let lengths = corpus.outfits.iter().fold([0usize; 16], |mut acc, o| {
        acc[o.items.len().min(15)] += 1;
        acc
    });
    for (len, n) in lengths.iter().enumerate().filter(|(_, n)| **n > 0) {
        println!("length {len:>2}: {n}");
    }
    Ok(())
}
