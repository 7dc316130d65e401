use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::generator::{generate_outfits, GeneratorConfig, Outfit};
use crate::error::{Error, Result};
use crate::model::checkpoint::canonical_json;
use crate::rng::{Rng, Stream};

pub const FORMAT: &str = "ctxbert-corpus";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub part: String,
    pub val_fraction: f64,
    pub seed: u64,
}

/// First line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub generator: GeneratorConfig,
    pub split: Option<SplitInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub outfits: Vec<Outfit>,
}

impl Corpus {
    pub fn generate(config: &GeneratorConfig, threads: usize) -> Result<Self> {
        Ok(Self {
            header: CorpusHeader {
                format: FORMAT.into(),
                version: FORMAT_VERSION,
                generator: config.clone(),
                split: None,
            },
            outfits: generate_outfits(config, threads)?,
        })
    }

    pub fn generator(&self) -> &GeneratorConfig {
        &self.header.generator
    }

    pub fn len(&self) -> usize {
        self.outfits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outfits.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.header.format != FORMAT || self.header.version != FORMAT_VERSION {
            return Err(Error::Format {
                what: "corpus",
                reason: format!(
                    "expected {FORMAT} v{FORMAT_VERSION}, found {} v{}",
                    self.header.format, self.header.version
                ),
            });
        }
        self.header.generator.validate()?;
        for (i, o) in self.outfits.iter().enumerate() {
            self.header
                .generator
                .check_outfit(o)
                .map_err(|e| Error::Data(format!("outfit {i}: {e}")))?;
        }
        Ok(())
    }

    /// JSON lines: canonical header, then one outfit per line.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = canonical_json(&self.header).map_err(std::io::Error::other)?;
        writeln!(w, "{header}")?;
        for o in &self.outfits {
            writeln!(w, "{}", serde_json::to_string(o)?)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    /// Hex SHA-256 of the serialized corpus.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()).as_slice())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Parses and validates a corpus.
    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::Format {
            what: "corpus",
            reason: "empty file".into(),
        })?;
        let header: CorpusHeader =
            serde_json::from_str(&header_line.map_err(|e| Error::io("<corpus>", e))?)?;
        let mut outfits = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let outfit: Outfit = serde_json::from_str(&line).map_err(|e| Error::Format {
                what: "corpus",
                reason: format!("line {}: {e}", n + 2),
            })?;
            outfits.push(outfit);
        }
        let corpus = Self { header, outfits };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Deterministic shuffle-split into (train, validation). The validation part
/// holds `round(n * val_fraction)` outfits; both parts keep corpus order.
pub fn split_corpus(corpus: &Corpus, val_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let n = corpus.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed, Stream::Split).shuffle(&mut order);
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let part = |name: &str, keep: bool| Corpus {
        header: CorpusHeader {
            split: Some(SplitInfo {
                part: name.into(),
                val_fraction,
                seed,
            }),
            ..corpus.header.clone()
        },
        outfits: corpus
            .outfits
            .iter()
            .zip(&is_val)
            .filter(|(_, &v)| v == keep)
            .map(|(o, _)| o.clone())
            .collect(),
    };
    Ok((part("train", false), part("validation", true)))
}
