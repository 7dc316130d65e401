use serde::{Deserialize, Serialize};

use crate::data::schema::ContextSchema;
use crate::error::{Error, Result};
use crate::model::RESERVED_IDS;
use crate::rng::{Rng, Stream};

/// Outfits generated per shard. Part of the corpus format: changing it
/// changes the bytes produced for a seed.
pub const SHARD_SIZE: usize = 4096;

/// Probabilities of lengths 4..=8; the mean is exactly 5.
pub const DEFAULT_LENGTH_PROBS: [f64; 5] = [0.40, 0.35, 0.13, 0.09, 0.03];

/// One outfit: a set of article ids plus the customer's context values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outfit {
    pub items: Vec<usize>,
    pub context: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Article count plus the reserved ids.
    pub vocab_size: usize,
    pub n_clusters: usize,
    /// Share of item mass spread uniformly instead of following the context.
    pub eta: f64,
    /// Zipf exponent of the in-cluster article ranking of each context value.
    pub popularity_skew: f64,
    pub n_outfits: usize,
    pub schema: ContextSchema,
    pub seed: u64,
    pub min_len: usize,
    /// `length_probs[i]` is the probability of length `min_len + i`.
    pub length_probs: Vec<f64>,
}

impl GeneratorConfig {
    /// 500 articles in 10 clusters, 20k outfits.
    pub fn desk(seed: u64) -> Self {
        Self {
            vocab_size: 502,
            n_clusters: 10,
            eta: 0.2,
            popularity_skew: 1.5,
            n_outfits: 20_000,
            schema: ContextSchema::desk(),
            seed,
            min_len: 4,
            length_probs: DEFAULT_LENGTH_PROBS.to_vec(),
        }
    }

    /// Vocabulary and schema of the full-size model; 29,998 articles in 283
    /// clusters of 106.
    pub fn paper(seed: u64) -> Self {
        Self {
            vocab_size: 30_000,
            n_clusters: 283,
            n_outfits: 380_000,
            schema: ContextSchema::paper(),
            ..Self::desk(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(seed)),
            "paper" => Ok(Self::paper(seed)),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn n_articles(&self) -> usize {
        self.vocab_size.saturating_sub(RESERVED_IDS)
    }

    pub fn cluster_size(&self) -> usize {
        self.n_articles() / self.n_clusters
    }

    pub fn max_len(&self) -> usize {
        self.min_len + self.length_probs.len() - 1
    }

    pub fn mean_length(&self) -> f64 {
        self.length_probs
            .iter()
            .enumerate()
            .map(|(i, p)| (self.min_len + i) as f64 * p)
            .sum()
    }

    /// Cluster containing an article id.
    pub fn cluster_of(&self, id: usize) -> usize {
        (id - RESERVED_IDS) / self.cluster_size()
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.n_clusters == 0
            || self.n_articles() == 0
            || !self.n_articles().is_multiple_of(self.n_clusters)
        {
            return Err(Error::Config(format!(
                "{} articles cannot be split evenly into {} clusters",
                self.n_articles(),
                self.n_clusters
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.popularity_skew >= 0.0 && self.popularity_skew.is_finite()) {
            return Err(Error::Config(format!(
                "popularity skew {} must be finite and non-negative",
                self.popularity_skew
            )));
        }
        if self.min_len < 2 || self.length_probs.is_empty() {
            return Err(Error::Config("outfits need at least two items".into()));
        }
        let total: f64 = self.length_probs.iter().sum();
        if self.length_probs.iter().any(|p| *p < 0.0 || !p.is_finite())
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "length probabilities sum to {total}, not 1"
            )));
        }
        if self.cluster_size() < self.max_len() {
            return Err(Error::Config(format!(
                "clusters of {} articles cannot hold outfits of length {}",
                self.cluster_size(),
                self.max_len()
            )));
        }
        Ok(())
    }

    /// Checks one outfit against the length, id and context invariants.
    pub fn check_outfit(&self, outfit: &Outfit) -> Result<()> {
        let n = outfit.items.len();
        if n < self.min_len || n > self.max_len() {
            return Err(Error::Data(format!(
                "outfit length {n} outside {}..={}",
                self.min_len,
                self.max_len()
            )));
        }
        for (i, &id) in outfit.items.iter().enumerate() {
            if id < RESERVED_IDS || id >= self.vocab_size {
                return Err(Error::Data(format!(
                    "article id {id} outside {RESERVED_IDS}..{}",
                    self.vocab_size
                )));
            }
            if outfit.items[..i].contains(&id) {
                return Err(Error::Data(format!("article id {id} repeated")));
            }
        }
        self.schema.check_values(&outfit.context)
    }
}

/// Seeded per-(feature, value) tastes. Each value votes for one cluster and
/// ranks that cluster's articles in a random order with Zipf-shaped weights
/// `(r + 1)^-skew`.
#[derive(Debug, Clone, PartialEq)]
pub struct TasteMap {
    votes: Vec<Vec<usize>>,
    /// `order[f][v][r]` is the in-cluster offset of the article ranked `r`.
    order: Vec<Vec<Vec<usize>>>,
    zipf: Vec<f64>,
    cluster_size: usize,
    n_articles: usize,
    eta: f64,
}

impl TasteMap {
    pub fn new(config: &GeneratorConfig) -> Self {
        let mut rng = Rng::new(config.seed, Stream::DataGen).fork(u64::MAX);
        let size = config.cluster_size();
        let mut votes = Vec::new();
        let mut order = Vec::new();
        for f in &config.schema.features {
            let mut fv = Vec::with_capacity(f.cardinality);
            let mut fo = Vec::with_capacity(f.cardinality);
            for _ in 0..f.cardinality {
                fv.push(rng.below(config.n_clusters));
                let mut perm: Vec<usize> = (0..size).collect();
                rng.shuffle(&mut perm);
                fo.push(perm);
            }
            votes.push(fv);
            order.push(fo);
        }
        let raw: Vec<f64> = (0..size)
            .map(|r| ((r + 1) as f64).powf(-config.popularity_skew))
            .collect();
        let total: f64 = raw.iter().sum();
        Self {
            votes,
            order,
            zipf: raw.iter().map(|w| w / total).collect(),
            cluster_size: size,
            n_articles: config.n_articles(),
            eta: config.eta,
        }
    }

    pub fn vote(&self, feature: usize, value: usize) -> usize {
        self.votes[feature][value]
    }

    /// Article id that `(feature, value)` ranks `rank`-th within its cluster.
    pub fn ranked(&self, feature: usize, value: usize, rank: usize) -> usize {
        RESERVED_IDS
            + self.votes[feature][value] * self.cluster_size
            + self.order[feature][value][rank]
    }

    /// Per-item article distribution of a context, indexed by article column
    /// (`id - 2`): `eta` spread uniformly, the rest split equally between the
    /// features' tastes.
    pub fn article_probs(&self, context: &[usize]) -> Vec<f64> {
        let mut q = vec![self.eta / self.n_articles as f64; self.n_articles];
        let share = (1.0 - self.eta) / context.len() as f64;
        for (f, &v) in context.iter().enumerate() {
            for (r, z) in self.zipf.iter().enumerate() {
                q[self.ranked(f, v, r) - RESERVED_IDS] += share * z;
            }
        }
        q
    }

    /// One draw from [`article_probs`](Self::article_probs).
    fn sample_item(&self, context: &[usize], rng: &mut Rng) -> usize {
        if rng.uniform() < self.eta {
            return RESERVED_IDS + rng.below(self.n_articles);
        }
        let f = rng.below(context.len());
        let r = rng.weighted_index(&self.zipf);
        self.ranked(f, context[f], r)
    }
}

/// Redraws allowed per outfit before the tastes are declared too
/// concentrated to produce distinct items.
const MAX_ATTEMPTS: usize = 100_000;

fn sample_outfit(config: &GeneratorConfig, tastes: &TasteMap, rng: &mut Rng) -> Result<Outfit> {
    let context: Vec<usize> = config
        .schema
        .features
        .iter()
        .map(|f| rng.below(f.cardinality))
        .collect();
    let len = config.min_len + rng.weighted_index(&config.length_probs);
    let mut items = Vec::with_capacity(len);
    // Independent draws conditioned on all items being distinct.
    for _ in 0..MAX_ATTEMPTS {
        items.clear();
        for _ in 0..len {
            items.push(tastes.sample_item(&context, rng));
        }
        if (1..len).all(|i| !items[..i].contains(&items[i])) {
            return Ok(Outfit { items, context });
        }
    }
    Err(Error::Config(format!(
        "no {len} distinct articles after {MAX_ATTEMPTS} attempts; popularity skew too high"
    )))
}

fn generate_shard(
    config: &GeneratorConfig,
    tastes: &TasteMap,
    shard: usize,
) -> Result<Vec<Outfit>> {
    let start = shard * SHARD_SIZE;
    let count = SHARD_SIZE.min(config.n_outfits - start);
    let mut rng = Rng::new(config.seed, Stream::DataGen).fork(shard as u64);
    (0..count)
        .map(|_| sample_outfit(config, tastes, &mut rng))
        .collect()
}

/// Draws `n_outfits` outfits. Shards are generated on up to `threads`
/// workers and concatenated in shard order, so the result does not depend
/// on the worker count.
pub fn generate_outfits(config: &GeneratorConfig, threads: usize) -> Result<Vec<Outfit>> {
    config.validate()?;
    let tastes = TasteMap::new(config);
    let n_shards = config.n_outfits.div_ceil(SHARD_SIZE);
    let threads = threads.clamp(1, n_shards.max(1));
    let per_worker = n_shards.div_ceil(threads).max(1);
    let mut shards: Vec<Result<Vec<Outfit>>> = (0..n_shards).map(|_| Ok(Vec::new())).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in shards.chunks_mut(per_worker).enumerate() {
            let tastes = &tastes;
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = generate_shard(config, tastes, w * per_worker + i);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(config.n_outfits);
    for shard in shards {
        out.extend(shard?);
    }
    Ok(out)
}
