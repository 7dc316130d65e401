use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ContextSchema;
use crate::error::{Error, Result};

/// How the context vector enters the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    /// No conditioning.
    None,
    /// Context concatenated to every position, then projected.
    C,
    /// Projected context prepended as an extra position.
    Np,
    /// Read-only global state read by every block.
    Gs,
    /// Global state updated between blocks.
    Gsu,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::None,
        MethodKind::C,
        MethodKind::Np,
        MethodKind::Gs,
        MethodKind::Gsu,
    ];

    pub fn uses_context(self) -> bool {
        self != MethodKind::None
    }

    pub fn has_global_state(self) -> bool {
        matches!(self, MethodKind::Gs | MethodKind::Gsu)
    }

    /// Lower-case name used on the command line and in logs.
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::None => "none",
            MethodKind::C => "c",
            MethodKind::Np => "np",
            MethodKind::Gs => "gs",
            MethodKind::Gsu => "gsu",
        }
    }

    /// Bracketed label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::None => "[None]",
            MethodKind::C => "[C]",
            MethodKind::Np => "[NP]",
            MethodKind::Gs => "[GS]",
            MethodKind::Gsu => "[GSU]",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .trim_matches(|c| c == '[' || c == ']')
            .to_ascii_lowercase()
            .as_str()
        {
            "none" => Ok(MethodKind::None),
            "c" => Ok(MethodKind::C),
            "np" => Ok(MethodKind::Np),
            "gs" => Ok(MethodKind::Gs),
            "gsu" => Ok(MethodKind::Gsu),
            other => Err(Error::Usage(format!("unknown method {other:?}"))),
        }
    }
}

/// Parameterization of the concatenation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// One matrix over `[x; c]`, `d_model × (d_model + d_context)`.
    Literal,
    /// Context projected to `d_model` first, then `[x; Wc]` merged by a
    /// `d_model × 2·d_model` matrix.
    TableMatch,
}

impl FromStr for ConcatMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "literal" => Ok(ConcatMode::Literal),
            "table-match" => Ok(ConcatMode::TableMatch),
            other => Err(Error::Usage(format!("unknown concat mode {other:?}"))),
        }
    }
}

/// Reserved article ids.
pub const MASK_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const RESERVED_IDS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_gs_hidden: usize,
    pub d_transfer_hidden: usize,
    /// Includes the reserved ids.
    pub vocab_size: usize,
    /// Longest item set accepted.
    pub max_len: usize,
    pub dropout_p: f64,
    pub layer_norm_eps: f64,
    pub method: MethodKind,
    pub c_mode: ConcatMode,
    pub tie_output_embedding: bool,
    /// Allocate query/key maps for the global-state read and route it
    /// through the generic attention op.
    pub gs_query_key: bool,
    /// Give the normalization after the global-state read its own gain and bias.
    pub gs_affine_norm: bool,
    /// Standard deviation of the truncated-normal weight init.
    pub init_std: f64,
    pub context: ContextSchema,
}

impl ModelConfig {
    /// `d_model=128`, 4 blocks, 8 heads, `d_context=736`, 30,000 articles.
    pub fn paper(method: MethodKind) -> Self {
        Self {
            d_model: 128,
            n_blocks: 4,
            n_heads: 8,
            d_ff: 256,
            d_gs_hidden: 128,
            d_transfer_hidden: 256,
            vocab_size: 30_000,
            max_len: 8,
            dropout_p: 0.1,
            layer_norm_eps: 1e-12,
            method,
            c_mode: ConcatMode::TableMatch,
            tie_output_embedding: true,
            gs_query_key: false,
            gs_affine_norm: false,
            init_std: 0.02,
            context: ContextSchema::paper(),
        }
    }

    /// Small preset that trains in minutes on one CPU core.
    pub fn desk(method: MethodKind) -> Self {
        Self {
            d_model: 32,
            n_blocks: 2,
            n_heads: 4,
            d_ff: 64,
            d_gs_hidden: 32,
            d_transfer_hidden: 64,
            vocab_size: 502,
            max_len: 8,
            dropout_p: 0.1,
            layer_norm_eps: 1e-12,
            method,
            c_mode: ConcatMode::TableMatch,
            tie_output_embedding: true,
            gs_query_key: false,
            gs_affine_norm: false,
            init_std: 0.2,
            context: ContextSchema::desk(),
        }
    }

    pub fn preset(name: &str, method: MethodKind) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(method)),
            "desk" => Ok(Self::desk(method)),
            other => Err(Error::Usage(format!("unknown preset {other:?}"))),
        }
    }

    pub fn d_context(&self) -> usize {
        self.context.d_context()
    }

    pub fn n_articles(&self) -> usize {
        self.vocab_size - RESERVED_IDS
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("d_gs_hidden", self.d_gs_hidden),
            ("d_transfer_hidden", self.d_transfer_hidden),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= RESERVED_IDS {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no articles",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!(
                "init_std {} must be positive",
                self.init_std
            )));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        self.context.validate()
    }
}

/// Closed-form count of trainable scalars, excluding the article embedding
/// table, the context feature embedding tables and the vocabulary output
/// layer.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let dense = |d_in: usize, d_out: usize| d_in * d_out + d_out;
    let fnn = |d_in: usize, hidden: usize, d_out: usize| dense(d_in, hidden) + dense(hidden, d_out);
    let norm = 2 * d;

    let mut block = 4 * dense(d, d) + 2 * norm + fnn(d, config.d_ff, d);
    if config.method.has_global_state() {
        block += dense(d, d);
        if config.gs_query_key {
            block += 2 * dense(d, d);
        }
        if config.gs_affine_norm {
            block += norm;
        }
    }

    let dc = config.d_context();
    let context = match config.method {
        MethodKind::None => 0,
        MethodKind::C => match config.c_mode {
            ConcatMode::Literal => dense(d + dc, d),
            ConcatMode::TableMatch => dense(dc, d) + dense(2 * d, d),
        },
        MethodKind::Np => dense(dc, d),
        MethodKind::Gs => fnn(dc, config.d_gs_hidden, d),
        MethodKind::Gsu => {
            fnn(dc, config.d_gs_hidden, d)
                + (config.n_blocks - 1) * (fnn(d, config.d_transfer_hidden, d) + norm)
        }
    };

    let head = dense(d, d);
    config.n_blocks * block + context + head
}
