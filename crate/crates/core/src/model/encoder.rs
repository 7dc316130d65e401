//! The conditioned encoder: embeddings, context injection, blocks and the
//! masked-item prediction head.

use std::rc::Rc;

use crate::autograd::{
    attention_heads, concat_cols, concat_rows, AttentionLayout, Graph, Mode, ParamId, ParamStore,
    Tensor, Var,
};
use crate::error::{Error, Result};
use crate::model::batch::MaskedBatch;
use crate::model::config::{ConcatMode, MethodKind, ModelConfig, MASK_ID, RESERVED_IDS};
use crate::rng::{Rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct DenseIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// `W₂·max(0, W₁x + b₁) + b₂`.
#[derive(Debug, Clone, Copy)]
pub struct FnnIds {
    pub fc1: DenseIds,
    pub fc2: DenseIds,
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub wq: DenseIds,
    pub wk: DenseIds,
    pub wv: DenseIds,
    pub wo: DenseIds,
    pub ln1: NormIds,
    pub ffn: FnnIds,
    pub ln2: NormIds,
    /// Value map of the global-state read; present iff the method has one.
    pub vv: Option<DenseIds>,
    pub vq: Option<DenseIds>,
    pub vk: Option<DenseIds>,
    pub gs_norm: Option<NormIds>,
}

#[derive(Debug, Clone, Copy)]
pub struct TransferParams {
    pub fnn: FnnIds,
    pub norm: NormIds,
}

#[derive(Debug, Clone)]
pub enum ContextParams {
    None,
    ConcatLiteral {
        merge: DenseIds,
    },
    ConcatTable {
        proj: DenseIds,
        merge: DenseIds,
    },
    NewPosition {
        proj: DenseIds,
    },
    GlobalState {
        init: FnnIds,
    },
    GlobalStateUpdate {
        init: FnnIds,
        transfers: Vec<TransferParams>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct MlmHead {
    pub transform: DenseIds,
    /// Separate output matrix when the article embedding is not tied.
    pub output_weight: Option<ParamId>,
    pub output_bias: ParamId,
}

/// Per-layer context representation `c̃⁽ˡ⁾`, one row per set in the batch.
#[derive(Debug, Clone, Copy)]
pub struct GlobalState<'g, T: Scalar> {
    pub value: Var<'g, T>,
    /// 1-based index of the block that reads this state.
    pub layer: usize,
}

/// Row structure of the sequence fed to the blocks.
#[derive(Debug, Clone)]
pub struct SetLayout {
    pub lengths: Vec<usize>,
    /// Set index of every row.
    pub row_set: Vec<usize>,
    pub attention: Rc<AttentionLayout>,
}

impl SetLayout {
    pub fn new(lengths: &[usize]) -> Self {
        let row_set = lengths
            .iter()
            .enumerate()
            .flat_map(|(s, &l)| std::iter::repeat_n(s, l))
            .collect();
        Self {
            lengths: lengths.to_vec(),
            row_set,
            attention: Rc::new(AttentionLayout::sets(lengths)),
        }
    }

    pub fn rows(&self) -> usize {
        self.row_set.len()
    }
}

/// Output of [`ContextualBert::prepare_input`].
#[derive(Debug)]
pub struct PreparedInput<'g, T: Scalar> {
    pub input: Var<'g, T>,
    pub layout: SetLayout,
    /// Row holding each set's masked item.
    pub masked_rows: Vec<usize>,
}

/// Result of a forward pass.
pub struct Forward<'g, T: Scalar> {
    /// `sets × articles`; column `j` scores article id `j + 2`.
    pub logits: Var<'g, T>,
    /// Global state consumed by each block, in block order.
    pub global_states: Vec<Tensor<T>>,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: Option<Rng>,
    std: f64,
}

impl<T: Scalar> Builder<'_, T> {
    fn weight(&mut self, name: String, shape: &[usize], counted: bool) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match &mut self.rng {
            Some(rng) => (0..n)
                .map(|_| T::lit(rng.truncated_normal(self.std)))
                .collect(),
            None => vec![T::zero(); n],
        };
        self.store.insert(
            name,
            Tensor::new(shape.to_vec(), data).expect("positive dims"),
            counted,
        )
    }

    fn fill(&mut self, name: String, n: usize, value: T, counted: bool) -> ParamId {
        self.store.insert(name, Tensor::full(&[n], value), counted)
    }

    fn dense(&mut self, name: &str, d_in: usize, d_out: usize) -> DenseIds {
        DenseIds {
            weight: self.weight(format!("{name}.weight"), &[d_out, d_in], true),
            bias: self.fill(format!("{name}.bias"), d_out, T::zero(), true),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.fill(format!("{name}.gain"), d, T::one(), true),
            bias: self.fill(format!("{name}.bias"), d, T::zero(), true),
        }
    }

    fn fnn(&mut self, name: &str, d_in: usize, hidden: usize, d_out: usize) -> FnnIds {
        FnnIds {
            fc1: self.dense(&format!("{name}.fc1"), d_in, hidden),
            fc2: self.dense(&format!("{name}.fc2"), hidden, d_out),
        }
    }
}

/// Transformer encoder over item sets, conditioned on a context vector.
#[derive(Debug, Clone)]
pub struct ContextualBert<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    embed: ParamId,
    features: Vec<ParamId>,
    context: ContextParams,
    blocks: Vec<BlockParams>,
    head: MlmHead,
    bypass_transfer_norm: bool,
}

impl<T: Scalar> ContextualBert<T> {
    /// Randomly initialized model; weights come from the `Init` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, Some(Rng::new(seed, Stream::Init)))
    }

    /// Model with zero weights (unit layer-norm gains), used when loading.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::build(config, None)
    }

    fn build(config: ModelConfig, rng: Option<Rng>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            rng,
            std: config.init_std,
        };
        let d = config.d_model;
        let dc = config.d_context();

        let embed = b.weight("embed.articles".into(), &[config.vocab_size, d], false);
        let features = if config.method.uses_context() {
            config
                .context
                .features
                .iter()
                .enumerate()
                .map(|(i, f)| b.weight(format!("ctx.feat{i}"), &[f.cardinality, f.width], false))
                .collect()
        } else {
            Vec::new()
        };

        let context = match config.method {
            MethodKind::None => ContextParams::None,
            MethodKind::C => match config.c_mode {
                ConcatMode::Literal => ContextParams::ConcatLiteral {
                    merge: b.dense("ctx.concat", d + dc, d),
                },
                ConcatMode::TableMatch => ContextParams::ConcatTable {
                    proj: b.dense("ctx.proj", dc, d),
                    merge: b.dense("ctx.merge", 2 * d, d),
                },
            },
            MethodKind::Np => ContextParams::NewPosition {
                proj: b.dense("ctx.np", dc, d),
            },
            MethodKind::Gs => ContextParams::GlobalState {
                init: b.fnn("ctx.init", dc, config.d_gs_hidden, d),
            },
            MethodKind::Gsu => {
                let init = b.fnn("ctx.init", dc, config.d_gs_hidden, d);
                let transfers = (1..config.n_blocks)
                    .map(|l| TransferParams {
                        fnn: b.fnn(&format!("ctx.transfer{l}"), d, config.d_transfer_hidden, d),
                        norm: b.norm(&format!("ctx.transfer{l}.ln"), d),
                    })
                    .collect();
                ContextParams::GlobalStateUpdate { init, transfers }
            }
        };

        let gs = config.method.has_global_state();
        let blocks = (0..config.n_blocks)
            .map(|l| {
                let p = |part: &str| format!("block{l}.{part}");
                BlockParams {
                    wq: b.dense(&p("wq"), d, d),
                    wk: b.dense(&p("wk"), d, d),
                    wv: b.dense(&p("wv"), d, d),
                    wo: b.dense(&p("wo"), d, d),
                    ln1: b.norm(&p("ln1"), d),
                    ffn: FnnIds {
                        fc1: b.dense(&p("ffn1"), d, config.d_ff),
                        fc2: b.dense(&p("ffn2"), config.d_ff, d),
                    },
                    ln2: b.norm(&p("ln2"), d),
                    vv: gs.then(|| b.dense(&p("vv"), d, d)),
                    vq: (gs && config.gs_query_key).then(|| b.dense(&p("vq"), d, d)),
                    vk: (gs && config.gs_query_key).then(|| b.dense(&p("vk"), d, d)),
                    gs_norm: (gs && config.gs_affine_norm).then(|| b.norm(&p("lngs"), d)),
                }
            })
            .collect();

        let head = MlmHead {
            transform: b.dense("head.transform", d, d),
            output_weight: (!config.tie_output_embedding).then(|| {
                b.weight(
                    "head.output.weight".into(),
                    &[config.n_articles(), d],
                    false,
                )
            }),
            output_bias: b.fill(
                "head.output.bias".into(),
                config.n_articles(),
                T::zero(),
                false,
            ),
        };

        Ok(Self {
            config,
            params,
            embed,
            features,
            context,
            blocks,
            head,
            bypass_transfer_norm: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    pub fn context_params(&self) -> &ContextParams {
        &self.context
    }

    pub fn head(&self) -> &MlmHead {
        &self.head
    }

    /// Runtime enumeration of counted trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.counted_scalars()
    }

    /// Skips the normalization after each global-state transfer, so that
    /// identity transfer weights make the update an exact identity.
    /// Verification only.
    pub fn set_transfer_norm_bypass(&mut self, bypass: bool) {
        self.bypass_transfer_norm = bypass;
    }

    /// Same weights at another precision.
    pub fn cast<U: Scalar>(&self) -> ContextualBert<U> {
        ContextualBert {
            config: self.config.clone(),
            params: self.params.cast(),
            embed: self.embed,
            features: self.features.clone(),
            context: self.context.clone(),
            blocks: self.blocks.clone(),
            head: self.head,
            bypass_transfer_norm: self.bypass_transfer_norm,
        }
    }

    fn p<'g>(&self, g: &'g Graph<T>, id: ParamId) -> Var<'g, T> {
        g.param(&self.params, id)
    }

    fn dense<'g>(&self, g: &'g Graph<T>, x: &Var<'g, T>, ids: DenseIds) -> Result<Var<'g, T>> {
        x.linear(&self.p(g, ids.weight), Some(&self.p(g, ids.bias)))
    }

    fn fnn<'g>(&self, g: &'g Graph<T>, x: &Var<'g, T>, ids: FnnIds) -> Result<Var<'g, T>> {
        let h = self.dense(g, x, ids.fc1)?.relu();
        self.dense(g, &h, ids.fc2)
    }

    fn norm<'g>(
        &self,
        g: &'g Graph<T>,
        x: &Var<'g, T>,
        ids: Option<NormIds>,
    ) -> Result<Var<'g, T>> {
        match ids {
            Some(n) => x.layer_norm(
                self.config.layer_norm_eps,
                Some(&self.p(g, n.gain)),
                Some(&self.p(g, n.bias)),
            ),
            None => x.layer_norm(self.config.layer_norm_eps, None, None),
        }
    }

    /// Concatenated per-feature embedding rows, one row per set.
    pub fn embed_context<'g>(
        &self,
        g: &'g Graph<T>,
        contexts: &[Vec<usize>],
    ) -> Result<Var<'g, T>> {
        if self.features.is_empty() {
            return Err(Error::Usage(format!(
                "method {} has no context embeddings",
                self.config.method
            )));
        }
        let schema = &self.config.context;
        let mut columns = Vec::with_capacity(self.features.len());
        for (f, &table) in self.features.iter().enumerate() {
            let ids: Vec<usize> = contexts
                .iter()
                .map(|values| {
                    schema.check_values(values)?;
                    Ok(values[f])
                })
                .collect::<Result<_>>()?;
            columns.push(self.p(g, table).gather_rows(&ids)?);
        }
        concat_cols(&columns)
    }

    /// Builds the block input for the configured method.
    ///
    /// `x0` holds the item embeddings of all sets; `context` is required
    /// for the concatenation and new-position methods and ignored otherwise.
    pub fn prepare_input<'g>(
        &self,
        g: &'g Graph<T>,
        x0: Var<'g, T>,
        context: Option<Var<'g, T>>,
        lengths: &[usize],
        masked: &[usize],
    ) -> Result<PreparedInput<'g, T>> {
        let layout = SetLayout::new(lengths);
        if x0.shape() != [layout.rows(), self.config.d_model] {
            return Err(Error::shape(
                "prepare_input",
                &x0.shape(),
                &[layout.rows(), self.config.d_model],
            ));
        }
        let mut offsets = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in lengths {
            offsets.push(acc);
            acc += l;
        }
        let masked_rows: Vec<usize> = offsets.iter().zip(masked).map(|(o, m)| o + m).collect();
        let need_context = || {
            let c = context.ok_or_else(|| {
                Error::Usage(format!(
                    "method {} needs a context vector",
                    self.config.method
                ))
            })?;
            let shape = c.shape();
            if shape != [lengths.len(), self.config.d_context()] {
                return Err(Error::shape(
                    "context width",
                    &shape,
                    &[lengths.len(), self.config.d_context()],
                ));
            }
            Ok(c)
        };

        let (input, layout, masked_rows) = match &self.context {
            ContextParams::None
            | ContextParams::GlobalState { .. }
            | ContextParams::GlobalStateUpdate { .. } => (x0, layout, masked_rows),
            ContextParams::ConcatLiteral { merge } => {
                let c = need_context()?.gather_rows(&layout.row_set)?;
                let joined = concat_cols(&[x0, c])?;
                (self.dense(g, &joined, *merge)?, layout, masked_rows)
            }
            ContextParams::ConcatTable { proj, merge } => {
                let c = self
                    .dense(g, &need_context()?, *proj)?
                    .gather_rows(&layout.row_set)?;
                let joined = concat_cols(&[x0, c])?;
                (self.dense(g, &joined, *merge)?, layout, masked_rows)
            }
            ContextParams::NewPosition { proj } => {
                let c = self.dense(g, &need_context()?, *proj)?;
                let sets = lengths.len();
                let stacked = concat_rows(&[c, x0])?;
                let mut order = Vec::with_capacity(stacked.shape()[0]);
                for (s, (&o, &l)) in offsets.iter().zip(lengths).enumerate() {
                    order.push(s);
                    order.extend((0..l).map(|j| sets + o + j));
                }
                let input = stacked.gather_rows(&order)?;
                let longer: Vec<usize> = lengths.iter().map(|l| l + 1).collect();
                let rows = offsets
                    .iter()
                    .enumerate()
                    .zip(masked)
                    .map(|((s, o), m)| o + s + 1 + m)
                    .collect();
                (input, SetLayout::new(&longer), rows)
            }
        };
        Ok(PreparedInput {
            input,
            layout,
            masked_rows,
        })
    }

    /// `c̃⁽¹⁾ = FNN(c)`.
    pub fn global_state_init<'g>(
        &self,
        g: &'g Graph<T>,
        context: Var<'g, T>,
    ) -> Result<GlobalState<'g, T>> {
        let init = match &self.context {
            ContextParams::GlobalState { init } | ContextParams::GlobalStateUpdate { init, .. } => {
                *init
            }
            _ => {
                return Err(Error::Usage(format!(
                    "method {} has no global state",
                    self.config.method
                )))
            }
        };
        Ok(GlobalState {
            value: self.fnn(g, &context, init)?,
            layer: 1,
        })
    }

    /// `c̃⁽ˡ⁺¹⁾ = LayerNorm(FNN_l(c̃⁽ˡ⁾))` with per-layer weights.
    pub fn global_state_transfer<'g>(
        &self,
        g: &'g Graph<T>,
        state: GlobalState<'g, T>,
    ) -> Result<GlobalState<'g, T>> {
        let ContextParams::GlobalStateUpdate { transfers, .. } = &self.context else {
            return Err(Error::Usage(format!(
                "method {} has no global state transfer",
                self.config.method
            )));
        };
        if state.layer == 0 || state.layer >= self.config.n_blocks {
            return Err(Error::Usage(format!(
                "no transfer after layer {} of {}",
                state.layer, self.config.n_blocks
            )));
        }
        let t = transfers[state.layer - 1];
        let h = self.fnn(g, &state.value, t.fnn)?;
        let value = if self.bypass_transfer_norm {
            h
        } else {
            self.norm(g, &h, Some(t.norm))?
        };
        Ok(GlobalState {
            value,
            layer: state.layer + 1,
        })
    }

    /// Multi-head self-attention of `x` within each set, followed by the
    /// output projection.
    pub fn self_attention<'g>(
        &self,
        g: &'g Graph<T>,
        x: &Var<'g, T>,
        block: &BlockParams,
        layout: &SetLayout,
    ) -> Result<Var<'g, T>> {
        let q = self.dense(g, x, block.wq)?;
        let k = self.dense(g, x, block.wk)?;
        let v = self.dense(g, x, block.wv)?;
        let heads = attention_heads(&q, &k, &v, layout.attention.clone(), self.config.n_heads)?;
        self.dense(g, &heads, block.wo)
    }

    /// Reads the global state into every row of each set.
    fn read_global_state<'g>(
        &self,
        g: &'g Graph<T>,
        a_hat: &Var<'g, T>,
        state: &GlobalState<'g, T>,
        block: &BlockParams,
        layout: &SetLayout,
    ) -> Result<Var<'g, T>> {
        let vv = block
            .vv
            .ok_or_else(|| Error::Usage("block has no global-state value map".into()))?;
        let values = self.dense(g, &state.value, vv)?;
        match (block.vq, block.vk) {
            (Some(vq), Some(vk)) => {
                let q = self.dense(g, a_hat, vq)?;
                let k = self.dense(g, &state.value, vk)?;
                let single = AttentionLayout {
                    query_segments: layout.attention.query_segments.clone(),
                    key_segments: (0..layout.lengths.len()).map(|s| s..s + 1).collect(),
                    masks: None,
                };
                attention_heads(&q, &k, &values, Rc::new(single), self.config.n_heads)
            }
            _ => values.gather_rows(&layout.row_set),
        }
    }

    /// One encoder block; with a global state the read stage sits between
    /// the attention sublayer and the feed-forward sublayer.
    pub fn bert_block<'g>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        state: Option<&GlobalState<'g, T>>,
        index: usize,
        layout: &SetLayout,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var<'g, T>> {
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::Usage(format!("no block {index}")))?;
        if state.is_some() != self.config.method.has_global_state() {
            return Err(Error::Usage(format!(
                "global state must be given iff the method has one ({})",
                self.config.method
            )));
        }
        let p = self.config.dropout_p;
        let a = self.self_attention(g, &x, block, layout)?;
        let a_hat = self.norm(g, &a.dropout(p, mode, rng)?.add(&x)?, Some(block.ln1))?;
        let b_hat = match state {
            Some(state) => {
                let b = self.read_global_state(g, &a_hat, state, block, layout)?;
                self.norm(g, &b.dropout(p, mode, rng)?.add(&a_hat)?, block.gs_norm)?
            }
            None => a_hat,
        };
        let f = self.fnn(g, &b_hat, block.ffn)?;
        self.norm(g, &f.add(&b_hat)?, Some(block.ln2))
    }

    /// Scores every article at each set's masked position.
    pub fn forward<'g>(
        &self,
        g: &'g Graph<T>,
        batch: &MaskedBatch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Forward<'g, T>> {
        batch.validate(&self.config)?;
        let embed = self.p(g, self.embed);
        let x0 = embed.gather_rows(&batch.items)?;
        let context = if self.config.method.uses_context() {
            Some(self.embed_context(g, &batch.contexts)?)
        } else {
            None
        };
        let prepared = self.prepare_input(g, x0, context, &batch.lengths, &batch.masked)?;
        let mut state = match context {
            Some(c) if self.config.method.has_global_state() => Some(self.global_state_init(g, c)?),
            _ => None,
        };

        let mut x = prepared.input;
        let mut consumed = Vec::new();
        for l in 0..self.config.n_blocks {
            if let Some(s) = &state {
                consumed.push(s.value.value());
            }
            x = self.bert_block(g, x, state.as_ref(), l, &prepared.layout, mode, rng)?;
            if self.config.method == MethodKind::Gsu && l + 1 < self.config.n_blocks {
                state = Some(self.global_state_transfer(g, state.expect("gsu state"))?);
            }
        }

        let h = x.gather_rows(&prepared.masked_rows)?;
        let h = self.dense(g, &h, self.head.transform)?.relu();
        let out_w = match self.head.output_weight {
            Some(w) => self.p(g, w),
            None => embed.slice_rows(RESERVED_IDS, self.config.vocab_size)?,
        };
        let logits = h.linear(&out_w, Some(&self.p(g, self.head.output_bias)))?;
        Ok(Forward {
            logits,
            global_states: consumed,
        })
    }

    /// Mean cross-entropy of the masked targets.
    pub fn loss<'g>(
        &self,
        g: &'g Graph<T>,
        batch: &MaskedBatch,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let fwd = self.forward(g, batch, mode, rng)?;
        let loss = fwd
            .logits
            .cross_entropy_with_logits(&batch.target_columns())?;
        Ok((loss, fwd.logits))
    }

    /// Vocabulary-sized logits for one set in eval mode; reserved ids get
    /// negative infinity.
    pub fn predict_logits(&self, items: &[usize], context: &[usize]) -> Result<Vec<T>> {
        let masked: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == MASK_ID)
            .map(|(i, _)| i)
            .collect();
        if masked.len() != 1 {
            return Err(Error::Data(format!(
                "expected exactly one mask, found {}",
                masked.len()
            )));
        }
        let mut batch = MaskedBatch::new();
        // Target is irrelevant for prediction; any article id passes validation.
        batch.push(items, masked[0], context, RESERVED_IDS);
        let g = Graph::new();
        let mut rng = Rng::new(0, Stream::Dropout);
        let fwd = self.forward(&g, &batch, Mode::Eval, &mut rng)?;
        let mut out = vec![T::neg_infinity(); RESERVED_IDS];
        out.extend_from_slice(fwd.logits.value().data());
        Ok(out)
    }
}
