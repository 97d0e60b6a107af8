use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, EncodedInput, HeadMode, ModelConfig};
use crate::compress::CompressionPlan;
use crate::corpus::{NormStats, QualityThreshold, SentencePair, Vocab};
use crate::error::{QeError, Result};
use crate::tensor::{AttentionShape, Real, Tape, Tensor, Var};

pub const EMBEDDING_PARAMS: [&str; 4] = ["token", "position", "ln.gamma", "ln.beta"];
pub const LAYER_PARAMS: [&str; 16] = [
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln1.gamma",
    "ln1.beta",
    "ffn.w_in",
    "ffn.b_in",
    "ffn.w_out",
    "ffn.b_out",
    "ln2.gamma",
    "ln2.beta",
];
pub const HEAD_PARAMS: [&str; 4] = ["w1", "b1", "w2", "b2"];

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings<T> {
    pub token: Tensor<T>,
    pub position: Tensor<T>,
    pub ln_gamma: Tensor<T>,
    pub ln_beta: Tensor<T>,
}

impl<T: Real> Embeddings<T> {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        Self {
            token: Tensor::randn(&[cfg.vocab_size, d], cfg.init_std, rng),
            position: Tensor::randn(&[cfg.max_positions, d], cfg.init_std, rng),
            ln_gamma: Tensor::ones(&[d]),
            ln_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.token, &self.position, &self.ln_gamma, &self.ln_beta]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.token, &mut self.position, &mut self.ln_gamma, &mut self.ln_beta]
    }
}

/// Post-norm transformer encoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub ffn_in: Tensor<T>,
    pub ffn_in_bias: Tensor<T>,
    pub ffn_out: Tensor<T>,
    pub ffn_out_bias: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
}

impl<T: Real> EncoderLayer<T> {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, f, s) = (cfg.d_model, cfg.d_ff, cfg.init_std);
        Self {
            wq: Tensor::randn(&[d, d], s, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::randn(&[d, d], s, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::randn(&[d, d], s, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::randn(&[d, d], s, rng),
            bo: Tensor::zeros(&[d]),
            ln1_gamma: Tensor::ones(&[d]),
            ln1_beta: Tensor::zeros(&[d]),
            ffn_in: Tensor::randn(&[d, f], s, rng),
            ffn_in_bias: Tensor::zeros(&[f]),
            ffn_out: Tensor::randn(&[f, d], s, rng),
            ffn_out_bias: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::ones(&[d]),
            ln2_beta: Tensor::zeros(&[d]),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ffn_in,
            &self.ffn_in_bias,
            &self.ffn_out,
            &self.ffn_out_bias,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ffn_in,
            &mut self.ffn_in_bias,
            &mut self.ffn_out,
            &mut self.ffn_out_bias,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }

    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// CLS vector → tanh hidden layer → one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> Head<T> {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: Tensor::randn(&[cfg.d_model, cfg.head_hidden], cfg.init_std, rng),
            b1: Tensor::zeros(&[cfg.head_hidden]),
            w2: Tensor::randn(&[cfg.head_hidden, 1], cfg.init_std, rng),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QeModel<T> {
    pub config: ModelConfig,
    pub embeddings: Embeddings<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub head: Head<T>,
    pub vocab: Vocab,
    pub norm_stats: NormStats,
    /// Raw-DA threshold the classification labels were derived from.
    pub label_threshold: Option<QualityThreshold>,
    /// Tokens kept after each layer when hard token pruning is active.
    pub retention: Option<Vec<usize>>,
    /// Compression steps applied to produce this model, oldest first.
    pub provenance: Vec<CompressionPlan>,
}

/// Which tokens survive each encoder layer.
#[derive(Clone, Copy, Debug)]
pub enum TokenMode<'m> {
    /// The model's own retention schedule, if it has one.
    Model,
    /// Every token, ignoring any stored schedule.
    Full,
    /// Rank-ordered soft masks, one `[slots]` variable per layer.
    Soft(&'m [Var]),
    /// Keep the `K_l` most significant tokens after layer `l`.
    Hard(&'m [usize]),
}

/// Wall time spent in each instrumented section of a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SectionTimes {
    pub embedding: Duration,
    pub layers: Vec<Duration>,
    pub head: Duration,
}

pub struct ForwardOptions<'m> {
    pub tokens: TokenMode<'m>,
    pub timer: Option<&'m mut SectionTimes>,
}

impl Default for ForwardOptions<'_> {
    fn default() -> Self {
        Self {
            tokens: TokenMode::Model,
            timer: None,
        }
    }
}

pub struct ForwardOut {
    /// `[batch, 1]` score or logit.
    pub output: Var,
    /// Final encoder hidden states, `[batch·seq, d_model]`.
    pub hidden: Var,
    /// Which rows of `hidden` are real tokens.
    pub row_mask: Vec<bool>,
    pub seq: usize,
    /// Sequence width leaving each encoder layer.
    pub widths: Vec<usize>,
}

/// Parameter handles on a tape, in canonical order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
    n_layers: usize,
}

impl Bound {
    fn emb(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn layer(&self, l: usize, i: usize) -> Var {
        self.vars[4 + 16 * l + i]
    }

    fn head(&self, i: usize) -> Var {
        self.vars[4 + 16 * self.n_layers + i]
    }
}

impl<T: Real> QeModel<T> {
    /// Randomly initialised model; all randomness comes from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if T::PRECISION != config.precision {
            return Err(QeError::Config(format!(
                "config asks for {} but the model is instantiated as {}",
                config.precision.as_str(),
                T::PRECISION.as_str()
            )));
        }
        if vocab.len() > config.vocab_size {
            return Err(QeError::Config(format!(
                "vocabulary has {} tokens but vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embeddings = Embeddings::init(&config, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::init(&config, &mut rng))
            .collect();
        let head = Head::init(&config, &mut rng);
        Ok(Self {
            config,
            embeddings,
            layers,
            head,
            vocab,
            norm_stats: NormStats::default(),
            label_threshold: None,
            retention: None,
            provenance: Vec::new(),
        })
    }

    pub fn mode(&self) -> HeadMode {
        self.config.head_mode
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Every tensor in canonical order: embeddings, layers bottom-up, head.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.embeddings.tensors().into_iter().collect();
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend(self.head.tensors());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.embeddings.tensors_mut().into_iter().collect();
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    /// Dotted names matching [`params`](Self::params), e.g. `layers.2.attn.wq`.
    pub fn param_names(&self) -> Vec<String> {
        param_names(self.layers.len())
    }

    /// Puts every parameter on `tape`; `trainable[i]` decides whether the
    /// i-th one receives a gradient.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>, trainable: &[bool]) -> Result<Bound> {
        let params = self.params();
        if trainable.len() != params.len() {
            return Err(QeError::shape("bind", &[params.len()], &[trainable.len()]));
        }
        let vars = params
            .into_iter()
            .zip(trainable)
            .map(|(p, &rg)| tape.param(p, rg))
            .collect();
        Ok(Bound {
            vars,
            n_layers: self.layers.len(),
        })
    }

    /// Binds every parameter as a constant.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        let n = self.params().len();
        self.bind(tape, &vec![false; n]).expect("matching length")
    }

    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        bound: &Bound,
        batch: &Batch,
        opts: ForwardOptions<'_>,
    ) -> Result<ForwardOut> {
        let cfg = &self.config;
        let (d, n_heads) = (cfg.d_model, cfg.n_heads);
        if batch.batch == 0 || batch.seq == 0 {
            return Err(QeError::Usage("empty batch".into()));
        }
        if batch.seq > cfg.max_positions {
            return Err(QeError::Usage(format!(
                "input of {} tokens exceeds max_positions {}",
                batch.seq, cfg.max_positions
            )));
        }
        let schedule: Option<&[usize]> = match opts.tokens {
            TokenMode::Model => self.retention.as_deref(),
            TokenMode::Hard(s) => Some(s),
            TokenMode::Full | TokenMode::Soft(_) => None,
        };
        if let Some(s) = schedule {
            if s.len() != self.layers.len() {
                return Err(QeError::Usage(format!(
                    "retention schedule has {} entries for {} layers",
                    s.len(),
                    self.layers.len()
                )));
            }
        }
        if let TokenMode::Soft(masks) = opts.tokens {
            if masks.len() != self.layers.len() {
                return Err(QeError::Usage(format!(
                    "{} soft masks for {} layers",
                    masks.len(),
                    self.layers.len()
                )));
            }
        }
        let mut timer = opts.timer;
        if let Some(t) = timer.as_deref_mut() {
            t.layers.resize(self.layers.len(), Duration::ZERO);
        }
        let eps = T::c(cfg.ln_eps);

        let started = Instant::now();
        let tok = tape.embedding(bound.emb(0), &batch.ids)?;
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let pos = tape.embedding(bound.emb(1), &positions)?;
        let summed = tape.add(tok, pos)?;
        let mut x = tape.layer_norm(summed, bound.emb(2), bound.emb(3), eps)?;
        if let Some(t) = timer.as_deref_mut() {
            t.embedding += started.elapsed();
        }

        let mut mask = batch.mask.clone();
        let mut seq = batch.seq;
        let mut widths = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let started = Instant::now();
            let p = |i| bound.layer(l, i);
            let q = tape.linear(x, p(0), p(1))?;
            let k = tape.linear(x, p(2), p(3))?;
            let v = tape.linear(x, p(4), p(5))?;
            let shape = AttentionShape {
                batch: batch.batch,
                seq,
                heads: n_heads,
                width: d,
            };
            let ctx = tape.attention(q, k, v, &mask, shape)?;
            let attn_out = tape.linear(ctx, p(6), p(7))?;
            let res = tape.add(x, attn_out)?;
            let mut h = tape.layer_norm(res, p(8), p(9), eps)?;

            match (opts.tokens, schedule) {
                (TokenMode::Soft(masks), _) => {
                    let ranks = token_ranks(tape, ctx, &mask, batch.batch, seq);
                    let slots = ranks_to_slots(&ranks, &mask, batch.batch, seq);
                    let n_slots = tape.value(masks[l]).len();
                    if slots.iter().flatten().any(|&s| s >= n_slots) {
                        return Err(QeError::Usage(format!(
                            "sequence of {seq} tokens is longer than the {n_slots}-slot soft mask"
                        )));
                    }
                    h = tape.scale_rows(h, masks[l], slots)?;
                }
                (_, Some(s)) if s[l] < seq => {
                    let keep = s[l].max(1);
                    let ranks = token_ranks(tape, ctx, &mask, batch.batch, seq);
                    let (rows, new_mask) = hard_selection(&ranks, batch.batch, seq, keep);
                    h = tape.gather_rows(h, rows)?;
                    mask = new_mask;
                    seq = keep;
                }
                _ => {}
            }

            let inner = tape.linear(h, p(10), p(11))?;
            let act = tape.gelu(inner);
            let ffn = tape.linear(act, p(12), p(13))?;
            let res = tape.add(h, ffn)?;
            x = tape.layer_norm(res, p(14), p(15), eps)?;
            widths.push(seq);
            if let Some(t) = timer.as_deref_mut() {
                t.layers[l] += started.elapsed();
            }
        }

        let started = Instant::now();
        let cls_rows = (0..batch.batch).map(|b| Some(b * seq)).collect();
        let cls = tape.gather_rows(x, cls_rows)?;
        let hid = tape.linear(cls, bound.head(0), bound.head(1))?;
        let act = tape.tanh(hid);
        let output = tape.linear(act, bound.head(2), bound.head(3))?;
        if let Some(t) = timer.as_deref_mut() {
            t.head += started.elapsed();
        }
        Ok(ForwardOut {
            output,
            hidden: x,
            row_mask: mask,
            seq,
            widths,
        })
    }

    /// Scores for already-encoded inputs, in chunks of `batch_size`.
    pub fn predict_encoded(&self, inputs: &[EncodedInput], batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(batch_size.max(1)) {
            let refs: Vec<&EncodedInput> = chunk.iter().collect();
            let batch = Batch::collate(&refs);
            let mut tape = Tape::new();
            let bound = self.bind_frozen(&mut tape);
            let fwd = self.forward(&mut tape, &bound, &batch, ForwardOptions::default())?;
            out.extend(tape.value(fwd.output).iter().map(|v| v.to_f64().unwrap()));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(QeError::Numeric("model produced a non-finite prediction".into()));
        }
        Ok(out)
    }

    pub fn predict_pairs(&self, pairs: &[SentencePair], batch_size: usize) -> Result<Vec<f64>> {
        self.predict_encoded(&self.encode_pairs(pairs), batch_size)
    }

    pub fn predict_one(&self, x: &EncodedInput) -> Result<f64> {
        Ok(self.predict_encoded(std::slice::from_ref(x), 1)?[0])
    }

    pub fn encode_pairs(&self, pairs: &[SentencePair]) -> Vec<EncodedInput> {
        pairs
            .iter()
            .map(|p| super::encode_text(&self.vocab, p, self.config.max_positions))
            .collect()
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> QeModel<U> {
        let cast_layer = |l: &EncoderLayer<T>| {
            let t = l.tensors();
            EncoderLayer {
                wq: t[0].cast(),
                bq: t[1].cast(),
                wk: t[2].cast(),
                bk: t[3].cast(),
                wv: t[4].cast(),
                bv: t[5].cast(),
                wo: t[6].cast(),
                bo: t[7].cast(),
                ln1_gamma: t[8].cast(),
                ln1_beta: t[9].cast(),
                ffn_in: t[10].cast(),
                ffn_in_bias: t[11].cast(),
                ffn_out: t[12].cast(),
                ffn_out_bias: t[13].cast(),
                ln2_gamma: t[14].cast(),
                ln2_beta: t[15].cast(),
            }
        };
        let e = &self.embeddings;
        let h = &self.head;
        QeModel {
            config: ModelConfig {
                precision: U::PRECISION,
                ..self.config.clone()
            },
            embeddings: Embeddings {
                token: e.token.cast(),
                position: e.position.cast(),
                ln_gamma: e.ln_gamma.cast(),
                ln_beta: e.ln_beta.cast(),
            },
            layers: self.layers.iter().map(cast_layer).collect(),
            head: Head {
                w1: h.w1.cast(),
                b1: h.b1.cast(),
                w2: h.w2.cast(),
                b2: h.b2.cast(),
            },
            vocab: self.vocab.clone(),
            norm_stats: self.norm_stats.clone(),
            label_threshold: self.label_threshold,
            retention: self.retention.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// True when every tensor of both models has identical bits.
    pub fn bitwise_eq(&self, other: &QeModel<T>) -> bool {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y))
    }
}

pub fn param_names(n_layers: usize) -> Vec<String> {
    let mut names: Vec<String> = EMBEDDING_PARAMS.iter().map(|n| format!("embeddings.{n}")).collect();
    for l in 0..n_layers {
        names.extend(LAYER_PARAMS.iter().map(|n| format!("layers.{l}.{n}")));
    }
    names.extend(HEAD_PARAMS.iter().map(|n| format!("head.{n}")));
    names
}

/// Attention mass each key receives, summed over heads and real queries.
pub fn significance<T: Real>(probs: &[T], shape: &AttentionShape, mask: &[bool]) -> Vec<T> {
    let s = shape.seq;
    let mut sig = vec![T::zero(); shape.batch * s];
    for b in 0..shape.batch {
        let out = &mut sig[b * s..(b + 1) * s];
        for h in 0..shape.heads {
            let base = shape.probs_offset(b, h);
            for i in 0..s {
                if !mask[b * s + i] {
                    continue;
                }
                for (o, &p) in out.iter_mut().zip(&probs[base + i * s..base + (i + 1) * s]) {
                    *o += p;
                }
            }
        }
    }
    sig
}

/// Per example, real token positions from most to least significant, with
/// CLS pinned first and ties going to the earlier position.
fn token_ranks<T: Real>(tape: &Tape<'_, T>, attn: Var, mask: &[bool], batch: usize, seq: usize) -> Vec<Vec<usize>> {
    let (probs, shape) = tape.attention_probs(attn).expect("attention node");
    let sig = significance(probs, shape, mask);
    (0..batch)
        .map(|b| {
            let row = &sig[b * seq..(b + 1) * seq];
            let mut rest: Vec<usize> = (1..seq).filter(|&j| mask[b * seq + j]).collect();
            rest.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
            let mut order = vec![0];
            order.extend(rest);
            order
        })
        .collect()
}

/// Row `b·seq + j` gets the rank of token `j`; padding gets no slot.
fn ranks_to_slots(ranks: &[Vec<usize>], mask: &[bool], batch: usize, seq: usize) -> Vec<Option<usize>> {
    let mut slots = vec![None; batch * seq];
    for (b, order) in ranks.iter().enumerate() {
        for (rank, &j) in order.iter().enumerate() {
            debug_assert!(mask[b * seq + j]);
            slots[b * seq + j] = Some(rank);
        }
    }
    slots
}

/// Rows to gather so that each example keeps its `keep` best tokens in
/// their original order, followed by padding.
fn hard_selection(ranks: &[Vec<usize>], batch: usize, seq: usize, keep: usize) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut rows = Vec::with_capacity(batch * keep);
    let mut mask = Vec::with_capacity(batch * keep);
    for (b, order) in ranks.iter().enumerate().take(batch) {
        let mut kept: Vec<usize> = order.iter().take(keep).copied().collect();
        kept.sort_unstable();
        for slot in 0..keep {
            match kept.get(slot) {
                Some(&j) => {
                    rows.push(Some(b * seq + j));
                    mask.push(true);
                }
                None => {
                    rows.push(None);
                    mask.push(false);
                }
            }
        }
    }
    (rows, mask)
}
