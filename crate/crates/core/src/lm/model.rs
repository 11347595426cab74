use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 2, context_len: 64, vocab_size: 512 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let ModelConfig { d_model, n_heads, n_layers, context_len, vocab_size } = *self;
        if [d_model, n_heads, n_layers, context_len, vocab_size].contains(&0) {
            return Err(Error::Config(format!("model config fields must be positive: {self:?}")));
        }
        if d_model % n_heads != 0 {
            return Err(Error::Config(format!("d_model {d_model} not divisible by n_heads {n_heads}")));
        }
        Ok(())
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Decoder-only transformer with a language-modeling head and a scalar value head.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLM {
    config: ModelConfig,
    params: ParamSet,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    lm_head: ParamId,
    value_w: ParamId,
    value_b: ParamId,
}

/// Final hidden states of a packed forward pass.
#[derive(Debug, Clone)]
pub struct Hidden {
    pub states: Var,
    pub segments: Vec<Range<usize>>,
}

pub const INIT_STD: f64 = 0.02;

impl TransformerLM {
    /// Fresh model: N(0, 0.02) embeddings and projections, zero biases, unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ModelConfig { d_model: d, n_layers, context_len, vocab_size: v, .. } = config;
        let h = config.mlp_dim();
        let mut p = ParamSet::new();
        let mut normal = |p: &mut ParamSet, name: String, shape: &[usize]| p.push(name, Tensor::randn(shape, INIT_STD, &mut rng));
        let tok_emb = normal(&mut p, "tok_emb".into(), &[v, d]);
        let pos_emb = normal(&mut p, "pos_emb".into(), &[context_len, d]);
        let mut blocks = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let name = |s: &str| format!("h{l}.{s}");
            let ln1_g = p.push(name("ln1_g"), Tensor::filled(&[d], 1.0));
            let ln1_b = p.push(name("ln1_b"), Tensor::zeros(&[d]));
            let wq = normal(&mut p, name("wq"), &[d, d]);
            let bq = p.push(name("bq"), Tensor::zeros(&[d]));
            let wk = normal(&mut p, name("wk"), &[d, d]);
            let bk = p.push(name("bk"), Tensor::zeros(&[d]));
            let wv = normal(&mut p, name("wv"), &[d, d]);
            let bv = p.push(name("bv"), Tensor::zeros(&[d]));
            let wo = normal(&mut p, name("wo"), &[d, d]);
            let bo = p.push(name("bo"), Tensor::zeros(&[d]));
            let ln2_g = p.push(name("ln2_g"), Tensor::filled(&[d], 1.0));
            let ln2_b = p.push(name("ln2_b"), Tensor::zeros(&[d]));
            let w1 = normal(&mut p, name("w1"), &[d, h]);
            let b1 = p.push(name("b1"), Tensor::zeros(&[h]));
            let w2 = normal(&mut p, name("w2"), &[h, d]);
            let b2 = p.push(name("b2"), Tensor::zeros(&[d]));
            blocks.push(Block { ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2 });
        }
        let lnf_g = p.push("lnf_g", Tensor::filled(&[d], 1.0));
        let lnf_b = p.push("lnf_b", Tensor::zeros(&[d]));
        let lm_head = normal(&mut p, "lm_head".into(), &[d, v]);
        let value_w = normal(&mut p, "value_w".into(), &[d, 1]);
        let value_b = p.push("value_b", Tensor::zeros(&[1]));
        Ok(Self { config, params: p, tok_emb, pos_emb, blocks, lnf_g, lnf_b, lm_head, value_w, value_b })
    }

    /// Rebuilds a model from parameter arrays in declaration order.
    pub fn from_params(config: ModelConfig, arrays: Vec<Tensor>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if arrays.len() != model.params.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter arrays, got {}",
                model.params.len(),
                arrays.len()
            )));
        }
        for (dst, src) in model.params.tensors_mut().iter_mut().zip(arrays) {
            if dst.shape() != src.shape() {
                return Err(Error::Dimension(format!("parameter shape {:?} vs {:?}", dst.shape(), src.shape())));
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Ids of the value-head parameters (trained only by the policy objective).
    pub fn value_head_params(&self) -> [ParamId; 2] {
        [self.value_w, self.value_b]
    }

    fn check_seq(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if seq.len() > self.config.context_len {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds context length {}",
                seq.len(),
                self.config.context_len
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index(format!("token id {bad} out of range for vocabulary {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Packed forward over several sequences; returns the post-final-norm states.
    pub fn hidden(&self, tape: &mut Tape, seqs: &[&[usize]]) -> Result<Hidden> {
        if seqs.is_empty() {
            return Err(Error::Input("forward over an empty batch".into()));
        }
        let mut ids = Vec::new();
        let mut pos = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            self.check_seq(s)?;
            let start = ids.len();
            ids.extend_from_slice(s);
            pos.extend(0..s.len());
            segments.push(start..ids.len());
        }
        let p = &self.params;
        let tok = tape.param(p, self.tok_emb);
        let posv = tape.param(p, self.pos_emb);
        let te = tape.embedding(tok, &ids)?;
        let pe = tape.embedding(posv, &pos)?;
        let mut x = tape.add(te, pe)?;
        for b in &self.blocks {
            let g = tape.param(p, b.ln1_g);
            let bb = tape.param(p, b.ln1_b);
            let h = tape.layer_norm(x, g, bb)?;
            let q = self.linear(tape, h, b.wq, b.bq)?;
            let k = self.linear(tape, h, b.wk, b.bk)?;
            let v = self.linear(tape, h, b.wv, b.bv)?;
            let a = tape.causal_attention(q, k, v, self.config.n_heads, &segments)?;
            let a = self.linear(tape, a, b.wo, b.bo)?;
            x = tape.add(x, a)?;
            let g = tape.param(p, b.ln2_g);
            let bb = tape.param(p, b.ln2_b);
            let h = tape.layer_norm(x, g, bb)?;
            let m = self.linear(tape, h, b.w1, b.b1)?;
            let m = tape.gelu(m);
            let m = self.linear(tape, m, b.w2, b.b2)?;
            x = tape.add(x, m)?;
        }
        let g = tape.param(p, self.lnf_g);
        let bb = tape.param(p, self.lnf_b);
        let states = tape.layer_norm(x, g, bb)?;
        Ok(Hidden { states, segments })
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = tape.param(&self.params, w);
        let bv = tape.param(&self.params, b);
        let y = tape.matmul(x, wv)?;
        tape.add_row(y, bv)
    }

    /// `rows×vocab` logits for the given hidden rows.
    pub fn lm_logits(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        let w = tape.param(&self.params, self.lm_head);
        tape.matmul(states, w)
    }

    /// Length-`rows` value estimates.
    pub fn values(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        let rows = tape.shape(states)[0];
        let y = self.linear(tape, states, self.value_w, self.value_b)?;
        tape.reshape(y, &[rows])
    }

    /// Logits (`T×V`) and values (`T`) for one sequence, without gradients.
    pub fn forward(&self, tokens: &[usize]) -> Result<(Tensor, Vec<f64>)> {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &[tokens])?;
        let logits = self.lm_logits(&mut tape, h.states)?;
        let values = self.values(&mut tape, h.states)?;
        Ok((tape.tensor(logits).clone(), tape.value(values).to_vec()))
    }

    /// Logits for several sequences in one packed pass; one `Tensor` per sequence.
    pub fn forward_logits_batch(&self, seqs: &[&[usize]]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, seqs)?;
        let logits = self.lm_logits(&mut tape, h.states)?;
        let v = self.config.vocab_size;
        let all = tape.value(logits);
        h.segments
            .iter()
            .map(|s| Tensor::new(vec![s.len(), v], all[s.start * v..s.end * v].to_vec()))
            .collect()
    }
}
