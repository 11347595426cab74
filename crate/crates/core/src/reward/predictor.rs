use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::lm::checkpoint::{read_container, write_container};
use crate::lm::model::{ModelConfig, TransformerLM};
use crate::lm::tokenizer::Vocabulary;
use crate::reward::dataset::TrajectorySample;
use crate::reward::features::{FeatureSpec, SparseRow};
use crate::stats::corr::spearman;

pub const MIN_DISTINCT_STEPS: usize = 5;
const PREDICTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Ridge,
    Transformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub features: FeatureSpec,
    /// L2 penalty on the mean-squared-error objective.
    pub alpha: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
    pub cg_max_iter: usize,
    pub cg_tol: f64,
    /// Transformer backbone; `vocab_size` is taken from the vocabulary.
    pub transformer: ModelConfig,
    pub transformer_steps: usize,
    pub transformer_batch: usize,
    pub transformer_lr: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Ridge,
            features: FeatureSpec::default(),
            alpha: 1e-3,
            holdout_fraction: 0.1,
            seed: 0,
            cg_max_iter: 500,
            cg_tol: 1e-8,
            transformer: ModelConfig { d_model: 32, n_heads: 4, n_layers: 1, context_len: 32, vocab_size: 1 },
            transformer_steps: 1500,
            transformer_batch: 32,
            transformer_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_heldout: usize,
    pub train_mse: f64,
    pub heldout_mse: Option<f64>,
    /// Rank correlation between predicted and true log-step on held-out samples.
    pub heldout_spearman: Option<f64>,
    /// Per-iteration objective (CG) or per-step batch loss (transformer).
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub spec: FeatureSpec,
    pub bias: f64,
    pub weights: Vec<f64>,
}

impl RidgeModel {
    fn predict_row(&self, row: &SparseRow) -> f64 {
        self.bias + row.iter().map(|&(i, c)| self.weights[i as usize] * c).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerRegressor {
    pub vocab: Vocabulary,
    pub model: TransformerLM,
    pub target_mean: f64,
    pub target_std: f64,
}

impl TransformerRegressor {
    fn input(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![self.vocab.bos()];
        ids.extend(self.vocab.encode(text));
        ids.push(self.vocab.eos());
        let ctx = self.model.config().context_len;
        ids.truncate(ctx);
        ids
    }

    fn predict_batch(&self, texts: &[&str]) -> Result<Vec<f64>> {
        let seqs: Vec<Vec<usize>> = texts.iter().map(|t| self.input(t)).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let h = self.model.hidden(&mut tape, &refs)?;
        let last: Vec<usize> = h.segments.iter().map(|s| s.end - 1).collect();
        let sel = tape.select_rows(h.states, &last)?;
        let v = self.model.values(&mut tape, sel)?;
        Ok(tape.value(v).iter().map(|z| self.target_mean + self.target_std * z).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Ridge(RidgeModel),
    Transformer(TransformerRegressor),
}

/// Frozen regressor from text to predicted natural-log training step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgePredictor {
    pub backbone: Backbone,
    pub report: TrainReport,
}

impl AgePredictor {
    /// Predicted `ln(step)`; always finite.
    pub fn predict(&self, text: &str) -> f64 {
        let y = match &self.backbone {
            Backbone::Ridge(m) => m.predict_row(&m.spec.extract(text)),
            Backbone::Transformer(t) => t.predict_batch(&[text]).map(|v| v[0]).unwrap_or(f64::NAN),
        };
        if y.is_finite() {
            y
        } else {
            self.fallback()
        }
    }

    pub fn predict_many(&self, texts: &[&str]) -> Vec<f64> {
        match &self.backbone {
            Backbone::Ridge(_) => texts.iter().map(|t| self.predict(t)).collect(),
            Backbone::Transformer(t) => {
                let mut out = Vec::with_capacity(texts.len());
                for chunk in texts.chunks(64) {
                    match t.predict_batch(chunk) {
                        Ok(v) => out.extend(v.into_iter().map(|y| if y.is_finite() { y } else { self.fallback() })),
                        Err(_) => out.extend(chunk.iter().map(|_| self.fallback())),
                    }
                }
                out
            }
        }
    }

    fn fallback(&self) -> f64 {
        match &self.backbone {
            Backbone::Ridge(m) => m.bias,
            Backbone::Transformer(t) => t.target_mean,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match &self.backbone {
            Backbone::Ridge(m) => {
                let header = PredictorHeader {
                    kind: PredictorKind::Ridge,
                    version: PREDICTOR_VERSION,
                    spec: Some(m.spec),
                    bias: m.bias,
                    report: self.report.clone(),
                    transformer: None,
                };
                write_container(path, &header, &[&m.weights])
            }
            Backbone::Transformer(t) => {
                let header = PredictorHeader {
                    kind: PredictorKind::Transformer,
                    version: PREDICTOR_VERSION,
                    spec: None,
                    bias: 0.0,
                    report: self.report.clone(),
                    transformer: Some(TransformerHeader {
                        config: *t.model.config(),
                        vocab: t.vocab.clone(),
                        target_mean: t.target_mean,
                        target_std: t.target_std,
                    }),
                };
                let arrays: Vec<&[f64]> = t.model.params().tensors().iter().map(Tensor::values).collect();
                write_container(path, &header, &arrays)
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, arrays): (PredictorHeader, Vec<Vec<f64>>) = read_container(path)?;
        if h.version != PREDICTOR_VERSION {
            return Err(Error::integrity(path, format!("unsupported predictor version {}", h.version)));
        }
        let backbone = match (h.kind, h.spec, h.transformer) {
            (PredictorKind::Ridge, Some(spec), _) => {
                let weights = arrays.into_iter().next().unwrap_or_default();
                if weights.len() != spec.dim() {
                    return Err(Error::integrity(path, format!("expected {} weights, found {}", spec.dim(), weights.len())));
                }
                Backbone::Ridge(RidgeModel { spec, bias: h.bias, weights })
            }
            (PredictorKind::Transformer, _, Some(t)) => {
                let tensors = TransformerLM::new(t.config, 0)?
                    .params()
                    .tensors()
                    .iter()
                    .zip(arrays)
                    .map(|(proto, a)| Tensor::new(proto.shape().to_vec(), a))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::integrity(path, e.to_string()))?;
                let model = TransformerLM::from_params(t.config, tensors).map_err(|e| Error::integrity(path, e.to_string()))?;
                Backbone::Transformer(TransformerRegressor { vocab: t.vocab, model, target_mean: t.target_mean, target_std: t.target_std })
            }
            _ => return Err(Error::integrity(path, "predictor header is missing its backbone description")),
        };
        Ok(Self { backbone, report: h.report })
    }
}

#[derive(Serialize, Deserialize)]
struct TransformerHeader {
    config: ModelConfig,
    vocab: Vocabulary,
    target_mean: f64,
    target_std: f64,
}

#[derive(Serialize, Deserialize)]
struct PredictorHeader {
    kind: PredictorKind,
    version: u32,
    spec: Option<FeatureSpec>,
    bias: f64,
    report: TrainReport,
    transformer: Option<TransformerHeader>,
}

pub fn split_indices(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = (n as f64 * holdout_fraction).round() as usize;
    let n_hold = n_hold.min(n.saturating_sub(1));
    let hold = idx.split_off(n - n_hold);
    (idx, hold)
}

/// Centered-design ridge regression solved by conjugate gradient.
///
/// Minimizes `mean((w·x + b − y)²) + alpha·|w|²` with `b` unpenalized. Centering
/// is implicit so rows stay sparse.
fn fit_ridge(rows: &[SparseRow], y: &[f64], spec: FeatureSpec, cfg: &PredictorConfig) -> (RidgeModel, Vec<f64>) {
    let n = rows.len() as f64;
    let d = spec.dim();
    let ybar = y.iter().sum::<f64>() / n;
    let mut xbar = vec![0.0; d];
    for r in rows {
        for &(i, c) in r {
            xbar[i as usize] += c / n;
        }
    }
    // Xc v, then Xcᵀ u
    let xc = |v: &[f64]| -> Vec<f64> {
        let shift: f64 = xbar.iter().zip(v).map(|(a, b)| a * b).sum();
        rows.iter().map(|r| r.iter().map(|&(i, c)| c * v[i as usize]).sum::<f64>() - shift).collect()
    };
    let xct = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (r, &ui) in rows.iter().zip(u) {
            for &(i, c) in r {
                out[i as usize] += c * ui;
            }
        }
        let su: f64 = u.iter().sum();
        for (o, m) in out.iter_mut().zip(&xbar) {
            *o -= m * su;
        }
        out
    };
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = xct(&xc(v));
        for (o, vi) in out.iter_mut().zip(v) {
            *o = *o / n + cfg.alpha * vi;
        }
        out
    };
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let b: Vec<f64> = xct(&yc).into_iter().map(|v| v / n).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let objective = |w: &[f64]| {
        let pred = xc(w);
        pred.iter().zip(&yc).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n + cfg.alpha * dot(w, w)
    };

    let mut w = vec![0.0; d];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let b_norm = rr.sqrt();
    let mut curve = vec![objective(&w)];
    if b_norm > 0.0 {
        for _ in 0..cfg.cg_max_iter {
            if rr.sqrt() <= cfg.cg_tol * b_norm {
                break;
            }
            let ap = apply(&p);
            let step = rr / dot(&p, &ap);
            for i in 0..d {
                w[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..d {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
            curve.push(objective(&w));
        }
    }
    let bias = ybar - dot(&xbar, &w);
    (RidgeModel { spec, bias, weights: w }, curve)
}

fn fit_transformer(
    texts: &[&str],
    y: &[f64],
    vocab: &Vocabulary,
    cfg: &PredictorConfig,
) -> Result<(TransformerRegressor, Vec<f64>)> {
    let mut mc = cfg.transformer;
    mc.vocab_size = vocab.len();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);
    let mut reg = TransformerRegressor { vocab: vocab.clone(), model: TransformerLM::new(mc, cfg.seed)?, target_mean: mean, target_std: std };
    let mut opt = Adam::new(reg.model.params(), AdamConfig::with_lr(cfg.transformer_lr));
    let inputs: Vec<Vec<usize>> = texts.iter().map(|t| reg.input(t)).collect();
    let z: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut pos = order.len();
    let mut curve = Vec::with_capacity(cfg.transformer_steps);
    for _ in 0..cfg.transformer_steps {
        let mut batch = Vec::with_capacity(cfg.transformer_batch);
        while batch.len() < cfg.transformer_batch.min(inputs.len()) {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            batch.push(order[pos]);
            pos += 1;
        }
        let refs: Vec<&[usize]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
        let mut tape = Tape::new();
        let h = reg.model.hidden(&mut tape, &refs)?;
        let last: Vec<usize> = h.segments.iter().map(|s| s.end - 1).collect();
        let sel = tape.select_rows(h.states, &last)?;
        let v = reg.model.values(&mut tape, sel)?;
        let target = tape.constant(Tensor::new(vec![batch.len()], batch.iter().map(|&i| z[i]).collect())?);
        let diff = tape.sub(v, target)?;
        let sq = tape.square(diff);
        let loss = tape.mean(sq)?;
        curve.push(tape.scalar(loss) * std * std);
        tape.backward(loss)?;
        let params = reg.model.params_mut();
        params.zero_grad();
        tape.flush_into(params)?;
        opt.step(params)?;
        params.zero_grad();
    }
    Ok((reg, curve))
}

/// Fits a regressor from text to `ln(step)` and reports held-out quality.
///
/// `vocab` is required for the transformer backbone and ignored by ridge.
pub fn train_age_predictor(dataset: &[TrajectorySample], cfg: &PredictorConfig, vocab: Option<&Vocabulary>) -> Result<AgePredictor> {
    let distinct: BTreeSet<u64> = dataset.iter().map(|s| s.step).collect();
    if distinct.len() < MIN_DISTINCT_STEPS {
        return Err(Error::Config(format!(
            "age predictor needs at least {MIN_DISTINCT_STEPS} distinct steps, dataset has {}",
            distinct.len()
        )));
    }
    if distinct.contains(&0) {
        return Err(Error::Input("trajectory samples must have step >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::Config(format!("holdout fraction {} outside [0, 1)", cfg.holdout_fraction)));
    }
    if !(cfg.alpha > 0.0) {
        return Err(Error::Config("ridge alpha must be positive".into()));
    }
    let (train, hold) = split_indices(dataset.len(), cfg.holdout_fraction, cfg.seed);
    let target = |i: usize| (dataset[i].step as f64).ln();
    let y_train: Vec<f64> = train.iter().map(|&i| target(i)).collect();

    let (backbone, loss_curve) = match cfg.kind {
        PredictorKind::Ridge => {
            let rows: Vec<SparseRow> = train.iter().map(|&i| cfg.features.extract(&dataset[i].text)).collect();
            let (m, curve) = fit_ridge(&rows, &y_train, cfg.features, cfg);
            (Backbone::Ridge(m), curve)
        }
        PredictorKind::Transformer => {
            let vocab = vocab.ok_or_else(|| Error::Config("transformer age predictor needs a vocabulary".into()))?;
            let texts: Vec<&str> = train.iter().map(|&i| dataset[i].text.as_str()).collect();
            let (t, curve) = fit_transformer(&texts, &y_train, vocab, cfg)?;
            (Backbone::Transformer(t), curve)
        }
    };
    let mut pred = AgePredictor {
        backbone,
        report: TrainReport {
            n_train: train.len(),
            n_heldout: hold.len(),
            train_mse: 0.0,
            heldout_mse: None,
            heldout_spearman: None,
            loss_curve,
            seed: cfg.seed,
        },
    };
    let mse = |idx: &[usize], p: &AgePredictor| -> (f64, Vec<f64>, Vec<f64>) {
        let texts: Vec<&str> = idx.iter().map(|&i| dataset[i].text.as_str()).collect();
        let yhat = p.predict_many(&texts);
        let y: Vec<f64> = idx.iter().map(|&i| target(i)).collect();
        let m = yhat.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
        (m, yhat, y)
    };
    pred.report.train_mse = mse(&train, &pred).0;
    if !hold.is_empty() {
        let (m, yhat, y) = mse(&hold, &pred);
        pred.report.heldout_mse = Some(m);
        pred.report.heldout_spearman = spearman(&yhat, &y);
    }
    Ok(pred)
}
