use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lm::model::TransformerLM;
use crate::ppo::gae::{compute_gae, whiten, AdvantageSet};
use crate::ppo::rollout::{Rollout, RolloutSource};

pub const RATIO_MIN: f64 = 1e-4;
pub const RATIO_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PPOConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub epochs_per_batch: usize,
    pub whiten_advantages: bool,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self { clip_epsilon: 0.2, gamma: 1.0, lambda: 0.95, value_coef: 0.1, lr: 2e-5, epochs_per_batch: 1, whiten_advantages: true }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.clip_epsilon > 0.0) {
            return Err(Error::Config(format!("clip_epsilon must be > 0, got {}", self.clip_epsilon)));
        }
        if !unit(self.gamma) || !unit(self.lambda) || !unit(self.value_coef) {
            return Err(Error::Config("gamma, lambda and value_coef must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || self.epochs_per_batch == 0 {
            return Err(Error::Config("PPO needs lr > 0 and epochs_per_batch >= 1".into()));
        }
        Ok(())
    }
}

/// Terminal reward on the last generated token, zeros elsewhere.
pub fn token_rewards(r: &Rollout) -> Vec<f64> {
    let mut out = vec![0.0; r.generated.len()];
    if let Some(last) = out.last_mut() {
        *last = r.terminal_reward;
    }
    out
}

pub fn advantages_for(batch: &[Rollout], cfg: &PPOConfig) -> Result<Vec<AdvantageSet>> {
    let mut sets = batch
        .iter()
        .map(|r| compute_gae(&token_rewards(r), &r.values, cfg.gamma, cfg.lambda))
        .collect::<Result<Vec<_>>>()?;
    if cfg.whiten_advantages {
        whiten(&mut sets);
    }
    Ok(sets)
}

/// Loss graph plus the diagnostics gathered while building it.
#[derive(Debug, Clone, Copy)]
pub struct PpoLoss {
    pub loss: Var,
    pub pg_objective: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub clamp_count: usize,
    pub n_tokens: usize,
}

/// `−mean(min(Π·A, clip(Π, 1±ε)·A)) + c·mean((V − V̂)²)` over every generated token.
///
/// `Π = exp(new − behavior)` with the exponent clamped to the log of
/// `[RATIO_MIN, RATIO_MAX]`. There is no KL term and no reference policy.
pub fn ppo_loss(
    policy: &TransformerLM,
    tape: &mut Tape,
    bos: usize,
    batch: &[Rollout],
    advantages: &[AdvantageSet],
    cfg: &PPOConfig,
) -> Result<Option<PpoLoss>> {
    if batch.len() != advantages.len() {
        return Err(Error::Contract("one advantage set per rollout required".into()));
    }
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].generated.is_empty()).collect();
    if live.is_empty() {
        return Ok(None);
    }
    let seqs: Vec<Vec<usize>> = live.iter().map(|&i| batch[i].sequence(bos)).collect();
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let h = policy.hidden(tape, &refs)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut old = Vec::new();
    let mut adv = Vec::new();
    let mut ret = Vec::new();
    for (seg, &i) in h.segments.iter().zip(&live) {
        let r = &batch[i];
        if advantages[i].advantages.len() != r.generated.len() {
            return Err(Error::Contract(format!("advantage set {i} does not match its rollout length")));
        }
        let a = r.action_rows();
        rows.extend(seg.start + a.start..seg.start + a.end);
        targets.extend_from_slice(&r.generated);
        old.extend_from_slice(&r.behavior_logprobs);
        adv.extend_from_slice(&advantages[i].advantages);
        ret.extend_from_slice(&advantages[i].returns);
    }
    let n = rows.len();
    let sel = tape.select_rows(h.states, &rows)?;
    let logits = policy.lm_logits(tape, sel)?;
    let new_lp = tape.log_softmax_gather(logits, &targets)?;
    if let Some(t) = tape.value(new_lp).iter().position(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite policy log-prob at token {t} (id {}): new {} behavior {}",
            targets[t],
            tape.value(new_lp)[t],
            old[t]
        )));
    }
    let old_v = tape.constant(Tensor::new(vec![n], old)?);
    let diff = tape.sub(new_lp, old_v)?;
    let (lo, hi) = (RATIO_MIN.ln(), RATIO_MAX.ln());
    let clamp_count = tape.value(diff).iter().filter(|d| **d < lo || **d > hi).count();
    let diff = tape.clamp(diff, lo, hi);
    let ratio = tape.exp(diff);
    if let Some(t) = tape.value(ratio).iter().position(|v| !v.is_finite()) {
        return Err(Error::Training(format!("non-finite ratio at token {t} (id {})", targets[t])));
    }
    let eps = cfg.clip_epsilon;
    let clip_fraction = tape.value(ratio).iter().filter(|p| (**p - 1.0).abs() > eps).count() as f64 / n as f64;
    let a = tape.constant(Tensor::new(vec![n], adv)?);
    let unclipped = tape.mul(ratio, a)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = tape.mul(clipped_ratio, a)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let pg = tape.mean(surrogate)?;
    let values = policy.values(tape, sel)?;
    let target = tape.constant(Tensor::new(vec![n], ret)?);
    let verr = tape.sub(values, target)?;
    let vsq = tape.square(verr);
    let vloss = tape.mean(vsq)?;
    let neg_pg = tape.scale(pg, -1.0);
    let vterm = tape.scale(vloss, cfg.value_coef);
    let loss = tape.add(neg_pg, vterm)?;
    Ok(Some(PpoLoss {
        loss,
        pg_objective: tape.scalar(pg),
        value_loss: tape.scalar(vloss),
        clip_fraction,
        clamp_count,
        n_tokens: n,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub n_trial: usize,
    pub n_demo: usize,
    pub mean_trial_reward: Option<f64>,
    pub mean_demo_reward: Option<f64>,
    /// First-epoch values.
    pub loss: f64,
    pub pg_objective: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Ratio clamp events summed over epochs.
    pub clamp_count: usize,
    pub n_tokens: usize,
}

fn mean_reward(batch: &[Rollout], src: RolloutSource) -> (usize, Option<f64>) {
    let v: Vec<f64> = batch.iter().filter(|r| r.source == src).map(|r| r.terminal_reward).collect();
    let n = v.len();
    (n, (n > 0).then(|| v.iter().sum::<f64>() / n as f64))
}

/// GAE per rollout, optional whitening over the whole batch, then
/// `epochs_per_batch` full-batch optimizer steps.
pub fn ppo_update(policy: &mut TransformerLM, opt: &mut Adam, bos: usize, batch: &[Rollout], cfg: &PPOConfig) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::Input("empty PPO batch".into()));
    }
    for r in batch {
        r.validate()?;
    }
    let advantages = advantages_for(batch, cfg)?;
    let (n_trial, mean_trial_reward) = mean_reward(batch, RolloutSource::Trial);
    let (n_demo, mean_demo_reward) = mean_reward(batch, RolloutSource::Demonstration);
    let mut stats = PpoStats {
        n_trial,
        n_demo,
        mean_trial_reward,
        mean_demo_reward,
        loss: 0.0,
        pg_objective: 0.0,
        value_loss: 0.0,
        clip_fraction: 0.0,
        clamp_count: 0,
        n_tokens: 0,
    };
    for epoch in 0..cfg.epochs_per_batch {
        let mut tape = Tape::new();
        let Some(out) = ppo_loss(policy, &mut tape, bos, batch, &advantages, cfg)? else {
            return Ok(stats);
        };
        let loss = tape.scalar(out.loss);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite PPO loss {loss}")));
        }
        if epoch == 0 {
            stats.loss = loss;
            stats.pg_objective = out.pg_objective;
            stats.value_loss = out.value_loss;
            stats.clip_fraction = out.clip_fraction;
            stats.n_tokens = out.n_tokens;
        }
        stats.clamp_count += out.clamp_count;
        tape.backward(out.loss)?;
        let params = policy.params_mut();
        params.zero_grad();
        tape.flush_into(params)?;
        opt.step(params)?;
        params.zero_grad();
    }
    Ok(stats)
}
