use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-token advantages and value targets for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation with a zero bootstrap after the last token.
///
/// `δ_i = r_i + γ V_{i+1} − V_i`, `A_i = δ_i + γλ A_{i+1}`, `V̂_i = A_i + V_i`.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<AdvantageSet> {
    if rewards.len() != values.len() {
        return Err(Error::Contract(format!("GAE: {} rewards vs {} values", rewards.len(), values.len())));
    }
    let t = rewards.len();
    let mut advantages = vec![0.0; t];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for i in (0..t).rev() {
        let delta = rewards[i] + gamma * next_value - values[i];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[i] = next_adv;
        next_value = values[i];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageSet { advantages, returns })
}

/// Shifts to mean 0 and, when the spread is nonzero, scales to unit (population) variance.
pub fn whiten(sets: &mut [AdvantageSet]) {
    let all: Vec<f64> = sets.iter().flat_map(|s| s.advantages.iter().copied()).collect();
    if all.is_empty() {
        return;
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for s in sets {
        for a in &mut s.advantages {
            *a = (*a - mean) * scale;
        }
    }
}
