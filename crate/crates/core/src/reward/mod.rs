//! Developmental-trajectory dataset, neural age predictor and the age-conditioned reward.

pub mod dataset;
pub mod features;
pub mod predictor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{generate_trajectory_dataset, read_dataset, write_dataset, DatasetConfig, TrajectorySample};
pub use features::FeatureSpec;
pub use predictor::{split_indices, train_age_predictor, AgePredictor, PredictorConfig, PredictorKind, TrainReport};

/// Sequence-level reward in natural-log units: predicted log-step minus log of the actual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub predicted_log_step: f64,
    pub actual_step: u64,
}

impl Reward {
    pub fn from_prediction(predicted_log_step: f64, actual_step: u64) -> Result<Self> {
        if actual_step < 1 {
            return Err(Error::Contract("reward needs a step >= 1".into()));
        }
        Ok(Self { value: predicted_log_step - (actual_step as f64).ln(), predicted_log_step, actual_step })
    }
}

/// `r = R(text) − ln(step)`: positive when the text sounds older than the learner.
pub fn compute_reward(predictor: &AgePredictor, text: &str, step: u64) -> Result<Reward> {
    if step < 1 {
        return Err(Error::Contract("reward needs a step >= 1".into()));
    }
    Reward::from_prediction(predictor.predict(text), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_is_zero_when_predicted_age_matches() {
        let r = Reward::from_prediction(1000f64.ln(), 1000).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn older_sounding_text_earns_log_ratio() {
        let r = Reward::from_prediction(10000f64.ln(), 100).unwrap();
        assert!((r.value - 4.6052).abs() < 1e-4);
    }

    #[test]
    fn step_zero_is_contract_error() {
        assert!(matches!(Reward::from_prediction(1.0, 0), Err(Error::Contract(_))));
    }
}
