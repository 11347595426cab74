use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `c` CLM steps followed by `r` interactive steps per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub c: u64,
    pub r: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { c: 3, r: 1 }
    }
}

impl Schedule {
    pub fn new(c: u64, r: u64) -> Result<Self> {
        let s = Self { c, r };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c + self.r == 0 {
            return Err(Error::Config("schedule needs c + r >= 1".into()));
        }
        Ok(())
    }

    /// Step `n` is 1-based. Positions `1..=c` of each cycle are CLM, `c+1..=c+r` interactive.
    pub fn is_interactive(&self, n: u64) -> bool {
        debug_assert!(n >= 1);
        (n - 1) % (self.c + self.r) + 1 > self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Clm,
    Trial,
    Demo,
    Tnd,
    ClmOnGenerated,
}

impl RunMode {
    pub const ALL: [RunMode; 5] = [RunMode::Clm, RunMode::Trial, RunMode::Demo, RunMode::Tnd, RunMode::ClmOnGenerated];
    /// The four ablation cells of the main comparison.
    pub const ABLATION: [RunMode; 4] = [RunMode::Clm, RunMode::Trial, RunMode::Demo, RunMode::Tnd];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Clm => "clm",
            RunMode::Trial => "trial",
            RunMode::Demo => "demo",
            RunMode::Tnd => "tnd",
            RunMode::ClmOnGenerated => "clm_on_generated",
        }
    }

    /// Modes whose interactive steps run PPO and therefore need the reward model.
    pub fn uses_reward(self) -> bool {
        matches!(self, RunMode::Trial | RunMode::Demo | RunMode::Tnd)
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, RunMode::Demo | RunMode::Tnd | RunMode::ClmOnGenerated)
    }

    pub fn uses_trials(self) -> bool {
        matches!(self, RunMode::Trial | RunMode::Tnd | RunMode::ClmOnGenerated)
    }

    pub fn is_interactive(self) -> bool {
        self != RunMode::Clm
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "clm" => Ok(RunMode::Clm),
            "trial" => Ok(RunMode::Trial),
            "demo" => Ok(RunMode::Demo),
            "tnd" => Ok(RunMode::Tnd),
            "clm_on_generated" => Ok(RunMode::ClmOnGenerated),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_one_puts_interactive_steps_at_multiples_of_four() {
        let s = Schedule::new(3, 1).unwrap();
        let inter: Vec<u64> = (1..=12).filter(|&n| s.is_interactive(n)).collect();
        assert_eq!(inter, vec![4, 8, 12]);
    }

    #[test]
    fn degenerate_schedules() {
        assert!(Schedule::new(0, 0).is_err());
        let all_clm = Schedule::new(1, 0).unwrap();
        assert!((1..20).all(|n| !all_clm.is_interactive(n)));
        let all_rl = Schedule::new(0, 2).unwrap();
        assert!((1..20).all(|n| all_rl.is_interactive(n)));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>().unwrap(), m);
        }
        assert!("bogus".parse::<RunMode>().is_err());
    }
}
