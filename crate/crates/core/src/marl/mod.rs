//! Multi-agent reinforcement learning: local surface/BS agents, the periodic
//! global agent with a value-decomposition target, and the training loop.

pub mod actions;
pub mod agents;
pub mod env;
pub mod trainer;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use actions::{arbitrate, greedy, select_action, AmplitudeMode, BsAgentState, StepSizes, SurfaceAgentState, SurfaceCatalogue, SurfacePrimitive};
pub use agents::{global_target, tabular_update, DqnAgent, GlobalAgent, GlobalTransition, QTable, TabularAgent};
pub use env::{global_reward, local_reward, AgentId, Environment, Snapshot};
pub use trainer::{train, write_records_csv, RunSetup, TrainOutcome, TrainRecord, Trainer};

/// Learning scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Local DQN agents with individual rewards plus the periodic global agent.
    #[serde(rename = "MAGAR")]
    Magar,
    /// Local DQN agents sharing the global reward.
    #[serde(rename = "MADQN")]
    Madqn,
    /// Local DQN agents with individual rewards.
    #[serde(rename = "MADQN_LR")]
    MadqnLr,
    /// Tabular Q-learning with individual rewards.
    #[serde(rename = "QLEARNING")]
    QLearning,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Magar, Algorithm::MadqnLr, Algorithm::Madqn, Algorithm::QLearning];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Magar => "MAGAR",
            Algorithm::Madqn => "MADQN",
            Algorithm::MadqnLr => "MADQN_LR",
            Algorithm::QLearning => "QLEARNING",
        }
    }
}

/// Surface hardware baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Energy-splitting STAR-RIS.
    #[serde(rename = "ES")]
    Es,
    /// Mode-switching STAR-RIS.
    #[serde(rename = "MS")]
    Ms,
    /// Reflect-only RIS.
    #[serde(rename = "RIS")]
    Ris,
    /// No surfaces: direct link only.
    #[serde(rename = "NONE")]
    None,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Es => "ES",
            Architecture::Ms => "MS",
            Architecture::Ris => "RIS",
            Architecture::None => "NONE",
        }
    }

    pub fn amplitude_mode(self) -> Option<AmplitudeMode> {
        match self {
            Architecture::Es => Some(AmplitudeMode::Split),
            Architecture::Ms => Some(AmplitudeMode::Binary),
            Architecture::Ris => Some(AmplitudeMode::ReflectOnly),
            Architecture::None => None,
        }
    }
}

/// Element on-off policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OnOffPolicy {
    #[serde(rename = "ALL_ON")]
    AllOn,
    #[serde(rename = "HALF_ON")]
    HalfOn,
    #[serde(rename = "OPTIMIZED")]
    Optimized,
}

impl OnOffPolicy {
    pub fn name(self) -> &'static str {
        match self {
            OnOffPolicy::AllOn => "ALL_ON",
            OnOffPolicy::HalfOn => "HALF_ON",
            OnOffPolicy::Optimized => "OPTIMIZED",
        }
    }
}

/// Weight initialization of every network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    He,
    Zero,
}

/// Learning and episode settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Global execution period.
    pub t_q: usize,
    pub epsilon: f64,
    /// Tabular learning rate.
    pub lambda: f64,
    pub gamma: f64,
    pub slots_per_episode: usize,
    pub episodes: usize,
    pub hidden: Vec<usize>,
    pub step_size: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Optimizer steps between target-network refreshes.
    pub target_sync: usize,
    /// Slots between optimizer steps.
    pub train_every: usize,
    /// Multiplier applied to rewards before learning; logs stay in bits/J.
    pub reward_scale: f64,
    pub delta_beta: f64,
    pub delta_theta: f64,
    pub delta_w_fraction: f64,
    /// Denominator floor of an all-off surface's local reward, watts.
    pub power_floor_watt: f64,
    pub refade_per_episode: bool,
    pub reset_per_episode: bool,
    pub weight_init: WeightInit,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            t_q: 20,
            epsilon: 0.3,
            lambda: 0.1,
            gamma: 0.9,
            slots_per_episode: 200,
            episodes: 400,
            hidden: vec![128, 128],
            step_size: 1e-3,
            momentum: 0.9,
            grad_clip: Some(10.0),
            batch_size: 64,
            replay_capacity: 100_000,
            target_sync: 100,
            train_every: 1,
            reward_scale: 1e-8,
            delta_beta: 0.1,
            delta_theta: PI / 8.0,
            delta_w_fraction: 0.1,
            power_floor_watt: 1e-3,
            refade_per_episode: true,
            reset_per_episode: true,
            weight_init: WeightInit::He,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.t_q == 0 {
            return bad("t_q must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.slots_per_episode == 0 || self.episodes == 0 {
            return bad("episodes and slots_per_episode must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return bad("target_sync and train_every must be positive");
        }
        for (name, v) in [
            ("step_size", self.step_size),
            ("reward_scale", self.reward_scale),
            ("delta_beta", self.delta_beta),
            ("delta_theta", self.delta_theta),
            ("delta_w_fraction", self.delta_w_fraction),
            ("power_floor_watt", self.power_floor_watt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }

    pub fn step_sizes(&self) -> StepSizes {
        StepSizes {
            delta_beta: self.delta_beta,
            delta_theta: self.delta_theta,
            delta_w_fraction: self.delta_w_fraction,
        }
    }

    /// Override one field from its textual form.
    pub fn set_field(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut value = serde_json::to_value(&*self)?;
        let obj = value.as_object_mut().expect("struct serializes to an object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown hyperparameter `{key}`")));
        }
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(key.to_string(), parsed);
        *self = serde_json::from_value(value)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let h = Hyperparams::default();
        assert_eq!((h.t_q, h.epsilon, h.lambda, h.gamma), (20, 0.3, 0.1, 0.9));
        h.validate().unwrap();
    }

    #[test]
    fn rejects_degenerate_settings() {
        let mut h = Hyperparams { lambda: 0.0, ..Default::default() };
        assert!(h.validate().is_err());
        h.lambda = 0.1;
        h.gamma = 1.0;
        assert!(h.validate().is_err());
        h.gamma = 0.9;
        h.t_q = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn field_overrides() {
        let mut h = Hyperparams::default();
        h.set_field("episodes", "3").unwrap();
        h.set_field("hidden", "[8, 4]").unwrap();
        h.set_field("weight_init", "zero").unwrap();
        assert_eq!((h.episodes, h.hidden.clone(), h.weight_init), (3, vec![8, 4], WeightInit::Zero));
        assert!(h.set_field("nonsense", "1").is_err());
        assert!(h.set_field("episodes", "-1").is_err());
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        let p: OnOffPolicy = serde_json::from_str("\"HALF_ON\"").unwrap();
        assert_eq!(p, OnOffPolicy::HalfOn);
    }
}
