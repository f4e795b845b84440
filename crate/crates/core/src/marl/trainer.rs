//! Episode loop tying agents, environment and rewards together.

use std::io::Write;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::sample_channel;
use crate::error::{Error, Result};
use crate::nn::Transition;
use crate::scenario::{sample_user_positions, RngStreams, ScenarioConfig, Stream};

use super::actions::{arbitrate, select_action, AmplitudeMode, BsAgentState, SurfaceAgentState, SurfaceCatalogue};
use super::agents::{tabular_update, DqnAgent, GlobalAgent, GlobalTransition, TabularAgent};
use super::env::{local_reward, AgentId, Environment};
use super::{Algorithm, Architecture, Hyperparams, OnOffPolicy};

/// Substream index reserved for the global agent.
const GLOBAL_INDEX: u64 = 1 << 16;

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub config: ScenarioConfig,
    pub hyper: Hyperparams,
    pub algorithm: Algorithm,
    pub architecture: Architecture,
    pub policy: OnOffPolicy,
    pub master_seed: u64,
}

impl RunSetup {
    pub fn new(config: ScenarioConfig, hyper: Hyperparams, algorithm: Algorithm, master_seed: u64) -> Self {
        Self {
            config,
            hyper,
            algorithm,
            architecture: Architecture::Es,
            policy: OnOffPolicy::Optimized,
            master_seed,
        }
    }

    /// Resolved settings plus the code version, for run manifests.
    pub fn manifest(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        value["code_version"] = serde_json::Value::String(env!("CARGO_PKG_VERSION").to_string());
        Ok(value)
    }
}

/// Log line of one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub episode: usize,
    pub slot: usize,
    pub algorithm: Algorithm,
    pub global_executed: bool,
    /// Instantaneous energy efficiency after the slot's actions, bits/J.
    pub global_reward: f64,
    pub sum_rate_bps: f64,
    pub total_power_watt: f64,
    pub energy_efficiency: f64,
    /// Unscaled reward of each local agent, surfaces first, BS last.
    pub agent_rewards: Vec<f64>,
    pub actions: Vec<usize>,
}

/// Records of a run, cut short with a diagnostic if training diverged.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<TrainRecord>,
    pub diverged: Option<String>,
}

impl TrainOutcome {
    /// Number of records in the first or last 10% window.
    pub fn window_len(&self) -> usize {
        self.records.len().div_ceil(10).max(1)
    }

    fn mean_of(records: &[TrainRecord], f: impl Fn(&TrainRecord) -> f64) -> f64 {
        if records.is_empty() {
            return f64::NAN;
        }
        records.iter().map(f).sum::<f64>() / records.len() as f64
    }

    /// Mean over the last 10% of slots of the run.
    pub fn final_mean(&self, f: impl Fn(&TrainRecord) -> f64) -> f64 {
        let n = self.window_len().min(self.records.len());
        Self::mean_of(&self.records[self.records.len() - n..], f)
    }

    /// Mean over the first 10% of slots of the run.
    pub fn first_mean(&self, f: impl Fn(&TrainRecord) -> f64) -> f64 {
        let n = self.window_len().min(self.records.len());
        Self::mean_of(&self.records[..n], f)
    }
}

enum Learner {
    Dqn(Box<DqnAgent>),
    Tabular(TabularAgent),
}

enum Catalogue {
    Surface(SurfaceCatalogue),
    Bs(usize),
}

impl Catalogue {
    fn len(&self) -> usize {
        match self {
            Catalogue::Surface(c) => c.len(),
            Catalogue::Bs(n) => *n,
        }
    }
}

/// Stateful training run advanced one slot at a time.
pub struct Trainer {
    setup: RunSetup,
    env: Environment,
    initial_surfaces: Vec<SurfaceAgentState>,
    initial_bs: BsAgentState,
    ids: Vec<AgentId>,
    catalogues: Vec<Catalogue>,
    learners: Vec<Learner>,
    global: Option<GlobalAgent>,
    explore_rngs: Vec<ChaCha8Rng>,
    replay_rngs: Vec<ChaCha8Rng>,
    global_replay_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    episode: usize,
    slot: usize,
    steps: usize,
}

fn initial_alpha(setup: &RunSetup, surface: usize, streams: &RngStreams) -> Vec<bool> {
    let n = setup.config.n_elements;
    if setup.architecture == Architecture::None {
        return vec![false; n];
    }
    match setup.policy {
        OnOffPolicy::AllOn | OnOffPolicy::Optimized => vec![true; n],
        OnOffPolicy::HalfOn => {
            let mut rng = streams.indexed(Stream::Layout, surface as u64);
            let mut alpha = vec![false; n];
            for i in sample(&mut rng, n, n / 2) {
                alpha[i] = true;
            }
            alpha
        }
    }
}

impl Trainer {
    pub fn new(setup: RunSetup) -> Result<Self> {
        setup.config.validate()?;
        setup.hyper.validate()?;
        let config = &setup.config;
        let hyper = &setup.hyper;
        let streams = RngStreams::new(setup.master_seed);

        let geometry = sample_user_positions(config, &mut streams.stream(Stream::UserPlacement))?;
        let mut channel_rng = streams.stream(Stream::Channel);
        let realization = sample_channel(&geometry, config, &mut channel_rng)?;

        let amplitude = setup.architecture.amplitude_mode().unwrap_or(AmplitudeMode::Split);
        let surfaces: Vec<SurfaceAgentState> = (0..config.v_surfaces)
            .map(|v| SurfaceAgentState::initial(initial_alpha(&setup, v, &streams), amplitude, hyper.step_sizes()))
            .collect();
        let bs = BsAgentState::initial(
            config.m_antennas,
            &config.users_per_region,
            config.p_max_watt(),
            hyper.delta_w_fraction,
        )?;

        let mut ids = Vec::new();
        let mut catalogues = Vec::new();
        if setup.architecture != Architecture::None {
            let learn_alpha = setup.policy == OnOffPolicy::Optimized;
            for v in 0..config.v_surfaces {
                ids.push(AgentId::Surface(v));
                catalogues.push(Catalogue::Surface(SurfaceCatalogue::new(config.n_elements, amplitude, learn_alpha)));
            }
        }
        ids.push(AgentId::Bs);
        catalogues.push(Catalogue::Bs(bs.action_count()));

        let env = Environment::new(config.clone(), geometry, realization, surfaces.clone(), bs.clone())?;
        let state_lens: Vec<usize> = ids
            .iter()
            .map(|id| match id {
                AgentId::Surface(_) => 4 * config.n_elements,
                AgentId::Bs => 2 * config.m_antennas * config.total_users(),
            })
            .collect();

        let mut learners = Vec::with_capacity(ids.len());
        for (mu, cat) in catalogues.iter().enumerate() {
            learners.push(match setup.algorithm {
                Algorithm::QLearning => Learner::Tabular(TabularAgent::new(cat.len())),
                _ => {
                    let mut rng = streams.indexed(Stream::WeightInit, mu as u64);
                    Learner::Dqn(Box::new(DqnAgent::new(state_lens[mu], cat.len(), hyper, &mut rng)?))
                }
            });
        }
        let global = if setup.algorithm == Algorithm::Magar {
            let heads: Vec<usize> = catalogues.iter().map(Catalogue::len).collect();
            let mut rng = streams.indexed(Stream::WeightInit, GLOBAL_INDEX);
            Some(GlobalAgent::new(state_lens.iter().sum(), &heads, hyper, &mut rng)?)
        } else {
            None
        };

        let count = ids.len() as u64;
        Ok(Self {
            explore_rngs: (0..count).map(|mu| streams.indexed(Stream::Exploration, mu)).collect(),
            replay_rngs: (0..count).map(|mu| streams.indexed(Stream::Replay, mu)).collect(),
            global_replay_rng: streams.indexed(Stream::Replay, GLOBAL_INDEX),
            channel_rng,
            initial_surfaces: surfaces,
            initial_bs: bs,
            env,
            ids,
            catalogues,
            learners,
            global,
            episode: 0,
            slot: 0,
            steps: 0,
            setup,
        })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn setup(&self) -> &RunSetup {
        &self.setup
    }

    pub fn agent_ids(&self) -> &[AgentId] {
        &self.ids
    }

    pub fn action_counts(&self) -> Vec<usize> {
        self.catalogues.iter().map(Catalogue::len).collect()
    }

    pub fn global_agent(&self) -> Option<&GlobalAgent> {
        self.global.as_ref()
    }

    /// Total slots of the configured run.
    pub fn total_slots(&self) -> usize {
        self.setup.hyper.episodes * self.setup.hyper.slots_per_episode
    }

    pub fn finished(&self) -> bool {
        self.episode >= self.setup.hyper.episodes
    }

    fn encode(&self, mu: usize) -> Vec<f64> {
        match self.ids[mu] {
            AgentId::Surface(v) => self.env.surfaces[v].encode(),
            AgentId::Bs => self.env.bs.encode(),
        }
    }

    fn key(&self, mu: usize) -> Vec<i64> {
        match self.ids[mu] {
            AgentId::Surface(v) => self.env.surfaces[v].lattice_key(),
            AgentId::Bs => self.env.bs.lattice_key(),
        }
    }

    fn apply(&mut self, mu: usize, action: usize) -> Result<()> {
        match (&self.catalogues[mu], self.ids[mu]) {
            (Catalogue::Surface(cat), AgentId::Surface(v)) => {
                if action >= cat.len() {
                    return Err(Error::InvalidArgument(format!("surface action {action} out of range")));
                }
                let (element, primitive) = cat.decode(action);
                self.env.surfaces[v].apply(element, primitive);
                Ok(())
            }
            _ => self.env.bs.apply(action),
        }
    }

    fn begin_episode(&mut self) -> Result<()> {
        if self.episode == 0 {
            return Ok(());
        }
        if self.setup.hyper.refade_per_episode {
            self.env.refade(&mut self.channel_rng)?;
        }
        if self.setup.hyper.reset_per_episode {
            self.env.surfaces = self.initial_surfaces.clone();
            self.env.bs = self.initial_bs.clone();
        }
        Ok(())
    }

    /// Advance one slot.
    pub fn step(&mut self) -> Result<TrainRecord> {
        if self.finished() {
            return Err(Error::InvalidState("training run already finished".into()));
        }
        if self.slot == 0 {
            self.begin_episode()?;
        }
        let hyper = self.setup.hyper.clone();
        let agents = self.ids.len();
        let pre = self.env.snapshot()?;
        let states: Vec<Vec<f64>> = (0..agents).map(|mu| self.encode(mu)).collect();
        let keys: Vec<Vec<i64>> = match self.setup.algorithm {
            Algorithm::QLearning => (0..agents).map(|mu| self.key(mu)).collect(),
            _ => Vec::new(),
        };

        let mut local = Vec::with_capacity(agents);
        for mu in 0..agents {
            let q = match &self.learners[mu] {
                Learner::Dqn(a) => a.q_values(&states[mu])?,
                Learner::Tabular(a) => a.q_values(&keys[mu]),
            };
            local.push(select_action(&q, hyper.epsilon, &mut self.explore_rngs[mu]));
        }
        let global_state: Vec<f64> = match self.global {
            Some(_) => states.concat(),
            None => Vec::new(),
        };
        let global_executed = self.global.is_some() && arbitrate(self.slot, hyper.t_q, false, true);
        let executed = match &self.global {
            Some(g) if global_executed => g.joint_action(&global_state)?,
            _ => local,
        };
        for (mu, &a) in executed.iter().enumerate() {
            self.apply(mu, a)?;
        }

        let post = self.env.snapshot()?;
        let metrics = self.env.metrics(&post)?;
        let global_reward = metrics.energy_efficiency;
        if !global_reward.is_finite() {
            return Err(Error::Divergence(format!("non-finite energy efficiency at slot {}", self.slot)));
        }
        let rewards: Vec<f64> = match self.setup.algorithm {
            Algorithm::Madqn => vec![global_reward; agents],
            _ => self
                .ids
                .iter()
                .map(|&id| local_reward(&self.env, id, &pre, &post, hyper.power_floor_watt))
                .collect::<Result<_>>()?,
        };

        let next_states: Vec<Vec<f64>> = (0..agents).map(|mu| self.encode(mu)).collect();
        let next_keys: Vec<Vec<i64>> = match self.setup.algorithm {
            Algorithm::QLearning => (0..agents).map(|mu| self.key(mu)).collect(),
            _ => Vec::new(),
        };
        for mu in 0..agents {
            let reward = rewards[mu] * hyper.reward_scale;
            match &mut self.learners[mu] {
                Learner::Dqn(a) => a.remember(Transition {
                    state: states[mu].clone(),
                    action: executed[mu],
                    reward,
                    next_state: next_states[mu].clone(),
                }),
                Learner::Tabular(a) => {
                    let n = a.actions;
                    tabular_update(&mut a.table, n, &keys[mu], executed[mu], reward, &next_keys[mu], hyper.lambda, hyper.gamma)
                }
            }
        }
        if let (Some(g), true) = (&mut self.global, global_executed) {
            g.remember(GlobalTransition {
                state: global_state,
                actions: executed.clone(),
                reward: global_reward * hyper.reward_scale,
                next_state: next_states.concat(),
            });
        }

        self.steps += 1;
        if self.steps.is_multiple_of(hyper.train_every) {
            for (learner, rng) in self.learners.iter_mut().zip(&mut self.replay_rngs) {
                if let Learner::Dqn(a) = learner {
                    a.train(rng)?;
                }
            }
            if let Some(g) = &mut self.global {
                g.train(&mut self.global_replay_rng)?;
            }
        }

        let record = TrainRecord {
            episode: self.episode,
            slot: self.slot,
            algorithm: self.setup.algorithm,
            global_executed,
            global_reward,
            sum_rate_bps: metrics.sum_rate_bps,
            total_power_watt: metrics.total_power_watt,
            energy_efficiency: metrics.energy_efficiency,
            agent_rewards: rewards,
            actions: executed,
        };
        self.slot += 1;
        if self.slot == hyper.slots_per_episode {
            self.slot = 0;
            self.episode += 1;
        }
        Ok(record)
    }

    /// Run to completion; divergence ends the run early with a diagnostic.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut records = Vec::with_capacity(self.total_slots());
        while !self.finished() {
            match self.step() {
                Ok(r) => records.push(r),
                Err(Error::Divergence(msg)) => {
                    log::warn!("run diverged: {msg}");
                    return Ok(TrainOutcome { records, diverged: Some(msg) });
                }
                Err(e) => return Err(e),
            }
        }
        Ok(TrainOutcome { records, diverged: None })
    }
}

/// Train one configuration from scratch.
pub fn train(setup: RunSetup) -> Result<TrainOutcome> {
    Trainer::new(setup)?.run()
}

/// Write records as CSV, one row per slot.
pub fn write_records_csv<W: Write>(records: &[TrainRecord], out: W) -> Result<()> {
    let agents = records.first().map_or(0, |r| r.agent_rewards.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "episode",
        "slot",
        "algorithm",
        "global_executed",
        "global_reward",
        "sum_rate_bps",
        "total_power_watt",
        "energy_efficiency",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..agents).map(|i| format!("reward_{i}")));
    header.extend((0..agents).map(|i| format!("action_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.episode.to_string(),
            r.slot.to_string(),
            r.algorithm.name().to_string(),
            r.global_executed.to_string(),
            r.global_reward.to_string(),
            r.sum_rate_bps.to_string(),
            r.total_power_watt.to_string(),
            r.energy_efficiency.to_string(),
        ];
        row.extend(r.agent_rewards.iter().map(f64::to_string));
        row.extend(r.actions.iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::WeightInit;

    pub(crate) fn tiny_setup(algorithm: Algorithm, seed: u64) -> RunSetup {
        let config = ScenarioConfig {
            m_antennas: 2,
            n_elements: 4,
            v_surfaces: 1,
            i_regions: 2,
            users_per_region: vec![1, 1],
            ..Default::default()
        };
        let hyper = Hyperparams {
            slots_per_episode: 30,
            episodes: 2,
            hidden: vec![16],
            batch_size: 8,
            replay_capacity: 256,
            target_sync: 10,
            ..Default::default()
        };
        RunSetup::new(config, hyper, algorithm, seed)
    }

    #[test]
    fn runs_every_algorithm_within_constraints() {
        for alg in Algorithm::ALL {
            let mut t = Trainer::new(tiny_setup(alg, 1)).unwrap();
            assert_eq!(t.action_counts(), vec![24, 16]);
            while !t.finished() {
                let r = t.step().unwrap();
                assert!(t.env().constraint_violations().is_empty(), "{alg:?} slot {}", r.slot);
                assert_eq!(r.global_reward, r.energy_efficiency);
                if alg == Algorithm::Madqn {
                    assert!(r.agent_rewards.iter().all(|&x| x == r.global_reward));
                }
            }
        }
    }

    #[test]
    fn global_execution_follows_the_period() {
        let mut setup = tiny_setup(Algorithm::Magar, 2);
        setup.hyper.slots_per_episode = 45;
        setup.hyper.t_q = 20;
        let out = train(setup).unwrap();
        let per_episode: Vec<usize> = (0..2)
            .map(|e| out.records.iter().filter(|r| r.episode == e && r.global_executed).count())
            .collect();
        // slots 0, 20 and 40
        assert_eq!(per_episode, vec![3, 3]);
        let out = train(tiny_setup(Algorithm::Madqn, 2)).unwrap();
        assert!(out.records.iter().all(|r| !r.global_executed));
    }

    #[test]
    fn zero_networks_pick_index_zero() {
        for alg in Algorithm::ALL {
            let mut setup = tiny_setup(alg, 3);
            setup.hyper.epsilon = 0.0;
            setup.hyper.weight_init = WeightInit::Zero;
            let r = Trainer::new(setup).unwrap().step().unwrap();
            assert_eq!(r.actions, vec![0, 0], "{alg:?}");
        }
    }

    #[test]
    fn repeated_runs_match() {
        for alg in [Algorithm::Magar, Algorithm::QLearning] {
            let a = train(tiny_setup(alg, 4)).unwrap();
            let b = train(tiny_setup(alg, 4)).unwrap();
            assert_eq!(a, b);
            let mut x = Vec::new();
            let mut y = Vec::new();
            write_records_csv(&a.records, &mut x).unwrap();
            write_records_csv(&b.records, &mut y).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn policies_and_architectures_shape_the_agents() {
        let mut setup = tiny_setup(Algorithm::MadqnLr, 5);
        setup.policy = OnOffPolicy::AllOn;
        assert_eq!(Trainer::new(setup.clone()).unwrap().action_counts(), vec![20, 16]);
        setup.policy = OnOffPolicy::HalfOn;
        let t = Trainer::new(setup.clone()).unwrap();
        assert_eq!(t.env().surfaces[0].surface.active_elements(), 2);
        setup.architecture = Architecture::Ris;
        setup.policy = OnOffPolicy::Optimized;
        assert_eq!(Trainer::new(setup.clone()).unwrap().action_counts(), vec![12, 16]);
        setup.architecture = Architecture::Ms;
        let t = Trainer::new(setup.clone()).unwrap();
        assert_eq!(t.action_counts(), vec![20, 16]);
        assert_eq!(t.env().surfaces[0].surface.beta_r, vec![1.0, 0.0, 1.0, 0.0]);
        setup.architecture = Architecture::None;
        let t = Trainer::new(setup).unwrap();
        assert_eq!(t.action_counts(), vec![16]);
        assert_eq!(t.env().surfaces[0].surface.active_elements(), 0);
    }

    #[test]
    fn windows() {
        let out = train(tiny_setup(Algorithm::Madqn, 6)).unwrap();
        assert_eq!(out.window_len(), 6);
        let tail: f64 = out.records[54..].iter().map(|r| r.energy_efficiency).sum::<f64>() / 6.0;
        assert_eq!(out.final_mean(|r| r.energy_efficiency), tail);
    }
}
