//! Environment snapshots and the reward functions.

use std::f64::consts::FRAC_PI_2;

use crate::channel::{effective_channels, enumerate_paths, sample_channel, ChannelRealization, PathTable};
use crate::error::{Error, Result};
use crate::metrics::{energy_efficiency, system_rate, BeamformerSet, LinkMetrics, PowerModel};
use crate::scenario::{Geometry, ScenarioConfig, UserId};
use crate::starris::{build_theta, coupled_phase, surface_power_watt, SurfaceState, ThetaPair};

use super::actions::{BsAgentState, SurfaceAgentState};

/// Identity of a local agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentId {
    Surface(usize),
    Bs,
}

/// Controllable state of the whole system at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub surfaces: Vec<SurfaceState>,
    pub thetas: Vec<ThetaPair>,
    pub beamformer: BeamformerSet,
}

impl Snapshot {
    pub fn new(surfaces: Vec<SurfaceState>, beamformer: BeamformerSet) -> Result<Self> {
        let thetas = surfaces.iter().map(build_theta).collect::<Result<Vec<_>>>()?;
        Ok(Self { surfaces, thetas, beamformer })
    }
}

/// Channel, geometry and the agents' current lattice states.
#[derive(Clone, Debug)]
pub struct Environment {
    pub config: ScenarioConfig,
    pub model: PowerModel,
    pub geometry: Geometry,
    pub paths: PathTable,
    pub realization: ChannelRealization,
    pub users: Vec<UserId>,
    pub surfaces: Vec<SurfaceAgentState>,
    pub bs: BsAgentState,
}

impl Environment {
    pub fn new(
        config: ScenarioConfig,
        geometry: Geometry,
        realization: ChannelRealization,
        surfaces: Vec<SurfaceAgentState>,
        bs: BsAgentState,
    ) -> Result<Self> {
        config.validate()?;
        if surfaces.len() != config.v_surfaces {
            return Err(Error::Dimension(format!(
                "{} surface states for {} surfaces",
                surfaces.len(),
                config.v_surfaces
            )));
        }
        let users = realization.users.clone();
        Ok(Self {
            model: PowerModel::from_config(&config),
            paths: enumerate_paths(config.v_surfaces)?,
            config,
            geometry,
            realization,
            users,
            surfaces,
            bs,
        })
    }

    /// Draw a fresh fading realization over the same geometry.
    pub fn refade<R: rand::Rng>(&mut self, rng: &mut R) -> Result<()> {
        self.realization = sample_channel(&self.geometry, &self.config, rng)?;
        Ok(())
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        Snapshot::new(
            self.surfaces.iter().map(|s| s.surface.clone()).collect(),
            self.bs.beamformer.clone(),
        )
    }

    /// Sum rate for the given coefficients and beamformer, bits/s.
    pub fn rate(&self, thetas: &[ThetaPair], w: &BeamformerSet) -> Result<f64> {
        let omegas = effective_channels(&self.realization, thetas, &self.paths)?;
        Ok(system_rate(&self.users, &omegas, w, &self.model)?.1)
    }

    pub fn metrics(&self, snap: &Snapshot) -> Result<LinkMetrics> {
        let omegas = effective_channels(&self.realization, &snap.thetas, &self.paths)?;
        energy_efficiency(&snap.surfaces, &snap.beamformer, &self.users, &omegas, &self.model)
    }

    /// Every violated system constraint of the current state, as text.
    pub fn constraint_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (v, agent) in self.surfaces.iter().enumerate() {
            let s = &agent.surface;
            if let Err(e) = s.validate() {
                out.push(format!("surface {v}: {e}"));
                continue;
            }
            if !agent.on_lattice() {
                out.push(format!("surface {v}: state left the lattice"));
            }
            let theta = match build_theta(s) {
                Ok(t) => t,
                Err(e) => {
                    out.push(format!("surface {v}: {e}"));
                    continue;
                }
            };
            for n in 0..s.len() {
                let (t, r) = (theta.transmit[n], theta.reflect[n]);
                if !s.alpha[n] {
                    if t.norm() != 0.0 || r.norm() != 0.0 {
                        out.push(format!("surface {v} element {n}: switched off but radiating"));
                    }
                    continue;
                }
                let energy = t.norm_sqr() + r.norm_sqr();
                if (energy - 1.0).abs() > 1e-12 {
                    out.push(format!("surface {v} element {n}: energy {energy}"));
                }
                match coupled_phase(s.theta_r[n], s.phase_sign[n]) {
                    Ok(p) if p == s.theta_t(n) => {}
                    _ => out.push(format!("surface {v} element {n}: phase coupling broken")),
                }
                if t.norm() > 1e-6 && r.norm() > 1e-6 {
                    let gap = (t / r).arg().abs();
                    if (gap - FRAC_PI_2).abs() > 1e-12 {
                        out.push(format!("surface {v} element {n}: phase gap {gap}"));
                    }
                }
            }
        }
        let p = self.bs.beamformer.transmit_power();
        let pmax = self.config.p_max_watt();
        if ((p - pmax) / pmax).abs() > 1e-12 {
            out.push(format!("BS power {p} W, budget {pmax} W"));
        }
        out
    }
}

/// Rate with only `agent` moved to its post-action state, over that agent's
/// own power.
pub fn local_reward(env: &Environment, agent: AgentId, pre: &Snapshot, post: &Snapshot, power_floor_watt: f64) -> Result<f64> {
    match agent {
        AgentId::Surface(v) => {
            if v >= pre.thetas.len() {
                return Err(Error::InvalidArgument(format!("no surface {v}")));
            }
            let mut thetas = pre.thetas.clone();
            thetas[v] = post.thetas[v].clone();
            let rate = env.rate(&thetas, &pre.beamformer)?;
            let own = surface_power_watt(&post.surfaces[v], env.model.element_power_watt);
            Ok(rate / own.max(power_floor_watt))
        }
        AgentId::Bs => {
            let rate = env.rate(&pre.thetas, &post.beamformer)?;
            Ok(rate / post.beamformer.transmit_power())
        }
    }
}

/// Instantaneous energy efficiency of the snapshot, bits/J.
pub fn global_reward(env: &Environment, snap: &Snapshot) -> Result<f64> {
    Ok(env.metrics(snap)?.energy_efficiency)
}
