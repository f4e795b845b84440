//! Discrete action catalogues and the lattice states they move on.
//!
//! One action changes one coordinate: a surface action is an
//! `(element, primitive)` pair, a BS action a `+/-` step on the real or
//! imaginary part of one beamformer entry. States are stored as integer step
//! counts from the initial point, so every reachable state lies on a lattice
//! and can key a lookup table exactly.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::CMatrix;
use crate::error::{Error, Result};
use crate::metrics::{normalize_beamformer, BeamformerSet};
use crate::starris::{wrap_phase, PhaseSign, SurfaceState};

/// Which of the two actors drives slot `t`: the global agent on multiples of
/// `period`, the local agents otherwise.
pub fn arbitrate<T>(t: usize, period: usize, local: T, global: T) -> T {
    assert!(period > 0, "global execution period must be positive");
    if t.is_multiple_of(period) {
        global
    } else {
        local
    }
}

/// Epsilon-greedy choice; ties in the greedy branch go to the lowest index.
pub fn select_action<R: Rng>(qvalues: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!qvalues.is_empty(), "empty action catalogue");
    if rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..qvalues.len());
    }
    greedy(qvalues)
}

pub fn greedy(qvalues: &[f64]) -> usize {
    let mut best = 0;
    for (i, q) in qvalues.iter().enumerate().skip(1) {
        if *q > qvalues[best] {
            best = i;
        }
    }
    best
}

/// Per-element move of a surface agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurfacePrimitive {
    IncBeta,
    DecBeta,
    IncTheta,
    DecTheta,
    FlipSign,
    ToggleAlpha,
    /// Swap a mode-switching element between pure reflection and pure
    /// transmission.
    FlipMode,
}

/// How the reflection amplitude of a surface is controlled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmplitudeMode {
    /// Energy splitting: `beta_r` moves in `+/- delta_beta` steps.
    Split,
    /// Mode switching: `beta_r` is 0 or 1.
    Binary,
    /// Reflect-only surface: `beta_r` pinned to 1.
    ReflectOnly,
}

/// Step sizes shared by all agents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub delta_beta: f64,
    pub delta_theta: f64,
    /// BS step as a fraction of the per-entry amplitude `sqrt(P_max / (M K))`.
    pub delta_w_fraction: f64,
}

/// Surface configuration together with its lattice coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceAgentState {
    pub surface: SurfaceState,
    beta_steps: Vec<i64>,
    theta_steps: Vec<i64>,
    amplitude: AmplitudeMode,
    steps: StepSizes,
    /// Number of phase steps in a full turn when `delta_theta` divides 2 pi.
    theta_period: Option<i64>,
}

/// Initial reflection amplitude of the energy-splitting lattice.
pub const INITIAL_BETA: f64 = FRAC_1_SQRT_2;

impl SurfaceAgentState {
    /// Initial state: zero phase, `+pi/2` coupling, amplitude by mode and the
    /// given on-off mask.
    pub fn initial(alpha: Vec<bool>, amplitude: AmplitudeMode, steps: StepSizes) -> Self {
        let n = alpha.len();
        let beta_r = match amplitude {
            AmplitudeMode::Split => vec![INITIAL_BETA; n],
            // alternate reflecting and transmitting elements
            AmplitudeMode::Binary => (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
            AmplitudeMode::ReflectOnly => vec![1.0; n],
        };
        let turns = TAU / steps.delta_theta;
        let theta_period = ((turns - turns.round()).abs() < 1e-9).then(|| turns.round() as i64);
        Self {
            surface: SurfaceState {
                alpha,
                beta_r,
                theta_r: vec![0.0; n],
                phase_sign: vec![PhaseSign::Plus; n],
            },
            beta_steps: vec![0; n],
            theta_steps: vec![0; n],
            amplitude,
            steps,
            theta_period,
        }
    }

    pub fn amplitude_mode(&self) -> AmplitudeMode {
        self.amplitude
    }

    /// Set element `n`'s phase to `steps` lattice steps from zero.
    pub fn set_theta_steps(&mut self, n: usize, steps: i64) {
        let steps = match self.theta_period {
            Some(p) => steps.rem_euclid(p),
            None => steps,
        };
        self.theta_steps[n] = steps;
        self.surface.theta_r[n] = wrap_phase(steps as f64 * self.steps.delta_theta);
    }

    /// Apply `primitive` to element `n`. Amplitude moves that leave `[0, 1]`
    /// are rejected and leave the state unchanged; phase moves wrap.
    pub fn apply(&mut self, n: usize, primitive: SurfacePrimitive) {
        match primitive {
            SurfacePrimitive::IncBeta | SurfacePrimitive::DecBeta => {
                if self.amplitude != AmplitudeMode::Split {
                    return;
                }
                let dir = if primitive == SurfacePrimitive::IncBeta { 1 } else { -1 };
                let steps = self.beta_steps[n] + dir;
                let beta = INITIAL_BETA + steps as f64 * self.steps.delta_beta;
                if (0.0..=1.0).contains(&beta) {
                    self.beta_steps[n] = steps;
                    self.surface.beta_r[n] = beta;
                }
            }
            SurfacePrimitive::IncTheta => self.set_theta_steps(n, self.theta_steps[n] + 1),
            SurfacePrimitive::DecTheta => self.set_theta_steps(n, self.theta_steps[n] - 1),
            SurfacePrimitive::FlipSign => {
                self.surface.phase_sign[n] = self.surface.phase_sign[n].flipped();
            }
            SurfacePrimitive::ToggleAlpha => self.surface.alpha[n] = !self.surface.alpha[n],
            SurfacePrimitive::FlipMode => {
                if self.amplitude == AmplitudeMode::Binary {
                    self.surface.beta_r[n] = 1.0 - self.surface.beta_r[n];
                }
            }
        }
    }

    /// Network input: per element `beta_r`, `theta_r / 2pi`, `theta_t / 2pi`
    /// and `alpha`.
    pub fn encode(&self) -> Vec<f64> {
        let s = &self.surface;
        let mut out = Vec::with_capacity(4 * s.len());
        for n in 0..s.len() {
            out.push(s.beta_r[n]);
            out.push(s.theta_r[n] / TAU);
            out.push(s.theta_t(n) / TAU);
            out.push(if s.alpha[n] { 1.0 } else { 0.0 });
        }
        out
    }

    /// Exact integer coordinates for table lookups.
    pub fn lattice_key(&self) -> Vec<i64> {
        let s = &self.surface;
        let mut key = Vec::with_capacity(4 * s.len());
        for n in 0..s.len() {
            key.push(match self.amplitude {
                AmplitudeMode::Split => self.beta_steps[n],
                _ => s.beta_r[n] as i64,
            });
            key.push(self.theta_steps[n]);
            key.push(matches!(s.phase_sign[n], PhaseSign::Plus) as i64);
            key.push(s.alpha[n] as i64);
        }
        key
    }

    /// Integer coordinates are consistent with the stored real values.
    pub fn on_lattice(&self) -> bool {
        let s = &self.surface;
        (0..s.len()).all(|n| {
            let beta_ok = match self.amplitude {
                AmplitudeMode::Split => {
                    s.beta_r[n] == INITIAL_BETA + self.beta_steps[n] as f64 * self.steps.delta_beta
                }
                AmplitudeMode::Binary => s.beta_r[n] == 0.0 || s.beta_r[n] == 1.0,
                AmplitudeMode::ReflectOnly => s.beta_r[n] == 1.0,
            };
            beta_ok && s.theta_r[n] == wrap_phase(self.theta_steps[n] as f64 * self.steps.delta_theta)
        })
    }
}

/// Action catalogue of one surface agent: every enabled primitive for every
/// element, element-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurfaceCatalogue {
    pub elements: usize,
    pub primitives: Vec<SurfacePrimitive>,
}

impl SurfaceCatalogue {
    pub fn new(elements: usize, amplitude: AmplitudeMode, learn_alpha: bool) -> Self {
        use SurfacePrimitive::*;
        let mut primitives = match amplitude {
            AmplitudeMode::Split => vec![IncBeta, DecBeta, IncTheta, DecTheta, FlipSign],
            AmplitudeMode::Binary => vec![FlipMode, IncTheta, DecTheta, FlipSign],
            AmplitudeMode::ReflectOnly => vec![IncTheta, DecTheta],
        };
        if learn_alpha {
            primitives.push(ToggleAlpha);
        }
        Self { elements, primitives }
    }

    pub fn len(&self) -> usize {
        self.elements * self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode(&self, action: usize) -> (usize, SurfacePrimitive) {
        let p = self.primitives.len();
        (action / p, self.primitives[action % p])
    }

    pub fn index_of(&self, element: usize, primitive: SurfacePrimitive) -> Option<usize> {
        let p = self.primitives.iter().position(|&q| q == primitive)?;
        Some(element * self.primitives.len() + p)
    }
}

/// BS agent state: an un-normalized lattice point whose normalization to the
/// power budget is the transmitted beamformer.
#[derive(Clone, Debug, PartialEq)]
pub struct BsAgentState {
    m_antennas: usize,
    users_per_region: Vec<usize>,
    /// `(real, imag)` step counts, one pair per entry in [`BsAgentState::entries`] order.
    steps: Vec<(i64, i64)>,
    unit: f64,
    fraction: f64,
    p_max_watt: f64,
    pub beamformer: BeamformerSet,
}

/// Direction of a BS step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BsMove {
    IncReal,
    DecReal,
    IncImag,
    DecImag,
}

impl BsAgentState {
    /// All entries equal, normalized to `p_max_watt`.
    pub fn initial(m_antennas: usize, users_per_region: &[usize], p_max_watt: f64, fraction: f64) -> Result<Self> {
        let total = m_antennas * users_per_region.iter().sum::<usize>();
        if total == 0 {
            return Err(Error::InvalidArgument("BS agent needs antennas and users".into()));
        }
        let unit = (p_max_watt / total as f64).sqrt();
        let mut state = Self {
            m_antennas,
            users_per_region: users_per_region.to_vec(),
            steps: vec![(0, 0); total],
            unit,
            fraction,
            p_max_watt,
            beamformer: BeamformerSet::zeros(m_antennas, users_per_region),
        };
        state.beamformer = normalize_beamformer(&state.raw(&state.steps), p_max_watt)?;
        Ok(state)
    }

    /// Entry `(region, row, column)` for every flat index.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let m = self.m_antennas;
        self.users_per_region
            .iter()
            .enumerate()
            .flat_map(move |(r, &k)| (0..k).flat_map(move |c| (0..m).map(move |row| (r, row, c))))
    }

    /// Step size on each real/imaginary coordinate, watts^(1/2).
    pub fn step_size(&self) -> f64 {
        self.unit * self.fraction
    }

    pub fn action_count(&self) -> usize {
        4 * self.steps.len()
    }

    fn raw(&self, steps: &[(i64, i64)]) -> BeamformerSet {
        let mut w: Vec<CMatrix> = self
            .users_per_region
            .iter()
            .map(|&k| CMatrix::zeros(self.m_antennas, k))
            .collect();
        let d = self.step_size();
        for ((r, row, c), (re, im)) in self.entries().zip(steps) {
            w[r][(row, c)] = Complex64::new(self.unit + d * *re as f64, d * *im as f64);
        }
        BeamformerSet::new(w)
    }

    pub fn decode(action: usize) -> (usize, BsMove) {
        let mv = match action % 4 {
            0 => BsMove::IncReal,
            1 => BsMove::DecReal,
            2 => BsMove::IncImag,
            _ => BsMove::DecImag,
        };
        (action / 4, mv)
    }

    /// Step one coordinate and renormalize. A move that would zero the whole
    /// beamformer leaves the state unchanged.
    pub fn apply(&mut self, action: usize) -> Result<()> {
        let (entry, mv) = Self::decode(action);
        if entry >= self.steps.len() {
            return Err(Error::InvalidArgument(format!("BS action {action} out of range")));
        }
        let mut steps = self.steps.clone();
        match mv {
            BsMove::IncReal => steps[entry].0 += 1,
            BsMove::DecReal => steps[entry].0 -= 1,
            BsMove::IncImag => steps[entry].1 += 1,
            BsMove::DecImag => steps[entry].1 -= 1,
        }
        let raw = self.raw(&steps);
        if raw.transmit_power() <= 0.0 {
            return Ok(());
        }
        self.beamformer = normalize_beamformer(&raw, self.p_max_watt)?;
        self.steps = steps;
        Ok(())
    }

    /// Network input: real and imaginary parts of the normalized beamformer
    /// in units of the initial entry amplitude.
    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.steps.len());
        for (r, row, c) in self.entries() {
            let z = self.beamformer.w[r][(row, c)] / self.unit;
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    pub fn lattice_key(&self) -> Vec<i64> {
        self.steps.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn steps() -> StepSizes {
        StepSizes { delta_beta: 0.1, delta_theta: PI / 8.0, delta_w_fraction: 0.1 }
    }

    #[test]
    fn arbitration() {
        assert_eq!(arbitrate(20, 20, "local", "global"), "global");
        assert_eq!(arbitrate(21, 20, "local", "global"), "local");
        assert_eq!(arbitrate(0, 20, "local", "global"), "global");
        for t in 0..10 {
            assert_eq!(arbitrate(t, 1, 0, 1), 1);
        }
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(select_action(&[2.0, 2.0, 1.0], 0.0, &mut rng), 0);
        assert_eq!(select_action(&[0.0; 5], 0.0, &mut rng), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = [5.0, 0.0, 0.0, 0.0];
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[select_action(&q, 1.0, &mut rng)] += 1;
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.25).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn beta_moves_reject_out_of_range() {
        let mut s = SurfaceAgentState::initial(vec![true; 2], AmplitudeMode::Split, steps());
        // 1/sqrt(2) + 2 * 0.1 = 0.907; a third step would leave [0, 1]
        s.apply(0, SurfacePrimitive::IncBeta);
        s.apply(0, SurfacePrimitive::IncBeta);
        let before = s.clone();
        s.apply(0, SurfacePrimitive::IncBeta);
        assert_eq!(s, before);
        for _ in 0..20 {
            s.apply(1, SurfacePrimitive::DecBeta);
        }
        assert!(s.surface.beta_r[1] >= 0.0 && s.surface.beta_r[1] < 0.1);
        assert!(s.on_lattice());
    }

    #[test]
    fn beta_at_one_stays_put() {
        // a lattice anchored so that one element sits exactly at 1.0
        let mut s = SurfaceAgentState::initial(vec![true], AmplitudeMode::ReflectOnly, steps());
        assert_eq!(s.surface.beta_r[0], 1.0);
        let before = s.clone();
        s.apply(0, SurfacePrimitive::IncBeta);
        assert_eq!(s, before);
    }

    #[test]
    fn phase_wraps() {
        let mut s = SurfaceAgentState::initial(vec![true], AmplitudeMode::Split, steps());
        s.set_theta_steps(0, 15);
        assert!((s.surface.theta_r[0] - 15.0 * PI / 8.0).abs() < 1e-15);
        s.apply(0, SurfacePrimitive::IncTheta);
        assert_eq!(s.surface.theta_r[0], 0.0);
        s.apply(0, SurfacePrimitive::DecTheta);
        assert!((s.surface.theta_r[0] - 15.0 * PI / 8.0).abs() < 1e-15);
        assert_eq!(s.lattice_key()[1], 15);
    }

    #[test]
    fn sign_alpha_and_mode_flips() {
        let mut s = SurfaceAgentState::initial(vec![true; 2], AmplitudeMode::Binary, steps());
        assert_eq!(s.surface.beta_r, vec![1.0, 0.0]);
        s.apply(0, SurfacePrimitive::FlipMode);
        s.apply(1, SurfacePrimitive::FlipSign);
        s.apply(1, SurfacePrimitive::ToggleAlpha);
        assert_eq!(s.surface.beta_r, vec![0.0, 0.0]);
        assert_eq!(s.surface.phase_sign[1], PhaseSign::Minus);
        assert!(!s.surface.alpha[1]);
        assert!(s.on_lattice());
    }

    #[test]
    fn catalogue_sizes() {
        assert_eq!(SurfaceCatalogue::new(16, AmplitudeMode::Split, true).len(), 96);
        assert_eq!(SurfaceCatalogue::new(16, AmplitudeMode::Split, false).len(), 80);
        assert_eq!(SurfaceCatalogue::new(4, AmplitudeMode::Binary, true).len(), 20);
        assert_eq!(SurfaceCatalogue::new(4, AmplitudeMode::ReflectOnly, true).len(), 12);
        let c = SurfaceCatalogue::new(3, AmplitudeMode::Split, true);
        assert_eq!(c.decode(7), (1, SurfacePrimitive::DecBeta));
        assert_eq!(c.index_of(1, SurfacePrimitive::DecBeta), Some(7));
    }

    #[test]
    fn bs_moves_keep_power_budget() {
        let pmax = 1.99526;
        let mut bs = BsAgentState::initial(2, &[1, 2], pmax, 0.1).unwrap();
        assert_eq!(bs.action_count(), 4 * 2 * 3);
        assert!(((bs.beamformer.transmit_power() - pmax) / pmax).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let a = rng.gen_range(0..bs.action_count());
            bs.apply(a).unwrap();
            assert!(((bs.beamformer.transmit_power() - pmax) / pmax).abs() < 1e-12);
        }
        assert!(bs.apply(bs.action_count()).is_err());
    }

    #[test]
    fn bs_refuses_to_zero_the_beamformer() {
        let mut bs = BsAgentState::initial(1, &[1], 1.0, 1.0).unwrap();
        let before = bs.clone();
        bs.apply(1).unwrap(); // real part 1 - 1 = 0 with zero imaginary part
        assert_eq!(bs, before);
    }
}
