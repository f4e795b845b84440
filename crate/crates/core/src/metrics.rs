//! SINR, sum rate, power consumption and energy efficiency.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{CMatrix, CRow, EffectiveChannel};
use crate::error::{invalid_arg, Error, Result};
use crate::scenario::UserId;
use crate::starris::{surface_power_watt, SurfaceState};

/// BS precoders, one `M x K_i` matrix per region; column `k` serves user `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    pub w: Vec<CMatrix>,
}

impl BeamformerSet {
    pub fn new(w: Vec<CMatrix>) -> Self {
        Self { w }
    }

    /// Every entry set to `value`.
    pub fn filled(m: usize, users_per_region: &[usize], value: Complex64) -> Self {
        Self {
            w: users_per_region
                .iter()
                .map(|&k| CMatrix::from_element(m, k, value))
                .collect(),
        }
    }

    pub fn zeros(m: usize, users_per_region: &[usize]) -> Self {
        Self::filled(m, users_per_region, Complex64::new(0.0, 0.0))
    }

    /// `sum_i tr(W_i W_i^H)`, the BS transmit power in watts.
    pub fn transmit_power(&self) -> f64 {
        self.w.iter().map(|w| w.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
    }

    pub fn column(&self, user: UserId) -> nalgebra::DVectorView<'_, Complex64> {
        self.w[user.region].column(user.k)
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.w
            .iter()
            .enumerate()
            .flat_map(|(region, w)| (0..w.ncols()).map(move |k| UserId { region, k }))
    }
}

/// Scale `w` so that its transmit power equals `p_max_watt`.
pub fn normalize_beamformer(w: &BeamformerSet, p_max_watt: f64) -> Result<BeamformerSet> {
    if !(p_max_watt.is_finite() && p_max_watt > 0.0) {
        return Err(invalid_arg(format!("power budget {p_max_watt} W must be positive")));
    }
    let power = w.transmit_power();
    if !(power.is_finite() && power > 0.0) {
        return Err(invalid_arg("cannot normalize an all-zero beamformer"));
    }
    let scale = Complex64::from((p_max_watt / power).sqrt());
    Ok(BeamformerSet {
        w: w.w.iter().map(|m| m * scale).collect(),
    })
}

fn gain(omega: &CRow, beam: nalgebra::DVectorView<'_, Complex64>) -> f64 {
    omega.iter().zip(beam.iter()).map(|(o, w)| o * w).sum::<Complex64>().norm_sqr()
}

/// SINR of `user`, whose effective channel is `omega`. Every other beam is
/// interference measured through the same channel.
pub fn sinr_for(user: UserId, omega: &CRow, w: &BeamformerSet, noise_watt: f64) -> Result<f64> {
    if user.region >= w.w.len() || user.k >= w.w[user.region].ncols() {
        return Err(Error::Dimension(format!("no beam for user {user:?}")));
    }
    if omega.len() != w.w[user.region].nrows() {
        return Err(Error::Dimension(format!(
            "channel has {} taps, beams have {}",
            omega.len(),
            w.w[user.region].nrows()
        )));
    }
    let mut signal = 0.0;
    let mut interference = 0.0;
    for other in w.users() {
        let g = gain(omega, w.column(other));
        if other == user {
            signal = g;
        } else {
            interference += g;
        }
    }
    let denom = interference + noise_watt;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok(signal / denom)
}

/// SINR of `user` looked up in the effective channels of all users.
pub fn sinr(user: UserId, users: &[UserId], omegas: &EffectiveChannel, w: &BeamformerSet, noise_watt: f64) -> Result<f64> {
    let idx = users
        .iter()
        .position(|u| *u == user)
        .ok_or_else(|| invalid_arg(format!("unknown user {user:?}")))?;
    sinr_for(user, &omegas.omega[idx], w, noise_watt)
}

/// `sum B log2(1 + sinr)` in bits/s.
pub fn sum_rate(sinrs: &[f64], bandwidth_hz: f64) -> Result<f64> {
    if let Some(bad) = sinrs.iter().find(|s| !(**s >= 0.0)) {
        return Err(invalid_arg(format!("negative or NaN SINR {bad}")));
    }
    Ok(sinrs.iter().map(|s| bandwidth_hz * (1.0 + s).log2()).sum())
}

/// Surface circuit power plus BS transmit power, watts.
pub fn total_power(states: &[SurfaceState], w: &BeamformerSet, element_power_watt: f64) -> f64 {
    states
        .iter()
        .map(|s| surface_power_watt(s, element_power_watt))
        .sum::<f64>()
        + w.transmit_power()
}

/// Everything measured for one system snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub sinr: Vec<f64>,
    pub sum_rate_bps: f64,
    pub total_power_watt: f64,
    /// bits per joule
    pub energy_efficiency: f64,
    /// `[surface][element]` circuit power.
    pub per_element_power: Vec<Vec<f64>>,
}

/// Inputs shared by every metric evaluation of one scenario.
#[derive(Clone, Copy, Debug)]
pub struct PowerModel {
    pub bandwidth_hz: f64,
    pub noise_watt: f64,
    pub element_power_watt: f64,
}

impl PowerModel {
    pub fn from_config(config: &crate::scenario::ScenarioConfig) -> Self {
        Self {
            bandwidth_hz: config.bandwidth_hz,
            noise_watt: config.noise_watt(),
            element_power_watt: config.element_power_watt(),
        }
    }
}

/// Sum rate over all users, bits/s.
pub fn system_rate(users: &[UserId], omegas: &EffectiveChannel, w: &BeamformerSet, model: &PowerModel) -> Result<(Vec<f64>, f64)> {
    let sinrs = users
        .iter()
        .zip(&omegas.omega)
        .map(|(&u, omega)| sinr_for(u, omega, w, model.noise_watt))
        .collect::<Result<Vec<_>>>()?;
    let rate = sum_rate(&sinrs, model.bandwidth_hz)?;
    Ok((sinrs, rate))
}

/// Sum rate over total power, bits/joule.
pub fn energy_efficiency(
    states: &[SurfaceState],
    w: &BeamformerSet,
    users: &[UserId],
    omegas: &EffectiveChannel,
    model: &PowerModel,
) -> Result<LinkMetrics> {
    let (sinr, sum_rate_bps) = system_rate(users, omegas, w, model)?;
    let total_power_watt = total_power(states, w, model.element_power_watt);
    if total_power_watt <= 0.0 {
        return Err(Error::InvalidState("total power is zero".into()));
    }
    let per_element_power = states
        .iter()
        .map(|s| {
            s.alpha
                .iter()
                .map(|&a| if a { model.element_power_watt } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(LinkMetrics {
        sinr,
        sum_rate_bps,
        total_power_watt,
        energy_efficiency: sum_rate_bps / total_power_watt,
        per_element_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{effective_channels, enumerate_paths, sample_channel};
    use crate::scenario::{dbm_to_watt, sample_user_positions, RngStreams, ScenarioConfig, Stream};
    use crate::starris::build_theta;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn uid(region: usize, k: usize) -> UserId {
        UserId { region, k }
    }

    #[test]
    fn sinr_examples() {
        let omega = CRow::from_element(1, c(1.0));
        let single = BeamformerSet::new(vec![CMatrix::from_element(1, 1, c(2.0))]);
        assert!((sinr_for(uid(0, 0), &omega, &single, 0.5).unwrap() - 8.0).abs() < 1e-15);

        let zero = BeamformerSet::new(vec![CMatrix::from_row_slice(1, 2, &[c(0.0), c(1.0)])]);
        assert_eq!(sinr_for(uid(0, 0), &omega, &zero, 1.0).unwrap(), 0.0);

        let two = BeamformerSet::new(vec![CMatrix::from_row_slice(1, 2, &[c(1.0), c(2.0)])]);
        assert!((sinr_for(uid(0, 0), &omega, &two, 1.0).unwrap() - 0.2).abs() < 1e-15);

        let dead = BeamformerSet::zeros(1, &[1]);
        assert_eq!(sinr_for(uid(0, 0), &omega, &dead, 0.0).unwrap(), 0.0);
        assert!(sinr_for(uid(0, 3), &omega, &dead, 1.0).is_err());
    }

    #[test]
    fn rate_examples() {
        assert_eq!(sum_rate(&[0.0, 0.0], 1e8).unwrap(), 0.0);
        assert_eq!(sum_rate(&[1.0], 1e8).unwrap(), 1e8);
        assert!((sum_rate(&[1.0, 3.0], 1e8).unwrap() - 3e8).abs() < 1e-6);
        assert!(sum_rate(&[-1.0], 1e8).is_err());
    }

    #[test]
    fn power_examples() {
        let p = dbm_to_watt(17.0).unwrap();
        let pmax = dbm_to_watt(33.0).unwrap();
        let w = normalize_beamformer(&BeamformerSet::filled(5, &[2, 2, 6], c(1.0)), pmax).unwrap();
        let off = vec![SurfaceState::uniform(16, false, 0.5, 0.0); 2];
        assert!((total_power(&off, &w, p) - pmax).abs() < 1e-12);
        let on = vec![SurfaceState::uniform(16, true, 0.5, 0.0); 2];
        assert!((total_power(&on, &w, p) - 3.5991).abs() < 1e-4);
        let mut one = SurfaceState::uniform(16, false, 0.5, 0.0);
        one.alpha[3] = true;
        assert_eq!(total_power(&[one], &BeamformerSet::zeros(5, &[1]), p), p);
    }

    #[test]
    fn normalization_examples() {
        let w = BeamformerSet::new(vec![CMatrix::from_element(1, 1, c(2.0))]);
        let n = normalize_beamformer(&w, 1.0).unwrap();
        assert!((n.w[0][(0, 0)] - c(1.0)).norm() < 1e-15);
        assert!(normalize_beamformer(&BeamformerSet::zeros(2, &[2]), 1.0).is_err());
    }

    #[test]
    fn efficiency_is_rate_over_power() {
        assert_eq!(3e8 / 3.0, 1e8);
        let omegas = EffectiveChannel { omega: vec![CRow::from_element(1, c(1.0))] };
        let w = BeamformerSet::zeros(1, &[1]);
        let mut wp = w.clone();
        wp.w[0][(0, 0)] = c(0.0);
        let states = vec![SurfaceState::uniform(2, true, 0.5, 0.0)];
        let model = PowerModel { bandwidth_hz: 1e8, noise_watt: 1.0, element_power_watt: 1.0 };
        let m = energy_efficiency(&states, &wp, &[uid(0, 0)], &omegas, &model).unwrap();
        assert_eq!(m.sum_rate_bps, 0.0);
        assert_eq!(m.energy_efficiency, 0.0);
        assert_eq!(m.per_element_power, vec![vec![1.0, 1.0]]);
    }

    /// Straight-line re-implementation of the full metric chain for a tiny
    /// V=1, M=2, K=2 system, written with scalar loops only.
    #[test]
    fn end_to_end_matches_straight_line_oracle() {
        let cfg = ScenarioConfig {
            m_antennas: 2,
            n_elements: 3,
            v_surfaces: 1,
            i_regions: 2,
            users_per_region: vec![1, 1],
            ..ScenarioConfig::default()
        };
        let streams = RngStreams::new(21);
        let g = sample_user_positions(&cfg, &mut streams.stream(Stream::UserPlacement)).unwrap();
        let real = sample_channel(&g, &cfg, &mut streams.stream(Stream::Channel)).unwrap();
        let mut rng = streams.stream(Stream::Layout);
        let mut state = SurfaceState::uniform(3, true, 0.5, 0.0);
        for i in 0..3 {
            state.beta_r[i] = rng.gen();
            state.theta_r[i] = rng.gen::<f64>() * 6.0;
        }
        state.alpha[1] = false;
        let theta = build_theta(&state).unwrap();
        let mut w = BeamformerSet::zeros(2, &[1, 1]);
        for m in w.w.iter_mut() {
            for z in m.iter_mut() {
                *z = Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        let w = normalize_beamformer(&w, cfg.p_max_watt()).unwrap();
        let model = PowerModel::from_config(&cfg);
        let paths = enumerate_paths(1).unwrap();
        let omegas = effective_channels(&real, std::slice::from_ref(&theta), &paths).unwrap();
        let got = energy_efficiency(std::slice::from_ref(&state), &w, &real.users, &omegas, &model).unwrap();

        // oracle
        let beams: Vec<[Complex64; 2]> = (0..2).map(|r| [w.w[r][(0, 0)], w.w[r][(1, 0)]]).collect();
        let mut rate = 0.0;
        for u in 0..2 {
            let region = real.users[u].region;
            let mut om = [Complex64::new(0.0, 0.0); 2];
            for m in 0..2 {
                om[m] = real.direct[u][m].conj();
                for n in 0..3 {
                    let (link, coeff) = if 0 < region {
                        (real.transmit_link[0][u][n], theta.transmit[n])
                    } else {
                        (real.reflect_link[0][u][n], theta.reflect[n])
                    };
                    om[m] += link.conj() * coeff * real.bs_to_surface[0][(n, m)];
                }
            }
            let g = |b: &[Complex64; 2]| (om[0] * b[0] + om[1] * b[1]).norm_sqr();
            let sig = g(&beams[u]);
            let int = g(&beams[1 - u]);
            rate += cfg.bandwidth_hz * (1.0 + sig / (int + cfg.noise_watt())).log2();
        }
        let power = cfg.element_power_watt() * 2.0 + cfg.p_max_watt();
        let ee = rate / power;
        assert!(((got.energy_efficiency - ee) / ee).abs() < 1e-9);
        assert!(((got.energy_efficiency * got.total_power_watt - got.sum_rate_bps) / got.sum_rate_bps).abs() < 1e-9);
    }

    fn arb_beams() -> impl Strategy<Value = BeamformerSet> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6).prop_map(|v| {
            let z: Vec<Complex64> = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
            BeamformerSet::new(vec![
                CMatrix::from_column_slice(2, 1, &z[..2]),
                CMatrix::from_column_slice(2, 2, &z[2..]),
            ])
        })
    }

    proptest! {
        #[test]
        fn normalization_is_exact_and_idempotent(w in arb_beams(), p in 0.1f64..10.0) {
            prop_assume!(w.transmit_power() > 1e-6);
            let once = normalize_beamformer(&w, p).unwrap();
            prop_assert!(((once.transmit_power() - p) / p).abs() < 1e-12);
            let twice = normalize_beamformer(&once, p).unwrap();
            for (a, b) in once.w.iter().zip(&twice.w) {
                prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
            // columns stay parallel to the input
            let scale = (p / w.transmit_power()).sqrt();
            for (a, b) in once.w.iter().zip(&w.w) {
                prop_assert!((a - b * Complex64::from(scale)).norm() < 1e-12);
            }
        }

        #[test]
        fn sinr_is_scale_invariant_without_noise(w in arb_beams(), scale in 0.1f64..10.0, o in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)) {
            let omega = CRow::from_row_slice(&[Complex64::new(o.0, o.1), Complex64::new(o.2, 0.3)]);
            let scaled = BeamformerSet::new(w.w.iter().map(|m| m * Complex64::from(scale)).collect());
            for u in w.users() {
                let a = sinr_for(u, &omega, &w, 1e-300).unwrap();
                let b = sinr_for(u, &omega, &scaled, 1e-300).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
            }
        }

        #[test]
        fn rate_grows_with_any_sinr(s in prop::collection::vec(0.0f64..100.0, 1..6), i in 0usize..6, bump in 1e-3f64..10.0) {
            let idx = i % s.len();
            let mut t = s.clone();
            t[idx] += bump;
            prop_assert!(sum_rate(&t, 1e6).unwrap() > sum_rate(&s, 1e6).unwrap());
        }
    }
}
