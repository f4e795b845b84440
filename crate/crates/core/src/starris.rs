//! Energy-splitting STAR-RIS element model.
//!
//! Each element splits incident energy between a reflected part (amplitude
//! `beta_r`, phase `theta_r`) and a transmitted part whose amplitude and phase
//! are fully determined by the reflected ones:
//!
//! ```text
//! beta_t  = sqrt(1 - beta_r^2)
//! theta_t = theta_r +/- pi/2   (mod 2 pi)
//! ```
//!
//! Only `beta_r`, `theta_r`, the `+/-` selector and the on-off bit are stored,
//! so the coupling cannot be violated by construction.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};

/// Which of the two `+/- pi/2` offsets couples the transmitted phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseSign {
    Plus,
    Minus,
}

impl PhaseSign {
    pub fn value(self) -> f64 {
        match self {
            PhaseSign::Plus => 1.0,
            PhaseSign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PhaseSign::Plus => PhaseSign::Minus,
            PhaseSign::Minus => PhaseSign::Plus,
        }
    }
}

/// Reduce a phase into `[0, 2 pi)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Transmission amplitude coupled to a reflection amplitude.
pub fn coupled_amplitude(beta_r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta_r) {
        return Err(invalid_arg(format!("reflection amplitude {beta_r} outside [0, 1]")));
    }
    Ok((1.0 - beta_r * beta_r).max(0.0).sqrt())
}

/// Transmission phase coupled to a reflection phase.
pub fn coupled_phase(theta_r: f64, sign: PhaseSign) -> Result<f64> {
    if !(0.0..TAU).contains(&theta_r) {
        return Err(invalid_arg(format!("reflection phase {theta_r} outside [0, 2pi)")));
    }
    Ok(wrap_phase(theta_r + sign.value() * FRAC_PI_2))
}

/// Learnable configuration of one surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceState {
    pub alpha: Vec<bool>,
    pub beta_r: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub phase_sign: Vec<PhaseSign>,
}

impl SurfaceState {
    /// Every element on, equal split, zero phase.
    pub fn uniform(n: usize, alpha: bool, beta_r: f64, theta_r: f64) -> Self {
        Self {
            alpha: vec![alpha; n],
            beta_r: vec![beta_r; n],
            theta_r: vec![theta_r; n],
            phase_sign: vec![PhaseSign::Plus; n],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn active_elements(&self) -> usize {
        self.alpha.iter().filter(|&&a| a).count()
    }

    pub fn beta_t(&self, n: usize) -> f64 {
        coupled_amplitude(self.beta_r[n]).expect("validated amplitude")
    }

    pub fn theta_t(&self, n: usize) -> f64 {
        coupled_phase(self.theta_r[n], self.phase_sign[n]).expect("validated phase")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alpha.len();
        if self.beta_r.len() != n || self.theta_r.len() != n || self.phase_sign.len() != n {
            return Err(Error::InvalidState("surface state vectors differ in length".into()));
        }
        for (i, &b) in self.beta_r.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidState(format!("beta_r[{i}] = {b} outside [0, 1]")));
            }
        }
        for (i, &t) in self.theta_r.iter().enumerate() {
            if !(0.0..TAU).contains(&t) {
                return Err(Error::InvalidState(format!("theta_r[{i}] = {t} outside [0, 2pi)")));
            }
        }
        Ok(())
    }
}

/// Diagonals of the transmission and reflection coefficient matrices.
///
/// The matrices are diagonal, so only the diagonals are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaPair {
    pub transmit: Vec<Complex64>,
    pub reflect: Vec<Complex64>,
}

impl ThetaPair {
    /// All-zero coefficients: a switched-off surface.
    pub fn off(n: usize) -> Self {
        Self {
            transmit: vec![Complex64::new(0.0, 0.0); n],
            reflect: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn transmit_matrix(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.transmit))
    }

    pub fn reflect_matrix(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.reflect))
    }
}

/// Compose on-off and passive beamforming into the coefficient diagonals.
pub fn build_theta(state: &SurfaceState) -> Result<ThetaPair> {
    state.validate()?;
    let n = state.len();
    let mut pair = ThetaPair::off(n);
    for i in 0..n {
        if !state.alpha[i] {
            continue;
        }
        let beta_r = state.beta_r[i];
        let theta_r = state.theta_r[i];
        let beta_t = coupled_amplitude(beta_r)?;
        let theta_t = coupled_phase(theta_r, state.phase_sign[i])?;
        pair.reflect[i] = Complex64::from_polar(beta_r, theta_r);
        pair.transmit[i] = Complex64::from_polar(beta_t, theta_t);
    }
    Ok(pair)
}

/// Circuit power drawn by the switched-on elements of a surface.
pub fn surface_power_watt(state: &SurfaceState, element_power_watt: f64) -> f64 {
    element_power_watt * state.active_elements() as f64
}
