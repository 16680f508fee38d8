//! System-size expansion of the pair-loss master equation.
//!
//! Writing `N = ⟨N⟩_st φ(τ) + sqrt(⟨N⟩_st) ξ(τ)` and expanding in
//! `1/sqrt(⟨N⟩_st)` gives the macroscopic law `φ' = 1 − φ²` and a linear
//! Fokker–Planck equation for ξ whose second moment obeys
//! `⟨ξ²⟩' = −4φ⟨ξ²⟩ + (1 + 2φ²)`. Time is `τ = t sqrt(R β′)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ode::{DormandPrince, OdeOptions, OdeSystem};

/// `F = ⟨ξ²⟩/φ` is only reported above this occupancy fraction.
pub const PHI_MIN_FOR_FANO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanKampenState {
    /// Deterministic occupancy fraction φ.
    pub phi: f64,
    /// Scaled fluctuation variance ⟨ξ²⟩.
    pub xi2: f64,
    /// Dimensionless time τ.
    pub tau: f64,
}

impl VanKampenState {
    pub fn new(phi: f64, xi2: f64, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::InvalidInput(format!("phi = {phi} outside [0, 1]")));
        }
        if !(xi2.is_finite() && xi2 >= 0.0) {
            return Err(Error::InvalidInput(format!("xi2 = {xi2} must be >= 0")));
        }
        if !tau.is_finite() {
            return Err(Error::InvalidInput("tau must be finite".into()));
        }
        Ok(Self { phi, xi2, tau })
    }

    /// Fano factor `⟨ξ²⟩/φ`, undefined while φ is near zero.
    pub fn fano(&self) -> Option<f64> {
        (self.phi > PHI_MIN_FOR_FANO).then(|| self.xi2 / self.phi)
    }
}

/// `τ = t sqrt(R β′)`; needs loading and a two-body channel.
pub fn to_dimensionless(params: &ModelParams, t: f64) -> Result<f64> {
    Ok(t * time_scale(params)?)
}

/// `sqrt(R β′)` in s⁻¹.
pub fn time_scale(params: &ModelParams) -> Result<f64> {
    if params.loading_rate <= 0.0 {
        return Err(Error::Unsupported("dimensionless time needs R > 0".into()));
    }
    let mut pairs = params.active_channels().filter(|c| c.order == 2);
    match (pairs.next(), pairs.next()) {
        (Some(c), None) => Ok((params.loading_rate * c.rate_const).sqrt()),
        _ => Err(Error::Unsupported(
            "dimensionless time needs exactly one two-body channel".into(),
        )),
    }
}

/// Closed-form macroscopic trajectory `φ(τ) = tanh(τ + atanh φ₀)`.
pub fn phi_closed_form(phi0: f64, tau: f64) -> f64 {
    if phi0 >= 1.0 {
        1.0
    } else {
        (tau + phi0.atanh()).tanh()
    }
}

struct Expansion;

impl OdeSystem for Expansion {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let phi = y[0];
        dy[0] = 1.0 - phi * phi;
        dy[1] = -4.0 * phi * y[1] + (1.0 + 2.0 * phi * phi);
    }
}

/// Integrate `(φ, ⟨ξ²⟩)` from `s0` to `tau_end`, reporting `n_out + 1`
/// equally spaced states including both endpoints.
pub fn vk_evolve(s0: &VanKampenState, tau_end: f64, n_out: usize) -> Result<Vec<VanKampenState>> {
    VanKampenState::new(s0.phi, s0.xi2, s0.tau)?;
    if !(tau_end > s0.tau) {
        return Err(Error::InvalidInput(format!(
            "tau_end = {tau_end} must exceed the initial tau {}",
            s0.tau
        )));
    }
    let n = n_out.max(1);
    let mut dp = DormandPrince::new(&Expansion, s0.tau, &[s0.phi, s0.xi2], OdeOptions::new(1e-12, 1e-14));
    let mut out = Vec::with_capacity(n + 1);
    out.push(*s0);
    for k in 1..=n {
        let tau = s0.tau + (tau_end - s0.tau) * k as f64 / n as f64;
        dp.advance_to(tau)?;
        let y = dp.y();
        out.push(VanKampenState {
            // φ ≤ 1 is invariant; clip rounding above it
            phi: y[0].min(1.0),
            xi2: y[1].max(0.0),
            tau,
        });
    }
    Ok(out)
}

/// Stationary Fano factor for ρ-body losses that expel the whole ρ-tuple:
/// `(1 + 1/ρ)/2` with loading, `ρ/(2ρ − 1)` for pure decay.
pub fn vk_steady(rho: u32, removed: u32, loading: bool) -> Result<f64> {
    if rho < 1 {
        return Err(Error::InvalidInput("rho must be >= 1".into()));
    }
    if removed != rho {
        return Err(Error::Unsupported(format!(
            "no closed form when an event removes {removed} of {rho} atoms"
        )));
    }
    let rho = f64::from(rho);
    Ok(if loading {
        0.5 * (1.0 + 1.0 / rho)
    } else {
        rho / (2.0 * rho - 1.0)
    })
}

/// [`vk_steady`] for a parameter set with exactly one active loss channel.
pub fn vk_steady_for(params: &ModelParams) -> Result<f64> {
    let mut active = params.active_channels();
    match (active.next(), active.next()) {
        (Some(c), None) => vk_steady(c.order, c.removed, params.loading_rate > 0.0),
        _ => Err(Error::Unsupported(
            "closed-form Fano factor needs exactly one loss channel".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensionless_time() {
        let p = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        let tau = to_dimensionless(&p, 3e-3).unwrap();
        assert!((tau - 3e-3 * 3e6f64.sqrt()).abs() < 1e-12);
        assert!((tau - 5.196).abs() < 1e-3);
        assert_eq!(to_dimensionless(&p, 0.0).unwrap(), 0.0);
        let unit = ModelParams::two_body(1.0, 0.0, 1.0, 2).unwrap();
        assert_eq!(to_dimensionless(&unit, 1.0).unwrap(), 1.0);
        let decay = ModelParams::two_body(0.0, 0.2, 500.0, 2).unwrap();
        assert!(to_dimensionless(&decay, 1.0).is_err());
        let linear = ModelParams::new(1.0, 0.2, vec![]).unwrap();
        assert!(to_dimensionless(&linear, 1.0).is_err());
    }

    #[test]
    fn phi_follows_tanh() {
        let s0 = VanKampenState::new(0.0, 0.0, 0.0).unwrap();
        for s in vk_evolve(&s0, 10.0, 200).unwrap() {
            assert!((s.phi - s.tau.tanh()).abs() < 1e-9, "{s:?}");
        }
        let s0 = VanKampenState::new(0.3, 0.1, 0.0).unwrap();
        for s in vk_evolve(&s0, 5.0, 50).unwrap() {
            assert!((s.phi - phi_closed_form(0.3, s.tau)).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_is_stationary() {
        let s0 = VanKampenState::new(1.0, 0.75, 0.0).unwrap();
        for s in vk_evolve(&s0, 30.0, 30).unwrap() {
            assert!((s.phi - 1.0).abs() < 1e-14);
            assert!((s.xi2 - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn converges_to_three_quarters() {
        for (phi0, xi0) in [(0.0, 0.0), (0.06, 2.0), (0.5, 0.0), (1.0, 5.0)] {
            let s0 = VanKampenState::new(phi0, xi0, 0.0).unwrap();
            let last = *vk_evolve(&s0, 20.0, 10).unwrap().last().unwrap();
            assert!((last.fano().unwrap() - 0.75).abs() < 1e-6, "{phi0} {xi0}");
        }
    }

    #[test]
    fn fano_hidden_near_empty_trap() {
        let s = VanKampenState::new(0.01, 0.0, 0.0).unwrap();
        assert_eq!(s.fano(), None);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(vk_steady(2, 2, true).unwrap(), 0.75);
        assert!((vk_steady(3, 3, true).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((vk_steady(3, 3, false).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(vk_steady(1, 1, true).unwrap(), 1.0);
        assert!(vk_steady(2, 1, true).is_err());
        assert!(vk_steady(0, 0, true).is_err());
    }

    #[test]
    fn rejects_invalid_states() {
        assert!(VanKampenState::new(1.5, 0.0, 0.0).is_err());
        assert!(VanKampenState::new(0.5, -1.0, 0.0).is_err());
        let s0 = VanKampenState::new(0.5, 0.0, 1.0).unwrap();
        assert!(vk_evolve(&s0, 0.5, 10).is_err());
    }

    #[test]
    fn long_time_limit_matches_closed_form() {
        let s0 = VanKampenState::new(0.3, 0.0, 0.0).unwrap();
        let last = *vk_evolve(&s0, 40.0, 4).unwrap().last().unwrap();
        let exact = vk_steady(2, 2, true).unwrap();
        assert!((last.fano().unwrap() - exact).abs() <= 1e-9);
    }
}
