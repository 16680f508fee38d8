//! Parameter sets behind the published figures.
//!
//! Pair-loss constant β′ = 500 (at·s)⁻¹ and γ = 0.2 s⁻¹ are the measured
//! orders of magnitude; they are used here as exact values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const BETA_PAIR: f64 = 500.0;
pub const GAMMA: f64 = 0.2;
/// One-body rate used with the one-atom-loss channel.
pub const GAMMA_ONE_ATOM: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Fano factor versus mean, pair losses.
    Fig1,
    /// Time evolution at R = 6000 s⁻¹.
    Fig2,
    /// Same sweep as `Fig1`, compared across backends.
    Fig3a,
    /// Pair collisions that expel a single atom.
    Fig3aDashed,
    /// Large-N steady state at R = 5×10⁵ s⁻¹.
    Fig3b,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Fig1,
        Preset::Fig2,
        Preset::Fig3a,
        Preset::Fig3aDashed,
        Preset::Fig3b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3a => "fig3a",
            Preset::Fig3aDashed => "fig3a-dashed",
            Preset::Fig3b => "fig3b",
        }
    }

    /// Loading rate of single-point presets; sweeps have none.
    pub fn loading_rate(self) -> Option<f64> {
        match self {
            Preset::Fig2 => Some(6000.0),
            Preset::Fig3b => Some(5e5),
            _ => None,
        }
    }

    /// Parameters with the loading rate set to `loading_rate()` or zero.
    pub fn params(self) -> ModelParams {
        let r = self.loading_rate().unwrap_or(0.0);
        let built = match self {
            Preset::Fig3aDashed => ModelParams::two_body(r, GAMMA_ONE_ATOM, BETA_PAIR, 1),
            _ => ModelParams::two_body(r, GAMMA, BETA_PAIR, 2),
        };
        built.expect("preset parameters are valid")
    }

    /// Range of stationary means a sweep preset covers.
    pub fn mean_range(self) -> Option<(f64, f64)> {
        match self {
            Preset::Fig1 | Preset::Fig3a => Some((0.05, 40.0)),
            Preset::Fig3aDashed => Some((0.05, 10.0)),
            _ => None,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown preset '{s}'")))
    }
}
