//! Loading/loss kinetics parameters.
//!
//! A trap is fed by a reservoir at a constant rate `R`, loses single atoms at
//! rate `gamma * N`, and loses atoms through any number of ρ-body channels
//! whose events fire at rate `beta * C(N, ρ)` and remove `m` atoms each.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio used to decide when one rate "dominates" another in
/// [`predict_steady_mean`].
pub const REGIME_RATIO: f64 = 10.0;

/// Largest truncation bound the library will construct.
pub const N_MAX_CAP: usize = 10_000;

/// A ρ-body loss process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    /// Number of atoms taking part in one event (ρ).
    pub order: u32,
    /// Atoms expelled per event (m, `1 <= m <= order`).
    pub removed: u32,
    /// Rate constant per ρ-tuple, s⁻¹ (for ρ = 2 this is β′ in (at·s)⁻¹).
    pub rate_const: f64,
}

impl LossChannel {
    pub fn new(order: u32, removed: u32, rate_const: f64) -> Result<Self> {
        let channel = Self {
            order,
            removed,
            rate_const,
        };
        channel.validate()?;
        Ok(channel)
    }

    /// Pair losses that expel both partners.
    pub fn pair_loss(beta: f64) -> Result<Self> {
        Self::new(2, 2, beta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidParams(format!(
                "channel order must be >= 1, got {}",
                self.order
            )));
        }
        if self.removed < 1 || self.removed > self.order {
            return Err(Error::InvalidParams(format!(
                "channel removes {} atoms but must remove between 1 and its order {}",
                self.removed, self.order
            )));
        }
        if !self.rate_const.is_finite() || self.rate_const < 0.0 {
            return Err(Error::InvalidParams(format!(
                "channel rate constant must be finite and >= 0, got {}",
                self.rate_const
            )));
        }
        Ok(())
    }
}

/// Exact binomial coefficient C(n, k).
///
/// Evaluated in 128-bit integer arithmetic, so it is exact whenever the
/// result fits (always the case for `n <= N_MAX_CAP` and `k <= 9`). Larger
/// values fall back to a floating-point product.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc * (n - k + i) / i stays integral at every step
        match acc.checked_mul(n as u128 - k as u128 + i) {
            Some(v) => acc = v / i,
            None => return binomial_float(n, k),
        }
    }
    acc as f64
}

fn binomial_float(n: u64, k: u64) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// Event rate of `channel` when the trap holds `n` atoms.
pub fn event_rate(channel: &LossChannel, n: usize) -> f64 {
    channel.rate_const * binomial(n as u64, channel.order as u64)
}

/// Validated kinetic parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Loading rate R, atoms/s.
    pub loading_rate: f64,
    /// One-body loss rate γ, s⁻¹.
    pub one_body_rate: f64,
    pub channels: Vec<LossChannel>,
}

impl ModelParams {
    pub fn new(loading_rate: f64, one_body_rate: f64, channels: Vec<LossChannel>) -> Result<Self> {
        let params = Self {
            loading_rate,
            one_body_rate,
            channels,
        };
        params.validate()?;
        Ok(params)
    }

    /// Loading, one-body decay and pair losses removing `removed` atoms.
    pub fn two_body(loading_rate: f64, one_body_rate: f64, beta: f64, removed: u32) -> Result<Self> {
        Self::new(
            loading_rate,
            one_body_rate,
            vec![LossChannel::new(2, removed, beta)?],
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("loading rate", self.loading_rate),
            ("one-body rate", self.one_body_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for c in &self.channels {
            c.validate()?;
        }
        let any_channel = self.channels.iter().any(|c| c.rate_const > 0.0);
        if self.loading_rate == 0.0 && self.one_body_rate == 0.0 && !any_channel {
            return Err(Error::InvalidParams(
                "all rates are zero; the dynamics are trivial".into(),
            ));
        }
        Ok(())
    }

    /// Channels with a nonzero rate constant.
    pub fn active_channels(&self) -> impl Iterator<Item = &LossChannel> {
        self.channels.iter().filter(|c| c.rate_const > 0.0)
    }

    /// Largest channel order, 0 when there are no active channels.
    pub fn max_order(&self) -> usize {
        self.active_channels().map(|c| c.order as usize).max().unwrap_or(0)
    }

    /// The single pair-loss channel (ρ = 2, m = 2) if that is the only active one.
    pub fn single_pair_loss(&self) -> Option<&LossChannel> {
        let mut active = self.active_channels();
        match (active.next(), active.next()) {
            (Some(c), None) if c.order == 2 && c.removed == 2 => Some(c),
            _ => None,
        }
    }

    /// Total escape rate from occupancy `n`: R + γn + Σ β C(n, ρ).
    pub fn total_rate(&self, n: usize) -> f64 {
        self.loading_rate
            + self.one_body_rate * n as f64
            + self.channels.iter().map(|c| event_rate(c, n)).sum::<f64>()
    }

    /// Stationary point of the large-N rate equation
    /// `R = γn + Σ m β n^ρ / ρ!`, found by bisection.
    ///
    /// Used to size the state space; it is not a result.
    pub fn mean_field_mean(&self) -> f64 {
        let r = self.loading_rate;
        if r == 0.0 {
            return 0.0;
        }
        let loss = |n: f64| {
            self.one_body_rate * n
                + self
                    .active_channels()
                    .map(|c| {
                        let fact: f64 = (1..=c.order).map(f64::from).product();
                        c.removed as f64 * c.rate_const * n.powi(c.order as i32) / fact
                    })
                    .sum::<f64>()
        };
        let mut hi = 1.0;
        while loss(hi) < r {
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if loss(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Closed-form steady mean in the two asymptotic regimes of the
/// single-pair-loss model: `sqrt(R/β′)` when `R >> β′ >> γ`, and `R/γ` when
/// there are no channels or `R << γ`.
///
/// Only meant for sizing and sanity reporting.
pub fn predict_steady_mean(params: &ModelParams) -> Result<f64> {
    let r = params.loading_rate;
    let gamma = params.one_body_rate;
    if params.active_channels().next().is_none() {
        return if gamma > 0.0 {
            Ok(r / gamma)
        } else {
            Err(Error::NoClosedForm)
        };
    }
    let beta = params.single_pair_loss().ok_or(Error::NoClosedForm)?.rate_const;
    if r >= REGIME_RATIO * beta && beta >= REGIME_RATIO * gamma {
        Ok((r / beta).sqrt())
    } else if gamma > 0.0 && r * REGIME_RATIO <= gamma {
        Ok(r / gamma)
    } else {
        Err(Error::NoClosedForm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(2, 2), 1.0);
        assert_eq!(binomial(1, 2), 0.0);
        assert_eq!(binomial(4, 3), 4.0);
        assert_eq!(binomial(10, 0), 1.0);
        assert_eq!(binomial(52, 5), 2_598_960.0);
    }

    #[test]
    fn binomial_matches_pascal_triangle() {
        let mut row = vec![1u128];
        for n in 1..=120u64 {
            let mut next = vec![1u128; n as usize + 1];
            for k in 1..n as usize {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
            for k in 0..=4u64.min(n) {
                assert_eq!(binomial(n, k), row[k as usize] as f64, "C({n},{k})");
            }
        }
    }

    #[test]
    fn binomial_exact_at_cap() {
        let n = N_MAX_CAP as u64;
        assert_eq!(binomial(n, 2), (n * (n - 1) / 2) as f64);
        assert_eq!(binomial(n, 3), (n * (n - 1) * (n - 2) / 6) as f64);
    }

    #[test]
    fn event_rate_examples() {
        let pair = LossChannel::pair_loss(500.0).unwrap();
        assert_eq!(event_rate(&pair, 2), 500.0);
        assert_eq!(event_rate(&pair, 1), 0.0);
        let triple = LossChannel::new(3, 3, 7.0).unwrap();
        assert_eq!(event_rate(&triple, 4), 28.0);
    }

    #[test]
    fn pair_rate_is_n_choose_two() {
        let pair = LossChannel::pair_loss(500.0).unwrap();
        for n in 0..2000usize {
            let expected = 500.0 * (n * n.saturating_sub(1) / 2) as f64;
            assert_eq!(event_rate(&pair, n), expected);
        }
    }

    #[test]
    fn rejects_bad_channels() {
        assert!(LossChannel::new(0, 0, 1.0).is_err());
        assert!(LossChannel::new(2, 3, 1.0).is_err());
        assert!(LossChannel::new(2, 0, 1.0).is_err());
        assert!(LossChannel::new(2, 2, -1.0).is_err());
        assert!(LossChannel::new(2, 2, f64::NAN).is_err());
    }

    #[test]
    fn rejects_degenerate_params() {
        assert!(ModelParams::new(0.0, 0.0, vec![]).is_err());
        assert!(ModelParams::new(0.0, 0.0, vec![LossChannel::pair_loss(0.0).unwrap()]).is_err());
        assert!(ModelParams::new(-1.0, 0.2, vec![]).is_err());
        assert!(ModelParams::new(f64::INFINITY, 0.2, vec![]).is_err());
        assert!(ModelParams::new(0.0, 0.2, vec![]).is_ok());
    }

    #[test]
    fn steady_mean_regimes() {
        let fig2 = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        assert!((predict_steady_mean(&fig2).unwrap() - 12f64.sqrt()).abs() < 1e-12);
        let fig3b = ModelParams::two_body(5e5, 0.2, 500.0, 2).unwrap();
        assert!((predict_steady_mean(&fig3b).unwrap() - 1000f64.sqrt()).abs() < 1e-12);
        let linear = ModelParams::new(0.01, 0.2, vec![]).unwrap();
        assert!((predict_steady_mean(&linear).unwrap() - 0.05).abs() < 1e-15);
        let low = ModelParams::two_body(0.01, 0.2, 500.0, 2).unwrap();
        assert!((predict_steady_mean(&low).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn steady_mean_rejects_intermediate_regime() {
        let blockade = ModelParams::two_body(5.0, 0.2, 500.0, 2).unwrap();
        assert_eq!(predict_steady_mean(&blockade), Err(Error::NoClosedForm));
        let one_atom = ModelParams::two_body(6000.0, 0.2, 500.0, 1).unwrap();
        assert_eq!(predict_steady_mean(&one_atom), Err(Error::NoClosedForm));
    }

    #[test]
    fn mean_field_matches_pair_loss_limit() {
        let p = ModelParams::two_body(5e5, 0.0, 500.0, 2).unwrap();
        assert!((p.mean_field_mean() - 1000f64.sqrt()).abs() < 1e-9);
        let lin = ModelParams::new(3.0, 0.5, vec![]).unwrap();
        assert!((lin.mean_field_mean() - 6.0).abs() < 1e-9);
    }
}
