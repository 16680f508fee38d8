//! Deterministic backend: time evolution and stationary solution of the
//! truncated master equation, plus moment bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{build_generator, default_n_max, truncation_check, Generator};
use crate::model::ModelParams;
use crate::ode::{DormandPrince, OdeOptions, OdeSystem};

/// Allowed total-probability drift.
pub const NORM_TOL: f64 = 1e-9;
/// Most negative probability accepted (and clamped) on output.
pub const NEG_TOL: f64 = -1e-12;
/// Multiple of the relaxation time after which `evolve` tries the direct
/// stationary solution.
pub const STEADY_SWITCH_RELAXATIONS: f64 = 50.0;
/// `‖dp/dt‖₁ < STEADY_DERIVATIVE_TOL * R` declares a steady state.
pub const STEADY_DERIVATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Dimensionless,
}

/// Occupancy probabilities `p_0 ..= p_{n_max}` at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    pub probs: Vec<f64>,
    pub time: f64,
    pub time_unit: TimeUnit,
}

impl StateDistribution {
    /// Validate the normalization and sign constraints.
    pub fn new(probs: Vec<f64>, time: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < NEG_TOL) {
            return Err(Error::InvalidInput(format!("p_{n} = {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            probs,
            time,
            time_unit: TimeUnit::Seconds,
        })
    }

    /// Certain occupancy `k` on `{0..=n_max}` at t = 0.
    pub fn delta(n_max: usize, k: usize) -> Self {
        assert!(k <= n_max, "occupancy {k} outside 0..={n_max}");
        let mut probs = vec![0.0; n_max + 1];
        probs[k] = 1.0;
        Self {
            probs,
            time: 0.0,
            time_unit: TimeUnit::Seconds,
        }
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn moments(&self) -> Moments {
        moments(self)
    }

    /// Same distribution on `{0..=n_max}`; mass beyond the new bound must be zero.
    pub fn resized(&self, n_max: usize) -> Result<Self> {
        let mut probs = self.probs.clone();
        if n_max + 1 < probs.len() {
            if probs[n_max + 1..].iter().any(|&p| p > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "distribution has mass above n_max = {n_max}"
                )));
            }
            probs.truncate(n_max + 1);
        } else {
            probs.resize(n_max + 1, 0.0);
        }
        Ok(Self { probs, ..self.clone() })
    }
}

/// Mean, variance and Fano factor of an occupancy distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    /// `variance / mean`; `None` when the mean vanishes.
    pub fano: Option<f64>,
}

impl Moments {
    pub fn from_mean_variance(mean: f64, variance: f64) -> Self {
        Self {
            mean,
            variance,
            fano: (mean > 0.0).then(|| variance / mean),
        }
    }
}

pub fn moments(dist: &StateDistribution) -> Moments {
    let mean: f64 = dist
        .probs
        .iter()
        .enumerate()
        .map(|(n, p)| n as f64 * p)
        .sum();
    let variance: f64 = dist
        .probs
        .iter()
        .enumerate()
        .map(|(n, p)| (n as f64 - mean).powi(2) * p)
        .sum();
    Moments::from_mean_variance(mean, variance.max(0.0))
}

/// Half the L1 distance; the shorter vector is zero-padded.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Poisson probabilities `P(N = n)` for `n = 0..=n_max`, not renormalized.
pub fn poisson_pmf(mean: f64, n_max: usize) -> Vec<f64> {
    if mean == 0.0 {
        let mut v = vec![0.0; n_max + 1];
        v[0] = 1.0;
        return v;
    }
    let ln_mean = mean.ln();
    let mut ln_fact = 0.0;
    (0..=n_max)
        .map(|n| {
            if n > 0 {
                ln_fact += (n as f64).ln();
            }
            (n as f64 * ln_mean - mean - ln_fact).exp()
        })
        .collect()
}

/// Right-hand side of the mean-number rate equation for pair losses,
/// `d⟨N⟩/dt = R − γ⟨N⟩ − β′⟨N⟩(⟨N⟩−1) − β′ΔN²`.
///
/// Only defined for a single ρ = 2 channel removing both atoms.
pub fn moment_rhs(params: &ModelParams, m: &Moments) -> Result<f64> {
    let channel = params.single_pair_loss().ok_or_else(|| {
        Error::Unsupported("the mean equation needs exactly one pair-loss channel (rho=2, m=2)".into())
    })?;
    let beta = channel.rate_const;
    Ok(params.loading_rate
        - params.one_body_rate * m.mean
        - beta * m.mean * (m.mean - 1.0)
        - beta * m.variance)
}

/// Stationary distribution: the normalized null vector of the generator.
///
/// Loading only moves up by one, so flux balance across each cut
/// `{0..k} | {k+1..}` gives `R p_k = Σ_{j>k} rate(j -> i ≤ k) p_j`, which is
/// solved top-down from `p_{n_max}`. All terms are non-negative.
pub fn steady_state(gen: &Generator) -> Result<StateDistribution> {
    let dim = gen.dim();
    let n_max = gen.n_max();
    let loads = (0..n_max).all(|j| gen.up_rate(j) > 0.0);
    let mut p = vec![0.0; dim];
    if loads {
        let bw = gen.bandwidth();
        p[n_max] = 1.0;
        for k in (0..n_max).rev() {
            let mut flux = 0.0;
            for j in k + 1..=(k + bw).min(n_max) {
                for (target, rate) in gen.down_transitions(j) {
                    if target <= k {
                        flux += rate * p[j];
                    }
                }
            }
            p[k] = flux / gen.up_rate(k);
            if p[k] > 1e200 {
                for v in &mut p[k..] {
                    *v *= 1e-200;
                }
            }
        }
    } else {
        let absorbing: Vec<usize> = (0..dim).filter(|&j| gen.diagonal()[j] == 0.0).collect();
        if absorbing.len() != 1 {
            return Err(Error::NonUniqueSteadyState(absorbing));
        }
        p[absorbing[0]] = 1.0;
    }
    let total: f64 = p.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical("stationary solve produced no mass".into()));
    }
    for v in &mut p {
        *v /= total;
    }
    let mut ap = vec![0.0; dim];
    gen.apply(&p, &mut ap);
    let residual = ap.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if residual > 1e-10 * gen.max_rate().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} too large"
        )));
    }
    Ok(StateDistribution {
        probs: p,
        time: f64::INFINITY,
        time_unit: TimeUnit::Seconds,
    })
}

/// Stationary solution with automatic truncation: starts from `n_max` (or
/// the default bound) and doubles until the tail check passes.
pub fn solve_steady(params: &ModelParams, n_max: Option<usize>) -> Result<(Generator, StateDistribution)> {
    let mut n = n_max.unwrap_or_else(|| default_n_max(params));
    loop {
        let gen = build_generator(params, n)?;
        let dist = steady_state(&gen)?;
        let report = truncation_check(params, &dist);
        if !report.flagged || n_max.is_some() || report.suggested_n_max <= n {
            return Ok((gen, dist));
        }
        n = report.suggested_n_max;
    }
}

/// Truncation bound that passes the tail check at the stationary state;
/// falls back to [`default_n_max`] when there is no unique stationary state.
pub fn adequate_n_max(params: &ModelParams) -> Result<usize> {
    match solve_steady(params, None) {
        Ok((gen, _)) => Ok(gen.n_max()),
        Err(Error::NonUniqueSteadyState(_)) => Ok(default_n_max(params)),
        Err(e) => Err(e),
    }
}

/// Relaxation time used to decide when `evolve` may jump to the stationary
/// solution: `1/sqrt(R β′)` for pair losses, otherwise the inverse slope of
/// the large-N loss rate at its stationary point. With loading, never
/// shorter than `1/(R + γ)`, the time scale of a mostly empty trap.
pub fn relaxation_time(params: &ModelParams) -> Option<f64> {
    let r = params.loading_rate;
    let rate = match params.single_pair_loss() {
        Some(c) if r > 0.0 => (r * c.rate_const).sqrt(),
        _ => {
            let n = params.mean_field_mean();
            params.one_body_rate
                + params
                    .active_channels()
                    .map(|c| {
                        let fact: f64 = (1..c.order).map(f64::from).product();
                        c.removed as f64 * c.rate_const * n.powi(c.order as i32 - 1) / fact
                    })
                    .sum::<f64>()
        }
    };
    let rate = if r > 0.0 { rate.min(r + params.one_body_rate) } else { rate };
    (rate > 0.0).then(|| 1.0 / rate)
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub rel_tol: f64,
    /// Enables the switch to the direct stationary solution.
    pub relaxation_time: Option<f64>,
}

impl EvolveOptions {
    pub fn new(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            relaxation_time: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub states: Vec<StateDistribution>,
    /// Time from which outputs are the stationary distribution.
    pub steady_from: Option<f64>,
    pub steps: usize,
    pub rejected: usize,
}

struct MasterSystem<'a>(&'a Generator);

impl OdeSystem for MasterSystem<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.0.apply(y, dy);
    }
}

/// Clamp rounding-level negatives and renormalize; reject anything worse.
fn clean_output(probs: &[f64], time: f64) -> Result<StateDistribution> {
    if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < NEG_TOL) {
        return Err(Error::Numerical(format!(
            "p_{n} = {p:e} at t = {time:e}; tighten rel_tol"
        )));
    }
    let mut out: Vec<f64> = probs.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = out.iter().sum();
    if (total - 1.0).abs() > NORM_TOL {
        return Err(Error::Numerical(format!(
            "probability drifted to {total} at t = {time:e}"
        )));
    }
    for p in &mut out {
        *p /= total;
    }
    Ok(StateDistribution {
        probs: out,
        time,
        time_unit: TimeUnit::Seconds,
    })
}

/// Integrate `dp/dt = A p` from `p0` and report the distribution at each of
/// `sample_times` (ascending, ≥ `p0.time`).
pub fn evolve(
    gen: &Generator,
    p0: &StateDistribution,
    sample_times: &[f64],
    opts: &EvolveOptions,
) -> Result<Evolution> {
    if !(1e-12..=1e-3).contains(&opts.rel_tol) {
        return Err(Error::InvalidInput(format!(
            "rel_tol = {} outside [1e-12, 1e-3]",
            opts.rel_tol
        )));
    }
    if p0.probs.len() != gen.dim() {
        return Err(Error::InvalidInput(format!(
            "initial distribution has {} states, generator {}",
            p0.probs.len(),
            gen.dim()
        )));
    }
    StateDistribution::new(p0.probs.clone(), p0.time)?;
    if sample_times.windows(2).any(|w| w[1] < w[0])
        || sample_times.iter().any(|&t| !t.is_finite() || t < p0.time)
    {
        return Err(Error::InvalidInput(
            "sample times must be finite, ascending and not before the initial time".into(),
        ));
    }

    let sys = MasterSystem(gen);
    let abs_tol = (opts.rel_tol * 1e-3).min(1e-14);
    let mut dp = DormandPrince::new(&sys, p0.time, &p0.probs, OdeOptions::new(opts.rel_tol, abs_tol));
    let switch_at = opts
        .relaxation_time
        .map(|tr| p0.time + STEADY_SWITCH_RELAXATIONS * tr);
    let rate_scale = match gen.up_rate(0) {
        r if r > 0.0 => r,
        _ => gen.max_rate(),
    };
    let mut steady: Option<(f64, Vec<f64>)> = None;
    let mut switch_tried = false;
    let mut states = Vec::with_capacity(sample_times.len());

    for &t in sample_times {
        if let Some((_, p)) = &steady {
            states.push(clean_output(p, t)?);
            continue;
        }
        if let Some(ts) = switch_at.filter(|&ts| !switch_tried && t > ts) {
            dp.advance_to(ts)?;
            switch_tried = true;
            if let Ok(st) = steady_state(gen) {
                let dist: f64 = dp.y().iter().zip(&st.probs).map(|(a, b)| (a - b).abs()).sum();
                if dist < opts.rel_tol {
                    steady = Some((ts, st.probs));
                    states.push(clean_output(&steady.as_ref().unwrap().1, t)?);
                    continue;
                }
            }
        }
        dp.advance_to(t)?;
        states.push(clean_output(dp.y(), t)?);
        let deriv: f64 = dp.dy().iter().map(|v| v.abs()).sum();
        if deriv < STEADY_DERIVATIVE_TOL * rate_scale {
            steady = Some((t, states.last().unwrap().probs.clone()));
        }
    }
    Ok(Evolution {
        states,
        steady_from: steady.map(|s| s.0),
        steps: dp.steps(),
        rejected: dp.rejected(),
    })
}

/// `n_samples + 1` equally spaced output times on `[t0, t0 + t_end]`.
pub fn uniform_times(t0: f64, t_end: f64, n_samples: usize) -> Vec<f64> {
    let n = n_samples.max(1);
    (0..=n).map(|k| t0 + t_end * k as f64 / n as f64).collect()
}
