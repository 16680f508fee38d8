//! Loading-rate sweeps across the three backends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::master::{moments, solve_steady, StateDistribution};
use crate::mc::{sample, InitialLaw, McOptions};
use crate::model::ModelParams;
use crate::vankampen::vk_steady_for;

/// Below this mean the system-size expansion is not reported.
pub const VK_MIN_MEAN: f64 = 2.0;
/// [`gaussian_check`] refuses distributions with a smaller mean.
pub const GAUSSIAN_MIN_MEAN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Master,
    Mc,
    Vankampen,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Master => "master",
            Backend::Mc => "mc",
            Backend::Vankampen => "vankampen",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "master" => Ok(Backend::Master),
            "mc" => Ok(Backend::Mc),
            "vankampen" => Ok(Backend::Vankampen),
            other => Err(Error::InvalidInput(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSweepOptions {
    pub n_traj: usize,
    pub seed: u64,
    /// Trajectories run for this many settling-time units from an empty trap.
    pub relaxations: f64,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for McSweepOptions {
    fn default() -> Self {
        Self {
            n_traj: 100_000,
            seed: 1,
            relaxations: 30.0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Everything but the loading rate.
    pub base: ModelParams,
    /// Loading rates, strictly increasing.
    pub grid: Vec<f64>,
    pub backends: Vec<Backend>,
    pub n_max: Option<usize>,
    pub mc: McSweepOptions,
    /// Keep master steady distributions in the rows.
    pub keep_distributions: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidInput("grid values must be finite and >= 0".into()));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        if self.backends.is_empty() {
            return Err(Error::InvalidInput("no backends selected".into()));
        }
        if self.backends.contains(&Backend::Mc) && self.mc.n_traj < 2 {
            return Err(Error::InvalidInput("mc sweeps need n_traj >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowValues {
    pub mean: f64,
    pub variance: f64,
    pub fano: Option<f64>,
    pub stderr_fano: Option<f64>,
    /// Time at which mc trajectories were read out.
    pub sample_time: Option<f64>,
    pub distribution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub loading_rate: f64,
    pub backend: Backend,
    pub outcome: std::result::Result<RowValues, String>,
}

/// Seed of grid point `index`; splitmix64 of the root seed and index.
pub fn row_seed(root: u64, index: usize) -> u64 {
    let mut z = root.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Time after which a trajectory started empty has forgotten its start:
/// `relaxations / (γ + min(R, sqrt(R Σβ)))`.
pub fn settling_time(params: &ModelParams, relaxations: f64) -> Result<f64> {
    let beta: f64 = params.active_channels().map(|c| c.rate_const).sum();
    let r = params.loading_rate;
    let rate = params.one_body_rate + r.min((r * beta).sqrt());
    if rate > 0.0 {
        Ok(relaxations / rate)
    } else {
        Err(Error::Unsupported("no relaxation scale without loading or one-body loss".into()))
    }
}

fn with_loading(base: &ModelParams, r: f64) -> Result<ModelParams> {
    ModelParams::new(r, base.one_body_rate, base.channels.clone())
}

fn master_row(params: &ModelParams, spec: &SweepSpec) -> Result<RowValues> {
    let (_, dist) = solve_steady(params, spec.n_max)?;
    let m = moments(&dist);
    Ok(RowValues {
        mean: m.mean,
        variance: m.variance,
        fano: m.fano,
        stderr_fano: None,
        sample_time: None,
        distribution: spec.keep_distributions.then_some(dist.probs),
    })
}

fn mc_row(params: &ModelParams, spec: &SweepSpec, index: usize) -> Result<RowValues> {
    let t = settling_time(params, spec.mc.relaxations)?;
    let ens = sample(
        params,
        &InitialLaw::Fixed(0),
        &[t],
        spec.mc.n_traj,
        row_seed(spec.mc.seed, index),
        &McOptions {
            threads: spec.mc.threads,
        },
    )?;
    let e = ens.estimates[0];
    Ok(RowValues {
        mean: e.mean,
        variance: e.variance,
        fano: e.fano,
        stderr_fano: e.se_fano,
        sample_time: Some(t),
        distribution: None,
    })
}

/// Closed-form row, if the expansion applies: one channel removing whole
/// ρ-tuples, loading on, and a macroscopic mean of at least [`VK_MIN_MEAN`].
fn vk_row(params: &ModelParams, master_mean: Option<f64>) -> Option<RowValues> {
    if params.loading_rate <= 0.0 {
        return None;
    }
    let fano = vk_steady_for(params).ok()?;
    let mean = params.mean_field_mean();
    if master_mean.unwrap_or(mean) < VK_MIN_MEAN {
        return None;
    }
    Some(RowValues {
        mean,
        variance: fano * mean,
        fano: Some(fano),
        stderr_fano: None,
        sample_time: None,
        distribution: None,
    })
}

fn run_point(spec: &SweepSpec, index: usize) -> Vec<SweepRow> {
    let r = spec.grid[index];
    let row = |backend, outcome: Result<RowValues>| SweepRow {
        index,
        loading_rate: r,
        backend,
        outcome: outcome.map_err(|e| e.to_string()),
    };
    let params = match with_loading(&spec.base, r) {
        Ok(p) => p,
        Err(e) => {
            return spec
                .backends
                .iter()
                .map(|&b| row(b, Err(e.clone())))
                .collect()
        }
    };
    let mut rows = Vec::new();
    let mut master_mean = None;
    for &backend in &spec.backends {
        match backend {
            Backend::Master => {
                let out = master_row(&params, spec);
                master_mean = out.as_ref().ok().map(|v| v.mean);
                rows.push(row(backend, out));
            }
            Backend::Mc => rows.push(row(backend, mc_row(&params, spec, index))),
            Backend::Vankampen => {}
        }
    }
    if spec.backends.contains(&Backend::Vankampen) {
        if master_mean.is_none() && spec.backends.contains(&Backend::Master) {
            // master failed; no reference mean to judge validity
        } else if let Some(v) = vk_row(&params, master_mean) {
            rows.push(row(Backend::Vankampen, Ok(v)));
        }
    }
    rows
}

/// One row per grid point per backend, ordered by grid index then backend.
/// Failures are recorded in the row and never abort the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let per_point: Vec<Vec<SweepRow>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..spec.grid.len()).into_par_iter().map(|i| run_point(spec, i)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..spec.grid.len()).map(|i| run_point(spec, i)).collect()
        }
    };
    Ok(per_point.into_iter().flatten().collect())
}

/// Loading rate whose stationary mean equals `target` (bisection in log R).
pub fn loading_rate_for_mean(base: &ModelParams, target: f64, n_max: Option<usize>) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidInput(format!("target mean {target} must be > 0")));
    }
    let mean_at = |ln_r: f64| -> Result<f64> {
        let p = with_loading(base, ln_r.exp())?;
        Ok(moments(&solve_steady(&p, n_max)?.1).mean)
    };
    let guess = {
        let probe = with_loading(base, 1.0)?;
        let scale = probe.mean_field_mean().max(1e-300);
        // mean grows at least like sqrt(R) in every regime considered
        (target / scale).powi(2).max(target / scale).ln()
    };
    let (mut lo, mut hi) = (guess - 1.0, guess + 1.0);
    let mut tries = 0;
    while mean_at(lo)? > target {
        lo -= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Numerical("could not bracket the target mean".into()));
        }
    }
    while mean_at(hi)? < target {
        hi += 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::Numerical("could not bracket the target mean".into()));
        }
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// `points` log-spaced loading rates whose stationary means run from
/// `mean_lo` to `mean_hi`.
pub fn grid_for_means(
    base: &ModelParams,
    mean_lo: f64,
    mean_hi: f64,
    points: usize,
    n_max: Option<usize>,
) -> Result<Vec<f64>> {
    if points < 1 || !(mean_lo < mean_hi) {
        return Err(Error::InvalidInput("need points >= 1 and mean_lo < mean_hi".into()));
    }
    let lo = loading_rate_for_mean(base, mean_lo, n_max)?;
    if points == 1 {
        return Ok(vec![lo]);
    }
    let hi = loading_rate_for_mean(base, mean_hi, n_max)?;
    Ok(log_space(lo, hi, points))
}

pub fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| {
            if k == 0 {
                lo
            } else if k + 1 == points {
                hi
            } else {
                (a + (b - a) * k as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Total-variation distance to the Gaussian with the same mean and
/// variance, evaluated at the integers of the support and normalized there.
pub fn gaussian_check(dist: &StateDistribution) -> Result<f64> {
    let m = moments(dist);
    if m.mean < GAUSSIAN_MIN_MEAN {
        return Err(Error::InvalidInput(format!(
            "mean {} is below {GAUSSIAN_MIN_MEAN}; a Gaussian comparison is meaningless",
            m.mean
        )));
    }
    if m.variance <= 0.0 {
        return Ok(1.0);
    }
    let g: Vec<f64> = (0..dist.probs.len())
        .map(|n| (-(n as f64 - m.mean).powi(2) / (2.0 * m.variance)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    Ok(0.5
        * dist
            .probs
            .iter()
            .zip(&g)
            .map(|(p, q)| (p - q / total).abs())
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::poisson_pmf;

    fn pair_base() -> ModelParams {
        ModelParams::two_body(0.0, 0.2, 500.0, 2).unwrap()
    }

    #[test]
    fn spec_validation() {
        let mut spec = SweepSpec {
            base: pair_base(),
            grid: vec![1.0, 2.0],
            backends: vec![Backend::Master],
            n_max: None,
            mc: McSweepOptions::default(),
            keep_distributions: false,
        };
        assert!(spec.validate().is_ok());
        spec.grid = vec![2.0, 1.0];
        assert!(spec.validate().is_err());
        spec.grid = vec![];
        assert!(spec.validate().is_err());
        spec.grid = vec![1.0, 1.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_loading_point_records_failure() {
        // R = 0 with no one-body losses leaves 0 and 1 absorbing
        let base = ModelParams::two_body(0.0, 0.0, 500.0, 2).unwrap();
        let spec = SweepSpec {
            base,
            grid: vec![0.0, 10.0],
            backends: vec![Backend::Master],
            n_max: None,
            mc: McSweepOptions::default(),
            keep_distributions: false,
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].outcome.is_err());
        assert!(rows[1].outcome.is_ok());
    }

    #[test]
    fn inverse_mean_lookup() {
        let r = loading_rate_for_mean(&pair_base(), 3.6, None).unwrap();
        let p = ModelParams::two_body(r, 0.2, 500.0, 2).unwrap();
        let m = moments(&solve_steady(&p, None).unwrap().1).mean;
        assert!((m - 3.6).abs() < 1e-9);
    }

    #[test]
    fn log_space_endpoints() {
        let g = log_space(0.01, 1e4, 7);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[6], 1e4);
        assert!((g[3] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_check_scores() {
        let n_max = 80;
        let (mean, var) = (32.0f64, 20.0f64);
        let g: Vec<f64> = (0..=n_max)
            .map(|n| (-(n as f64 - mean).powi(2) / (2.0 * var)).exp())
            .collect();
        let total: f64 = g.iter().sum();
        let d = StateDistribution::new(g.iter().map(|v| v / total).collect(), 0.0).unwrap();
        assert!(gaussian_check(&d).unwrap() < 1e-6);

        let poisson = poisson_pmf(32.0, 120);
        let total: f64 = poisson.iter().sum();
        let d = StateDistribution::new(poisson.iter().map(|v| v / total).collect(), 0.0).unwrap();
        let score = gaussian_check(&d).unwrap();
        assert!(score > 0.01 && score < 0.05, "{score}");

        assert!(gaussian_check(&StateDistribution::delta(10, 3)).is_err());
    }

    #[test]
    fn row_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| row_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
