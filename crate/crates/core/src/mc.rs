//! Exact stochastic trajectories of the loading/loss jump process.
//!
//! Each trajectory is simulated with the direct (Gillespie) method: from
//! occupancy `N` the waiting time is exponential with rate
//! `Λ(N) = R + γN + Σ β C(N, ρ)` and the event is chosen in proportion to
//! its rate. There is no truncation; loading is always possible.
//!
//! # Random streams
//!
//! Trajectory `i` of a run with root seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` switched to stream `i`. ChaCha is a
//! counter-based generator, so every trajectory's stream is fixed by
//! `(s, i)` alone and samples do not depend on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::master::{StateDistribution, TimeUnit};
use crate::model::{event_rate, ModelParams};

/// Initial occupancy law.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Fixed(u32),
    /// Probabilities over `0..len`, normalized.
    Distribution(Vec<f64>),
}

impl InitialLaw {
    fn validate(&self) -> Result<()> {
        if let InitialLaw::Distribution(p) = self {
            StateDistribution::new(p.clone(), 0.0)?;
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            InitialLaw::Fixed(n) => *n,
            InitialLaw::Distribution(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (n, &pn) in p.iter().enumerate() {
                    acc += pn;
                    if u < acc {
                        return n as u32;
                    }
                }
                // rounding left u above the cumulative sum
                p.iter().rposition(|&pn| pn > 0.0).unwrap_or(0) as u32
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct McOptions {
    /// Worker cap; `None` uses the global pool. Never changes results.
    pub threads: Option<usize>,
}

/// Ensemble statistics at one sample time, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub time: f64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub fano: Option<f64>,
    pub se_mean: f64,
    pub se_variance: f64,
    /// Delta-method standard error of the variance/mean ratio.
    pub se_fano: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n_traj: usize,
    pub seed: u64,
    pub sample_times: Vec<f64>,
    /// Occupancies, trajectory-major: `samples[i * n_times + k]`.
    pub samples: Vec<u32>,
    pub estimates: Vec<EnsembleEstimate>,
}

impl TrajectoryEnsemble {
    pub fn n_times(&self) -> usize {
        self.sample_times.len()
    }

    /// Occupancy of trajectory `traj` at sample index `k`.
    pub fn occupancy(&self, traj: usize, k: usize) -> u32 {
        self.samples[traj * self.n_times() + k]
    }

    /// All occupancies at sample index `k`, in trajectory order.
    pub fn column(&self, k: usize) -> Vec<u32> {
        (0..self.n_traj).map(|i| self.occupancy(i, k)).collect()
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        self.sample_times
            .iter()
            .position(|&s| s == t || (s - t).abs() <= 1e-12 * s.abs().max(t.abs()))
            .ok_or_else(|| Error::InvalidInput(format!("t = {t} is not a sample time")))
    }
}

/// Random stream of trajectory `index` under root `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn simulate_one(params: &ModelParams, p0: &InitialLaw, times: &[f64], rng: &mut ChaCha8Rng, out: &mut [u32]) {
    let mut n = p0.draw(rng);
    let next = |n: u32, t: f64, rng: &mut ChaCha8Rng| -> f64 {
        let rate = params.total_rate(n as usize);
        if rate > 0.0 {
            let u: f64 = rng.random();
            t - (1.0 - u).ln() / rate
        } else {
            f64::INFINITY
        }
    };
    let mut t_event = next(n, 0.0, rng);
    for (slot, &ts) in out.iter_mut().zip(times) {
        while t_event <= ts {
            n = jump(params, n, rng);
            t_event = next(n, t_event, rng);
        }
        *slot = n;
    }
}

/// Apply one randomly chosen event at occupancy `n`.
fn jump(params: &ModelParams, n: u32, rng: &mut ChaCha8Rng) -> u32 {
    let total = params.total_rate(n as usize);
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = params.loading_rate;
    if u < acc {
        return n + 1;
    }
    acc += params.one_body_rate * n as f64;
    if u < acc {
        return n - 1;
    }
    let mut last = None;
    for c in &params.channels {
        let r = event_rate(c, n as usize);
        if r > 0.0 {
            acc += r;
            last = Some(c.removed);
            if u < acc {
                return n - c.removed;
            }
        }
    }
    // u landed on the rounding sliver above the last cumulative rate
    match last {
        Some(m) => n - m,
        None if params.one_body_rate > 0.0 && n > 0 => n - 1,
        None => n + 1,
    }
}

/// Sample `n_traj` independent trajectories and record their occupancy at
/// each of `t_samples` (ascending, ≥ 0; trajectories start at t = 0).
pub fn sample(
    params: &ModelParams,
    p0: &InitialLaw,
    t_samples: &[f64],
    n_traj: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<TrajectoryEnsemble> {
    params.validate()?;
    p0.validate()?;
    if n_traj < 1 {
        return Err(Error::InvalidInput("n_traj must be >= 1".into()));
    }
    if t_samples.is_empty()
        || t_samples.iter().any(|t| !t.is_finite() || *t < 0.0)
        || t_samples.windows(2).any(|w| w[1] < w[0])
    {
        return Err(Error::InvalidInput(
            "sample times must be non-empty, finite, >= 0 and ascending".into(),
        ));
    }
    let n_times = t_samples.len();
    let mut samples = vec![0u32; n_traj * n_times];
    let run = |(i, chunk): (usize, &mut [u32])| {
        let mut rng = trajectory_rng(seed, i as u64);
        simulate_one(params, p0, t_samples, &mut rng, chunk);
    };
    run_chunks(&mut samples, n_times, run, opts.threads);

    let mut ens = TrajectoryEnsemble {
        n_traj,
        seed,
        sample_times: t_samples.to_vec(),
        samples,
        estimates: Vec::new(),
    };
    ens.estimates = (0..n_times)
        .map(|k| {
            let mut e = estimate(&ens.column(k));
            e.time = t_samples[k];
            e
        })
        .collect();
    Ok(ens)
}

#[cfg(feature = "parallel")]
fn run_chunks<F>(samples: &mut [u32], n_times: usize, run: F, threads: Option<usize>)
where
    F: Fn((usize, &mut [u32])) + Sync + Send,
{
    use rayon::prelude::*;
    let work = |samples: &mut [u32]| samples.par_chunks_mut(n_times).enumerate().for_each(&run);
    match threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
            Ok(pool) => pool.install(|| work(samples)),
            Err(_) => work(samples),
        },
        None => work(samples),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_chunks<F>(samples: &mut [u32], n_times: usize, run: F, _threads: Option<usize>)
where
    F: Fn((usize, &mut [u32])),
{
    samples.chunks_mut(n_times).enumerate().for_each(run);
}

/// Sample moments of i.i.d. counts with delta-method standard errors.
pub fn estimate(values: &[u32]) -> EnsembleEstimate {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = f64::from(v) - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let variance = if values.len() > 1 { m2 * n / (n - 1.0) } else { 0.0 };
    let se_mean = (m2 / n).sqrt();
    let var_of_var = ((m4 - m2 * m2) / n).max(0.0);
    let (fano, se_fano) = if mean > 0.0 {
        let f = variance / mean;
        // gradient of s²/m is (−s²/m², 1/m)
        let g_m = -variance / (mean * mean);
        let g_v = 1.0 / mean;
        let var_f = g_m * g_m * m2 / n + g_v * g_v * var_of_var + 2.0 * g_m * g_v * m3 / n;
        (Some(f), Some(var_f.max(0.0).sqrt()))
    } else {
        (None, None)
    };
    EnsembleEstimate {
        time: f64::NAN,
        mean,
        variance,
        fano,
        se_mean,
        se_variance: var_of_var.sqrt(),
        se_fano,
    }
}

/// Bootstrap standard error of the Fano factor.
pub fn bootstrap_fano_se(values: &[u32], n_resamples: usize, seed: u64) -> Option<f64> {
    if values.len() < 2 || n_resamples < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fanos = Vec::with_capacity(n_resamples);
    let mut buf = vec![0u32; values.len()];
    for _ in 0..n_resamples {
        for slot in buf.iter_mut() {
            *slot = values[rng.random_range(0..values.len())];
        }
        if let Some(f) = estimate(&buf).fano {
            fanos.push(f);
        }
    }
    if fanos.len() < 2 {
        return None;
    }
    let k = fanos.len() as f64;
    let m = fanos.iter().sum::<f64>() / k;
    Some((fanos.iter().map(|f| (f - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt())
}

/// Empirical occupancy distribution with its ensemble size.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub dist: StateDistribution,
    pub n_traj: usize,
}

pub fn histogram(ens: &TrajectoryEnsemble, t: f64) -> Result<EmpiricalDistribution> {
    let k = ens.time_index(t)?;
    let column = ens.column(k);
    let max = column.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max + 1];
    for &v in &column {
        counts[v as usize] += 1;
    }
    let probs = counts
        .into_iter()
        .map(|c| c as f64 / ens.n_traj as f64)
        .collect();
    Ok(EmpiricalDistribution {
        dist: StateDistribution {
            probs,
            time: ens.sample_times[k],
            time_unit: TimeUnit::Seconds,
        },
        n_traj: ens.n_traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LossChannel;

    fn ensemble_from(values: &[u32]) -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            n_traj: values.len(),
            seed: 0,
            sample_times: vec![1.0],
            samples: values.to_vec(),
            estimates: vec![],
        }
    }

    #[test]
    fn histogram_of_constant_ensemble() {
        let h = histogram(&ensemble_from(&[2, 2, 2]), 1.0).unwrap();
        assert_eq!(h.dist.probs, vec![0.0, 0.0, 1.0]);
        assert_eq!(h.n_traj, 3);
    }

    #[test]
    fn histogram_two_values() {
        let h = histogram(&ensemble_from(&[0, 4]), 1.0).unwrap();
        assert_eq!(h.dist.probs, vec![0.5, 0.0, 0.0, 0.0, 0.5]);
        assert!(histogram(&ensemble_from(&[0, 4]), 2.0).is_err());
    }

    #[test]
    fn estimate_known_values() {
        let e = estimate(&[0, 1, 0, 1]);
        assert_eq!(e.mean, 0.5);
        assert!((e.variance - 1.0 / 3.0).abs() < 1e-15);
        assert!(estimate(&[0, 0]).fano.is_none());
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        let o = McOptions::default();
        assert!(sample(&p, &InitialLaw::Fixed(0), &[1e-3], 0, 1, &o).is_err());
        assert!(sample(&p, &InitialLaw::Fixed(0), &[2e-3, 1e-3], 10, 1, &o).is_err());
        assert!(sample(&p, &InitialLaw::Fixed(0), &[], 10, 1, &o).is_err());
        assert!(sample(&p, &InitialLaw::Distribution(vec![0.3, 0.3]), &[1.0], 10, 1, &o).is_err());
    }

    #[test]
    fn absorbing_state_waits_forever() {
        let p = ModelParams::new(0.0, 0.0, vec![LossChannel::pair_loss(1.0).unwrap()]).unwrap();
        let ens = sample(&p, &InitialLaw::Fixed(1), &[0.0, 1.0, 1e9], 5, 3, &McOptions::default()).unwrap();
        assert!(ens.samples.iter().all(|&v| v == 1));
    }

    #[test]
    fn occupancy_changes_by_allowed_steps_only() {
        let p = ModelParams::new(0.0, 0.0, vec![LossChannel::pair_loss(1.0).unwrap()]).unwrap();
        let ens = sample(&p, &InitialLaw::Fixed(9), &[0.0, 100.0], 200, 5, &McOptions::default()).unwrap();
        for i in 0..ens.n_traj {
            assert_eq!(ens.occupancy(i, 0), 9);
            assert_eq!(ens.occupancy(i, 1), 1);
        }
    }

    #[test]
    fn initial_distribution_draws() {
        let p = ModelParams::new(0.0, 1e-9, vec![]).unwrap();
        let law = InitialLaw::Distribution(vec![0.25, 0.0, 0.75]);
        let ens = sample(&p, &law, &[0.0], 20_000, 11, &McOptions::default()).unwrap();
        let h = histogram(&ens, 0.0).unwrap();
        assert_eq!(h.dist.probs[1], 0.0);
        assert!((h.dist.probs[2] - 0.75).abs() < 0.01);
    }

    #[test]
    fn bootstrap_close_to_delta_method() {
        let p = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        let ens = sample(&p, &InitialLaw::Fixed(0), &[3e-3], 4000, 9, &McOptions::default()).unwrap();
        let col = ens.column(0);
        let boot = bootstrap_fano_se(&col, 1000, 1).unwrap();
        let delta = ens.estimates[0].se_fano.unwrap();
        assert!((boot / delta - 1.0).abs() < 0.15, "{boot} vs {delta}");
    }
}
