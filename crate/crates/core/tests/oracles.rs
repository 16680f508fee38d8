// Master-backend results against independent dense-matrix routines.

use fanotrap::master::{poisson_pmf, total_variation};
use fanotrap::{
    build_generator, evolve, steady_state, EvolveOptions, LossChannel, ModelParams, StateDistribution,
};
use proptest::prelude::*;

mod common;
use common::{dense_generator, dense_null_vector};

/// `exp(A t) p0` by uniformization.
fn uniformized(a: &[Vec<f64>], p0: &[f64], t: f64) -> Vec<f64> {
    let d = a.len();
    let lambda = (0..d).map(|j| -a[j][j]).fold(0.0, f64::max) * 1.05;
    let lt = lambda * t;
    let mut term = p0.to_vec();
    let mut weight = (-lt).exp();
    let mut out: Vec<f64> = term.iter().map(|v| v * weight).collect();
    let mut k = 0usize;
    let mut acc = weight;
    while 1.0 - acc > 1e-15 || (k as f64) < lt {
        let mut next = vec![0.0; d];
        for i in 0..d {
            let mut s = term[i];
            for j in 0..d {
                s += a[i][j] / lambda * term[j];
            }
            next[i] = s;
        }
        term = next;
        k += 1;
        weight *= lt / k as f64;
        acc += weight;
        for i in 0..d {
            out[i] += weight * term[i];
        }
        if k > 100_000 {
            break;
        }
    }
    out
}

fn params_of(r: f64, gamma: f64, channels: &[(usize, usize, f64)]) -> ModelParams {
    let ch = channels
        .iter()
        .map(|&(rho, m, beta)| LossChannel::new(rho as u32, m as u32, beta).unwrap())
        .collect();
    ModelParams::new(r, gamma, ch).unwrap()
}

fn channel() -> impl Strategy<Value = (usize, usize, f64)> {
    (1usize..=3)
        .prop_flat_map(|rho| (Just(rho), 1..=rho, 0.0f64..5.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn steady_state_matches_dense_elimination(
        r in 0.1f64..10.0,
        gamma in 0.0f64..5.0,
        channels in prop::collection::vec(channel(), 0..=2),
        n_max in 3usize..=6,
    ) {
        let params = params_of(r, gamma, &channels);
        let gen = build_generator(&params, n_max).unwrap();
        let ours = steady_state(&gen).unwrap();
        let oracle = dense_null_vector(&dense_generator(r, gamma, &channels, n_max));
        for (a, b) in ours.probs.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-10, "{:?} vs {:?}", ours.probs, oracle);
        }
    }

    #[test]
    fn generator_matches_dense_entries(
        r in 0.0f64..10.0,
        gamma in 0.01f64..5.0,
        channels in prop::collection::vec(channel(), 0..=2),
        n_max in 3usize..=12,
    ) {
        let params = params_of(r, gamma, &channels);
        let gen = build_generator(&params, n_max).unwrap();
        let dense = dense_generator(r, gamma, &channels, n_max);
        for i in 0..=n_max {
            for j in 0..=n_max {
                let tol = 1e-12 * dense[j][j].abs().max(1.0);
                prop_assert!((gen.get(i, j) - dense[i][j]).abs() <= tol, "A[{}][{}]", i, j);
            }
        }
    }

    #[test]
    fn evolve_matches_uniformization(
        r in 0.1f64..20.0,
        gamma in 0.05f64..2.0,
        beta in 0.0f64..5.0,
        t in 0.01f64..2.0,
    ) {
        let channels = [(2, 2, beta)];
        let n_max = 12;
        let params = params_of(r, gamma, &channels);
        let gen = build_generator(&params, n_max).unwrap();
        let p0 = StateDistribution::delta(n_max, 0);
        let ev = evolve(&gen, &p0, &[t], &EvolveOptions::new(1e-10)).unwrap();
        let oracle = uniformized(&dense_generator(r, gamma, &channels, n_max), &p0.probs, t);
        prop_assert!(total_variation(&ev.states[0].probs, &oracle) <= 1e-8);
    }
}

#[test]
fn fig2_transient_matches_uniformization() {
    let params = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
    let n_max = 30;
    let gen = build_generator(&params, n_max).unwrap();
    let dense = dense_generator(6000.0, 0.2, &[(2, 2, 500.0)], n_max);
    let p0 = StateDistribution::delta(n_max, 0);
    let times = [1e-4, 5e-4, 1e-3, 3e-3];
    let ev = evolve(&gen, &p0, &times, &EvolveOptions::new(1e-10)).unwrap();
    for (s, &t) in ev.states.iter().zip(&times) {
        let tv = total_variation(&s.probs, &uniformized(&dense, &p0.probs, t));
        assert!(tv <= 1e-8, "t = {t}: tv = {tv:e}");
    }
}

#[test]
fn no_loss_transient_is_poisson() {
    let (r, gamma) = (30.0, 0.5);
    let params = ModelParams::new(r, gamma, vec![]).unwrap();
    let n_max = 250;
    let gen = build_generator(&params, n_max).unwrap();
    let times: Vec<f64> = (1..=20).map(|k| 0.5 * k as f64).collect();
    let ev = evolve(&gen, &StateDistribution::delta(n_max, 0), &times, &EvolveOptions::new(1e-11)).unwrap();
    for s in &ev.states {
        let mean = r / gamma * (1.0 - (-gamma * s.time).exp());
        let tv = total_variation(&s.probs, &poisson_pmf(mean, n_max));
        assert!(tv <= 1e-8, "t = {}: tv = {tv:e}", s.time);
    }
}
