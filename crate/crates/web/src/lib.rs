//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; the page parses it and draws it on a
//! canvas. The plain functions below the bindings do the work and are what
//! the native tests call.

use fanotrap::master::{adequate_n_max, poisson_pmf, relaxation_time, uniform_times};
use fanotrap::sweep::{grid_for_means, McSweepOptions};
use fanotrap::vankampen::time_scale;
use fanotrap::{
    build_generator, evolve, moments, run_sweep, solve_steady, vk_evolve, Backend, EvolveOptions, ModelParams,
    StateDistribution, SweepSpec, VanKampenState,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Stationary distribution next to the Poisson law with the same mean.
#[wasm_bindgen(js_name = steadyDistribution)]
pub fn steady_distribution_js(r: f64, gamma: f64, beta: f64, removed: u32) -> Result<String, JsError> {
    steady_distribution(r, gamma, beta, removed).map_err(|e| JsError::new(&e))
}

/// Fano factor against stationary mean over a log-spaced range of loading rates.
#[wasm_bindgen(js_name = fanoCurve)]
pub fn fano_curve_js(
    gamma: f64,
    beta: f64,
    removed: u32,
    mean_lo: f64,
    mean_hi: f64,
    points: usize,
) -> Result<String, JsError> {
    fano_curve(gamma, beta, removed, mean_lo, mean_hi, points).map_err(|e| JsError::new(&e))
}

/// Mean and Fano factor after an empty start, with the expansion for comparison.
#[wasm_bindgen(js_name = loadingTransient)]
pub fn loading_transient_js(r: f64, gamma: f64, beta: f64, removed: u32, relaxations: f64) -> Result<String, JsError> {
    loading_transient(r, gamma, beta, removed, relaxations).map_err(|e| JsError::new(&e))
}

#[derive(Serialize)]
struct Steady {
    n_max: usize,
    mean: f64,
    variance: f64,
    fano: Option<f64>,
    probs: Vec<f64>,
    poisson: Vec<f64>,
}

#[derive(Serialize)]
struct CurvePoint {
    r: f64,
    mean: f64,
    fano: Option<f64>,
}

#[derive(Serialize)]
struct Transient {
    t: Vec<f64>,
    mean: Vec<f64>,
    fano: Vec<Option<f64>>,
    /// Expansion prediction at the same times; empty when it does not apply.
    vk_fano: Vec<Option<f64>>,
}

fn params(r: f64, gamma: f64, beta: f64, removed: u32) -> Result<ModelParams, String> {
    ModelParams::two_body(r, gamma, beta, removed).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn steady_distribution(r: f64, gamma: f64, beta: f64, removed: u32) -> Result<String, String> {
    let p = params(r, gamma, beta, removed)?;
    let (gen, dist) = solve_steady(&p, None).map_err(|e| e.to_string())?;
    let m = moments(&dist);
    // drop the empty tail so the plot is not mostly zeros
    let keep = dist.probs.iter().rposition(|&q| q > 1e-6).unwrap_or(0) + 2;
    let keep = keep.min(dist.probs.len());
    to_json(&Steady {
        n_max: gen.n_max(),
        mean: m.mean,
        variance: m.variance,
        fano: m.fano,
        probs: dist.probs[..keep].to_vec(),
        poisson: poisson_pmf(m.mean, keep - 1),
    })
}

pub fn fano_curve(
    gamma: f64,
    beta: f64,
    removed: u32,
    mean_lo: f64,
    mean_hi: f64,
    points: usize,
) -> Result<String, String> {
    if !(2..=200).contains(&points) {
        return Err("points must lie in 2..=200".into());
    }
    let base = params(0.0, gamma, beta, removed)?;
    let grid = grid_for_means(&base, mean_lo, mean_hi, points, None).map_err(|e| e.to_string())?;
    let rows = run_sweep(&SweepSpec {
        base,
        grid,
        backends: vec![Backend::Master],
        n_max: None,
        mc: McSweepOptions::default(),
        keep_distributions: false,
    })
    .map_err(|e| e.to_string())?;
    let curve: Vec<CurvePoint> = rows
        .iter()
        .filter_map(|row| {
            let v = row.outcome.as_ref().ok()?;
            Some(CurvePoint {
                r: row.loading_rate,
                mean: v.mean,
                fano: v.fano,
            })
        })
        .collect();
    to_json(&curve)
}

pub fn loading_transient(r: f64, gamma: f64, beta: f64, removed: u32, relaxations: f64) -> Result<String, String> {
    let p = params(r, gamma, beta, removed)?;
    let tr = relaxation_time(&p).ok_or("no relaxation time for these rates")?;
    if !(relaxations > 0.0 && relaxations <= 100.0) {
        return Err("relaxations must lie in (0, 100]".into());
    }
    let n_max = adequate_n_max(&p).map_err(|e| e.to_string())?;
    let gen = build_generator(&p, n_max).map_err(|e| e.to_string())?;
    let times = uniform_times(0.0, relaxations * tr, 150);
    let ev = evolve(&gen, &StateDistribution::delta(n_max, 0), &times, &EvolveOptions::new(1e-8))
        .map_err(|e| e.to_string())?;
    let ms: Vec<_> = ev.states.iter().map(moments).collect();

    let vk_fano = match (removed, time_scale(&p)) {
        (2, Ok(scale)) => {
            let tau_end = times[times.len() - 1] * scale;
            let s0 = VanKampenState::new(0.0, 0.0, 0.0).map_err(|e| e.to_string())?;
            vk_evolve(&s0, tau_end, times.len() - 1)
                .map_err(|e| e.to_string())?
                .iter()
                .map(VanKampenState::fano)
                .collect()
        }
        _ => Vec::new(),
    };
    to_json(&Transient {
        t: times,
        mean: ms.iter().map(|m| m.mean).collect(),
        fano: ms.iter().map(|m| m.fano).collect(),
        vk_fano,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn steady_matches_fig2_numbers() {
        let v: Value = serde_json::from_str(&steady_distribution(6000.0, 0.2, 500.0, 2).unwrap()).unwrap();
        assert!((v["mean"].as_f64().unwrap() - 3.596).abs() < 1e-3);
        assert_eq!(v["probs"].as_array().unwrap().len(), v["poisson"].as_array().unwrap().len());
    }

    #[test]
    fn curve_has_the_blockade_dip() {
        let v: Value = serde_json::from_str(&fano_curve(0.2, 500.0, 2, 0.05, 10.0, 25).unwrap()).unwrap();
        let f: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["fano"].as_f64().unwrap()).collect();
        assert_eq!(f.len(), 25);
        let min = f.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - 0.52).abs() < 0.02, "{min}");
        assert!(f[0] > 0.95);
    }

    #[test]
    fn transient_reaches_the_plateau() {
        let v: Value = serde_json::from_str(&loading_transient(6000.0, 0.2, 500.0, 2, 10.0).unwrap()).unwrap();
        let fano = v["fano"].as_array().unwrap();
        let vk = v["vk_fano"].as_array().unwrap();
        assert_eq!(fano.len(), vk.len());
        assert!((fano.last().unwrap().as_f64().unwrap() - 0.7403).abs() < 1e-3);
        assert!((vk.last().unwrap().as_f64().unwrap() - 0.75).abs() < 1e-6);
        assert!(fano[0].is_null());
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(steady_distribution(0.0, 0.0, 0.0, 2).is_err());
        assert!(fano_curve(0.2, 500.0, 2, 1.0, 0.5, 10).is_err());
        assert!(loading_transient(6000.0, 0.2, 500.0, 2, -1.0).is_err());
    }
}
