//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input (flags, config, output
//! path), 2 for numerical failures. Errors are reported as a single line
//! `error kind=<kind> msg=<json string>` on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::generator::{build_generator, truncation_check, TruncationReport};
use crate::io::{write_evolve_csv, write_samples_csv, write_steady_csv, write_sweep_csv, write_vankampen_csv};
use crate::master::{adequate_n_max, evolve, moments, relaxation_time, solve_steady, uniform_times, EvolveOptions, Moments, StateDistribution};
use crate::mc::{sample, EnsembleEstimate, InitialLaw, McOptions};
use crate::model::{LossChannel, ModelParams};
use crate::presets::Preset;
use crate::sweep::{grid_for_means, run_sweep, settling_time, Backend, McSweepOptions, SweepRow, SweepSpec};
use crate::vankampen::{to_dimensionless, vk_evolve, VanKampenState};

pub const VERSION: &str = match option_env!("FANOTRAP_GIT_DESCRIBE") {
    Some(v) => v,
    None => env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Parser)]
#[command(name = "fanotrap", version = VERSION, about = "Atom-number statistics of a loaded trap with one- and multi-body losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the master equation in time from a fixed initial occupancy.
    Evolve(EvolveArgs),
    /// Stationary distribution of the master equation.
    Steady(SteadyArgs),
    /// Exact stochastic trajectories.
    Sample(SampleArgs),
    /// System-size expansion: φ(τ), ⟨ξ²⟩(τ) and the Fano factor.
    Vankampen(VankampenArgs),
    /// Sweep the loading rate across backends.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Model parameters and output options shared by every subcommand.
#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat key/value config file (TOML `key = value` lines or a JSON object).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Published parameter set: fig1, fig2, fig3a, fig3a-dashed, fig3b.
    #[arg(long)]
    pub preset: Option<String>,
    /// Loading rate R [atoms s⁻¹].
    #[arg(long = "R", value_name = "RATE")]
    pub loading_rate: Option<f64>,
    /// One-body loss rate γ [s⁻¹].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Two-body loss constant β′ [(at·s)⁻¹]; events fire at β′ N(N−1)/2.
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Atoms removed per two-body event (1 or 2) [atoms].
    #[arg(long)]
    pub removed: Option<u32>,
    /// General loss channel `rho,m,rate`: ρ-body events at rate·C(N,ρ) [s⁻¹] removing m atoms. Repeatable.
    #[arg(long = "channel", value_name = "RHO,M,RATE")]
    pub channels: Vec<String>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format; inferred from the --out extension when absent.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Final time [s] (default: 10 relaxation times).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Number of output intervals on [0, t_end].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Relative local error tolerance, in [1e-12, 1e-3].
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Truncation bound N_max [atoms].
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Initial occupancy [atoms].
    #[arg(long)]
    pub init: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SteadyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Truncation bound N_max [atoms] (default: automatic).
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Also write the generator as coordinate-list CSV (row, col, rate [s⁻¹]).
    #[arg(long)]
    pub dump_generator: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of trajectories.
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Root seed of the per-trajectory random streams.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sample times [s].
    #[arg(long, value_delimiter = ',')]
    pub times: Vec<f64>,
    /// Single sample time [s] (default: 30 settling times).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Initial occupancy [atoms].
    #[arg(long)]
    pub init: Option<u32>,
}

#[derive(Debug, Args)]
pub struct VankampenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Initial occupancy fraction φ₀, in [0, 1].
    #[arg(long)]
    pub phi0: Option<f64>,
    /// Initial scaled variance ⟨ξ²⟩₀.
    #[arg(long = "xi2-0")]
    pub xi2_0: Option<f64>,
    /// Final dimensionless time τ = t·sqrt(R β′) (default 20).
    #[arg(long)]
    pub tau_end: Option<f64>,
    /// Final time [s], converted with the model parameters when --tau-end is absent.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Number of output intervals.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Explicit loading rates R [atoms s⁻¹], comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// Stationary-mean range `lo,hi` [atoms] covered by a log-spaced grid.
    #[arg(long, value_delimiter = ',')]
    pub mean_range: Vec<f64>,
    /// Grid points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Backends: master, mc, vankampen (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub backends: Vec<String>,
    /// Trajectories per grid point for the mc backend.
    #[arg(long)]
    pub n_traj: Option<usize>,
    /// Root seed for the mc backend.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Truncation bound N_max [atoms] (default: automatic per point).
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Manifest path (default: `<out>.manifest.json`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Values accepted in a config file. Keys match the long flag names with
/// `-` replaced by `_`; `R` may also be spelled `loading_rate`.
#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    #[serde(alias = "loading_rate")]
    #[serde(rename = "R")]
    pub loading_rate: Option<f64>,
    #[serde(alias = "one_body_rate")]
    pub gamma: Option<f64>,
    pub beta2: Option<f64>,
    pub removed: Option<u32>,
    pub channels: Option<Vec<String>>,
    pub n_max: Option<usize>,
    pub rel_tol: Option<f64>,
    pub t_end: Option<f64>,
    pub tau_end: Option<f64>,
    pub samples: Option<usize>,
    pub init: Option<u32>,
    pub n_traj: Option<usize>,
    pub seed: Option<u64>,
    pub times: Option<Vec<f64>>,
    pub phi0: Option<f64>,
    pub xi2_0: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub mean_range: Option<Vec<f64>>,
    pub points: Option<usize>,
    pub backends: Option<Vec<String>>,
    pub threads: Option<usize>,
    pub format: Option<Format>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            serde_json::from_str(trimmed).map_err(|e| Error::InvalidInput(format!("config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| {
                Error::InvalidInput(format!("config: {}", e.to_string().lines().next().unwrap_or("")))
            })
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fully resolved run configuration, recorded with every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub params: ModelParams,
    pub preset: Option<String>,
    pub n_max: Option<usize>,
    pub rel_tol: Option<f64>,
    pub n_traj: Option<usize>,
    pub seed: Option<u64>,
    pub t_end: Option<f64>,
    pub tau_end: Option<f64>,
    pub sample_times: Option<Vec<f64>>,
    pub format: Format,
    pub out: Option<PathBuf>,
}

enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Validation(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Validation(format!("i/o: {e}"))
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn parse_channel(s: &str) -> Result<LossChannel, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(invalid(format!("channel '{s}' must be rho,m,rate")));
    }
    let rho = parts[0].parse().map_err(|_| invalid(format!("bad rho in '{s}'")))?;
    let m = parts[1].parse().map_err(|_| invalid(format!("bad m in '{s}'")))?;
    let rate = parts[2].parse().map_err(|_| invalid(format!("bad rate in '{s}'")))?;
    Ok(LossChannel::new(rho, m, rate)?)
}

/// Preset, then config file, then flags.
struct Layers {
    config: ConfigFile,
    preset: Option<Preset>,
}

impl Layers {
    fn new(common: &CommonArgs) -> Result<Self, Failure> {
        let config = match &common.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let preset = common
            .preset
            .as_deref()
            .or(config.preset.as_deref())
            .map(str::parse::<Preset>)
            .transpose()?;
        Ok(Self { config, preset })
    }

    fn params(&self, common: &CommonArgs, require_loading: bool) -> Result<ModelParams, Failure> {
        let base = self.preset.map(Preset::params);
        let loading = common
            .loading_rate
            .or(self.config.loading_rate)
            .or(self.preset.and_then(Preset::loading_rate));
        let loading = match loading {
            Some(r) => r,
            None if require_loading => {
                return Err(invalid("loading rate missing; pass --R or a preset that sets it"))
            }
            None => 0.0,
        };
        let gamma = common
            .gamma
            .or(self.config.gamma)
            .or(base.as_ref().map(|b| b.one_body_rate))
            .unwrap_or(0.0);

        let flag_channels = channels_from(common.beta2, common.removed, &common.channels)?;
        let config_channels = channels_from(
            self.config.beta2,
            self.config.removed,
            self.config.channels.as_deref().unwrap_or(&[]),
        )?;
        let channels = flag_channels
            .or(config_channels)
            .or(base.map(|b| b.channels))
            .unwrap_or_default();
        Ok(ModelParams::new(loading, gamma, channels)?)
    }

    fn format(&self, common: &CommonArgs, default: Format) -> Format {
        common
            .format
            .or(self.config.format)
            .or_else(|| {
                let ext = common.out.as_ref()?.extension()?.to_str()?.to_ascii_lowercase();
                match ext.as_str() {
                    "json" => Some(Format::Json),
                    "csv" => Some(Format::Csv),
                    _ => None,
                }
            })
            .unwrap_or(default)
    }

    fn threads(&self, common: &CommonArgs) -> Option<usize> {
        common.threads.or(self.config.threads)
    }
}

fn channels_from(beta2: Option<f64>, removed: Option<u32>, general: &[String]) -> Result<Option<Vec<LossChannel>>, Failure> {
    if beta2.is_none() && general.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::new();
    if let Some(b) = beta2 {
        out.push(LossChannel::new(2, removed.unwrap_or(2), b)?);
    }
    for s in general {
        out.push(parse_channel(s)?);
    }
    Ok(Some(out))
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| invalid(format!("cannot write {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut w = open_out(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| invalid(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct SteadyReport<'a> {
    config: &'a RunConfig,
    n_max: usize,
    moments: Moments,
    truncation: TruncationReport,
    distribution: &'a [f64],
}

#[derive(Serialize)]
struct EvolveSample<'a> {
    t: f64,
    moments: Moments,
    probs: &'a [f64],
}

#[derive(Serialize)]
struct EvolveReport<'a> {
    config: &'a RunConfig,
    n_max: usize,
    steady_from: Option<f64>,
    samples: Vec<EvolveSample<'a>>,
}

#[derive(Serialize)]
struct SampleReport<'a> {
    config: &'a RunConfig,
    seed: u64,
    n_traj: usize,
    estimates: &'a [EnsembleEstimate],
}

#[derive(Serialize)]
struct VankampenReport<'a> {
    config: &'a RunConfig,
    series: &'a [VanKampenState],
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    version: &'static str,
    created_unix: u64,
    config: &'a RunConfig,
    spec: &'a SweepSpec,
    tolerances: serde_json::Value,
    failures: Vec<serde_json::Value>,
}

fn run_steady(args: &SteadyArgs) -> Result<(), Failure> {
    let layers = Layers::new(&args.common)?;
    let params = layers.params(&args.common, true)?;
    let n_max = args.n_max.or(layers.config.n_max);
    let format = layers.format(&args.common, Format::Json);
    let (gen, dist) = solve_steady(&params, n_max)?;
    let config = RunConfig {
        subcommand: "steady",
        params: params.clone(),
        preset: layers.preset.map(|p| p.name().to_string()),
        n_max: Some(gen.n_max()),
        rel_tol: None,
        n_traj: None,
        seed: None,
        t_end: None,
        tau_end: None,
        sample_times: None,
        format,
        out: args.common.out.clone(),
    };
    if let Some(path) = &args.dump_generator {
        let mut w = open_out(Some(path))?;
        gen.write_coo_csv(&mut w)?;
        w.flush()?;
    }
    let report = SteadyReport {
        config: &config,
        n_max: gen.n_max(),
        moments: moments(&dist),
        truncation: truncation_check(&params, &dist),
        distribution: &dist.probs,
    };
    match format {
        Format::Json => write_json(args.common.out.as_deref(), &report),
        Format::Csv => {
            let mut w = open_out(args.common.out.as_deref())?;
            write_steady_csv(&mut w, &dist)?;
            w.flush()?;
            if let Some(out) = &args.common.out {
                let side = SteadyReport {
                    distribution: &[],
                    ..report
                };
                write_json(Some(&sidecar(out, "moments.json")), &side)?;
            }
            Ok(())
        }
    }
}

fn run_evolve(args: &EvolveArgs) -> Result<(), Failure> {
    let layers = Layers::new(&args.common)?;
    let cfg = &layers.config;
    let params = layers.params(&args.common, false)?;
    let init = args.init.or(cfg.init).unwrap_or(0) as usize;
    let n_max = match args.n_max.or(cfg.n_max) {
        Some(n) => n,
        None => adequate_n_max(&params)?.max(init + 10),
    };
    if init > n_max {
        return Err(invalid(format!("initial occupancy {init} exceeds n_max = {n_max}")));
    }
    let rel_tol = args.rel_tol.or(cfg.rel_tol).unwrap_or(1e-8);
    let relax = relaxation_time(&params);
    let t_end = match args.t_end.or(cfg.t_end) {
        Some(t) => t,
        None => 10.0 * relax.ok_or_else(|| invalid("no time scale; pass --t-end"))?,
    };
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end must be > 0"));
    }
    let samples = args.samples.or(cfg.samples).unwrap_or(100);
    let times = uniform_times(0.0, t_end, samples);
    let format = layers.format(&args.common, Format::Csv);
    let gen = build_generator(&params, n_max)?;
    let opts = EvolveOptions {
        rel_tol,
        relaxation_time: relax,
    };
    let ev = evolve(&gen, &StateDistribution::delta(n_max, init), &times, &opts)?;
    let config = RunConfig {
        subcommand: "evolve",
        params,
        preset: layers.preset.map(|p| p.name().to_string()),
        n_max: Some(n_max),
        rel_tol: Some(rel_tol),
        n_traj: None,
        seed: None,
        t_end: Some(t_end),
        tau_end: None,
        sample_times: None,
        format,
        out: args.common.out.clone(),
    };
    match format {
        Format::Csv => {
            let mut w = open_out(args.common.out.as_deref())?;
            write_evolve_csv(&mut w, &ev.states)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => write_json(
            args.common.out.as_deref(),
            &EvolveReport {
                config: &config,
                n_max,
                steady_from: ev.steady_from,
                samples: ev
                    .states
                    .iter()
                    .map(|s| EvolveSample {
                        t: s.time,
                        moments: moments(s),
                        probs: &s.probs,
                    })
                    .collect(),
            },
        ),
    }
}

fn run_sample(args: &SampleArgs) -> Result<(), Failure> {
    let layers = Layers::new(&args.common)?;
    let cfg = &layers.config;
    let params = layers.params(&args.common, false)?;
    let n_traj = args.n_traj.or(cfg.n_traj).unwrap_or(10_000);
    if n_traj < 1 {
        return Err(invalid("n_traj must be >= 1"));
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let times = if !args.times.is_empty() {
        args.times.clone()
    } else if let Some(t) = args.t_end.or(cfg.t_end) {
        vec![t]
    } else if let Some(t) = &cfg.times {
        t.clone()
    } else {
        vec![settling_time(&params, 30.0)?]
    };
    let init = args.init.or(cfg.init).unwrap_or(0);
    let format = layers.format(&args.common, Format::Json);
    let ens = sample(
        &params,
        &InitialLaw::Fixed(init),
        &times,
        n_traj,
        seed,
        &McOptions {
            threads: layers.threads(&args.common),
        },
    )?;
    let config = RunConfig {
        subcommand: "sample",
        params,
        preset: layers.preset.map(|p| p.name().to_string()),
        n_max: None,
        rel_tol: None,
        n_traj: Some(n_traj),
        seed: Some(seed),
        t_end: None,
        tau_end: None,
        sample_times: Some(times),
        format,
        out: args.common.out.clone(),
    };
    let report = SampleReport {
        config: &config,
        seed,
        n_traj,
        estimates: &ens.estimates,
    };
    match format {
        Format::Json => write_json(args.common.out.as_deref(), &report),
        Format::Csv => {
            let mut w = open_out(args.common.out.as_deref())?;
            write_samples_csv(&mut w, &ens)?;
            w.flush()?;
            if let Some(out) = &args.common.out {
                write_json(Some(&sidecar(out, "summary.json")), &report)?;
            }
            Ok(())
        }
    }
}

fn run_vankampen(args: &VankampenArgs) -> Result<(), Failure> {
    let layers = Layers::new(&args.common)?;
    let cfg = &layers.config;
    let phi0 = args.phi0.or(cfg.phi0).unwrap_or(0.0);
    let xi2_0 = args.xi2_0.or(cfg.xi2_0).unwrap_or(0.0);
    let tau_end = match (args.tau_end.or(cfg.tau_end), args.t_end.or(cfg.t_end)) {
        (Some(tau), _) => tau,
        (None, Some(t)) => to_dimensionless(&layers.params(&args.common, true)?, t)?,
        (None, None) => 20.0,
    };
    let samples = args.samples.or(cfg.samples).unwrap_or(200);
    let format = layers.format(&args.common, Format::Csv);
    let s0 = VanKampenState::new(phi0, xi2_0, 0.0)?;
    let series = vk_evolve(&s0, tau_end, samples)?;
    match format {
        Format::Csv => {
            let mut w = open_out(args.common.out.as_deref())?;
            write_vankampen_csv(&mut w, &series)?;
            w.flush()?;
            Ok(())
        }
        Format::Json => {
            let params = layers
                .params(&args.common, false)
                .unwrap_or_else(|_| crate::presets::Preset::Fig2.params());
            let config = RunConfig {
                subcommand: "vankampen",
                params,
                preset: layers.preset.map(|p| p.name().to_string()),
                n_max: None,
                rel_tol: None,
                n_traj: None,
                seed: None,
                t_end: None,
                tau_end: Some(tau_end),
                sample_times: None,
                format,
                out: args.common.out.clone(),
            };
            write_json(
                args.common.out.as_deref(),
                &VankampenReport {
                    config: &config,
                    series: &series,
                },
            )
        }
    }
}

fn run_sweep_cmd(args: &SweepArgs) -> Result<(), Failure> {
    let layers = Layers::new(&args.common)?;
    let cfg = &layers.config;
    let base = layers.params(&args.common, false).or_else(|e| {
        // sweeps only need the loss side; give validation a nonzero R
        let common = &args.common;
        let probe = CommonArgs {
            loading_rate: Some(1.0),
            config: None,
            preset: None,
            gamma: common.gamma,
            beta2: common.beta2,
            removed: common.removed,
            channels: common.channels.clone(),
            out: None,
            format: None,
            threads: None,
        };
        layers.params(&probe, false).map_err(|_| e)
    })?;
    let n_max = args.n_max.or(cfg.n_max);
    let grid = if !args.grid.is_empty() {
        args.grid.clone()
    } else if let Some(g) = &cfg.grid {
        g.clone()
    } else {
        let range = if !args.mean_range.is_empty() {
            args.mean_range.clone()
        } else if let Some(r) = &cfg.mean_range {
            r.clone()
        } else {
            let (lo, hi) = layers.preset.and_then(Preset::mean_range).unwrap_or((0.05, 40.0));
            vec![lo, hi]
        };
        if range.len() != 2 {
            return Err(invalid("mean range must be lo,hi"));
        }
        let points = args.points.or(cfg.points).unwrap_or(40);
        grid_for_means(&base, range[0], range[1], points, n_max)?
    };
    let backend_names: Vec<String> = if !args.backends.is_empty() {
        args.backends.clone()
    } else {
        cfg.backends.clone().unwrap_or_else(|| vec!["master".into()])
    };
    let backends = backend_names
        .iter()
        .map(|s| s.parse::<Backend>())
        .collect::<Result<Vec<_>, _>>()?;
    let mc = McSweepOptions {
        n_traj: args.n_traj.or(cfg.n_traj).unwrap_or(100_000),
        seed: args.seed.or(cfg.seed).unwrap_or(1),
        ..McSweepOptions::default()
    };
    let spec = SweepSpec {
        base: base.clone(),
        grid,
        backends,
        n_max,
        mc,
        keep_distributions: false,
    };
    let rows = with_threads(layers.threads(&args.common), || run_sweep(&spec))?;
    let format = layers.format(&args.common, Format::Csv);
    let config = RunConfig {
        subcommand: "sweep",
        params: base,
        preset: layers.preset.map(|p| p.name().to_string()),
        n_max,
        rel_tol: None,
        n_traj: Some(mc.n_traj),
        seed: Some(mc.seed),
        t_end: None,
        tau_end: None,
        sample_times: None,
        format,
        out: args.common.out.clone(),
    };
    match format {
        Format::Csv => {
            let mut w = open_out(args.common.out.as_deref())?;
            write_sweep_csv(&mut w, &rows)?;
            w.flush()?;
        }
        Format::Json => write_json(args.common.out.as_deref(), &rows)?,
    }
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| args.common.out.as_ref().map(|o| sidecar(o, "manifest.json")));
    if let Some(path) = manifest_path {
        write_json(Some(&path), &manifest(&config, &spec, &rows))?;
    }
    Ok(())
}

fn manifest<'a>(config: &'a RunConfig, spec: &'a SweepSpec, rows: &[SweepRow]) -> SweepManifest<'a> {
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    SweepManifest {
        version: VERSION,
        created_unix,
        config,
        spec,
        tolerances: serde_json::json!({
            "steady_residual_rel": 1e-10,
            "truncation_tail_mass": crate::generator::TAIL_MASS_LIMIT,
            "vankampen_min_mean": crate::sweep::VK_MIN_MEAN,
            "mc_settling_relaxations": spec.mc.relaxations,
        }),
        failures: rows
            .iter()
            .filter_map(|r| {
                r.outcome.as_ref().err().map(|e| {
                    serde_json::json!({
                        "index": r.index,
                        "R": r.loading_rate,
                        "backend": r.backend.name(),
                        "error": e,
                    })
                })
            })
            .collect(),
    }
}

#[cfg(feature = "parallel")]
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads.and_then(|k| rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<T>(_threads: Option<usize>, f: impl FnOnce() -> T) -> T {
    f()
}

fn diagnostic(kind: &str, msg: &str) {
    let msg = serde_json::to_string(msg.lines().next().unwrap_or("")).unwrap_or_default();
    eprintln!("error kind={kind} msg={msg}");
}

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    1
                }
                _ => {
                    let text = e.to_string();
                    let first = text
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments")
                        .trim_start_matches("error: ");
                    diagnostic("validation", first);
                    1
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Evolve(a) => run_evolve(a),
        Command::Steady(a) => run_steady(a),
        Command::Sample(a) => run_sample(a),
        Command::Vankampen(a) => run_vankampen(a),
        Command::Sweep(a) => run_sweep_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Validation(m)) => {
            diagnostic("validation", &m);
            1
        }
        Err(Failure::Numerical(m)) => {
            diagnostic("numerical", &m);
            2
        }
    }
}
