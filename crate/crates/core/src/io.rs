//! CSV writers for the result tables.
//!
//! Numbers are written in Rust's shortest round-trip form, so identical
//! results give byte-identical files. Undefined values are left empty.

use std::io::{self, Write};

use crate::master::StateDistribution;
use crate::mc::TrajectoryEnsemble;
use crate::sweep::SweepRow;
use crate::vankampen::VanKampenState;

/// Round-trip formatting; scientific notation outside `[1e-4, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// `t,N,p_N`, one line per occupancy per sample.
pub fn write_evolve_csv<W: Write>(mut w: W, states: &[StateDistribution]) -> io::Result<()> {
    writeln!(w, "t,N,p_N")?;
    for s in states {
        let t = num(s.time);
        for (n, p) in s.probs.iter().enumerate() {
            writeln!(w, "{t},{n},{}", num(*p))?;
        }
    }
    Ok(())
}

/// `N,p_N`.
pub fn write_steady_csv<W: Write>(mut w: W, dist: &StateDistribution) -> io::Result<()> {
    writeln!(w, "N,p_N")?;
    for (n, p) in dist.probs.iter().enumerate() {
        writeln!(w, "{n},{}", num(*p))?;
    }
    Ok(())
}

/// `traj,t,N`.
pub fn write_samples_csv<W: Write>(mut w: W, ens: &TrajectoryEnsemble) -> io::Result<()> {
    writeln!(w, "traj,t,N")?;
    let times: Vec<String> = ens.sample_times.iter().map(|&t| num(t)).collect();
    for i in 0..ens.n_traj {
        for (k, t) in times.iter().enumerate() {
            writeln!(w, "{i},{t},{}", ens.occupancy(i, k))?;
        }
    }
    Ok(())
}

/// `tau,phi,xi2,fano`.
pub fn write_vankampen_csv<W: Write>(mut w: W, states: &[VanKampenState]) -> io::Result<()> {
    writeln!(w, "tau,phi,xi2,fano")?;
    for s in states {
        writeln!(w, "{},{},{},{}", num(s.tau), num(s.phi), num(s.xi2), opt(s.fano()))?;
    }
    Ok(())
}

/// `R,mean,variance,fano,backend,stderr_fano`; failed rows carry empty values.
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(w, "R,mean,variance,fano,backend,stderr_fano")?;
    for row in rows {
        let r = num(row.loading_rate);
        let b = row.backend.name();
        match &row.outcome {
            Ok(v) => writeln!(
                w,
                "{r},{},{},{},{b},{}",
                num(v.mean),
                num(v.variance),
                opt(v.fano),
                opt(v.stderr_fano)
            )?,
            Err(_) => writeln!(w, "{r},,,,{b},")?,
        }
    }
    Ok(())
}
