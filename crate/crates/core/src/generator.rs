//! Truncated master-equation generator.
//!
//! `A[i][j]` is the probability flow rate from occupancy `j` to `i`, so that
//! `dp/dt = A p`. Storage is banded: loading only ever moves `j -> j+1`,
//! and each loss process moves `j -> j-k` for a fixed `k`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::master::StateDistribution;
use crate::model::{event_rate, ModelParams, N_MAX_CAP};

/// Tail-mass threshold above which [`truncation_check`] flags a distribution.
pub const TAIL_MASS_LIMIT: f64 = 1e-8;

/// One off-diagonal band: `rates[j] = A[j + offset][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub offset: isize,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n_max: usize,
    /// Off-diagonal bands sorted by offset; at most one band per offset.
    bands: Vec<Band>,
    diag: Vec<f64>,
}

impl Generator {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Largest `|i - j|` among nonzero entries.
    pub fn bandwidth(&self) -> usize {
        self.bands
            .iter()
            .filter(|b| b.rates.iter().any(|&r| r != 0.0))
            .map(|b| b.offset.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    /// Largest total escape rate of any state.
    pub fn max_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, &d| m.max(-d))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.diag[col];
        }
        let offset = row as isize - col as isize;
        self.bands
            .iter()
            .find(|b| b.offset == offset)
            .map_or(0.0, |b| b.rates[col])
    }

    /// `out = A p`.
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.dim());
        for ((o, &d), &x) in out.iter_mut().zip(&self.diag).zip(p) {
            *o = d * x;
        }
        for band in &self.bands {
            for (j, (&rate, &x)) in band.rates.iter().zip(p).enumerate() {
                if rate != 0.0 {
                    out[(j as isize + band.offset) as usize] += rate * x;
                }
            }
        }
    }

    /// Nonzero entries as `(row, col, rate)`, column-major.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for j in 0..self.dim() {
            let mut col: Vec<(usize, usize, f64)> = self
                .bands
                .iter()
                .filter(|b| b.rates[j] != 0.0)
                .map(|b| ((j as isize + b.offset) as usize, j, b.rates[j]))
                .collect();
            if self.diag[j] != 0.0 {
                col.push((j, j, self.diag[j]));
            }
            col.sort_by_key(|e| e.0);
            out.extend(col);
        }
        out
    }

    /// Rate of the `j -> j+1` loading transition.
    pub fn up_rate(&self, j: usize) -> f64 {
        self.bands
            .iter()
            .find(|b| b.offset == 1)
            .map_or(0.0, |b| b.rates[j])
    }

    /// Downward transitions out of `j` as `(target, rate)`.
    pub fn down_transitions(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.bands
            .iter()
            .filter(move |b| b.offset < 0 && b.rates[j] != 0.0)
            .map(move |b| ((j as isize + b.offset) as usize, b.rates[j]))
    }

    /// Column sums `1ᵀA`; zero up to rounding.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.diag[j] + self.bands.iter().map(|b| b.rates[j]).sum::<f64>())
            .collect()
    }

    /// Dump as coordinate-list CSV with header `row,col,rate`.
    pub fn write_coo_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,rate")?;
        for (i, j, r) in self.entries() {
            writeln!(w, "{i},{j},{r:e}")?;
        }
        Ok(())
    }
}

/// Default truncation bound: `max(10, ceil(4 * mean estimate))`, capped.
///
/// The estimate is `R/γ` without channels and the large-N stationary point
/// otherwise (which is `sqrt(R/β′)` for pair losses).
pub fn default_n_max(params: &ModelParams) -> usize {
    let est = if params.active_channels().next().is_none() {
        if params.one_body_rate > 0.0 {
            params.loading_rate / params.one_body_rate
        } else {
            0.0
        }
    } else {
        params.mean_field_mean()
    };
    let n = (4.0 * est).ceil();
    let n = if n.is_finite() { n as usize } else { N_MAX_CAP };
    n.max(10).max(params.max_order()).min(N_MAX_CAP)
}

fn band_index(bands: &mut Vec<Band>, offset: isize, dim: usize) -> usize {
    match bands.iter().position(|b| b.offset == offset) {
        Some(i) => i,
        None => {
            bands.push(Band {
                offset,
                rates: vec![0.0; dim],
            });
            bands.len() - 1
        }
    }
}

/// Build the generator on `{0, ..., n_max}`.
///
/// Loading out of `n_max` is dropped (reflecting boundary) so every column
/// sums to zero.
pub fn build_generator(params: &ModelParams, n_max: usize) -> Result<Generator> {
    params.validate()?;
    if n_max < 1 {
        return Err(Error::InvalidInput("n_max must be >= 1".into()));
    }
    if n_max > N_MAX_CAP {
        return Err(Error::InvalidInput(format!(
            "n_max = {n_max} exceeds the supported bound {N_MAX_CAP}"
        )));
    }
    if n_max < params.max_order() {
        return Err(Error::InvalidInput(format!(
            "n_max = {n_max} is smaller than the largest channel order {}",
            params.max_order()
        )));
    }
    let dim = n_max + 1;
    let mut bands: Vec<Band> = Vec::new();
    let mut diag = vec![0.0; dim];

    if params.loading_rate > 0.0 {
        let b = band_index(&mut bands, 1, dim);
        for j in 0..n_max {
            bands[b].rates[j] = params.loading_rate;
        }
    }
    if params.one_body_rate > 0.0 {
        let b = band_index(&mut bands, -1, dim);
        for j in 1..dim {
            bands[b].rates[j] += params.one_body_rate * j as f64;
        }
    }
    for c in params.active_channels() {
        let m = c.removed as usize;
        let b = band_index(&mut bands, -(m as isize), dim);
        for j in m..dim {
            bands[b].rates[j] += event_rate(c, j);
        }
    }
    bands.sort_by_key(|b| b.offset);
    for (j, d) in diag.iter_mut().enumerate() {
        *d = -bands.iter().map(|b| b.rates[j]).sum::<f64>();
    }
    Ok(Generator { n_max, bands, diag })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationReport {
    /// Probability mass in the top 10% of states.
    pub tail_mass: f64,
    /// True when `tail_mass` exceeds [`TAIL_MASS_LIMIT`].
    pub flagged: bool,
    /// Bound to re-run with when flagged.
    pub suggested_n_max: usize,
}

/// Check whether the truncation bound was large enough for `dist`.
pub fn truncation_check(params: &ModelParams, dist: &StateDistribution) -> TruncationReport {
    let dim = dist.probs.len();
    let top = ((dim as f64) * 0.1).ceil().max(1.0) as usize;
    let tail_mass: f64 = dist.probs[dim - top..].iter().map(|p| p.max(0.0)).sum();
    let flagged = tail_mass > TAIL_MASS_LIMIT;
    let n_max = dim - 1;
    TruncationReport {
        tail_mass,
        flagged,
        suggested_n_max: if flagged {
            (2 * n_max).max(default_n_max(params)).min(N_MAX_CAP)
        } else {
            n_max
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LossChannel;

    #[test]
    fn pure_decay_entries() {
        let p = ModelParams::new(0.0, 0.2, vec![]).unwrap();
        let g = build_generator(&p, 2).unwrap();
        let e = g.entries();
        assert_eq!(
            e,
            vec![(0, 1, 0.2), (1, 1, -0.2), (1, 2, 0.4), (2, 2, -0.4)]
        );
    }

    #[test]
    fn fig2_column_two_outflow() {
        let p = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        let g = build_generator(&p, 40).unwrap();
        assert!((g.diagonal()[2] + 6500.4).abs() < 1e-9);
        assert_eq!(g.get(3, 2), 6000.0);
        assert_eq!(g.get(1, 2), 0.4);
        assert_eq!(g.get(0, 2), 500.0);
    }

    #[test]
    fn matches_explicit_rate_terms() {
        // inflow into N from N-1 (loading), N+1 (one-body), N+2 (pair loss)
        let (r, gamma, beta) = (6000.0, 0.2, 500.0);
        let p = ModelParams::two_body(r, gamma, beta, 2).unwrap();
        let g = build_generator(&p, 30).unwrap();
        for n in 0..28usize {
            let nf = n as f64;
            if n > 0 {
                assert_eq!(g.get(n, n - 1), r);
            }
            assert!((g.get(n, n + 1) - gamma * (nf + 1.0)).abs() < 1e-12);
            assert_eq!(g.get(n, n + 2), beta * (nf + 2.0) * (nf + 1.0) / 2.0);
            let out = r + gamma * nf + beta * nf * (nf - 1.0) / 2.0;
            assert!((g.get(n, n) + out).abs() <= 1e-12 * out);
        }
    }

    #[test]
    fn reflecting_boundary() {
        let p = ModelParams::two_body(10.0, 0.2, 500.0, 2).unwrap();
        let g = build_generator(&p, 5).unwrap();
        assert_eq!(g.up_rate(5), 0.0);
        assert!((g.diagonal()[5] + (0.2 * 5.0 + 500.0 * 10.0)).abs() < 1e-9);
    }

    #[test]
    fn bandwidth_and_merging() {
        let p = ModelParams::new(
            1.0,
            0.1,
            vec![
                LossChannel::new(2, 1, 3.0).unwrap(),
                LossChannel::new(3, 3, 2.0).unwrap(),
            ],
        )
        .unwrap();
        let g = build_generator(&p, 12).unwrap();
        assert_eq!(g.bandwidth(), 3);
        // one-body and the m=1 pair channel share the -1 band
        assert_eq!(g.bands().len(), 3);
        assert!((g.get(3, 4) - (0.4 + 3.0 * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_n_max() {
        let p = ModelParams::new(1.0, 0.0, vec![LossChannel::new(3, 3, 1.0).unwrap()]).unwrap();
        assert!(build_generator(&p, 2).is_err());
        assert!(build_generator(&p, 3).is_ok());
        assert!(build_generator(&p, 0).is_err());
    }

    #[test]
    fn default_bounds() {
        let fig2 = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        assert_eq!(default_n_max(&fig2), 14);
        let fig3b = ModelParams::two_body(5e5, 0.2, 500.0, 2).unwrap();
        assert_eq!(default_n_max(&fig3b), 127);
        let tiny = ModelParams::new(0.01, 0.2, vec![]).unwrap();
        assert_eq!(default_n_max(&tiny), 10);
    }

    #[test]
    fn coo_dump() {
        let p = ModelParams::new(0.0, 0.2, vec![]).unwrap();
        let g = build_generator(&p, 1).unwrap();
        let mut buf = Vec::new();
        g.write_coo_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "row,col,rate\n0,1,2e-1\n1,1,-2e-1\n");
    }

    #[test]
    fn delta_at_zero_not_flagged() {
        let p = ModelParams::new(1.0, 0.2, vec![]).unwrap();
        for n_max in [10, 20, 100] {
            let d = StateDistribution::delta(n_max, 0);
            assert!(!truncation_check(&p, &d).flagged);
        }
    }

    #[test]
    fn fig2_tail_flags_tight_bound_only() {
        let p = ModelParams::two_body(6000.0, 0.2, 500.0, 2).unwrap();
        let wide = crate::master::steady_state(&build_generator(&p, 40).unwrap()).unwrap();
        assert!(!truncation_check(&p, &wide).flagged);
        let tight = crate::master::steady_state(&build_generator(&p, 4).unwrap()).unwrap();
        let report = truncation_check(&p, &tight);
        assert!(report.flagged);
        assert!(report.suggested_n_max >= 8);
    }
}
