//! Adaptive Dormand–Prince 5(4) integrator with embedded error control.

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            max_steps: 50_000_000,
        }
    }
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrator state; advance with [`DormandPrince::advance_to`].
pub struct DormandPrince<'a, S: OdeSystem> {
    sys: &'a S,
    opts: OdeOptions,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    scratch: Vec<f64>,
    y_new: Vec<f64>,
    steps: usize,
    rejected: usize,
}

impl<'a, S: OdeSystem> DormandPrince<'a, S> {
    pub fn new(sys: &'a S, t0: f64, y0: &[f64], opts: OdeOptions) -> Self {
        let n = sys.dim();
        assert_eq!(y0.len(), n);
        let k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
        let mut this = Self {
            sys,
            opts,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            k,
            scratch: vec![0.0; n],
            y_new: vec![0.0; n],
            steps: 0,
            rejected: 0,
        };
        sys.rhs(t0, &this.y, &mut this.k[0]);
        this
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point.
    pub fn dy(&self) -> &[f64] {
        &self.k[0]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.opts.abs_tol + self.opts.rel_tol * a.abs().max(b.abs())
    }

    /// Hairer–Nørsett–Wanner starting step heuristic.
    fn initial_step(&mut self, span: f64) -> f64 {
        let n = self.y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.k[0][i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
        .min(span);
        for i in 0..self.y.len() {
            self.scratch[i] = self.y[i] + h0 * self.k[0][i];
        }
        self.sys.rhs(self.t + h0, &self.scratch, &mut self.k[1]);
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.scale(self.y[i], self.y[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    }

    /// Integrate up to exactly `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        if t_target <= self.t {
            return Ok(());
        }
        if self.h == 0.0 {
            self.h = self.initial_step(t_target - self.t);
        }
        let n = self.y.len();
        while self.t < t_target {
            if self.steps + self.rejected >= self.opts.max_steps {
                return Err(Error::Numerical(format!(
                    "step budget exhausted at t = {:e}",
                    self.t
                )));
            }
            let remaining = t_target - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let min_h = 1e-14 * self.t.abs().max(t_target.abs()).max(f64::MIN_POSITIVE);
            if h < min_h && !last {
                return Err(Error::StepUnderflow {
                    time: self.t,
                    step: h,
                });
            }
            self.stage(h);
            let mut err = 0.0f64;
            for i in 0..n {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                err = err.max(e.abs() / self.scale(self.y[i], self.y_new[i]));
            }
            if !err.is_finite() {
                self.rejected += 1;
                self.h = h * 0.1;
                continue;
            }
            if err <= 1.0 {
                self.t = if last { t_target } else { self.t + h };
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                self.steps += 1;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a short final step says nothing about the natural step size
                if !last || h >= 0.5 * self.h {
                    self.h = h * factor;
                }
            } else {
                self.rejected += 1;
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        Ok(())
    }

    fn stage(&mut self, h: f64) {
        let n = self.y.len();
        let t = self.t;
        let (y, k, tmp) = (&self.y, &mut self.k, &mut self.scratch);
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k[0][i];
        }
        self.sys.rhs(t + C2 * h, tmp, &mut k[1]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        self.sys.rhs(t + C3 * h, tmp, &mut k[2]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        self.sys.rhs(t + C4 * h, tmp, &mut k[3]);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        self.sys.rhs(t + C5 * h, tmp, &mut k[4]);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        self.sys.rhs(t + h, tmp, &mut k[5]);
        for i in 0..n {
            self.y_new[i] = y[i]
                + h * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        self.sys.rhs(t + h, &self.y_new, &mut k[6]);
    }
}
