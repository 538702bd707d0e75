//! Dormand–Prince 5(4) with embedded error control.
//!
//! Steps are shortened so that every reporting-grid time is hit exactly,
//! which makes the reported values independent of any interpolant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Number of uniformly spaced reporting times including both endpoints.
    /// Values below 2 report the endpoints only.
    pub grid_points: usize,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            grid_points: 512,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn endpoints_only(self) -> Self {
        Self {
            grid_points: 0,
            ..self
        }
    }

    pub fn with_grid(self, grid_points: usize) -> Self {
        Self { grid_points, ..self }
    }

    pub fn with_tolerances(self, rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.rtol.is_finite() && self.atol.is_finite()) {
            return Err(Error::Config("integrator tolerances must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates y' = f(t, y) from `t0` to `t1` (either direction).
///
/// `on_grid` is called at every reporting time (including `t0` and `t1`),
/// `on_step` after every accepted step. Returns the state at `t1`.
pub fn integrate<F, G, S>(
    mut f: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &IntegratorOptions,
    mut on_grid: G,
    mut on_step: S,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: FnMut(f64, &[f64]),
    S: FnMut(f64, &[f64]),
{
    let n = y0.len();
    let span = t1 - t0;
    if !span.is_finite() || !t0.is_finite() {
        return Err(Error::Integration {
            t: t0,
            reason: "non-finite time span".into(),
        });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t: t0,
            reason: "non-finite initial state".into(),
        });
    }
    let mut y = y0.to_vec();
    on_grid(t0, &y);
    if span == 0.0 {
        return Ok(y);
    }
    let dir = span.signum();
    let intervals = opts.grid_points.saturating_sub(1).max(1);
    let grid_time = |k: usize| {
        if k == intervals {
            t1
        } else {
            t0 + span * (k as f64 / intervals as f64)
        }
    };

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    let mut t = t0;
    f(t, &y, &mut k1);
    let mut h = initial_step(&mut f, t, &y, &k1, dir, opts, &mut tmp, &mut k2);
    h = h.min(span.abs()) * dir;

    let mut next = 1;
    let mut steps = 0usize;
    let mut last_err = 1e-4_f64;
    let mut rejected_last = false;

    while next <= intervals {
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        let target = grid_time(next);
        let remaining = target - t;
        let mut landing = false;
        let mut step = h;
        if step.abs() >= remaining.abs() * (1.0 - 1e-12) {
            step = remaining;
            landing = true;
        }
        let min_step = 1e-14 * t.abs().max(span.abs()).max(1.0);
        if step.abs() < min_step && !landing {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {:e})", step),
            });
        }

        for i in 0..n {
            tmp[i] = y[i] + step * A21 * k1[i];
        }
        f(t + C2 * step, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * step, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * step, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * step, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i] + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if landing { target } else { t + step };
        f(t + step, &tmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        f(t_new, &ynew, &mut k7);

        let mut err = 0.0;
        let mut finite = true;
        for i in 0..n {
            let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
            finite &= ynew[i].is_finite() && k7[i].is_finite();
        }
        err = (err / n as f64).sqrt();
        steps += 1;

        if !finite || !err.is_finite() {
            h = step * 0.2;
            rejected_last = true;
            if h.abs() < min_step {
                return Err(Error::Integration {
                    t,
                    reason: "non-finite state".into(),
                });
            }
            continue;
        }

        if err <= 1.0 {
            // PI controller (Hairer's beta = 0.04).
            let mut fac = 0.9 * err.max(1e-10).powf(-0.17) * last_err.powf(0.04);
            fac = fac.clamp(0.2, 10.0);
            if rejected_last {
                fac = fac.min(1.0);
            }
            last_err = err.max(1e-4);
            rejected_last = false;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            on_step(t, &y);
            let proposed = step.abs() * fac;
            if landing {
                on_grid(t, &y);
                next += 1;
                // Keep the accuracy-driven step, not the clamped one.
                h = dir * proposed.max(h.abs().min(proposed * 10.0));
            } else {
                h = dir * proposed;
            }
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = step * fac;
            rejected_last = true;
        }
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    dir: f64,
    opts: &IntegratorOptions,
    y1: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    for i in 0..y.len() {
        y1[i] = y[i] + dir * h0 * f0[i];
    }
    f(t + dir * h0, y1, f1);
    let mut d2 = 0.0;
    for i in 0..y.len() {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    let d2 = (d2 / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    if h1.is_finite() {
        (100.0 * h0).min(h1)
    } else {
        h0
    }
}
