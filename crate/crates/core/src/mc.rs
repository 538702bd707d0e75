//! Monte Carlo oracle: Euler–Maruyama samples of Y_T, empirical tail
//! slopes, and the admissibility check of a reconstructed control.
//!
//! A `ModelSpec` describes the family X^ε; the simulated process is its
//! ε = 1 member, dX = (b + ∂_ε b)(X)dt + σ(X)dW with X₀ = x₀ + x̂₀. For the
//! catalog models this is the original SDE.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::SteinSteinParams;
use crate::error::{Error, Result};
use crate::flow::IntegratorOptions;
use crate::minimizer::MinimizerCandidate;
use crate::model::ModelSpec;
use crate::nonfocal::csv_err;
use crate::ode::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Paths 2k and 2k+1 use opposite increments.
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 400,
            seed: 0,
            scheme: Scheme::EulerMaruyama,
            antithetic: false,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::Config("n_paths and n_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generator for `path`: substream `path` of the seed (shared by an
/// antithetic pair).
fn path_rng(cfg: &McConfig, path: usize) -> (ChaCha8Rng, f64) {
    let (stream, sign) = if cfg.antithetic {
        (path / 2, if path % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        (path, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream as u64);
    (rng, sign)
}

const CHUNK: usize = 4096;

fn simulate<T, F>(cfg: &McConfig, path: F) -> Vec<T>
where
    T: Copy + Default + Send,
    F: Fn(&mut ChaCha8Rng, f64) -> T + Sync,
{
    let mut out = vec![T::default(); cfg.n_paths];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        for (k, slot) in chunk.iter_mut().enumerate() {
            let (mut rng, sign) = path_rng(cfg, c * CHUNK + k);
            *slot = path(&mut rng, sign);
        }
    });
    out
}

/// Samples of Π₁X_T for a model with a scalar projection.
pub fn simulate_terminal(model: &ModelSpec, t: f64, cfg: &McConfig) -> Result<Vec<f64>> {
    if model.dim_proj() != 1 {
        return Err(Error::Unsupported("simulation returns a scalar projection only".into()));
    }
    simulate_coordinate(model, t, cfg, 0)
}

/// Samples of the `coord`-th state coordinate at time t.
pub fn simulate_coordinate(model: &ModelSpec, t: f64, cfg: &McConfig, coord: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if coord >= model.dim_state() {
        return Err(Error::Dimension(format!("coordinate {coord} out of range")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("maturity must be positive (got {t})")));
    }
    let (d, m) = (model.dim_state(), model.dim_noise());
    let fields = model.fields().clone();
    let l = model.correlation_factor().clone();
    let x0: Vec<f64> = model.x0().iter().zip(model.x0_hat()).map(|(a, b)| a + b).collect();
    let dt = t / cfg.n_steps as f64;
    let sq = dt.sqrt();
    Ok(simulate(cfg, |rng, sign| {
        let mut x = x0.clone();
        let (mut b, mut be, mut sig) = (vec![0.0; d], vec![0.0; d], vec![0.0; d * m]);
        let (mut z, mut dw) = (vec![0.0; m], vec![0.0; m]);
        for _ in 0..cfg.n_steps {
            fields.drift(&x, &mut b);
            fields.drift_eps(&x, &mut be);
            fields.diffusion(&x, &mut sig);
            for zj in z.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *zj = sign * g * sq;
            }
            for j in 0..m {
                dw[j] = (0..=j).map(|k| l[(j, k)] * z[k]).sum();
            }
            for i in 0..d {
                x[i] += (b[i] + be[i]) * dt + (0..m).map(|j| sig[i * m + j] * dw[j]).sum::<f64>();
            }
        }
        x[coord]
    }))
}

/// Stein–Stein Y_T: dY = −½Z²dt + ZdW¹, dZ = (a + bZ)dt + c dW²,
/// d⟨W¹, W²⟩ = ρ dt, Y₀ = 0, Z₀ = σ₀.
pub fn simulate_stein_stein(params: &SteinSteinParams, cfg: &McConfig) -> Result<Vec<f64>> {
    params.validate()?;
    cfg.validate()?;
    let SteinSteinParams { a, b, c, sigma0, rho, t } = *params;
    let dt = t / cfg.n_steps as f64;
    let sq = dt.sqrt();
    let rho_bar = (1.0 - rho * rho).sqrt();
    Ok(simulate(cfg, |rng, sign| {
        let (mut y, mut z) = (0.0_f64, sigma0);
        for _ in 0..cfg.n_steps {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            let dw1 = sign * g1 * sq;
            let dw2 = rho * dw1 + rho_bar * sign * g2 * sq;
            y += -0.5 * z * z * dt + z * dw1;
            z += (a + b * z) * dt + c * dw2;
        }
        y
    }))
}

/// Stein–Stein Y_T at `cfg.n_steps` and at half as many steps, both driven
/// by the same Brownian path (coarse increments are sums of fine pairs).
/// Returns (coarse, fine).
pub fn simulate_stein_stein_coupled(params: &SteinSteinParams, cfg: &McConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    cfg.validate()?;
    if cfg.n_steps % 2 != 0 {
        return Err(Error::Config("coupled simulation needs an even n_steps".into()));
    }
    let SteinSteinParams { a, b, c, sigma0, rho, t } = *params;
    let dt = t / cfg.n_steps as f64;
    let sq = dt.sqrt();
    let rho_bar = (1.0 - rho * rho).sqrt();
    let pairs = simulate(cfg, |rng, sign| {
        let (mut yf, mut zf) = (0.0_f64, sigma0);
        let (mut yc, mut zc) = (0.0_f64, sigma0);
        for _ in 0..cfg.n_steps / 2 {
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..2 {
                let g1: f64 = rng.sample(StandardNormal);
                let g2: f64 = rng.sample(StandardNormal);
                let dw1 = sign * g1 * sq;
                let dw2 = rho * dw1 + rho_bar * sign * g2 * sq;
                yf += -0.5 * zf * zf * dt + zf * dw1;
                zf += (a + b * zf) * dt + c * dw2;
                s1 += dw1;
                s2 += dw2;
            }
            yc += -zc * zc * dt + zc * s1;
            zc += 2.0 * (a + b * zc) * dt + c * s2;
        }
        (yc, yf)
    });
    Ok(pairs.into_iter().unzip())
}

/// Black–Scholes log-price Y_T = y₀ − σ²T/2 + σW_T, sampled exactly.
pub fn simulate_black_scholes(sigma: f64, y0: f64, t: f64, cfg: &McConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(sigma > 0.0 && t > 0.0) {
        return Err(Error::Domain("need sigma > 0 and T > 0".into()));
    }
    Ok(simulate(cfg, |rng, sign| {
        let g: f64 = rng.sample(StandardNormal);
        y0 - 0.5 * sigma * sigma * t + sign * sigma * t.sqrt() * g
    }))
}

const MAGIC: &[u8; 8] = b"HXSAMP01";

/// 16-byte header (magic, u64 count), then little-endian f64 values.
pub fn write_samples_binary<W: Write>(samples: &[f64], mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(samples.len() * 8);
    for v in samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_samples_binary<R: Read>(mut input: R) -> Result<Vec<f64>> {
    let mut head = [0u8; 16];
    input.read_exact(&mut head)?;
    if &head[..8] != MAGIC {
        return Err(Error::Config("not a sample file (bad magic)".into()));
    }
    let n = u64::from_le_bytes(head[8..].try_into().unwrap()) as usize;
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() != n * 8 {
        return Err(Error::Config(format!("sample file holds {} bytes, header says {n} values", buf.len())));
    }
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_samples_csv<W: Write>(samples: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y"]).map_err(csv_err)?;
    for v in samples {
        w.write_record([format!("{v:.16e}")]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSlopeOptions {
    /// Regressor is y^{2/θ}.
    pub theta: u8,
    pub quantile_range: (f64, f64),
    /// Fit ln S(y) − k·ln y instead of ln S(y). The leading-order survival
    /// function of the tail form carries k = −1/θ.
    pub survival_log_power: f64,
    /// Also subtract c₂·y^{1/θ} before the fit (0 leaves it in).
    pub subleading_c2: f64,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for TailSlopeOptions {
    fn default() -> Self {
        Self {
            theta: 2,
            quantile_range: (0.995, 0.99995),
            survival_log_power: 0.0,
            subleading_c2: 0.0,
            bootstrap: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailSlopeReport {
    /// Fitted slope; estimates −c₁.
    pub slope: f64,
    pub c1_estimate: f64,
    pub intercept: f64,
    /// Bootstrap standard error of the slope.
    pub standard_error: f64,
    pub tail_points: usize,
    pub quantile_range: (f64, f64),
    pub theta: u8,
}

/// Least squares slope of ln S on y^{2/θ} over the order statistics of
/// `sorted` (ascending, total length n) with rank in [lo, hi). `offset` is
/// the rank of sorted[0] in the full sample.
fn fit(sorted: &[f64], offset: usize, n: usize, lo: usize, hi: usize, opts: &TailSlopeOptions) -> Option<(f64, f64, usize)> {
    let power = 2.0 / opts.theta as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut k) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for rank in lo..hi {
        let y = sorted[rank - offset];
        if opts.survival_log_power != 0.0 && y <= 0.0 {
            continue;
        }
        let s = (n as f64 - rank as f64 - 0.5) / n as f64;
        let x = if power == 1.0 { y } else { y.abs().powf(power) };
        let mut v = s.ln() - opts.subleading_c2 * y.signum() * y.abs().powf(0.5 * power);
        if opts.survival_log_power != 0.0 {
            v -= opts.survival_log_power * y.ln();
        }
        sx += x;
        sy += v;
        sxx += x * x;
        sxy += x * v;
        k += 1;
    }
    let kf = k as f64;
    let den = kf * sxx - sx * sx;
    if k < 2 || den <= 0.0 {
        return None;
    }
    let slope = (kf * sxy - sx * sy) / den;
    Some((slope, (sy - slope * sx) / kf, k))
}

/// Empirical tail slope with a tail-restricted bootstrap: the number of
/// resampled points that land among the top K order statistics is drawn
/// from Binomial(n, K/n) and those points are drawn uniformly from the top
/// K, which reproduces the upper part of a full resample exactly.
pub fn tail_slope(samples: &[f64], opts: &TailSlopeOptions) -> Result<TailSlopeReport> {
    let (qlo, qhi) = opts.quantile_range;
    if !(0.0 < qlo && qlo < qhi && qhi < 1.0) {
        return Err(Error::Config(format!("bad quantile range ({qlo}, {qhi})")));
    }
    if !(opts.theta == 1 || opts.theta == 2) {
        return Err(Error::Unsupported(format!("theta must be 1 or 2 (got {})", opts.theta)));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("samples contain non-finite values".into()));
    }
    let n = samples.len();
    let lo = (qlo * n as f64).ceil() as usize;
    let hi = ((qhi * n as f64).floor() as usize).min(n);
    if hi <= lo || hi - lo < 100 {
        return Err(Error::InsufficientData(hi.saturating_sub(lo)));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (slope, intercept, k) = fit(&sorted, 0, n, lo, hi, opts).ok_or(Error::InsufficientData(0))?;
    if k < 100 {
        return Err(Error::InsufficientData(k));
    }

    // top K order statistics, with a margin so every resample's window
    // falls inside them
    let window = n - lo;
    let top_k = (2 * window + 1000).min(n);
    let top = &sorted[n - top_k..];
    let slopes: Vec<f64> = (0..opts.bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64 + 1);
            let mut pick: Vec<f64> = if top_k == n {
                (0..n).map(|_| top[rng.random_range(0..n)]).collect()
            } else {
                let m = Binomial::new(n as u64, top_k as f64 / n as f64).ok()?.sample(&mut rng) as usize;
                if m < window {
                    return None;
                }
                (0..m).map(|_| top[rng.random_range(0..top_k)]).collect()
            };
            pick.sort_by(|a, b| a.total_cmp(b));
            let offset = n - pick.len();
            fit(&pick, offset, n, lo, hi, opts).map(|f| f.0)
        })
        .collect();
    let standard_error = if slopes.len() > 1 {
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        (slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (slopes.len() - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(TailSlopeReport {
        slope,
        c1_estimate: -slope,
        intercept,
        standard_error,
        tail_points: k,
        quantile_range: (qlo, qhi),
        theta: opts.theta,
    })
}

/// Cubic Lagrange interpolation on a uniform grid through the four nodes
/// around t.
fn interpolate(times: &[f64], values: &[Vec<f64>], t: f64, out: &mut [f64]) {
    let n = times.len();
    if n == 1 {
        out.copy_from_slice(&values[0]);
        return;
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    let u = ((t - times[0]) / h).clamp(0.0, (n - 1) as f64);
    let order = n.min(4);
    let first = ((u.floor() as isize) - (order as isize / 2 - 1)).clamp(0, (n - order) as isize) as usize;
    out.iter_mut().for_each(|o| *o = 0.0);
    for a in first..first + order {
        let mut w = 1.0;
        for b in first..first + order {
            if b != a {
                w *= (u - b as f64) / (a as f64 - b as f64);
            }
        }
        for (o, v) in out.iter_mut().zip(&values[a]) {
            *o += w * v;
        }
    }
}

/// |Π_l φ_T − a| for dφ = b(φ)dt + σ̃(φ)ḣ₀(t)dt from the minimizer's start,
/// with ḣ₀ interpolated from its grid values.
pub fn verify_control(model: &ModelSpec, minimizer: &MinimizerCandidate, target: &[f64]) -> Result<f64> {
    let (d, m, l) = (model.dim_state(), model.dim_noise(), model.dim_proj());
    if target.len() != l {
        return Err(Error::Dimension(format!("target has length {}, expected {l}", target.len())));
    }
    let control = &minimizer.control;
    if control.times.is_empty() || control.dim() != m {
        return Err(Error::Dimension("control does not match the model's noise dimension".into()));
    }
    let (t0, t1) = (control.times[0], control.times[control.times.len() - 1]);
    let start = minimizer.flow.initial().x.clone();
    let fields = model.fields();
    let lf = model.correlation_factor();
    let (mut b, mut sig, mut h) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; m]);
    let rhs = |t: f64, x: &[f64], dx: &mut [f64]| {
        fields.drift(x, &mut b);
        fields.diffusion(x, &mut sig);
        interpolate(&control.times, &control.values, t, &mut h);
        for i in 0..d {
            // σ̃ = σL
            let mut s = 0.0;
            for j in 0..m {
                let st: f64 = (j..m).map(|k| sig[i * m + k] * lf[(k, j)]).sum();
                s += st * h[j];
            }
            dx[i] = b[i] + s;
        }
    };
    let opts = IntegratorOptions::default().endpoints_only();
    let end = if t1 > t0 {
        integrate(rhs, &start, t0, t1, &opts, |_, _| {}, |_, _| {})?
    } else {
        start
    };
    Ok(end[..l]
        .iter()
        .zip(target)
        .map(|(x, a)| (x - a).powi(2))
        .sum::<f64>()
        .sqrt())
}
