//! Expansion constants: c₁ = Λ(a), c₂ = max Λ′(a)·Ŷ_T over the minimizers,
//! the θ-scaled tail form, the short-time distance and the implied
//! volatility wing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flow::IntegratorOptions;
use crate::minimizer::{
    candidate_from_solution, check_local_ellipticity, find_minimizers, Ellipticity, MinimizerCandidate, MinimizingSet,
};
use crate::model::{HamiltonianEval, ModelSpec};
use crate::nonfocal::{focality_from_flow, FocalityOptions, FocalityReport};
use crate::ode::integrate;
use crate::shooting::{enumerate_solutions, norm, shoot, BvpProblem, MultistartOptions, SearchDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Λ′ = first l coordinates of p_T.
    Momentum,
    /// Central differences of Λ over re-solved problems at a ± δ.
    FiniteDifference,
    /// Momentum, checked against finite differences.
    Checked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionOptions {
    pub multistart: MultistartOptions,
    pub minimizer_rel_tol: f64,
    pub gradient: GradientMethod,
    /// Allowed relative gap between the two gradient methods.
    pub gradient_tol: f64,
    pub focality: FocalityOptions,
    /// Integrator for the first-variation system.
    pub variation: IntegratorOptions,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            multistart: MultistartOptions::default(),
            minimizer_rel_tol: 1e-6,
            gradient: GradientMethod::Checked,
            gradient_tol: 1e-3,
            focality: FocalityOptions::default(),
            variation: IntegratorOptions::default().endpoints_only(),
        }
    }
}

/// Serializes as the string "unknown".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Unknown;

impl Serialize for Unknown {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str("unknown")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub momentum: Vec<f64>,
    pub finite_difference: Option<Vec<f64>>,
    pub relative_gap: Option<f64>,
}

impl GradientEstimate {
    /// The value used for c₂: momentum when available.
    pub fn value(&self) -> &[f64] {
        if self.momentum.is_empty() {
            self.finite_difference.as_deref().unwrap_or(&[])
        } else {
            &self.momentum
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub minimizer_count: usize,
    pub minimizer_p0: Vec<Vec<f64>>,
    pub ellipticity: Vec<Ellipticity>,
    pub focality: Vec<FocalityReport>,
    /// Every minimizer is locally elliptic and non-focal.
    pub hypotheses_verified: bool,
    pub lambda_gradient: GradientEstimate,
    pub max_hamiltonian_drift: f64,
    pub search: Option<SearchDiagnostics>,
    /// Relative spread of Λ(a)·a^(−2/θ) in the tail consistency check.
    pub scaling_spread: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpansionResult {
    pub c1: f64,
    pub c2: f64,
    pub c0: Unknown,
    /// Λ′·Ŷ_T for each minimizer.
    pub c2_candidates: Vec<f64>,
    /// More than one minimizer attains c₂.
    pub c2_tie: bool,
    pub lambda_prime: Vec<f64>,
    pub y_hats: Vec<Vec<f64>>,
    pub theta: Option<u8>,
    /// Power of ε (small noise), y (tail) or t (short time) in the prefactor.
    pub algebraic_exponent: f64,
    pub diagnostics: Diagnostics,
}

/// Ŷ_T = Π_l X̂_T for the linear system
/// dX̂ = (∂b(φ) + Σ_j ∂σ_j(φ) w_j) X̂ dt + ∂_ε b(φ) dt, X̂₀ = x̂₀,
/// integrated alongside the minimizer's Hamiltonian trajectory.
pub fn first_variation(model: &ModelSpec, minimizer: &MinimizerCandidate, opts: &IntegratorOptions) -> Result<Vec<f64>> {
    let d = model.dim_state();
    let start = minimizer.flow.initial();
    let t = minimizer.flow.terminal().t - start.t;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("first variation needs a positive horizon (got {t})")));
    }
    let mut y0 = Vec::with_capacity(3 * d);
    y0.extend_from_slice(&start.x);
    y0.extend_from_slice(&minimizer.p0);
    y0.extend_from_slice(model.x0_hat());
    let mut ev = HamiltonianEval::new(model);
    let mut a = vec![0.0; d * d];
    let mut f = vec![0.0; d];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (x, rest) = y.split_at(d);
        let (p, xh) = rest.split_at(d);
        let (dx, rest_d) = dy.split_at_mut(d);
        let (dp, dxh) = rest_d.split_at_mut(d);
        ev.vector_field(x, p, dx, dp);
        ev.first_variation_coefficients(x, p, &mut a, &mut f);
        for i in 0..d {
            dxh[i] = f[i] + (0..d).map(|k| a[i * d + k] * xh[k]).sum::<f64>();
        }
    };
    let end = integrate(rhs, &y0, 0.0, t, &opts.endpoints_only(), |_, _| {}, |_, _| {})?;
    Ok(end[2 * d..2 * d + model.dim_proj()].to_vec())
}

/// Λ at another target, following each minimizer's branch by Newton
/// continuation. Falls back to a full multistart search when a branch is
/// lost.
pub fn lambda_at(problem: &BvpProblem, kmin: &MinimizingSet, target: &[f64], opts: &ExpansionOptions) -> Result<f64> {
    let from = &problem.target;
    let gap: Vec<f64> = target.iter().zip(from).map(|(b, a)| b - a).collect();
    let steps = (norm(&gap) / (0.25 * (1.0 + norm(from)))).ceil().max(1.0) as usize;
    let shooting = &opts.multistart.shooting;
    let follow = |p0: &[f64]| -> Result<f64> {
        let mut p = p0.to_vec();
        for k in 1..=steps {
            let s = k as f64 / steps as f64;
            let a: Vec<f64> = from.iter().zip(&gap).map(|(a, g)| a + s * g).collect();
            p = crate::shooting::shoot_endpoint_only(&problem.with_target(a), &p, shooting)?;
        }
        let sol = shoot(&problem.with_target(target.to_vec()), &p, shooting)?;
        Ok(candidate_from_solution(&problem.model, &sol).energy)
    };
    let energies: Vec<Result<f64>> = kmin.minimizers.par_iter().map(|m| follow(&m.p0)).collect();
    if energies.iter().all(|e| e.is_ok()) {
        return Ok(energies.into_iter().map(|e| e.unwrap()).fold(f64::INFINITY, f64::min));
    }
    let mut ms = opts.multistart.clone();
    ms.seeds.extend(kmin.minimizers.iter().map(|m| m.p0.clone()));
    let set = enumerate_solutions(&problem.with_target(target.to_vec()), &ms)?;
    set.energies
        .first()
        .copied()
        .ok_or(Error::NoConvergence {
            iterations: set.diagnostics.starts,
            residual: f64::NAN,
        })
}

/// Λ′(a) by the momentum identity and/or central differences with
/// δ = 1e−3·(1 + |a_i|).
pub fn lambda_gradient(
    problem: &BvpProblem,
    kmin: &MinimizingSet,
    method: GradientMethod,
    opts: &ExpansionOptions,
) -> Result<GradientEstimate> {
    let l = problem.model.dim_proj();
    if kmin.minimizers.is_empty() {
        return Err(Error::Domain("empty minimizing set".into()));
    }
    let momentum = if method == GradientMethod::FiniteDifference {
        Vec::new()
    } else {
        let mut g = vec![0.0; l];
        for m in &kmin.minimizers {
            for (gi, pi) in g.iter_mut().zip(&m.flow.terminal().p[..l]) {
                *gi += pi / kmin.minimizers.len() as f64;
            }
        }
        g
    };
    let finite_difference = if method == GradientMethod::Momentum {
        None
    } else {
        let mut g = vec![0.0; l];
        for (i, gi) in g.iter_mut().enumerate() {
            let delta = 1e-3 * (1.0 + problem.target[i].abs());
            let mut up = problem.target.clone();
            let mut down = problem.target.clone();
            up[i] += delta;
            down[i] -= delta;
            *gi = (lambda_at(problem, kmin, &up, opts)? - lambda_at(problem, kmin, &down, opts)?) / (2.0 * delta);
        }
        Some(g)
    };
    let mut relative_gap = None;
    if let (false, Some(fd)) = (momentum.is_empty(), &finite_difference) {
        let diff: Vec<f64> = momentum.iter().zip(fd).map(|(a, b)| a - b).collect();
        let scale = norm(&momentum).max(norm(fd));
        let gap = if scale > 0.0 { norm(&diff) / scale } else { 0.0 };
        relative_gap = Some(gap);
        if norm(&diff) > opts.gradient_tol * scale + 1e-9 {
            return Err(Error::GradientMismatch {
                momentum,
                finite_difference: fd.clone(),
            });
        }
    }
    Ok(GradientEstimate {
        momentum,
        finite_difference,
        relative_gap,
    })
}

/// Assembles c₁, c₂ and the diagnostics from a minimizing set. The model of
/// `problem` supplies ∂_ε b and x̂₀; it may differ from the model the
/// minimizers were found with in those two ingredients only.
pub fn assemble_small_noise(problem: &BvpProblem, kmin: &MinimizingSet, opts: &ExpansionOptions) -> Result<ExpansionResult> {
    if kmin.minimizers.is_empty() {
        return Err(Error::Domain("empty minimizing set".into()));
    }
    let model = &problem.model;
    let grad = lambda_gradient(problem, kmin, opts.gradient, opts)?;
    let lp = grad.value().to_vec();
    let per: Vec<Result<(Vec<f64>, Ellipticity, FocalityReport)>> = kmin
        .minimizers
        .par_iter()
        .map(|m| {
            let yh = first_variation(model, m, &opts.variation)?;
            let ell = check_local_ellipticity(model, &m.flow);
            let foc = focality_from_flow(model, &m.flow, &opts.focality)?;
            Ok((yh, ell, foc))
        })
        .collect();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let c2_candidates: Vec<f64> = per
        .iter()
        .map(|(yh, _, _)| yh.iter().zip(&lp).map(|(a, b)| a * b).sum())
        .collect();
    let c2 = c2_candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties = c2_candidates
        .iter()
        .filter(|v| (c2 - **v).abs() <= 1e-9 * (1.0 + c2.abs()))
        .count();
    let hypotheses_verified = per.iter().all(|(_, e, f)| e.holds() && f.is_nonfocal);
    let max_drift = kmin
        .minimizers
        .iter()
        .map(|m| m.flow.hamiltonian_drift)
        .fold(0.0, f64::max);
    let mut y_hats = Vec::with_capacity(per.len());
    let mut ellipticity = Vec::with_capacity(per.len());
    let mut focality = Vec::with_capacity(per.len());
    for (y, e, f) in per {
        y_hats.push(y);
        ellipticity.push(e);
        focality.push(f);
    }
    Ok(ExpansionResult {
        c1: kmin.lambda,
        c2,
        c0: Unknown,
        c2_candidates,
        c2_tie: ties > 1,
        lambda_prime: lp,
        y_hats,
        theta: None,
        algebraic_exponent: -(model.dim_proj() as f64),
        diagnostics: Diagnostics {
            minimizer_count: kmin.minimizers.len(),
            minimizer_p0: kmin.minimizers.iter().map(|m| m.p0.clone()).collect(),
            ellipticity,
            focality,
            hypotheses_verified,
            lambda_gradient: grad,
            max_hamiltonian_drift: max_drift,
            search: None,
            scaling_spread: None,
        },
    })
}

/// Full small-noise pipeline: search, minimizers, c₁ and c₂.
pub fn expand(problem: &BvpProblem, opts: &ExpansionOptions) -> Result<ExpansionResult> {
    let (kmin, search) = find_minimizers(problem, &opts.multistart, opts.minimizer_rel_tol)?;
    let mut res = assemble_small_noise(problem, &kmin, opts)?;
    res.diagnostics.search = Some(search);
    Ok(res)
}

pub const SCALING_TARGETS: [f64; 3] = [0.25, 1.0, 4.0];

/// Tail form f(y) ≍ exp(−c₁y^{2/θ} + c₂y^{1/θ}) y^{1/θ−1} for a model with
/// declared θ-scaling, from the unit-target problem. Λ(a)·a^{−2/θ} must be
/// constant to 1e−4 over [`SCALING_TARGETS`].
pub fn tail_expansion(problem: &BvpProblem, theta: u8, opts: &ExpansionOptions) -> Result<ExpansionResult> {
    if !(theta == 1 || theta == 2) {
        return Err(Error::Unsupported(format!("theta must be 1 or 2 (got {theta})")));
    }
    if problem.model.dim_proj() != 1 {
        return Err(Error::Unsupported("tail expansion needs a scalar projection".into()));
    }
    let unit = problem.with_target(vec![1.0]);
    let (kmin, search) = find_minimizers(&unit, &opts.multistart, opts.minimizer_rel_tol)?;
    let power = 2.0 / theta as f64;
    let scaled: Vec<f64> = SCALING_TARGETS
        .iter()
        .map(|&a| {
            let lam = if a == 1.0 { kmin.lambda } else { lambda_at(&unit, &kmin, &[a], opts)? };
            Ok(lam * a.powf(-power))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = scaled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let spread = (hi - lo) / kmin.lambda.abs().max(f64::MIN_POSITIVE);
    if !(spread <= 1e-4) {
        return Err(Error::ScalingViolation { spread });
    }
    let mut res = assemble_small_noise(&unit, &kmin, opts)?;
    res.theta = Some(theta);
    res.algebraic_exponent = 1.0 / theta as f64 - 1.0;
    res.diagnostics.search = Some(search);
    res.diagnostics.scaling_spread = Some(spread);
    Ok(res)
}

/// log f(y) ≈ −c₁y^{2/θ} + c₂y^{1/θ} + (1/θ − 1) ln y, leading terms only.
pub fn tail_log_density(c1: f64, c2: f64, theta: u8, y: f64) -> f64 {
    let t = theta as f64;
    -c1 * y.powf(2.0 / t) + c2 * y.powf(1.0 / t) + (1.0 / t - 1.0) * y.ln()
}

pub fn tail_curve(res: &ExpansionResult, ys: &[f64]) -> Result<Vec<(f64, f64)>> {
    let theta = res
        .theta
        .ok_or_else(|| Error::Config("tail curve needs a theta-scaled result".into()))?;
    Ok(ys
        .iter()
        .map(|&y| (y, tail_log_density(res.c1, res.c2, theta, y)))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ShortTimeResult {
    /// d²(x₀, y) = 2Λ(y) of the driftless problem at unit time.
    pub distance_squared: f64,
    pub distance: f64,
    pub lambda: f64,
    /// Power of t in the prefactor, −l/2.
    pub algebraic_exponent: f64,
    pub minimizer_count: usize,
    pub c0: Unknown,
}

/// Short-time form f(y, t) ∼ exp(−d²/2t) t^{−l/2} c₀. The energy problem is
/// solved for the driftless fields at T = 1 from x₀ + x̂₀.
pub fn short_time_expansion(model: &ModelSpec, target: &[f64], opts: &ExpansionOptions) -> Result<ShortTimeResult> {
    let start: Vec<f64> = model.x0().iter().zip(model.x0_hat()).map(|(a, b)| a + b).collect();
    let d = model.dim_state();
    let reduced = model.driftless().with_start(start, vec![0.0; d])?;
    let problem = BvpProblem::new(reduced, target.to_vec(), 1.0)?;
    let (kmin, _) = find_minimizers(&problem, &opts.multistart, opts.minimizer_rel_tol)?;
    let lambda = kmin.lambda.max(0.0);
    Ok(ShortTimeResult {
        distance_squared: 2.0 * lambda,
        distance: (2.0 * lambda).sqrt(),
        lambda,
        algebraic_exponent: -(model.dim_proj() as f64) / 2.0,
        minimizer_count: kmin.minimizers.len(),
        c0: Unknown,
    })
}

/// (β₁, β₂) with σ_BS(k)²T ≈ (β₁√k + β₂)² as k → ∞; needs B₁ > 2.
pub fn implied_vol_wing(b1: f64, b2: f64) -> Result<(f64, f64)> {
    if !b1.is_finite() || !b2.is_finite() {
        return Err(Error::Domain("wing inputs must be finite".into()));
    }
    if b1 <= 2.0 {
        return Err(Error::MomentExplosion(b1));
    }
    let (s1, s2) = ((b1 - 1.0).sqrt(), (b1 - 2.0).sqrt());
    let beta1 = std::f64::consts::SQRT_2 * (s1 - s2);
    let beta2 = b2 / std::f64::consts::SQRT_2 * (1.0 / s2 - 1.0 / s1);
    Ok((beta1, beta2))
}

/// Wing map for a θ = 2 result: B₁ = c₁ + 1, B₂ = c₂.
pub fn wing_from_expansion(c1: f64, c2: f64) -> Result<(f64, f64)> {
    implied_vol_wing(c1 + 1.0, c2)
}

/// (k, (β₁√k + β₂)²) on the given log-strikes.
pub fn wing_curve(beta1: f64, beta2: f64, ks: &[f64]) -> Vec<(f64, f64)> {
    ks.iter()
        .map(|&k| (k, (beta1 * k.max(0.0).sqrt() + beta2).powi(2)))
        .collect()
}
