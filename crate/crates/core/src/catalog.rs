//! Closed forms for Black–Scholes and Stein–Stein, used as oracles for the
//! numeric pipeline.
//!
//! Stein–Stein: dY = −½Z²dt + Z dW¹, dZ = (a + bZ)dt + c dW², d⟨W¹,W²⟩ = ρ dt,
//! Y₀ = 0, Z₀ = σ₀. Constants refer to the tail of Y_T (θ = 2).

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::poly::{Polynomial, PolynomialFields};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteinSteinParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl SteinSteinParams {
    pub fn new(a: f64, b: f64, c: f64, sigma0: f64, rho: f64, t: f64) -> Self {
        Self { a, b, c, sigma0, rho, t }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.c, self.sigma0, self.rho, self.t];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("Stein-Stein parameters must be finite".into()));
        }
        if !(self.rho > -1.0 && self.rho <= 0.0) {
            return Err(Error::Unsupported(format!("rho = {} outside (-1, 0]", self.rho)));
        }
        if self.b > 0.0 {
            return Err(Error::InvalidModel(format!("b = {} must be <= 0", self.b)));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidModel(format!("c = {} must be > 0", self.c)));
        }
        if self.a < 0.0 || self.sigma0 < 0.0 {
            return Err(Error::InvalidModel("a and sigma0 must be >= 0".into()));
        }
        if !(self.t > 0.0) {
            return Err(Error::InvalidModel(format!("T = {} must be > 0", self.t)));
        }
        Ok(())
    }
}

/// Small-noise Stein–Stein family on state (y, z): σ₀ = (−z²/2, bz),
/// ∂_ε b = (0, a), σ = diag(z, c), x̂₀ = (0, σ₀), projection l = 1.
pub fn stein_stein_model(params: &SteinSteinParams) -> Result<ModelSpec> {
    params.validate()?;
    let fields = PolynomialFields {
        drift: vec![
            Polynomial::monomial(vec![0, 2], -0.5),
            Polynomial::monomial(vec![0, 1], params.b),
        ],
        drift_eps: vec![Polynomial::zero(), Polynomial::constant(2, params.a)],
        diffusion: vec![
            vec![Polynomial::monomial(vec![0, 1], 1.0), Polynomial::zero()],
            vec![Polynomial::zero(), Polynomial::constant(2, params.c)],
        ],
    };
    let rho = params.rho;
    ModelSpec::builder(Arc::new(fields))
        .dim_proj(1)
        .correlation(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
        .x0(vec![0.0, 0.0])
        .x0_hat(vec![0.0, params.sigma0])
        .build()
}

/// Small-noise Black–Scholes log-price: σ₀ = 0, ∂_ε b = −σ²/2, x₀ = 0,
/// x̂₀ = y₀.
pub fn black_scholes_model(sigma: f64, y0: f64) -> Result<ModelSpec> {
    if !(sigma > 0.0 && sigma.is_finite()) || !y0.is_finite() {
        return Err(Error::InvalidModel(format!("need sigma > 0 (got {sigma})")));
    }
    let fields = PolynomialFields {
        drift: vec![Polynomial::zero()],
        drift_eps: vec![Polynomial::constant(1, -0.5 * sigma * sigma)],
        diffusion: vec![vec![Polynomial::constant(1, sigma)]],
    };
    ModelSpec::builder(Arc::new(fields))
        .dim_proj(1)
        .x0(vec![0.0])
        .x0_hat(vec![y0])
        .build()
}

/// (a, b, c, σ₀) ↦ (aT^{3/2}, bT, cT, σ₀T^{1/2}) with T ↦ 1.
pub fn rescale_to_unit_maturity(p: &SteinSteinParams) -> SteinSteinParams {
    let t = p.t;
    SteinSteinParams {
        a: p.a * t.powf(1.5),
        b: p.b * t,
        c: p.c * t,
        sigma0: p.sigma0 * t.sqrt(),
        rho: p.rho,
        t: 1.0,
    }
}

/// Root of `g` in [lo, hi] given a sign change (or a zero at an endpoint):
/// bisection to width 1e−14, then one guarded Newton step.
fn bracketed_root<G, D>(g: G, dg: D, lo: f64, hi: f64) -> Option<f64>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (g(a), g(b));
    if ga == 0.0 {
        return Some(a);
    }
    if gb == 0.0 {
        return Some(b);
    }
    if ga.signum() == gb.signum() {
        return None;
    }
    let sa = ga.signum();
    while b - a > 1e-14 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Some(mid);
        }
        if gm.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    let r = 0.5 * (a + b);
    let slope = dg(r);
    if slope != 0.0 && slope.is_finite() {
        let polished = r - g(r) / slope;
        if polished >= lo && polished <= hi && g(polished).abs() <= g(r).abs() {
            return Some(polished);
        }
    }
    Some(r)
}

/// k-th strictly positive root of r cos r − bT sin r = 0, in [(k−½)π, kπ).
pub fn solve_root_uncorrelated(b: f64, t: f64, k: usize) -> Result<f64> {
    if b > 0.0 || !(t > 0.0) || k == 0 {
        return Err(Error::Domain(format!("need b <= 0, T > 0, k >= 1 (b = {b}, T = {t}, k = {k})")));
    }
    let bt = b * t;
    let lo = (k as f64 - 0.5) * PI;
    let hi = k as f64 * PI;
    bracketed_root(
        |r| r * r.cos() - bt * r.sin(),
        |r| r.cos() - r * r.sin() - bt * r.cos(),
        lo,
        hi,
    )
    .ok_or_else(|| Error::Domain(format!("no sign change for root {k}")))
}

/// p⁺(r): larger root of c²p(p−1) − (b+ρcp)² = (r/T)².
pub fn p_plus(params: &SteinSteinParams, r: f64) -> f64 {
    let (b, c, rho, t) = (params.b, params.c, params.rho, params.t);
    let one = 1.0 - rho * rho;
    let big_a = 1.0 + 2.0 * rho * b / c;
    let disc = big_a * big_a + 4.0 * one * (b * b / (c * c) + r * r / (c * c * t * t));
    (big_a + disc.sqrt()) / (2.0 * one)
}

fn p_plus_derivative(params: &SteinSteinParams, r: f64) -> f64 {
    let (b, c, rho, t) = (params.b, params.c, params.rho, params.t);
    let one = 1.0 - rho * rho;
    let big_a = 1.0 + 2.0 * rho * b / c;
    let disc = big_a * big_a + 4.0 * one * (b * b / (c * c) + r * r / (c * c * t * t));
    2.0 * r / (c * c * t * t * disc.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Branch {
    pub k: usize,
    pub r: f64,
    pub p_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinSteinSolution {
    pub r1: f64,
    pub p_plus: f64,
    pub chi: f64,
    pub q0_plus: f64,
    pub c1: f64,
    pub c2: f64,
    /// Higher-energy branches k = 2, 3 (diagnostic).
    pub branch_roots: Vec<Branch>,
}

fn correlated_root(params: &SteinSteinParams, k: usize) -> Option<f64> {
    let t = params.t;
    let (b, c, rho) = (params.b, params.c, params.rho);
    let g = |r: f64| r * r.cos() - (b + rho * c * p_plus(params, r)) * t * r.sin();
    let dg = |r: f64| {
        let bt = b + rho * c * p_plus(params, r);
        r.cos() - r * r.sin() - t * (rho * c * p_plus_derivative(params, r) * r.sin() + bt * r.cos())
    };
    let lo = (k as f64 - 0.5) * PI;
    // The root lies strictly below kπ; stay off the endpoint where sin vanishes.
    let hi = k as f64 * PI * (1.0 - 1e-15);
    bracketed_root(g, dg, lo, hi)
}

/// q₀ of the k-th branch for target y_T = `target`, positive sign.
pub fn q0_plus(params: &SteinSteinParams, r: f64, p: f64, target: f64) -> f64 {
    let (b, c, rho, t) = (params.b, params.c, params.rho, params.t);
    let bt = b + rho * c * p;
    let big_k = c * c * (2.0 * p - 1.0) - 2.0 * rho * c * bt;
    let den = big_k * (2.0 * r - (2.0 * r).sin()) + 2.0 * rho * c * (r / t) * (1.0 - (2.0 * r).cos());
    (2.0 / c) * (2.0 * r.powi(3) * target / (t.powi(3) * den)).sqrt()
}

/// Closed-form constants for the tail of Y_T (θ = 2): c₁ = p₁⁺ and
/// c₂ = q₀⁺(σ₀ + a·tan(χT/2)/χ).
pub fn solve_correlated(params: &SteinSteinParams) -> Result<SteinSteinSolution> {
    params.validate()?;
    let r1 = correlated_root(params, 1).ok_or_else(|| Error::Domain("no first intersection in [pi/2, pi)".into()))?;
    let p = p_plus(params, r1);
    let chi = r1 / params.t;
    let q0 = q0_plus(params, r1, p, 1.0);
    let c2 = q0 * (params.sigma0 + params.a * (0.5 * chi * params.t).tan() / chi);
    let branch_roots = (2..=3)
        .filter_map(|k| correlated_root(params, k).map(|r| Branch { k, r, p_plus: p_plus(params, r) }))
        .collect();
    Ok(SteinSteinSolution {
        r1,
        p_plus: p,
        chi,
        q0_plus: q0,
        c1: p,
        c2,
        branch_roots,
    })
}

impl SteinSteinSolution {
    /// c²p(p−1) − (b+ρcp)² − χ²; zero up to rounding.
    pub fn chi_identity_residual(&self, params: &SteinSteinParams) -> f64 {
        let p = self.p_plus;
        let bt = params.b + params.rho * params.c * p;
        params.c * params.c * p * (p - 1.0) - bt * bt - self.chi * self.chi
    }
}

/// sin(χt)/χ for λ = χ² of either sign.
fn sinc_t(lambda: f64, t: f64) -> f64 {
    let s = lambda * t * t;
    if s.abs() < 1e-3 {
        t * (1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0)
    } else if lambda > 0.0 {
        let chi = lambda.sqrt();
        (chi * t).sin() / chi
    } else {
        let k = (-lambda).sqrt();
        (k * t).sinh() / k
    }
}

fn cos_t(lambda: f64, t: f64) -> f64 {
    if lambda >= 0.0 {
        (lambda.sqrt() * t).cos()
    } else {
        ((-lambda).sqrt() * t).cosh()
    }
}

/// (u − sin u)/u³ as a function of s = u².
fn kernel_a(s: f64) -> f64 {
    if s.abs() < 1e-2 {
        1.0 / 6.0 - s / 120.0 + s * s / 5040.0 - s * s * s / 362_880.0
    } else if s > 0.0 {
        let u = s.sqrt();
        (u - u.sin()) / (u * s)
    } else {
        let v = (-s).sqrt();
        (v.sinh() - v) / (v * -s)
    }
}

/// (1 − cos u)/u² as a function of s = u².
fn kernel_b(s: f64) -> f64 {
    if s.abs() < 1e-2 {
        0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40_320.0
    } else if s > 0.0 {
        (1.0 - s.sqrt().cos()) / s
    } else {
        ((-s).sqrt().cosh() - 1.0) / -s
    }
}

/// Explicit Hamiltonian flow from (y, z; p, q) = (0, 0; p, q₀) at time t:
/// returns (y_t, z_t, q_t). χ² = c²p(p−1) − (b+ρcp)² may have any sign.
pub fn flow_closed_form(params: &SteinSteinParams, p: f64, q0: f64, t: f64) -> (f64, f64, f64) {
    let (b, c, rho) = (params.b, params.c, params.rho);
    let bt = b + rho * c * p;
    let lambda = c * c * p * (p - 1.0) - bt * bt;
    let sn = sinc_t(lambda, t);
    let z = q0 * c * c * sn;
    let q = q0 * (cos_t(lambda, t) - bt * sn);
    let big_k = c * c * (2.0 * p - 1.0) - 2.0 * rho * c * bt;
    let s = 4.0 * lambda * t * t;
    let y = q0 * q0 * c * c * (big_k * t.powi(3) * kernel_a(s) + rho * c * t * t * kernel_b(s));
    (y, z, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlackScholesConstants {
    pub c1: f64,
    pub c2: f64,
    pub theta: u8,
}

/// c₁ = 1/(2σ²T), c₂ = 2Ŷ_TΛ(1) = (y₀ − σ²T/2)/(σ²T), θ = 1.
pub fn black_scholes_constants(sigma: f64, t: f64, y0: f64) -> Result<BlackScholesConstants> {
    if !(sigma > 0.0 && t > 0.0) || !y0.is_finite() || !sigma.is_finite() || !t.is_finite() {
        return Err(Error::InvalidModel(format!("need sigma > 0 and T > 0 (got {sigma}, {t})")));
    }
    let v = sigma * sigma * t;
    Ok(BlackScholesConstants {
        c1: 1.0 / (2.0 * v),
        c2: (y0 - 0.5 * v) / v,
        theta: 1,
    })
}
