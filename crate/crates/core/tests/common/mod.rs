#![allow(dead_code)]

use std::sync::Arc;

use hamexpand::catalog::{stein_stein_model, SteinSteinParams};
use hamexpand::model::ModelSpec;
use hamexpand::poly::{Polynomial, PolynomialFields};
use hamexpand::shooting::BvpProblem;

pub fn ss(b: f64, c: f64, rho: f64, t: f64) -> SteinSteinParams {
    SteinSteinParams::new(0.0, b, c, 0.2, rho, t)
}

pub fn ss_problem(params: &SteinSteinParams, target: f64) -> BvpProblem {
    BvpProblem::new(stein_stein_model(params).unwrap(), vec![target], params.t).unwrap()
}

/// Zero-drift Black–Scholes log-price on a single noise.
pub fn driftless_bs(sigma: f64) -> ModelSpec {
    let fields = PolynomialFields {
        drift: vec![Polynomial::zero()],
        drift_eps: vec![],
        diffusion: vec![vec![Polynomial::constant(1, sigma)]],
    };
    ModelSpec::builder(Arc::new(fields)).build().unwrap()
}

/// Planar Brownian motion (x, y) in the coordinates u = x + shear·y, v = y,
/// observing u. The target set {u = a} is the line x + shear·y = a. The
/// constant drift does not affect short-time distances.
pub fn flat_plane(shear: f64) -> ModelSpec {
    let fields = PolynomialFields {
        drift: vec![Polynomial::constant(2, 0.7), Polynomial::constant(2, -0.3)],
        drift_eps: vec![],
        diffusion: vec![
            vec![Polynomial::constant(2, 1.0), Polynomial::constant(2, shear)],
            vec![Polynomial::zero(), Polynomial::constant(2, 1.0)],
        ],
    };
    ModelSpec::builder(Arc::new(fields)).dim_proj(1).build().unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
