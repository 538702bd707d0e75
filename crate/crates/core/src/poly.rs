//! Polynomial vector fields: the serializable model description accepted by
//! the CLI. Every component of σ₀, ∂_ε b(0,·) and σ is a multivariate
//! polynomial of total degree at most 4, so all derivatives are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, VectorFields};

pub const MAX_TOTAL_DEGREE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// Sum of monomials. Serialized as the bare list of terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

fn ipow(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(e as i32),
    }
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(vec![0; dim], c)
    }

    pub fn monomial(exponents: Vec<u32>, coeff: f64) -> Self {
        Self {
            terms: vec![Monomial { exponents, coeff }],
        }
    }

    pub fn with_term(mut self, exponents: Vec<u32>, coeff: f64) -> Self {
        self.terms.push(Monomial { exponents, coeff });
        self
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exponents.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    fn check(&self, dim: usize, what: &str) -> Result<()> {
        for t in &self.terms {
            if t.exponents.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "{what}: monomial has {} exponents, state dimension is {dim}",
                    t.exponents.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidModel(format!("{what}: non-finite coefficient")));
            }
        }
        if self.degree() > MAX_TOTAL_DEGREE {
            return Err(Error::InvalidModel(format!(
                "{what}: total degree {} exceeds {MAX_TOTAL_DEGREE}",
                self.degree()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.exponents
                        .iter()
                        .zip(x)
                        .map(|(&e, &xi)| ipow(xi, e))
                        .product::<f64>()
            })
            .sum()
    }

    /// Adds the gradient into `out` (length d).
    pub fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        for t in &self.terms {
            for k in 0..x.len() {
                let ek = t.exponents[k];
                if ek == 0 {
                    continue;
                }
                let mut v = t.coeff * ek as f64 * ipow(x[k], ek - 1);
                for (j, (&e, &xj)) in t.exponents.iter().zip(x).enumerate() {
                    if j != k {
                        v *= ipow(xj, e);
                    }
                }
                out[k] += v;
            }
        }
    }

    /// Adds the Hessian into `out` (d×d row-major).
    pub fn add_hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for t in &self.terms {
            for k in 0..d {
                for l in 0..d {
                    let (ek, el) = (t.exponents[k], t.exponents[l]);
                    let mut v = t.coeff;
                    if k == l {
                        if ek < 2 {
                            continue;
                        }
                        v *= (ek * (ek - 1)) as f64 * ipow(x[k], ek - 2);
                    } else {
                        if ek == 0 || el == 0 {
                            continue;
                        }
                        v *= (ek * el) as f64 * ipow(x[k], ek - 1) * ipow(x[l], el - 1);
                    }
                    for (j, (&e, &xj)) in t.exponents.iter().zip(x).enumerate() {
                        if j != k && j != l {
                            v *= ipow(xj, e);
                        }
                    }
                    out[k * d + l] += v;
                }
            }
        }
    }
}

/// Polynomial coefficient fields. `diffusion[i][j]` is component `i` of the
/// diffusion field σ_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialFields {
    pub drift: Vec<Polynomial>,
    #[serde(default)]
    pub drift_eps: Vec<Polynomial>,
    pub diffusion: Vec<Vec<Polynomial>>,
}

impl PolynomialFields {
    pub fn validate(&self) -> Result<()> {
        let d = self.drift.len();
        if d == 0 {
            return Err(Error::InvalidModel("drift must have at least one component".into()));
        }
        if !self.drift_eps.is_empty() && self.drift_eps.len() != d {
            return Err(Error::InvalidModel(format!(
                "drift_eps has {} components, expected {d}",
                self.drift_eps.len()
            )));
        }
        if self.diffusion.len() != d {
            return Err(Error::InvalidModel(format!(
                "diffusion has {} rows, expected {d}",
                self.diffusion.len()
            )));
        }
        let m = self.diffusion[0].len();
        if m == 0 || self.diffusion.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidModel("diffusion rows must share a nonzero column count".into()));
        }
        for (i, p) in self.drift.iter().enumerate() {
            p.check(d, &format!("drift[{i}]"))?;
        }
        for (i, p) in self.drift_eps.iter().enumerate() {
            p.check(d, &format!("drift_eps[{i}]"))?;
        }
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                p.check(d, &format!("diffusion[{i}][{j}]"))?;
            }
        }
        Ok(())
    }
}

impl VectorFields for PolynomialFields {
    fn dim_state(&self) -> usize {
        self.drift.len()
    }

    fn dim_noise(&self) -> usize {
        self.diffusion.first().map_or(0, Vec::len)
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.drift) {
            *o = p.eval(x);
        }
    }

    fn drift_eps(&self, x: &[f64], out: &mut [f64]) {
        if self.drift_eps.is_empty() {
            out.fill(0.0);
            return;
        }
        for (o, p) in out.iter_mut().zip(&self.drift_eps) {
            *o = p.eval(x);
        }
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim_noise();
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                out[i * m + j] = p.eval(x);
            }
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = x.len();
        out.fill(0.0);
        for (i, p) in self.drift.iter().enumerate() {
            p.add_gradient(x, &mut out[i * d..(i + 1) * d]);
        }
        true
    }

    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = x.len();
        let m = self.dim_noise();
        out.fill(0.0);
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                let o = (i * m + j) * d;
                p.add_gradient(x, &mut out[o..o + d]);
            }
        }
        true
    }

    fn drift_hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = x.len();
        out.fill(0.0);
        for (i, p) in self.drift.iter().enumerate() {
            p.add_hessian(x, &mut out[i * d * d..(i + 1) * d * d]);
        }
        true
    }

    fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = x.len();
        let m = self.dim_noise();
        out.fill(0.0);
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                let o = (i * m + j) * d * d;
                p.add_hessian(x, &mut out[o..o + d * d]);
            }
        }
        true
    }
}

/// Complete serializable model: polynomial fields plus the remaining
/// `ModelSpec` data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialModel {
    #[serde(flatten)]
    pub fields: PolynomialFields,
    pub dim_proj: usize,
    #[serde(default)]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub x0_hat: Option<Vec<f64>>,
}

impl PolynomialModel {
    pub fn into_spec(self) -> Result<ModelSpec> {
        self.fields.validate()?;
        let d = self.fields.dim_state();
        let m = self.fields.dim_noise();
        let correlation = match self.correlation {
            None => None,
            Some(rows) => {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::InvalidCorrelation(format!("correlation must be {m}x{m}")));
                }
                Some(nalgebra::DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            }
        };
        ModelSpec::builder(std::sync::Arc::new(self.fields))
            .dim_proj(self.dim_proj)
            .correlation_opt(correlation)
            .x0(self.x0.unwrap_or_else(|| vec![0.0; d]))
            .x0_hat(self.x0_hat.unwrap_or_else(|| vec![0.0; d]))
            .build()
    }
}
