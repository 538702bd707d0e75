//! Diffusion model specifications and the control Hamiltonian
//! H(x, p) = ⟨p, σ₀(x)⟩ + ½⟨p, σΩσᵀ(x) p⟩.
//!
//! Coefficient fields are supplied through [`VectorFields`]. Boundedness of
//! the coefficients is not checked; the catalog models have unbounded
//! coefficients and rely on localization.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient fields of the small-noise family
/// dX = b(ε, X) dt + ε σ(X) dW in Itô form.
///
/// Layout conventions (all row-major, `d` = state dim, `m` = noise dim):
/// - `diffusion`: `out[i*m + j]` is component `i` of σ_j.
/// - `drift_jacobian`: `out[i*d + k]` = ∂_k σ₀ⁱ.
/// - `diffusion_jacobian`: `out[(i*m + j)*d + k]` = ∂_k σ_jⁱ.
/// - `drift_hessian`: `out[(i*d + k)*d + l]` = ∂_k ∂_l σ₀ⁱ.
/// - `diffusion_hessian`: `out[((i*m + j)*d + k)*d + l]` = ∂_k ∂_l σ_jⁱ.
///
/// Derivative hooks return `false` when not implemented; central finite
/// differences are used instead.
pub trait VectorFields: Send + Sync {
    fn dim_state(&self) -> usize;
    fn dim_noise(&self) -> usize;

    /// σ₀ = b(0, ·).
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// ∂_ε b(0, ·).
    fn drift_eps(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]);

    fn drift_jacobian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn diffusion_jacobian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn drift_hessian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    fn diffusion_hessian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Eigenvalue floor for accepting a correlation matrix as PSD.
pub const PSD_TOLERANCE: f64 = 1e-12;
/// Relative step of the central-difference fallback.
pub const FD_STEP: f64 = 1e-6;
/// Relative tolerance for analytic-vs-numeric Jacobian validation.
pub const JACOBIAN_CHECK_TOL: f64 = 1e-5;

/// Immutable model description. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct ModelSpec {
    fields: Arc<dyn VectorFields>,
    dim_state: usize,
    dim_noise: usize,
    dim_proj: usize,
    correlation: DMatrix<f64>,
    corr_factor: DMatrix<f64>,
    x0: Vec<f64>,
    x0_hat: Vec<f64>,
    finite_differences: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("dim_proj", &self.dim_proj)
            .field("correlation", &self.correlation)
            .field("x0", &self.x0)
            .field("x0_hat", &self.x0_hat)
            .field("finite_differences", &self.finite_differences)
            .finish()
    }
}

pub struct ModelSpecBuilder {
    fields: Arc<dyn VectorFields>,
    dim_proj: usize,
    correlation: Option<DMatrix<f64>>,
    x0: Option<Vec<f64>>,
    x0_hat: Option<Vec<f64>>,
    finite_differences: bool,
    check_jacobians: bool,
}

impl ModelSpecBuilder {
    pub fn dim_proj(mut self, l: usize) -> Self {
        self.dim_proj = l;
        self
    }

    pub fn correlation(mut self, omega: DMatrix<f64>) -> Self {
        self.correlation = Some(omega);
        self
    }

    pub fn correlation_opt(mut self, omega: Option<DMatrix<f64>>) -> Self {
        self.correlation = omega;
        self
    }

    pub fn x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn x0_hat(mut self, x0_hat: Vec<f64>) -> Self {
        self.x0_hat = Some(x0_hat);
        self
    }

    /// Ignore analytic derivative hooks and always difference numerically.
    pub fn finite_differences(mut self, on: bool) -> Self {
        self.finite_differences = on;
        self
    }

    pub fn skip_jacobian_check(mut self) -> Self {
        self.check_jacobians = false;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let d = self.fields.dim_state();
        let m = self.fields.dim_noise();
        if d == 0 || m == 0 {
            return Err(Error::InvalidModel(format!(
                "need d >= 1 and m >= 1 (got d = {d}, m = {m})"
            )));
        }
        if self.dim_proj == 0 || self.dim_proj > d {
            return Err(Error::InvalidModel(format!(
                "projection dimension {} outside 1..={d}",
                self.dim_proj
            )));
        }
        let x0 = self.x0.unwrap_or_else(|| vec![0.0; d]);
        let x0_hat = self.x0_hat.unwrap_or_else(|| vec![0.0; d]);
        if x0.len() != d || x0_hat.len() != d {
            return Err(Error::Dimension(format!(
                "start point has length {} / {}, expected {d}",
                x0.len(),
                x0_hat.len()
            )));
        }
        let correlation = self.correlation.unwrap_or_else(|| DMatrix::identity(m, m));
        let corr_factor = correlation_factor(&correlation)?;
        let spec = ModelSpec {
            fields: self.fields,
            dim_state: d,
            dim_noise: m,
            dim_proj: self.dim_proj,
            correlation,
            corr_factor,
            x0,
            x0_hat,
            finite_differences: self.finite_differences,
        };
        if self.check_jacobians && !spec.finite_differences {
            spec.validate_jacobians()?;
        }
        Ok(spec)
    }
}

/// Validates Ω (symmetric, unit diagonal, PSD) and returns a lower-triangular
/// factor L with L Lᵀ = Ω. Columns whose Schur-complement pivot vanishes are
/// completed with zeros, which keeps the factorization exact for singular Ω.
pub fn correlation_factor(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = omega.nrows();
    if omega.ncols() != m {
        return Err(Error::InvalidCorrelation("matrix is not square".into()));
    }
    for i in 0..m {
        if (omega[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCorrelation(format!(
                "diagonal entry {i} is {}, expected 1",
                omega[(i, i)]
            )));
        }
        for j in 0..i {
            if (omega[(i, j)] - omega[(j, i)]).abs() > 1e-12 {
                return Err(Error::InvalidCorrelation("matrix is not symmetric".into()));
            }
        }
    }
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCorrelation("non-finite entry".into()));
    }
    let min_eig = omega
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOLERANCE {
        return Err(Error::InvalidCorrelation(format!(
            "eigenvalue {min_eig:e} below -{PSD_TOLERANCE:e}"
        )));
    }

    let mut l = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let pivot = omega[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if pivot <= 1e-14 {
            continue;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..m {
            let s = omega[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Wraps fields with σ₀ ≡ 0 and ∂_ε b ≡ 0.
struct Driftless(Arc<dyn VectorFields>);

impl VectorFields for Driftless {
    fn dim_state(&self) -> usize {
        self.0.dim_state()
    }
    fn dim_noise(&self) -> usize {
        self.0.dim_noise()
    }
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        self.0.diffusion(x, out)
    }
    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.0.diffusion_jacobian(x, out)
    }
    fn drift_hessian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(0.0);
        true
    }
    fn diffusion_hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.0.diffusion_hessian(x, out)
    }
}

impl ModelSpec {
    pub fn builder(fields: Arc<dyn VectorFields>) -> ModelSpecBuilder {
        ModelSpecBuilder {
            fields,
            dim_proj: 1,
            correlation: None,
            x0: None,
            x0_hat: None,
            finite_differences: false,
            check_jacobians: true,
        }
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    pub fn dim_proj(&self) -> usize {
        self.dim_proj
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// Lower-triangular L with L Lᵀ = Ω.
    pub fn correlation_factor(&self) -> &DMatrix<f64> {
        &self.corr_factor
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x0_hat(&self) -> &[f64] {
        &self.x0_hat
    }

    pub fn fields(&self) -> &Arc<dyn VectorFields> {
        &self.fields
    }

    pub fn uses_finite_differences(&self) -> bool {
        self.finite_differences
    }

    /// Same model with all derivatives taken by finite differences.
    pub fn with_finite_differences(&self) -> ModelSpec {
        ModelSpec {
            finite_differences: true,
            ..self.clone()
        }
    }

    /// Same model started elsewhere.
    pub fn with_start(&self, x0: Vec<f64>, x0_hat: Vec<f64>) -> Result<ModelSpec> {
        if x0.len() != self.dim_state || x0_hat.len() != self.dim_state {
            return Err(Error::Dimension("start point length".into()));
        }
        Ok(ModelSpec {
            x0,
            x0_hat,
            ..self.clone()
        })
    }

    /// The model with σ₀ and ∂_ε b removed (short-time reduction).
    pub fn driftless(&self) -> ModelSpec {
        ModelSpec {
            fields: Arc::new(Driftless(self.fields.clone())),
            ..self.clone()
        }
    }

    pub(crate) fn check_point(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.dim_state {
            return Err(Error::Dimension(format!(
                "{what} has length {}, model dimension is {}",
                x.len(),
                self.dim_state
            )));
        }
        Ok(())
    }

    pub fn drift_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.fields.drift(x, &mut out);
        out
    }

    pub fn drift_eps_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_state];
        self.fields.drift_eps(x, &mut out);
        out
    }

    /// σ(x) as a d×m matrix.
    pub fn diffusion_at(&self, x: &[f64]) -> DMatrix<f64> {
        let (d, m) = (self.dim_state, self.dim_noise);
        let mut buf = vec![0.0; d * m];
        self.fields.diffusion(x, &mut buf);
        DMatrix::from_row_slice(d, m, &buf)
    }

    pub(crate) fn eval_drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        if self.finite_differences || !self.fields.drift_jacobian(x, out) {
            let d = self.dim_state;
            central_difference(x, FD_STEP, d, |y, o| self.fields.drift(y, o), out);
        }
    }

    pub(crate) fn eval_diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        if self.finite_differences || !self.fields.diffusion_jacobian(x, out) {
            let n = self.dim_state * self.dim_noise;
            central_difference(x, FD_STEP, n, |y, o| self.fields.diffusion(y, o), out);
        }
    }

    fn analytic_drift_jacobian(&self) -> bool {
        !self.finite_differences && {
            let mut probe = vec![0.0; self.dim_state * self.dim_state];
            self.fields.drift_jacobian(&self.x0, &mut probe)
        }
    }

    fn analytic_diffusion_jacobian(&self) -> bool {
        !self.finite_differences && {
            let mut probe = vec![0.0; self.dim_state * self.dim_state * self.dim_noise];
            self.fields.diffusion_jacobian(&self.x0, &mut probe)
        }
    }

    pub(crate) fn eval_drift_hessian(&self, x: &[f64], out: &mut [f64]) {
        if self.finite_differences || !self.fields.drift_hessian(x, out) {
            let d = self.dim_state;
            // Differencing a differenced Jacobian needs a coarser outer step.
            let step = if self.analytic_drift_jacobian() { FD_STEP } else { 1e-4 };
            central_difference(x, step, d * d, |y, o| self.eval_drift_jacobian(y, o), out);
        }
    }

    pub(crate) fn eval_diffusion_hessian(&self, x: &[f64], out: &mut [f64]) {
        if self.finite_differences || !self.fields.diffusion_hessian(x, out) {
            let n = self.dim_state * self.dim_noise * self.dim_state;
            let step = if self.analytic_diffusion_jacobian() { FD_STEP } else { 1e-4 };
            central_difference(x, step, n, |y, o| self.eval_diffusion_jacobian(y, o), out);
        }
    }

    fn probe_points(&self) -> Vec<Vec<f64>> {
        let d = self.dim_state;
        let scale = self.x0.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let mut pts = vec![self.x0.clone()];
        for (amp, phase) in [(0.5, 0.0), (-0.3, 1.0)] {
            pts.push(
                (0..d)
                    .map(|k| {
                        let sign = if (k as f64 + phase) as usize % 2 == 0 { 1.0 } else { -1.0 };
                        self.x0[k] + amp * scale * sign * (1.0 + 0.25 * k as f64)
                    })
                    .collect(),
            );
        }
        pts
    }

    /// Compares every analytic derivative hook against central differences
    /// on a few probe points.
    fn validate_jacobians(&self) -> Result<()> {
        let (d, m) = (self.dim_state, self.dim_noise);
        let check = |name: &str, analytic: &[f64], numeric: &[f64]| -> Result<()> {
            let scale = analytic.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
                if !a.is_finite() || (a - n).abs() > JACOBIAN_CHECK_TOL * scale {
                    return Err(Error::InvalidModel(format!(
                        "analytic {name} entry {i} = {a} disagrees with finite difference {n}"
                    )));
                }
            }
            Ok(())
        };
        for x in self.probe_points() {
            let mut a = vec![0.0; d * d];
            let mut n = vec![0.0; d * d];
            if self.fields.drift_jacobian(&x, &mut a) {
                central_difference(&x, FD_STEP, d, |y, o| self.fields.drift(y, o), &mut n);
                check("drift Jacobian", &a, &n)?;
            }
            let mut a = vec![0.0; d * m * d];
            let mut n = vec![0.0; d * m * d];
            if self.fields.diffusion_jacobian(&x, &mut a) {
                central_difference(&x, FD_STEP, d * m, |y, o| self.fields.diffusion(y, o), &mut n);
                check("diffusion Jacobian", &a, &n)?;
            }
            let mut a = vec![0.0; d * d * d];
            let mut n = vec![0.0; d * d * d];
            if self.fields.drift_hessian(&x, &mut a) {
                central_difference(&x, FD_STEP, d * d, |y, o| self.eval_drift_jacobian(y, o), &mut n);
                check("drift Hessian", &a, &n)?;
            }
            let mut a = vec![0.0; d * m * d * d];
            let mut n = vec![0.0; d * m * d * d];
            if self.fields.diffusion_hessian(&x, &mut a) {
                central_difference(&x, FD_STEP, d * m * d, |y, o| self.eval_diffusion_jacobian(y, o), &mut n);
                check("diffusion Hessian", &a, &n)?;
            }
        }
        Ok(())
    }
}

/// out[o*d + k] = ∂_k f_o(x), central differences with step h·max(1, |x_k|).
fn central_difference<F>(x: &[f64], h_rel: f64, n_out: usize, mut f: F, out: &mut [f64])
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = x.len();
    let mut y = x.to_vec();
    let mut fp = vec![0.0; n_out];
    let mut fm = vec![0.0; n_out];
    for k in 0..d {
        let h = h_rel * x[k].abs().max(1.0);
        y[k] = x[k] + h;
        f(&y, &mut fp);
        y[k] = x[k] - h;
        f(&y, &mut fm);
        y[k] = x[k];
        for o in 0..n_out {
            out[o * d + k] = (fp[o] - fm[o]) / (2.0 * h);
        }
    }
}

/// A cotangent point (x, p) at time t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

/// Scratch-buffered evaluator for H and its derivatives at one model.
pub(crate) struct HamiltonianEval<'m> {
    model: &'m ModelSpec,
    s0: Vec<f64>,
    ds0: Vec<f64>,
    dds0: Vec<f64>,
    sig: Vec<f64>,
    dsig: Vec<f64>,
    ddsig: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    dv: Vec<f64>,
    dw: Vec<f64>,
    hpx: Vec<f64>,
    hpp: Vec<f64>,
    hxx: Vec<f64>,
}

impl<'m> HamiltonianEval<'m> {
    pub fn new(model: &'m ModelSpec) -> Self {
        let (d, m) = (model.dim_state, model.dim_noise);
        Self {
            model,
            s0: vec![0.0; d],
            ds0: vec![0.0; d * d],
            dds0: vec![0.0; d * d * d],
            sig: vec![0.0; d * m],
            dsig: vec![0.0; d * m * d],
            ddsig: vec![0.0; d * m * d * d],
            v: vec![0.0; m],
            w: vec![0.0; m],
            dv: vec![0.0; d * m],
            dw: vec![0.0; d * m],
            hpx: vec![0.0; d * d],
            hpp: vec![0.0; d * d],
            hxx: vec![0.0; d * d],
        }
    }

    /// Fills s0, sig, v = σᵀp and w = Ωv.
    fn base(&mut self, x: &[f64], p: &[f64]) {
        let (d, m) = (self.model.dim_state, self.model.dim_noise);
        self.model.fields.drift(x, &mut self.s0);
        self.model.fields.diffusion(x, &mut self.sig);
        for j in 0..m {
            self.v[j] = (0..d).map(|i| self.sig[i * m + j] * p[i]).sum();
        }
        let omega = &self.model.correlation;
        for j in 0..m {
            self.w[j] = (0..m).map(|k| omega[(j, k)] * self.v[k]).sum();
        }
    }

    /// Fills ds0, dsig, dv[k*m + j] = Σ_i p_i ∂_k σ_jⁱ and dw = Ω dv.
    fn first_derivatives(&mut self, x: &[f64], p: &[f64]) {
        let (d, m) = (self.model.dim_state, self.model.dim_noise);
        self.model.eval_drift_jacobian(x, &mut self.ds0);
        self.model.eval_diffusion_jacobian(x, &mut self.dsig);
        for k in 0..d {
            for j in 0..m {
                self.dv[k * m + j] = (0..d).map(|i| p[i] * self.dsig[(i * m + j) * d + k]).sum();
            }
        }
        let omega = &self.model.correlation;
        for k in 0..d {
            for j in 0..m {
                self.dw[k * m + j] = (0..m).map(|jj| omega[(j, jj)] * self.dv[k * m + jj]).sum();
            }
        }
    }

    pub fn value(&mut self, x: &[f64], p: &[f64]) -> f64 {
        self.base(x, p);
        let drift: f64 = p.iter().zip(&self.s0).map(|(a, b)| a * b).sum();
        let quad: f64 = self.v.iter().zip(&self.w).map(|(a, b)| a * b).sum();
        drift + 0.5 * quad
    }

    /// The control ḣ = Lᵀσᵀp for the decorrelated fields σL.
    pub fn control(&mut self, x: &[f64], p: &[f64], out: &mut [f64]) {
        self.base(x, p);
        let m = self.model.dim_noise;
        let l = &self.model.corr_factor;
        for i in 0..m {
            out[i] = (i..m).map(|j| l[(j, i)] * self.v[j]).sum();
        }
    }

    /// (∂_p H, −∂_x H).
    pub fn vector_field(&mut self, x: &[f64], p: &[f64], dx: &mut [f64], dp: &mut [f64]) {
        let (d, m) = (self.model.dim_state, self.model.dim_noise);
        self.base(x, p);
        self.first_derivatives(x, p);
        for i in 0..d {
            dx[i] = self.s0[i] + (0..m).map(|j| self.sig[i * m + j] * self.w[j]).sum::<f64>();
        }
        for k in 0..d {
            let drift: f64 = (0..d).map(|i| p[i] * self.ds0[i * d + k]).sum();
            let quad: f64 = (0..m).map(|j| self.dv[k * m + j] * self.w[j]).sum();
            dp[k] = -(drift + quad);
        }
    }

    /// Vector field plus its Jacobian `lin` (2d×2d row-major, state order (x, p)).
    pub fn vector_field_and_linearization(
        &mut self,
        x: &[f64],
        p: &[f64],
        dx: &mut [f64],
        dp: &mut [f64],
        lin: &mut [f64],
    ) {
        let (d, m) = (self.model.dim_state, self.model.dim_noise);
        self.vector_field(x, p, dx, dp);
        self.model.eval_drift_hessian(x, &mut self.dds0);
        self.model.eval_diffusion_hessian(x, &mut self.ddsig);
        let omega = &self.model.correlation;

        // H_pp = σΩσᵀ
        for i in 0..d {
            for ii in 0..d {
                let mut s = 0.0;
                for j in 0..m {
                    for jj in 0..m {
                        s += self.sig[i * m + j] * omega[(j, jj)] * self.sig[ii * m + jj];
                    }
                }
                self.hpp[i * d + ii] = s;
            }
        }
        // H_px[i][k] = ∂_k σ₀ⁱ + Σ_j ∂_k σ_jⁱ w_j + Σ_j σ_jⁱ (Ω dv_k)_j
        for i in 0..d {
            for k in 0..d {
                let mut s = self.ds0[i * d + k];
                for j in 0..m {
                    s += self.dsig[(i * m + j) * d + k] * self.w[j] + self.sig[i * m + j] * self.dw[k * m + j];
                }
                self.hpx[i * d + k] = s;
            }
        }
        // H_xx[k][l] = Σ_i p_i ∂_kl σ₀ⁱ + Σ_ij p_i ∂_kl σ_jⁱ w_j + Σ_j dv_kj dw_lj
        for k in 0..d {
            for l in 0..d {
                let mut s = 0.0;
                for i in 0..d {
                    s += p[i] * self.dds0[(i * d + k) * d + l];
                    for j in 0..m {
                        s += p[i] * self.ddsig[((i * m + j) * d + k) * d + l] * self.w[j];
                    }
                }
                for j in 0..m {
                    s += self.dv[k * m + j] * self.dw[l * m + j];
                }
                self.hxx[k * d + l] = s;
            }
        }
        let n = 2 * d;
        for i in 0..d {
            for k in 0..d {
                lin[i * n + k] = self.hpx[i * d + k];
                lin[i * n + d + k] = self.hpp[i * d + k];
                lin[(d + i) * n + k] = -self.hxx[i * d + k];
                lin[(d + i) * n + d + k] = -self.hpx[k * d + i];
            }
        }
    }

    /// Coefficients of the first-variation ODE along (x, p):
    /// `a` = ∂σ₀(x) + Σ_j ∂σ_j(x) w_j (d×d) and `f` = ∂_ε b(0, x).
    pub fn first_variation_coefficients(&mut self, x: &[f64], p: &[f64], a: &mut [f64], f: &mut [f64]) {
        let (d, m) = (self.model.dim_state, self.model.dim_noise);
        self.base(x, p);
        self.first_derivatives(x, p);
        for i in 0..d {
            for k in 0..d {
                a[i * d + k] =
                    self.ds0[i * d + k] + (0..m).map(|j| self.dsig[(i * m + j) * d + k] * self.w[j]).sum::<f64>();
            }
        }
        self.model.fields.drift_eps(x, f);
    }
}

/// H(x, p) = ⟨p, σ₀(x)⟩ + ½⟨p, σΩσᵀ(x) p⟩.
pub fn hamiltonian(model: &ModelSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    model.check_point(x, "x")?;
    model.check_point(p, "p")?;
    Ok(HamiltonianEval::new(model).value(x, p))
}

/// (∂_p H, −∂_x H) at the given state.
pub fn hamiltonian_vector_field(model: &ModelSpec, state: &HamiltonianState) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_point(&state.x, "x")?;
    model.check_point(&state.p, "p")?;
    let d = model.dim_state();
    let (mut dx, mut dp) = (vec![0.0; d], vec![0.0; d]);
    HamiltonianEval::new(model).vector_field(&state.x, &state.p, &mut dx, &mut dp);
    Ok((dx, dp))
}

/// σ̃(x) = σ(x) L, realizing the correlated model on independent noise.
pub fn decorrelated_diffusion(model: &ModelSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    model.check_point(x, "x")?;
    Ok(model.diffusion_at(x) * model.correlation_factor())
}
