//! Hamiltonian flow (ẋ, ṗ) = (∂_p H, −∂_x H), forward, backward and with
//! the variational equations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{HamiltonianEval, HamiltonianState, ModelSpec};
pub use crate::ode::IntegratorOptions;
use crate::ode::integrate;

#[derive(Debug, Clone)]
pub struct FlowResult {
    /// States on the reporting grid, in integration order (a backward flow
    /// starts at t = T and ends at t = 0).
    pub trajectory: Vec<HamiltonianState>,
    /// ∂(final state)/∂(initial state), 2d×2d, state order (x, p).
    pub variational: Option<DMatrix<f64>>,
    /// max over accepted steps of |H(x_t, p_t) − H(start)|.
    pub hamiltonian_drift: f64,
    /// H at the starting state.
    pub hamiltonian: f64,
}

impl FlowResult {
    pub fn first(&self) -> &HamiltonianState {
        &self.trajectory[0]
    }

    pub fn last(&self) -> &HamiltonianState {
        self.trajectory.last().expect("nonempty trajectory")
    }

    /// State at t = 0 regardless of direction.
    pub fn initial(&self) -> &HamiltonianState {
        if self.first().t <= self.last().t {
            self.first()
        } else {
            self.last()
        }
    }

    /// State at t = T regardless of direction.
    pub fn terminal(&self) -> &HamiltonianState {
        if self.first().t <= self.last().t {
            self.last()
        } else {
            self.first()
        }
    }

    /// Trajectory sorted by increasing time.
    pub fn forward_trajectory(&self) -> Vec<HamiltonianState> {
        let mut v = self.trajectory.clone();
        if v.len() > 1 && v[0].t > v[v.len() - 1].t {
            v.reverse();
        }
        v
    }
}

fn check_inputs(model: &ModelSpec, x: &[f64], p: &[f64], t: f64) -> Result<()> {
    if t == 0.0 {
        return Err(Error::Domain("maturity must be positive and finite (got 0)".into()));
    }
    check_span(model, x, p, t)
}

fn check_span(model: &ModelSpec, x: &[f64], p: &[f64], t: f64) -> Result<()> {
    model.check_point(x, "x")?;
    model.check_point(p, "p")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("maturity must be positive and finite (got {t})")));
    }
    Ok(())
}

fn run(
    model: &ModelSpec,
    x: &[f64],
    p: &[f64],
    t_start: f64,
    t_end: f64,
    opts: &IntegratorOptions,
    variation: bool,
) -> Result<FlowResult> {
    opts.validate()?;
    let d = model.dim_state();
    let n = 2 * d;
    let dim = if variation { n + n * n } else { n };
    let mut y0 = vec![0.0; dim];
    y0[..d].copy_from_slice(x);
    y0[d..n].copy_from_slice(p);
    if variation {
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
    }

    let mut rhs_eval = HamiltonianEval::new(model);
    let mut h_eval = HamiltonianEval::new(model);
    let h0 = h_eval.value(x, p);
    let mut drift = 0.0_f64;
    let mut lin = vec![0.0; n * n];
    let mut trajectory = Vec::with_capacity(opts.grid_points.max(2));

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (xs, rest) = y.split_at(d);
        let ps = &rest[..d];
        let (dx, rest_d) = dy.split_at_mut(d);
        let (dp, dj) = rest_d.split_at_mut(d);
        if variation {
            rhs_eval.vector_field_and_linearization(xs, ps, dx, dp, &mut lin);
            let j = &y[n..];
            for r in 0..n {
                for c in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += lin[r * n + k] * j[k * n + c];
                    }
                    dj[r * n + c] = s;
                }
            }
        } else {
            rhs_eval.vector_field(xs, ps, dx, dp);
        }
    };

    let yt = integrate(
        rhs,
        &y0,
        t_start,
        t_end,
        opts,
        |t, y| {
            trajectory.push(HamiltonianState {
                x: y[..d].to_vec(),
                p: y[d..n].to_vec(),
                t,
            })
        },
        |_, y| {
            let h = h_eval.value(&y[..d], &y[d..n]);
            drift = drift.max((h - h0).abs());
        },
    )?;

    let variational = variation.then(|| DMatrix::from_row_slice(n, n, &yt[n..]));
    Ok(FlowResult {
        trajectory,
        variational,
        hamiltonian_drift: drift,
        hamiltonian: h0,
    })
}

/// Solves the Hamiltonian ODEs on [0, T] from (x₀, p₀).
pub fn flow_forward(model: &ModelSpec, x0: &[f64], p0: &[f64], t: f64, opts: &IntegratorOptions) -> Result<FlowResult> {
    check_inputs(model, x0, p0, t)?;
    run(model, x0, p0, 0.0, t, opts, false)
}

/// Solves the Hamiltonian ODEs from terminal data at T back to 0.
pub fn flow_backward(model: &ModelSpec, xt: &[f64], pt: &[f64], t: f64, opts: &IntegratorOptions) -> Result<FlowResult> {
    check_inputs(model, xt, pt, t)?;
    run(model, xt, pt, t, 0.0, opts, false)
}

/// Forward flow together with J(T) = ∂(x_T, p_T)/∂(x₀, p₀). T = 0 gives
/// the identity.
pub fn flow_with_variation(
    model: &ModelSpec,
    x0: &[f64],
    p0: &[f64],
    t: f64,
    opts: &IntegratorOptions,
) -> Result<FlowResult> {
    check_span(model, x0, p0, t)?;
    run(model, x0, p0, 0.0, t, opts, true)
}

/// Backward flow together with ∂(x₀, p₀)/∂(x_T, p_T).
pub fn flow_backward_with_variation(
    model: &ModelSpec,
    xt: &[f64],
    pt: &[f64],
    t: f64,
    opts: &IntegratorOptions,
) -> Result<FlowResult> {
    check_inputs(model, xt, pt, t)?;
    run(model, xt, pt, t, 0.0, opts, true)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::poly::{Polynomial, PolynomialFields};

    fn black_scholes(sigma: f64) -> ModelSpec {
        let fields = PolynomialFields {
            drift: vec![Polynomial::zero()],
            drift_eps: vec![],
            diffusion: vec![vec![Polynomial::constant(1, sigma)]],
        };
        ModelSpec::builder(Arc::new(fields)).build().unwrap()
    }

    fn stein_stein(b: f64, c: f64) -> ModelSpec {
        let fields = PolynomialFields {
            drift: vec![
                Polynomial::monomial(vec![0, 2], -0.5),
                Polynomial::monomial(vec![0, 1], b),
            ],
            drift_eps: vec![],
            diffusion: vec![
                vec![Polynomial::monomial(vec![0, 1], 1.0), Polynomial::zero()],
                vec![Polynomial::zero(), Polynomial::constant(2, c)],
            ],
        };
        ModelSpec::builder(Arc::new(fields)).build().unwrap()
    }

    #[test]
    fn black_scholes_linear_flow() {
        let m = black_scholes(1.0);
        let opts = IntegratorOptions::default();
        let f = flow_forward(&m, &[0.0], &[1.0], 1.0, &opts).unwrap();
        assert_eq!(f.trajectory.len(), 512);
        let end = f.terminal();
        assert!((end.x[0] - 1.0).abs() < 1e-12 && (end.p[0] - 1.0).abs() < 1e-12);
        let b = flow_backward(&m, &[1.0], &[1.0], 1.0, &opts).unwrap();
        assert!(b.initial().x[0].abs() < 1e-12);
        assert_eq!(b.initial().t, 0.0);
        let v = flow_with_variation(&m, &[0.0], &[1.0], 1.0, &opts).unwrap();
        let j = v.variational.unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((j - expect).amax() < 1e-12);
    }

    #[test]
    fn zero_momentum_is_stationary() {
        let m = stein_stein(0.0, 1.0);
        let f = flow_forward(&m, &[0.3, 0.0], &[0.0, 0.0], 1.0, &IntegratorOptions::default()).unwrap();
        assert!(f.trajectory.iter().all(|s| s.x == vec![0.3, 0.0] && s.p == vec![0.0, 0.0]));
    }

    #[test]
    fn stein_stein_vol_path_is_trigonometric() {
        let m = stein_stein(0.0, 1.0);
        let (p, q0) = (2.5_f64, 1.2);
        let chi = (p * (p - 1.0)).sqrt();
        let f = flow_forward(&m, &[0.0, 0.0], &[p, q0], 1.0, &IntegratorOptions::default()).unwrap();
        for s in &f.trajectory {
            assert!((s.x[1] - q0 * (chi * s.t).sin() / chi).abs() < 1e-8);
        }
        assert!(f.hamiltonian_drift < 1e-8 * (1.0 + f.hamiltonian.abs()));
    }

    #[test]
    fn non_positive_maturity_rejected() {
        let m = black_scholes(1.0);
        assert!(matches!(
            flow_forward(&m, &[0.0], &[1.0], 0.0, &IntegratorOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn variation_matches_finite_differences_and_is_symplectic() {
        let m = stein_stein(-0.5, 1.3);
        let opts = IntegratorOptions::default().endpoints_only();
        let (x0, p0) = ([0.0, 0.1], [1.8, 0.9]);
        let j = flow_with_variation(&m, &x0, &p0, 1.0, &opts).unwrap().variational.unwrap();
        assert!((j.determinant() - 1.0).abs() < 1e-6);
        let h = 1e-5;
        for col in 0..4 {
            let mut a: Vec<f64> = x0.iter().chain(p0.iter()).cloned().collect();
            let mut b = a.clone();
            a[col] += h;
            b[col] -= h;
            let fa = flow_forward(&m, &a[..2], &a[2..], 1.0, &opts).unwrap();
            let fb = flow_forward(&m, &b[..2], &b[2..], 1.0, &opts).unwrap();
            let sa: Vec<f64> = fa.last().x.iter().chain(fa.last().p.iter()).cloned().collect();
            let sb: Vec<f64> = fb.last().x.iter().chain(fb.last().p.iter()).cloned().collect();
            for row in 0..4 {
                let fd = (sa[row] - sb[row]) / (2.0 * h);
                assert!((fd - j[(row, col)]).abs() < 1e-5 * (1.0 + j[(row, col)].abs()), "({row},{col})");
            }
        }
    }
}
