//! Non-focality of a minimizer: the Jacobian of
//! (z, q) ↦ π H_{0←T}(x_T + (0, z), p_T + (q, 0)) at (z, q) = (0, 0).
//!
//! Columns are ordered z (the d − l free position directions) first, then
//! q (the l constrained momentum directions). Rows are x₀.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{stein_stein_model, SteinSteinParams};
use crate::error::{Error, Result};
use crate::flow::{flow_backward, flow_backward_with_variation, FlowResult, IntegratorOptions};
use crate::minimizer::find_minimizers;
use crate::model::ModelSpec;
use crate::shooting::{BvpProblem, BvpSolution, MultistartOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalityMethod {
    AnalyticVariational,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalityOptions {
    pub method: FocalityMethod,
    /// Threshold on |det J| / ∏ row norms.
    pub tol_focal: f64,
    /// Relative step for the finite-difference method.
    pub fd_step: f64,
    pub integrator: IntegratorOptions,
}

impl Default for FocalityOptions {
    fn default() -> Self {
        Self {
            method: FocalityMethod::AnalyticVariational,
            tol_focal: 1e-8,
            fd_step: 1e-4,
            integrator: IntegratorOptions::default().endpoints_only(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FocalityReport {
    /// Row-major d×d.
    pub jacobian: Vec<Vec<f64>>,
    pub determinant: f64,
    /// determinant / product of row norms.
    pub normalized_determinant: f64,
    pub is_nonfocal: bool,
    pub method: FocalityMethod,
}

impl FocalityReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.jacobian.len();
        DMatrix::from_fn(d, d, |r, c| self.jacobian[r][c])
    }

    fn from_matrix(j: DMatrix<f64>, method: FocalityMethod, tol: f64) -> Self {
        let det = j.determinant();
        let scale: f64 = j.row_iter().map(|r| r.norm()).product();
        let normalized = if scale > 0.0 { det / scale } else { 0.0 };
        FocalityReport {
            jacobian: j.row_iter().map(|r| r.iter().cloned().collect()).collect(),
            determinant: det,
            normalized_determinant: normalized,
            is_nonfocal: normalized.abs() > tol,
            method,
        }
    }
}

/// Largest entrywise difference of two Jacobians, each row scaled by the
/// first report's row norm.
pub fn jacobian_discrepancy(a: &FocalityReport, b: &FocalityReport) -> f64 {
    let (ma, mb) = (a.matrix(), b.matrix());
    let mut worst = 0.0_f64;
    for r in 0..ma.nrows() {
        let n = ma.row(r).norm().max(f64::MIN_POSITIVE);
        for c in 0..ma.ncols() {
            worst = worst.max((ma[(r, c)] - mb[(r, c)]).abs() / n);
        }
    }
    worst
}

pub fn focality_jacobian(model: &ModelSpec, solution: &BvpSolution, opts: &FocalityOptions) -> Result<FocalityReport> {
    focality_from_flow(model, &solution.flow, opts)
}

/// Same as [`focality_jacobian`] for any forward trajectory.
pub fn focality_from_flow(model: &ModelSpec, flow: &FlowResult, opts: &FocalityOptions) -> Result<FocalityReport> {
    let end = flow.terminal();
    let t = end.t - flow.initial().t;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("focality needs a positive horizon (got {t})")));
    }
    let d = model.dim_state();
    let l = model.dim_proj();
    // column k of J perturbs the terminal state coordinate cols[k]
    let cols: Vec<usize> = (l..d).chain(d..d + l).collect();
    let j = match opts.method {
        FocalityMethod::AnalyticVariational => {
            let back = flow_backward_with_variation(model, &end.x, &end.p, t, &opts.integrator)?;
            let m = back.variational.expect("variational flow");
            DMatrix::from_fn(d, d, |r, c| m[(r, cols[c])])
        }
        FocalityMethod::FiniteDifference => {
            let integ = IntegratorOptions {
                rtol: opts.integrator.rtol.min(1e-12),
                atol: opts.integrator.atol.min(1e-14),
                ..opts.integrator
            };
            let state: Vec<f64> = end.x.iter().chain(&end.p).cloned().collect();
            let columns: Vec<Result<Vec<f64>>> = cols
                .par_iter()
                .map(|&k| {
                    let h = opts.fd_step * state[k].abs().max(1.0);
                    let run = |sign: f64| -> Result<Vec<f64>> {
                        let mut s = state.clone();
                        s[k] += sign * h;
                        let b = flow_backward(model, &s[..d], &s[d..], t, &integ)?;
                        Ok(b.last().x.clone())
                    };
                    let (up, down) = (run(1.0)?, run(-1.0)?);
                    Ok(up.iter().zip(&down).map(|(u, v)| (u - v) / (2.0 * h)).collect())
                })
                .collect();
            let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
            DMatrix::from_fn(d, d, |r, c| columns[c][r])
        }
    };
    Ok(FocalityReport::from_matrix(j, opts.method, opts.tol_focal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVerdict {
    Nonfocal,
    /// Normalized determinant at or below the threshold; the expansion
    /// theorem does not apply there.
    FocalOrNearFocal,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub params: SteinSteinParams,
    pub minimizers: usize,
    /// Smallest |normalized determinant| over the minimizers.
    pub normalized_determinant: f64,
    pub determinant: f64,
    pub verdict: SweepVerdict,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub target: Option<f64>,
    pub multistart: MultistartOptions,
    pub focality: FocalityOptions,
}

fn sweep_cell(params: &SteinSteinParams, opts: &SweepOptions) -> Result<(usize, f64, f64, bool)> {
    let model = stein_stein_model(params)?;
    let problem = BvpProblem::new(model, vec![opts.target.unwrap_or(1.0)], params.t)?;
    let (kmin, _) = find_minimizers(&problem, &opts.multistart, 1e-6)?;
    let mut worst: Option<FocalityReport> = None;
    for m in &kmin.minimizers {
        let r = focality_from_flow(&problem.model, &m.flow, &opts.focality)?;
        if worst
            .as_ref()
            .is_none_or(|w| r.normalized_determinant.abs() < w.normalized_determinant.abs())
        {
            worst = Some(r);
        }
    }
    let w = worst.expect("nonempty minimizing set");
    Ok((kmin.minimizers.len(), w.normalized_determinant, w.determinant, w.is_nonfocal))
}

/// One row per Stein–Stein parameter cell, in input order. Cells that fail
/// are reported with verdict `error` and do not stop the sweep.
pub fn sweep_nonfocality(cells: &[SteinSteinParams], opts: &SweepOptions) -> Vec<SweepRow> {
    cells
        .par_iter()
        .map(|params| match sweep_cell(params, opts) {
            Ok((n, nd, det, ok)) => SweepRow {
                params: *params,
                minimizers: n,
                normalized_determinant: nd,
                determinant: det,
                verdict: if ok { SweepVerdict::Nonfocal } else { SweepVerdict::FocalOrNearFocal },
                message: None,
            },
            Err(e) => SweepRow {
                params: *params,
                minimizers: 0,
                normalized_determinant: f64::NAN,
                determinant: f64::NAN,
                verdict: SweepVerdict::Error,
                message: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "a",
        "b",
        "c",
        "sigma0",
        "rho",
        "T",
        "minimizers",
        "determinant",
        "normalized_determinant",
        "verdict",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let p = &r.params;
        let verdict = match r.verdict {
            SweepVerdict::Nonfocal => "nonfocal",
            SweepVerdict::FocalOrNearFocal => "focal_or_near_focal",
            SweepVerdict::Error => "error",
        };
        let f = |v: f64| format!("{v:.16e}");
        w.write_record([
            f(p.a),
            f(p.b),
            f(p.c),
            f(p.sigma0),
            f(p.rho),
            f(p.t),
            r.minimizers.to_string(),
            f(r.determinant),
            f(r.normalized_determinant),
            verdict.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}
