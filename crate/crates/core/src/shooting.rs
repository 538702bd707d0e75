//! Shooting for the mixed boundary problem x₀ given, Π_l x_T = a,
//! (p_T)_{l+1..d} = 0, by damped Newton on the initial momentum.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_forward, flow_with_variation, FlowResult, IntegratorOptions};
use crate::minimizer::{energy, reconstruct_control};
use crate::model::ModelSpec;

#[derive(Debug, Clone)]
pub struct BvpProblem {
    pub model: ModelSpec,
    pub target: Vec<f64>,
    pub maturity: f64,
    pub x0: Vec<f64>,
}

impl BvpProblem {
    /// Problem started from the model's own x₀.
    pub fn new(model: ModelSpec, target: Vec<f64>, maturity: f64) -> Result<Self> {
        let x0 = model.x0().to_vec();
        let p = Self {
            model,
            target,
            maturity,
            x0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.model.dim_proj();
        if self.target.len() != l {
            return Err(Error::Dimension(format!(
                "target has length {}, projection dimension is {l}",
                self.target.len()
            )));
        }
        self.model.check_point(&self.x0, "x0")?;
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::Domain(format!("maturity must be positive (got {})", self.maturity)));
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("target must be finite".into()));
        }
        Ok(())
    }

    pub fn with_target(&self, target: Vec<f64>) -> Self {
        Self {
            target,
            ..self.clone()
        }
    }

    /// (Π_l x_T − a, Π_{l+1..d} p_T).
    pub fn residual(&self, x_t: &[f64], p_t: &[f64]) -> Vec<f64> {
        let l = self.model.dim_proj();
        let mut r: Vec<f64> = x_t[..l].iter().zip(&self.target).map(|(x, a)| x - a).collect();
        r.extend_from_slice(&p_t[l..]);
        r
    }

    /// ∂ residual / ∂ p₀ from the variational matrix.
    fn residual_jacobian(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.model.dim_state();
        let l = self.model.dim_proj();
        DMatrix::from_fn(d, d, |r, c| {
            let row = if r < l { r } else { d + r };
            j[(row, d + c)]
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootingOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Newton Jacobians with σ_min/σ_max below this are treated as singular.
    pub singular_ratio: f64,
    pub integrator: IntegratorOptions,
    /// Run Newton at loose integrator tolerances first, then polish.
    pub coarse_start: bool,
    /// Integrator step budget per Newton trial; trials that exceed it count
    /// as failed.
    pub newton_max_steps: usize,
    /// Newton steps are shortened to at most this multiple of 1 + ‖p₀‖.
    pub max_step_ratio: f64,
    /// Give up when the residual improved by less than 1% over this many
    /// iterations (0 disables).
    pub stall_window: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 50,
            max_halvings: 20,
            singular_ratio: 1e-14,
            integrator: IntegratorOptions::default(),
            coarse_start: true,
            newton_max_steps: 5_000,
            max_step_ratio: 4.0,
            stall_window: 5,
        }
    }
}

impl ShootingOptions {
    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if !(self.tol > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("shooting tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub p0: Vec<f64>,
    pub residual_norm: f64,
    /// Forward flow on the reporting grid.
    pub flow: FlowResult,
    pub newton_iterations: usize,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton runs on asinh(residual): same roots and unit slope at zero, but
/// exponentially large residuals from hyperbolic trajectories become
/// roughly logarithmic.
fn merit(r: &[f64]) -> f64 {
    r.iter().map(|x| x.asinh().powi(2)).sum::<f64>().sqrt()
}

struct NewtonOutcome {
    p0: Vec<f64>,
    residual: f64,
    iterations: usize,
    duplicate: bool,
}

/// Roots already found by other starts of the same enumeration.
type Registry = Mutex<Vec<Vec<f64>>>;

/// Newton iterates with residual below this and within `NEAR_KNOWN` of a
/// known root are abandoned as duplicates.
const DUPLICATE_RESIDUAL: f64 = 1e-3;
const NEAR_KNOWN: f64 = 1e-4;

fn near_known(registry: Option<&Registry>, p: &[f64]) -> bool {
    registry.is_some_and(|reg| {
        let scale = NEAR_KNOWN * (1.0 + norm(p));
        reg.lock()
            .unwrap()
            .iter()
            .any(|q| norm(&q.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>()) <= scale)
    })
}

fn newton(
    problem: &BvpProblem,
    guess: &[f64],
    opts: &ShootingOptions,
    integ: &IntegratorOptions,
    tol: f64,
    iterations_used: usize,
    registry: Option<&Registry>,
) -> Result<NewtonOutcome> {
    let model = &problem.model;
    let t = problem.maturity;
    let finite = |r: Vec<f64>| -> Result<Vec<f64>> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "non-finite terminal state".into(),
            });
        }
        Ok(r)
    };
    let eval = |p: &[f64]| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let f = flow_with_variation(model, &problem.x0, p, t, integ)?;
        let end = f.last();
        let r = finite(problem.residual(&end.x, &end.p))?;
        let mut jac = problem.residual_jacobian(f.variational.as_ref().unwrap());
        for (i, ri) in r.iter().enumerate() {
            jac.row_mut(i).scale_mut(1.0 / ri.hypot(1.0));
        }
        Ok((r, jac))
    };
    // Line-search trials only need the residual.
    let eval_residual = |p: &[f64]| -> Result<Vec<f64>> {
        let f = flow_forward(model, &problem.x0, p, t, integ)?;
        let end = f.last();
        finite(problem.residual(&end.x, &end.p))
    };

    let mut p = guess.to_vec();
    let (mut r, mut jac) = eval(&p)?;
    let mut rn = norm(&r);
    let mut it = iterations_used;
    let mut history = vec![merit(&r)];
    loop {
        if rn <= tol {
            return Ok(NewtonOutcome {
                p0: p,
                residual: rn,
                iterations: it,
                duplicate: false,
            });
        }
        if rn <= DUPLICATE_RESIDUAL && near_known(registry, &p) {
            return Ok(NewtonOutcome {
                p0: p,
                residual: rn,
                iterations: it,
                duplicate: true,
            });
        }
        if it >= opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: rn,
            });
        }
        it += 1;

        let svd = jac.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin / smax < opts.singular_ratio {
            return Err(Error::SingularJacobian { residual: rn });
        }
        let squashed: Vec<f64> = r.iter().map(|v| v.asinh()).collect();
        let step = svd
            .solve(&DVector::from_column_slice(&squashed), 0.0)
            .map_err(|_| Error::SingularJacobian { residual: rn })?;
        let cap = opts.max_step_ratio * (1.0 + norm(&p));
        let mut lambda = (cap / step.norm()).min(1.0);
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            // A failed trial integration counts as no improvement.
            if let Ok(rt) = eval_residual(&trial) {
                if merit(&rt) < merit(&r) {
                    if let Ok((rt, jt)) = eval(&trial) {
                        p = trial;
                        rn = norm(&rt);
                        r = rt;
                        jac = jt;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        history.push(merit(&r));
        let w = opts.stall_window;
        let stalled = w > 0 && history.len() > w && history[history.len() - 1] > 0.99 * history[history.len() - 1 - w];
        if !accepted || stalled {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: rn,
            });
        }
    }
}

/// Damped Newton from `p0_guess`; on success re-integrates on the
/// reporting grid.
pub fn shoot(problem: &BvpProblem, p0_guess: &[f64], opts: &ShootingOptions) -> Result<BvpSolution> {
    let (p0, residual, iterations) = shoot_endpoint(problem, p0_guess, opts, None)?.expect("no registry");
    let flow = flow_forward(&problem.model, &problem.x0, &p0, problem.maturity, &opts.integrator)?;
    let end = flow.last();
    let residual_norm = norm(&problem.residual(&end.x, &end.p)).max(residual);
    Ok(BvpSolution {
        p0,
        residual_norm,
        flow,
        newton_iterations: iterations,
    })
}

/// Returns `None` if the start was abandoned as a duplicate of a root in
/// `registry`; converged roots are added to it.
/// Newton only: the converged p₀, without the reporting-grid flow.
pub fn shoot_endpoint_only(problem: &BvpProblem, p0_guess: &[f64], opts: &ShootingOptions) -> Result<Vec<f64>> {
    Ok(shoot_endpoint(problem, p0_guess, opts, None)?.expect("no registry").0)
}

fn shoot_endpoint(
    problem: &BvpProblem,
    guess: &[f64],
    opts: &ShootingOptions,
    registry: Option<&Registry>,
) -> Result<Option<(Vec<f64>, f64, usize)>> {
    problem.validate()?;
    opts.validate()?;
    problem.model.check_point(guess, "p0 guess")?;
    if guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial momentum guess must be finite".into()));
    }
    let fine = IntegratorOptions {
        max_steps: opts.integrator.max_steps.min(opts.newton_max_steps),
        ..opts.integrator.endpoints_only()
    };
    let mut start = guess.to_vec();
    let mut used = 0;
    if opts.coarse_start {
        let coarse = fine.with_tolerances(fine.rtol.max(1e-5), fine.atol.max(1e-8));
        let out = newton(problem, &start, opts, &coarse, opts.tol.max(1e-5), 0, registry)?;
        if out.duplicate {
            return Ok(None);
        }
        start = out.p0;
        used = out.iterations;
    }
    let out = newton(problem, &start, opts, &fine, opts.tol, used, registry)?;
    if out.duplicate {
        return Ok(None);
    }
    if let Some(reg) = registry {
        reg.lock().unwrap().push(out.p0.clone());
    }
    Ok(Some((out.p0, out.residual, out.iterations)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultistartOptions {
    /// Lattice size per orthant; the lattice has 2^d · K points.
    pub points_per_orthant: usize,
    /// Half-width of the momentum box; defaults to 20 / T.
    pub box_half_width: Option<f64>,
    /// Extra starting momenta tried before the lattice.
    pub seeds: Vec<Vec<f64>>,
    /// A second lattice over a box this many times wider, with
    /// `outer_fraction` of the base point count (0 disables).
    pub outer_scale: f64,
    pub outer_fraction: f64,
    /// Restart from every coordinate sign flip of the lowest-energy roots
    /// found (this many of them; 0 disables).
    pub reflect_roots: usize,
    /// Restarts from ratio^k · p for k = 1..=contract_steps, where p is the
    /// lowest-energy root so far; repeated while this finds a lower root.
    pub contract_steps: usize,
    pub contract_ratio: f64,
    pub contract_rounds: usize,
    pub dedup_tol: f64,
    pub shooting: ShootingOptions,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        Self {
            points_per_orthant: 20,
            box_half_width: None,
            seeds: Vec::new(),
            outer_scale: 5.0,
            outer_fraction: 0.125,
            reflect_roots: 2,
            contract_steps: 12,
            contract_ratio: 0.96,
            contract_rounds: 4,
            dedup_tol: 1e-6,
            shooting: ShootingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchDiagnostics {
    pub starts: usize,
    /// Starts that reached a root, including those abandoned as duplicates.
    pub converged: usize,
    pub failed: usize,
    pub box_half_width: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionSet {
    /// Distinct solutions sorted by control energy, then by p₀.
    pub solutions: Vec<BvpSolution>,
    pub energies: Vec<f64>,
    pub diagnostics: SearchDiagnostics,
}

/// Rank-1 lattice of `n` points in [0,1)^d, centred in its cells.
pub fn korobov_lattice(n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut a = ((0.618_033_988_75 * n as f64).round() as usize) | 1;
    if n <= 2 {
        a = 1;
    }
    let mut z = vec![1usize; d];
    for j in 1..d {
        z[j] = (z[j - 1] * a) % n.max(1);
    }
    (0..n)
        .map(|i| {
            z.iter()
                .map(|&zj| {
                    let v = ((i * zj) % n) as f64 / n as f64 + 0.5 / n as f64;
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

/// Multi-start enumeration of boundary-value solutions.
pub fn enumerate_solutions(problem: &BvpProblem, opts: &MultistartOptions) -> Result<SolutionSet> {
    problem.validate()?;
    opts.shooting.validate()?;
    let d = problem.model.dim_state();
    let half = opts.box_half_width.unwrap_or(20.0 / problem.maturity);
    if !(half > 0.0 && half.is_finite()) {
        return Err(Error::Config("search box half-width must be positive".into()));
    }
    for s in &opts.seeds {
        problem.model.check_point(s, "seed")?;
    }
    let n = (1usize << d) * opts.points_per_orthant;
    let scaled = |n: usize, w: f64| -> Vec<Vec<f64>> {
        korobov_lattice(n, d)
            .into_iter()
            .map(|u| u.into_iter().map(|v| w * (2.0 * v - 1.0)).collect())
            .collect()
    };
    let mut starts: Vec<Vec<f64>> = opts.seeds.clone();
    starts.extend(scaled(n, half));
    let n_outer = (n as f64 * opts.outer_fraction).round() as usize;
    if opts.outer_scale > 1.0 && n_outer > 0 {
        starts.extend(scaled(n_outer, half * opts.outer_scale));
    }

    let registry: Registry = Mutex::new(Vec::new());
    let run = |starts: &[Vec<f64>]| -> usize {
        starts
            .par_iter()
            .map(|s| shoot_endpoint(problem, s, &opts.shooting, Some(&registry)))
            .filter(|o| o.is_err())
            .count()
    };
    let mut failed = run(&starts);
    let mut total = starts.len();
    // Distinct roots with their grid flows and energies, filled as the
    // registry grows; `seen` counts registry entries already absorbed.
    let mut known: Vec<(BvpSolution, f64)> = Vec::new();
    let mut seen = 0usize;
    let mut absorb = |registry: &Registry, known: &mut Vec<(BvpSolution, f64)>| {
        let fresh: Vec<Vec<f64>> = registry.lock().unwrap()[seen..].to_vec();
        seen += fresh.len();
        let mut distinct: Vec<Vec<f64>> = Vec::new();
        for p in fresh {
            let scale = 1.0 + norm(&p);
            let close = |u: &Vec<f64>| {
                let diff: Vec<f64> = u.iter().zip(&p).map(|(x, y)| x - y).collect();
                norm(&diff) <= opts.dedup_tol * scale
            };
            if !known.iter().any(|(k, _)| close(&k.p0)) && !distinct.iter().any(close) {
                distinct.push(p);
            }
        }
        let done: Vec<(BvpSolution, f64)> = distinct
            .par_iter()
            .filter_map(|p0| {
                let flow = flow_forward(&problem.model, &problem.x0, p0, problem.maturity, &opts.shooting.integrator).ok()?;
                let end = flow.last();
                let residual_norm = norm(&problem.residual(&end.x, &end.p));
                let e = energy(&reconstruct_control(&problem.model, &flow));
                Some((
                    BvpSolution {
                        p0: p0.clone(),
                        residual_norm,
                        flow,
                        newton_iterations: 0,
                    },
                    e,
                ))
            })
            .collect();
        known.extend(done);
        known.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| lex_cmp(&a.0.p0, &b.0.p0)));
    };
    let mut best = f64::INFINITY;
    for round in 0..opts.contract_rounds.max(1) {
        absorb(&registry, &mut known);
        let Some((lowest, p_low)) = known.first().map(|(s, e)| (*e, s.p0.clone())) else { break };
        if round > 0 && lowest >= best * (1.0 - 1e-9) {
            break;
        }
        best = lowest;
        let mut extra: Vec<Vec<f64>> = known
            .iter()
            .take(opts.reflect_roots)
            .map(|(s, _)| &s.p0)
            .flat_map(|p| {
                (1..1usize << d).map(move |mask| {
                    p.iter()
                        .enumerate()
                        .map(|(k, v)| if mask >> k & 1 == 1 { -v } else { *v })
                        .collect::<Vec<f64>>()
                })
            })
            .collect();
        if opts.contract_ratio > 0.0 && opts.contract_ratio < 1.0 {
            let mut f = 1.0;
            for _ in 0..opts.contract_steps {
                f *= opts.contract_ratio;
                extra.push(p_low.iter().map(|v| v * f).collect());
            }
        }
        extra.retain(|q| !near_known(Some(&registry), q));
        if extra.is_empty() {
            break;
        }
        failed += run(&extra);
        total += extra.len();
    }
    absorb(&registry, &mut known);
    let diagnostics = SearchDiagnostics {
        starts: total,
        converged: total - failed,
        failed,
        box_half_width: half,
    };
    let (solutions, energies) = known.into_iter().unzip();
    Ok(SolutionSet {
        solutions,
        energies,
        diagnostics,
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}
