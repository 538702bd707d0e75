//! Controls ḣ₀ = σ̃ᵀp reconstructed from Hamiltonian trajectories, their
//! energies, the minimizing set and the local ellipticity test.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowResult;
use crate::model::{HamiltonianEval, ModelSpec};
use crate::shooting::{enumerate_solutions, BvpProblem, BvpSolution, MultistartOptions, SearchDiagnostics};

/// A control sampled on the reporting grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Control {
    pub times: Vec<f64>,
    /// `values[k]` is ḣ(times[k]) ∈ R^m.
    pub values: Vec<Vec<f64>>,
}

impl Control {
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct MinimizerCandidate {
    pub control: Control,
    pub energy: f64,
    pub flow: FlowResult,
    pub p0: Vec<f64>,
    pub is_minimal: bool,
}

/// ḣ₀ⁱ(t) = ⟨σ̃ᵢ(x_t), p_t⟩ with σ̃ = σL, on the flow's grid in time order.
pub fn reconstruct_control(model: &ModelSpec, flow: &FlowResult) -> Control {
    let m = model.dim_noise();
    let mut ev = HamiltonianEval::new(model);
    let traj = flow.forward_trajectory();
    let mut times = Vec::with_capacity(traj.len());
    let mut values = Vec::with_capacity(traj.len());
    for s in &traj {
        let mut h = vec![0.0; m];
        ev.control(&s.x, &s.p, &mut h);
        times.push(s.t);
        values.push(h);
    }
    Control { times, values }
}

/// Composite Simpson on a uniform grid; an odd interval count closes with
/// Simpson's 3/8 rule on the last three intervals.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        _ => {
            let (even_end, tail) = if n % 2 == 0 { (n, false) } else { (n - 3, true) };
            let mut s = 0.0;
            let mut i = 0;
            while i < even_end {
                s += values[i] + 4.0 * values[i + 1] + values[i + 2];
                i += 2;
            }
            let mut total = s * h / 3.0;
            if tail {
                let k = even_end;
                total += 3.0 * h / 8.0 * (values[k] + 3.0 * values[k + 1] + 3.0 * values[k + 2] + values[k + 3]);
            }
            total
        }
    }
}

/// ½∫|ḣ|² dt.
pub fn energy(control: &Control) -> f64 {
    if control.times.len() < 2 {
        return 0.0;
    }
    let sq: Vec<f64> = control.values.iter().map(|v| v.iter().map(|x| x * x).sum()).collect();
    let h = (control.times[control.times.len() - 1] - control.times[0]) / (control.times.len() - 1) as f64;
    0.5 * simpson(&sq, h)
}

pub fn candidate_from_solution(model: &ModelSpec, solution: &BvpSolution) -> MinimizerCandidate {
    let control = reconstruct_control(model, &solution.flow);
    let energy = energy(&control);
    MinimizerCandidate {
        control,
        energy,
        flow: solution.flow.clone(),
        p0: solution.p0.clone(),
        is_minimal: false,
    }
}

#[derive(Debug, Clone)]
pub struct MinimizingSet {
    pub minimizers: Vec<MinimizerCandidate>,
    /// Λ(a), the minimal energy.
    pub lambda: f64,
}

/// Keeps the candidates with energy ≤ (1 + rel_tol)·min energy.
pub fn select_minimizers(candidates: Vec<MinimizerCandidate>, rel_tol: f64) -> Result<MinimizingSet> {
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate controls to select from".into()));
    }
    let lambda = candidates.iter().map(|c| c.energy).fold(f64::INFINITY, f64::min);
    if !lambda.is_finite() {
        return Err(Error::Domain("candidate energies are not finite".into()));
    }
    let bound = lambda + rel_tol * lambda.abs();
    let minimizers = candidates
        .into_iter()
        .filter(|c| c.energy <= bound)
        .map(|mut c| {
            c.is_minimal = true;
            c
        })
        .collect();
    Ok(MinimizingSet { minimizers, lambda })
}

/// Enumerates BVP solutions and keeps the minimal ones.
pub fn find_minimizers(
    problem: &BvpProblem,
    opts: &MultistartOptions,
    rel_tol: f64,
) -> Result<(MinimizingSet, SearchDiagnostics)> {
    let set = enumerate_solutions(problem, opts)?;
    if set.solutions.is_empty() {
        return Err(Error::NoConvergence {
            iterations: set.diagnostics.starts,
            residual: f64::NAN,
        });
    }
    let candidates = set
        .solutions
        .iter()
        .map(|s| candidate_from_solution(&problem.model, s))
        .collect();
    Ok((select_minimizers(candidates, rel_tol)?, set.diagnostics))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Ellipticity {
    /// σ has full rank d at `witness_time` on the path.
    Elliptic { witness_time: f64 },
    /// The span condition fails everywhere on the grid; the Malliavin
    /// covariance might still be non-degenerate, which is not checked.
    Indeterminate,
}

impl Ellipticity {
    pub fn holds(&self) -> bool {
        matches!(self, Ellipticity::Elliptic { .. })
    }
}

/// First grid time at which σ(φ_t) has numerical rank d
/// (σ_min > 1e−8·σ_max).
pub fn check_local_ellipticity(model: &ModelSpec, flow: &FlowResult) -> Ellipticity {
    let d = model.dim_state();
    if model.dim_noise() < d {
        return Ellipticity::Indeterminate;
    }
    for s in flow.forward_trajectory() {
        let sig = model.diffusion_at(&s.x);
        let sv = sig.singular_values();
        let (smax, smin) = (sv.max(), sv.iter().take(d).cloned().fold(f64::INFINITY, f64::min));
        if smax > 0.0 && smin > 1e-8 * smax {
            return Ellipticity::Elliptic { witness_time: s.t };
        }
    }
    Ellipticity::Indeterminate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        for n in [2usize, 3, 5, 8, 511] {
            let h = 2.0 / n as f64;
            let v: Vec<f64> = (0..=n).map(|k| (k as f64 * h).powi(3) - 2.0 * (k as f64 * h)).collect();
            assert!((simpson(&v, h) - (4.0 - 4.0)).abs() < 1e-12, "n={n}");
        }
    }

    fn dummy(e: f64) -> MinimizerCandidate {
        MinimizerCandidate {
            control: Control {
                times: vec![0.0, 1.0],
                values: vec![vec![0.0], vec![0.0]],
            },
            energy: e,
            flow: FlowResult {
                trajectory: vec![],
                variational: None,
                hamiltonian_drift: 0.0,
                hamiltonian: 0.0,
            },
            p0: vec![0.0],
            is_minimal: false,
        }
    }

    #[test]
    fn selection() {
        assert!(select_minimizers(vec![], 1e-6).is_err());
        let k = select_minimizers(vec![dummy(1.0), dummy(1.5)], 1e-6).unwrap();
        assert_eq!(k.minimizers.len(), 1);
        assert_eq!(k.lambda, 1.0);
        assert!(k.minimizers[0].is_minimal);
        let k = select_minimizers(vec![dummy(0.7)], 1e-6).unwrap();
        assert_eq!(k.minimizers.len(), 1);
    }

    #[test]
    fn zero_control_has_zero_energy() {
        let c = Control {
            times: vec![0.0, 0.5, 1.0],
            values: vec![vec![0.0, 0.0]; 3],
        };
        assert_eq!(energy(&c), 0.0);
    }
}
