mod common;

use hamexpand::catalog::{black_scholes_model, solve_correlated, SteinSteinParams};
use hamexpand::expansion::{lambda_at, ExpansionOptions};
use hamexpand::mc::verify_control;
use hamexpand::minimizer::{
    candidate_from_solution, check_local_ellipticity, energy, find_minimizers, reconstruct_control, select_minimizers,
    Control, Ellipticity, MinimizerCandidate,
};
use hamexpand::shooting::{shoot, BvpProblem, MultistartOptions, ShootingOptions};
use hamexpand::{flow_forward, IntegratorOptions};

const P1: f64 = 2.148_454_154_737_807_6;

fn unit() -> SteinSteinParams {
    SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0)
}

fn bs_candidate(sigma: f64, t: f64, a: f64) -> (BvpProblem, MinimizerCandidate) {
    let problem = BvpProblem::new(black_scholes_model(sigma, 0.0).unwrap(), vec![a], t).unwrap();
    let sol = shoot(&problem, &[0.3], &ShootingOptions::default()).unwrap();
    let cand = candidate_from_solution(&problem.model, &sol);
    (problem, cand)
}

#[test]
fn black_scholes_control_energy_and_hit() {
    let (problem, cand) = bs_candidate(1.0, 1.0, 1.0);
    // p₀ is solved to the shooting tolerance
    assert!(cand.control.values.iter().all(|h| (h[0] - 1.0).abs() < 1e-9));
    assert!((cand.energy - 0.5).abs() < 1e-9);
    assert!(verify_control(&problem.model, &cand, &[1.0]).unwrap() < 1e-8);

    let (problem, cand) = bs_candidate(0.4, 2.5, -0.7);
    let p0 = -0.7 / (0.16 * 2.5);
    assert!(cand.control.values.iter().all(|h| (h[0] - 0.4 * p0).abs() < 1e-9));
    assert!(verify_control(&problem.model, &cand, &[-0.7]).unwrap() < 1e-8);
}

#[test]
fn zero_control_misses_by_the_target() {
    let m = common::driftless_bs(1.0);
    let flow = flow_forward(&m, &[0.0], &[0.0], 1.0, &IntegratorOptions::default()).unwrap();
    let control = reconstruct_control(&m, &flow);
    assert_eq!(energy(&control), 0.0);
    let cand = MinimizerCandidate {
        control,
        energy: 0.0,
        flow,
        p0: vec![0.0],
        is_minimal: false,
    };
    assert!((verify_control(&m, &cand, &[1.3]).unwrap() - 1.3).abs() < 1e-14);
    let empty = Control {
        times: vec![0.0, 1.0],
        values: vec![vec![0.0], vec![0.0]],
    };
    assert_eq!(energy(&empty), 0.0);
}

#[test]
fn stein_stein_controls() {
    for rho in [0.0, -0.6] {
        let params = SteinSteinParams::new(0.0, -0.5, 1.5, 0.2, rho, 1.0);
        let problem = common::ss_problem(&params, 1.0);
        let (kmin, _) = find_minimizers(&problem, &MultistartOptions::default(), 1e-6).unwrap();
        assert_eq!(kmin.minimizers.len(), 2);
        let c = params.c;
        let rb = (1.0 - rho * rho).sqrt();
        for m in &kmin.minimizers {
            let traj = m.flow.forward_trajectory();
            for (s, h) in traj.iter().zip(&m.control.values) {
                let (p, z, q) = (s.p[0], s.x[1], s.p[1]);
                // lower-triangular factor convention: (pz + ρcq, √(1−ρ²)cq);
                // the other common convention (pz√(1−ρ²), ρpz + cq) has the
                // same norm
                assert!((h[0] - (p * z + rho * c * q)).abs() < 1e-12);
                assert!((h[1] - rb * c * q).abs() < 1e-12);
                let other = (p * z * rb).powi(2) + (rho * p * z + c * q).powi(2);
                assert!((h[0] * h[0] + h[1] * h[1] - other).abs() < 1e-10 * (1.0 + other));
            }
            assert!(verify_control(&problem.model, m, &[1.0]).unwrap() < 1e-6);
            // energy identity Λ = p·a
            assert!((m.energy - m.p0[0]).abs() <= 1e-6 * (1.0 + m.p0[0]));
        }
        let cat = solve_correlated(&params).unwrap();
        assert!(common::rel(kmin.lambda, cat.p_plus) < 1e-6);
    }
}

#[test]
fn unit_cell_energy() {
    let problem = common::ss_problem(&unit(), 1.0);
    let (kmin, _) = find_minimizers(&problem, &MultistartOptions::default(), 1e-6).unwrap();
    assert!(common::rel(kmin.lambda, P1) < 1e-8);
    assert_eq!(kmin.minimizers.len(), 2);
}

#[test]
fn selection_rules() {
    let (_, cand) = bs_candidate(1.0, 1.0, 1.0);
    let with_energy = |e: f64| MinimizerCandidate {
        energy: e,
        ..cand.clone()
    };
    let one = select_minimizers(vec![with_energy(0.7)], 1e-6).unwrap();
    assert_eq!(one.minimizers.len(), 1);
    assert!(one.minimizers[0].is_minimal && one.lambda == 0.7);
    let two = select_minimizers(vec![with_energy(1.5), with_energy(1.0)], 1e-6).unwrap();
    assert_eq!(two.minimizers.len(), 1);
    assert_eq!(two.minimizers[0].energy, 1.0);
    assert!(select_minimizers(vec![], 1e-6).is_err());
}

#[test]
fn ellipticity() {
    let problem = common::ss_problem(&unit(), 1.0);
    let (kmin, _) = find_minimizers(&problem, &MultistartOptions::default(), 1e-6).unwrap();
    for m in &kmin.minimizers {
        match check_local_ellipticity(&problem.model, &m.flow) {
            Ellipticity::Elliptic { witness_time } => {
                let s = m.flow.forward_trajectory().into_iter().find(|s| s.t == witness_time).unwrap();
                assert!(s.x[1] != 0.0 && witness_time > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }
    // q₀ = 0 from z₀ = 0 keeps the volatility at zero
    let frozen = flow_forward(&problem.model, &[0.0, 0.0], &[2.0, 0.0], 1.0, &IntegratorOptions::default()).unwrap();
    assert_eq!(check_local_ellipticity(&problem.model, &frozen), Ellipticity::Indeterminate);

    let plane = common::flat_plane(0.3);
    let f = flow_forward(&plane, &[0.0, 0.0], &[1.0, 0.0], 1.0, &IntegratorOptions::default()).unwrap();
    assert_eq!(check_local_ellipticity(&plane, &f), Ellipticity::Elliptic { witness_time: 0.0 });
}

#[test]
fn energy_scales_linearly_in_the_target() {
    let opts = ExpansionOptions::default();
    for params in [unit(), common::ss(-2.0, 0.5, -0.7, 2.0)] {
        let problem = common::ss_problem(&params, 1.0);
        let (kmin, _) = find_minimizers(&problem, &opts.multistart, 1e-6).unwrap();
        let per_unit = kmin.lambda;
        for a in [0.5, 2.0, 4.0] {
            let lam = lambda_at(&problem, &kmin, &[a], &opts).unwrap();
            assert!(common::rel(lam / a, per_unit) < 1e-6, "a = {a}: {lam}");
        }
    }
}

#[test]
fn quadrature_converges() {
    let problem = common::ss_problem(&common::ss(-0.5, 2.0, -0.3, 0.5), 1.0);
    let (kmin, _) = find_minimizers(&problem, &MultistartOptions::default(), 1e-6).unwrap();
    let m = &kmin.minimizers[0];
    let fine = IntegratorOptions::default().with_grid(1023);
    let f = flow_forward(&problem.model, &problem.x0, &m.p0, problem.maturity, &fine).unwrap();
    let e = energy(&reconstruct_control(&problem.model, &f));
    assert!(common::rel(e, m.energy) < 1e-8, "{e} vs {}", m.energy);
}
