mod common;

use hamexpand::catalog::{black_scholes_model, solve_correlated, SteinSteinParams};
use hamexpand::shooting::{enumerate_solutions, shoot, BvpProblem, MultistartOptions, ShootingOptions};
use hamexpand::{flow_forward, Error, IntegratorOptions};
use rayon::prelude::*;

// (b, c, ρ, T) → (p, q₀) of the lowest branch at target 1, from an
// independent 30-digit integration of the Hamiltonian system with the
// two-point conditions solved by root finding.
const ORACLE: [((f64, f64, f64, f64), (f64, f64)); 4] = [
    ((0.0, 1.0, 0.0, 1.0), (2.148_454_154_737_807_6, 1.730_200_519_715_059_6)),
    ((-0.5, 1.0, -0.7, 1.0), (5.753_346_500_696_028_3, 2.465_586_340_943_509_3)),
    ((-2.0, 0.5, -0.3, 2.0), (7.275_539_548_336_844_3, 2.316_943_952_906_264_2)),
    ((0.0, 2.0, -0.9, 0.5), (9.629_322_306_332_255_1, 2.404_444_943_961_480_0)),
];

#[test]
fn black_scholes_shoot() {
    let m = black_scholes_model(1.0, 0.0).unwrap();
    let problem = BvpProblem::new(m, vec![1.0], 1.0).unwrap();
    let sol = shoot(&problem, &[0.5], &ShootingOptions::default()).unwrap();
    assert!((sol.p0[0] - 1.0).abs() < 1e-12);
    assert!(sol.residual_norm <= 1e-9);

    let set = enumerate_solutions(&problem, &MultistartOptions::default()).unwrap();
    assert_eq!(set.solutions.len(), 1);
}

#[test]
fn stein_stein_shoot_picks_branch_by_sign() {
    let params = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    let problem = common::ss_problem(&params, 1.0);
    let (p, q) = ORACLE[0].1;
    for sign in [1.0, -1.0] {
        let sol = shoot(&problem, &[2.0, sign * 1.5], &ShootingOptions::default()).unwrap();
        assert!(common::rel(sol.p0[0], p) < 1e-7);
        assert!(common::rel(sol.p0[1], sign * q) < 1e-7);
    }
}

#[test]
fn zero_vol_momentum_guess_fails_loudly() {
    let params = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    let problem = common::ss_problem(&params, 1.0);
    let r = shoot(&problem, &[2.0, 0.0], &ShootingOptions::default());
    assert!(
        matches!(r, Err(Error::SingularJacobian { .. }) | Err(Error::NoConvergence { .. })),
        "{:?}",
        r.map(|s| s.p0)
    );
}

#[test]
fn enumeration_finds_symmetric_pair_and_higher_branches() {
    let params = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    let problem = common::ss_problem(&params, 1.0);
    let opts = MultistartOptions {
        box_half_width: Some(40.0),
        ..MultistartOptions::default()
    };
    let set = enumerate_solutions(&problem, &opts).unwrap();
    let (p, q) = ORACLE[0].1;
    let (a, b) = (&set.solutions[0], &set.solutions[1]);
    assert!(common::rel(a.p0[0], p) < 1e-7 && common::rel(b.p0[0], p) < 1e-7);
    assert!(common::rel(a.p0[1].abs(), q) < 1e-7 && (a.p0[1] + b.p0[1]).abs() < 1e-7);
    assert!((set.energies[0] - set.energies[1]).abs() < 1e-8);

    let cat = solve_correlated(&params).unwrap();
    for branch in &cat.branch_roots {
        let found = set
            .solutions
            .iter()
            .filter(|s| common::rel(s.p0[0], branch.p_plus) < 1e-7)
            .count();
        assert_eq!(found, 2, "branch {} (p = {})", branch.k, branch.p_plus);
    }
    for w in set.energies.windows(2) {
        assert!(w[0] <= w[1]);
    }
}

#[test]
fn solutions_meet_tolerance_and_survive_refinement() {
    let params = common::ss(-0.5, 1.0, -0.7, 1.0);
    let problem = common::ss_problem(&params, 1.0);
    let set = enumerate_solutions(&problem, &MultistartOptions::default()).unwrap();
    let fine = IntegratorOptions::default().endpoints_only().with_tolerances(1e-12, 1e-14);
    for s in &set.solutions {
        assert!(s.residual_norm <= 1e-9);
        let f = flow_forward(&problem.model, &problem.x0, &s.p0, params.t, &fine).unwrap();
        let e = f.last();
        let r = problem.residual(&e.x, &e.p);
        assert!(hamexpand::shooting::norm(&r) < 1e-8, "{r:?}");
    }
    // the two lowest roots mirror each other under z ↦ −z
    let (a, b) = (&set.solutions[0].flow, &set.solutions[1].flow);
    for (u, v) in a.trajectory.iter().zip(&b.trajectory) {
        assert!((u.x[0] - v.x[0]).abs() < 1e-7);
        assert!((u.x[1] + v.x[1]).abs() < 1e-7);
    }
}

#[test]
fn lowest_branch_matches_frozen_oracle() {
    for ((b, c, rho, t), (p, q)) in ORACLE {
        let problem = common::ss_problem(&common::ss(b, c, rho, t), 1.0);
        let set = enumerate_solutions(&problem, &MultistartOptions::default()).unwrap();
        let s = &set.solutions[0];
        assert!(common::rel(s.p0[0], p) < 1e-7, "({b},{c},{rho},{t}): {:?}", s.p0);
        assert!(common::rel(s.p0[1].abs(), q) < 1e-7);
    }
}

#[test]
fn lowest_branch_matches_catalog_on_grid() {
    let mut cells = Vec::new();
    for b in [0.0, -0.5, -2.0] {
        for c in [0.5, 1.0, 2.0] {
            for rho in [0.0, -0.3, -0.7] {
                for t in [0.5, 1.0, 2.0] {
                    cells.push(common::ss(b, c, rho, t));
                }
            }
        }
    }
    let bad: Vec<String> = cells
        .par_iter()
        .filter_map(|params| {
            let cat = solve_correlated(params).unwrap();
            let problem = common::ss_problem(params, 1.0);
            let set = enumerate_solutions(&problem, &MultistartOptions::default()).unwrap();
            let s = &set.solutions[0];
            let ok = common::rel(s.p0[0], cat.p_plus) < 1e-7 && common::rel(s.p0[1].abs(), cat.q0_plus) < 1e-7;
            (!ok).then(|| format!("{params:?}: {:?} vs ({}, {})", s.p0, cat.p_plus, cat.q0_plus))
        })
        .collect();
    assert!(bad.is_empty(), "{bad:#?}");
}
