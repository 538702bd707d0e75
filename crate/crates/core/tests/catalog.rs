mod common;

use std::f64::consts::PI;

use hamexpand::catalog::{
    black_scholes_constants, flow_closed_form, p_plus, rescale_to_unit_maturity, solve_correlated,
    solve_root_uncorrelated, SteinSteinParams,
};

const P1: f64 = 2.148_454_154_737_807_6;
const Q1: f64 = 1.730_200_519_715_059_6;

fn grid() -> Vec<SteinSteinParams> {
    let mut out = Vec::new();
    for b in [0.0, -0.5, -2.0] {
        for c in [0.5, 1.0, 2.0] {
            for rho in [0.0, -0.3, -0.7, -0.9] {
                for t in [0.5, 1.0, 2.0] {
                    out.push(SteinSteinParams::new(0.1, b, c, 0.3, rho, t));
                }
            }
        }
    }
    out
}

#[test]
fn rescaling() {
    let p = SteinSteinParams::new(0.2, -1.0, 0.7, 0.3, -0.4, 1.0);
    assert_eq!(rescale_to_unit_maturity(&p), p);
    let q = rescale_to_unit_maturity(&SteinSteinParams::new(1.0, -1.0, 2.0, 0.3, 0.0, 4.0));
    assert_eq!((q.a, q.b, q.c, q.sigma0, q.t), (8.0, -4.0, 8.0, 0.6, 1.0));
    for p in grid() {
        let a = solve_correlated(&p).unwrap();
        let b = solve_correlated(&rescale_to_unit_maturity(&p)).unwrap();
        assert!(common::rel(a.c1, b.c1) < 1e-10 && common::rel(a.c2, b.c2) < 1e-10, "{p:?}");
    }
}

#[test]
fn uncorrelated_roots() {
    assert!((solve_root_uncorrelated(0.0, 1.0, 1).unwrap() - PI / 2.0).abs() < 1e-14);
    assert!((solve_root_uncorrelated(0.0, 3.0, 2).unwrap() - 1.5 * PI).abs() < 1e-13);
    let r = solve_root_uncorrelated(-1.0, 1.0, 1).unwrap();
    assert!(r > PI / 2.0 && r < PI);
    assert!((r * r.cos() + r.sin()).abs() < 1e-12);
    assert!(solve_root_uncorrelated(0.5, 1.0, 1).is_err());
    assert!(solve_root_uncorrelated(-1.0, 1.0, 0).is_err());
}

#[test]
fn unit_cell_closed_forms() {
    let p = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    let s = solve_correlated(&p).unwrap();
    assert!(common::rel(s.p_plus, P1) < 1e-14 && common::rel(s.q0_plus, Q1) < 1e-14);
    assert!((s.p_plus - 0.5 * (1.0 + (1.0 + PI * PI).sqrt())).abs() < 1e-15);
}

#[test]
fn correlated_reduces_to_uncorrelated() {
    for p in grid().into_iter().filter(|p| p.rho == 0.0) {
        let s = solve_correlated(&p).unwrap();
        let r = solve_root_uncorrelated(p.b, p.t, 1).unwrap();
        assert!((s.r1 - r).abs() < 1e-12);
        let explicit = 0.5 * (1.0 + (1.0 + 4.0 * p.b * p.b / (p.c * p.c) + 4.0 * r * r / (p.c * p.c * p.t * p.t)).sqrt());
        assert!(common::rel(s.p_plus, explicit) < 1e-12);
    }
}

#[test]
fn correlated_example() {
    let p = common::ss(-0.5, 1.0, -0.7, 1.0);
    let s = solve_correlated(&p).unwrap();
    assert!(s.r1 >= PI / 2.0 && s.r1 < PI);
    assert!(s.chi_identity_residual(&p).abs() < 1e-10);
    assert!(s.c1 > 1.0);
    // independent 30-digit shooting oracle
    assert!(common::rel(s.p_plus, 5.753_346_500_696_028_3) < 1e-12);
    assert!(common::rel(s.q0_plus, 2.465_586_340_943_509_3) < 1e-12);
    assert!(s.branch_roots.windows(2).all(|w| w[0].p_plus < w[1].p_plus));
    assert!(s.branch_roots[0].p_plus > s.p_plus);
}

#[test]
fn closed_form_flow_limits() {
    let p = common::ss(-0.5, 1.3, -0.4, 1.0);
    assert_eq!(flow_closed_form(&p, 3.0, 0.7, 0.0), (0.0, 0.0, 0.7));
    // χ² = p(p − 1) vanishes at p = 1 for b = 0, c = 1, ρ = 0
    let u = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    for t in [0.3, 1.0, 2.5] {
        let (_, z, _) = flow_closed_form(&u, 1.0, 0.9, t);
        assert!((z - 0.9 * t).abs() < 1e-15);
        for eps in [1e-6, -1e-6, 1e-3] {
            let (y1, z1, q1) = flow_closed_form(&u, 1.0 + eps, 0.9, t);
            let (y0, z0, q0) = flow_closed_form(&u, 1.0, 0.9, t);
            let tol = 10.0 * eps.abs() * (1.0 + t.powi(3));
            assert!((y1 - y0).abs() < tol && (z1 - z0).abs() < tol && (q1 - q0).abs() < tol);
        }
    }
}

#[test]
fn black_scholes() {
    let c = black_scholes_constants(1.0, 1.0, 0.0).unwrap();
    assert_eq!((c.c1, c.c2, c.theta), (0.5, -0.5, 1));
    assert!((black_scholes_constants(2f64.sqrt(), 1.0, 0.0).unwrap().c1 - 0.25).abs() < 1e-15);
    for y0 in [-1.0, 0.0, 2.5] {
        assert_eq!(black_scholes_constants(0.7, 1.5, y0).unwrap().c1, black_scholes_constants(0.7, 1.5, 0.0).unwrap().c1);
    }
    assert!(black_scholes_constants(0.0, 1.0, 0.0).is_err());
}

#[test]
fn grid_invariants() {
    for p in grid() {
        let s = solve_correlated(&p).unwrap();
        assert!(s.chi_identity_residual(&p).abs() < 1e-10 * (1.0 + s.chi * s.chi), "{p:?}");
        assert!((s.chi * p.t - s.r1).abs() < 1e-14 * s.r1);
        for sign in [1.0, -1.0] {
            let (y, _, q) = flow_closed_form(&p, s.p_plus, sign * s.q0_plus, p.t);
            assert!((y - 1.0).abs() < 1e-10 && q.abs() < 1e-10, "{p:?}: y {y} q {q}");
        }
        assert!(s.p_plus > 1.0);
        let mut last = f64::NEG_INFINITY;
        for k in 0..50 {
            let v = p_plus(&p, 0.1 * k as f64);
            assert!(v > last);
            last = v;
        }
    }
}
