mod common;

use common::*;
use gneflex_core::fixtures;
use gneflex_core::market::{
    build_feasible_set, check_feasibility, clearing_price, load_adjustment, modify_bids,
    project_onto_feasible, ProjectionOptions,
};
use gneflex_core::{AggregatorParams, GneError, Line, MarketInstance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn prices_and_allocations() {
    let cs5 = fixtures::cs5().instance;
    assert!((clearing_price(&cs5, &[0.0; 5]).unwrap() - 120.0).abs() < 1e-12);
    let x = load_adjustment(&cs5, &[0.0; 5]).unwrap();
    assert!(x.iter().all(|&v| (v - 120.0).abs() < 1e-12));
    let t2 = fixtures::t2().instance;
    assert!((clearing_price(&t2, &[2.0, 4.0]).unwrap() - 2.0).abs() < 1e-14);
    assert_eq!(clearing_price(&t2, &[3.0, 7.0]).unwrap(), 0.0);
    assert!(matches!(
        clearing_price(&t2, &[1.0]),
        Err(GneError::Dimension { .. })
    ));
}

#[test]
fn allocation_always_balances() {
    let mut r = rng(1);
    for f in random_fixtures(10, 20).into_iter().chain(named_fixtures()) {
        let inst = &f.instance;
        for _ in 0..50 {
            let beta: Vec<f64> = (0..inst.n_agents())
                .map(|_| r.random_range(-1e3..1e3))
                .collect();
            let total: f64 = load_adjustment(inst, &beta).unwrap().iter().sum();
            assert!((total - inst.r()).abs() <= 1e-12 * inst.r().abs().max(1.0) * 1e3);
        }
    }
}

#[test]
fn split_sums_to_rhs_and_blocks_are_exact() {
    for f in random_fixtures(11, 20).into_iter().chain(named_fixtures()) {
        let inst = &f.instance;
        let fs = build_feasible_set(inst);
        let (n, h) = (inst.n_agents(), inst.n_lines());
        assert_eq!(fs.n_rows(), 2 * n + 2 * h);
        let sum = fs
            .d_split()
            .iter()
            .fold(DVector::zeros(fs.n_rows()), |acc, v| acc + v);
        assert!((&sum - fs.d()).amax() <= 1e-12 * (1.0 + fs.d().amax()));

        let a = DMatrix::from_fn(n, n, |i, j| (i == j) as u8 as f64 - 1.0 / n as f64);
        assert!((&a * &a - &a).amax() < 1e-15);
        assert_eq!(a, a.transpose());
        let pi = DMatrix::from_fn(h, n, |l, j| inst.lines()[l].pi[j]);
        let pa = &pi * &a;
        let at = fs.a_tilde();
        assert!((at.rows(0, n) - &a).amax() < 1e-15);
        assert!((at.rows(n, n) + &a).amax() < 1e-15);
        assert!((at.rows(2 * n, h) + &pa).amax() < 1e-15);
        assert!((at.rows(2 * n + h, h) - &pa).amax() < 1e-15);
        assert!((at * DVector::from_element(n, 1.0)).amax() < 1e-12);
    }
}

#[test]
fn t2_right_hand_side() {
    let fs = build_feasible_set(&fixtures::t2().instance);
    assert_eq!(fs.d().as_slice(), &[5.0, 5.0, 5.0, 5.0]);
    assert_eq!(fs.d_split()[0].as_slice(), &[7.5, -2.5, 2.5, 2.5]);
    assert_eq!(fs.d_split()[1].as_slice(), &[-2.5, 7.5, 2.5, 2.5]);
}

#[test]
fn feasibility_reports() {
    let fs = build_feasible_set(&fixtures::t2().instance);
    assert!(check_feasibility(&fs, &[2.0, 4.0], 0.0).unwrap().feasible());
    let rep = check_feasibility(&fs, &[12.0, 0.0], 0.0).unwrap();
    assert!(!rep.box_ok);
    assert_eq!(rep.box_violations, vec![0]);

    // Agent 4 of the case study pushed past its capacity of 110 kWh.
    let fs = build_feasible_set(&fixtures::cs5().instance);
    let rep = check_feasibility(&fs, &[0.0, 0.0, 0.0, 150.0, 0.0], 1e-9).unwrap();
    assert!(rep.box_ok && !rep.coupling_ok);
    assert!(rep.violated_rows.contains(&3));
}

#[test]
fn modify_bids_examples() {
    let fs = build_feasible_set(&fixtures::t2().instance);
    let p = modify_bids(&fs, &[12.0, 0.0]).unwrap();
    assert!((p[0] - 10.0).abs() < 1e-9 && p[1].abs() < 1e-9);
    assert_eq!(modify_bids(&fs, &[2.0, 4.0]).unwrap(), vec![2.0, 4.0]);
}

/// `<beta - P(beta), z - P(beta)> <= tol` for feasible `z`.
#[test]
fn projection_variational_inequality() {
    let mut r = rng(3);
    for f in random_fixtures(12, 6) {
        let fs = build_feasible_set(&f.instance);
        let n = fs.n_agents();
        let span = fs.beta_max() - fs.beta_min();
        let far = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| r.random_range(fs.beta_min() - span..fs.beta_max() + span))
                .collect()
        };
        let anchors: Vec<Vec<f64>> = (0..20).map(|_| modify_bids(&fs, &far(&mut r)).unwrap()).collect();
        let beta = far(&mut r);
        let p = modify_bids(&fs, &beta).unwrap();
        assert!(check_feasibility(&fs, &p, 1e-9).unwrap().feasible());
        for _ in 0..100 {
            let (i, j) = (r.random_range(0..20), r.random_range(0..20));
            let t: f64 = r.random_range(0.0..1.0);
            let z: Vec<f64> = (0..n)
                .map(|k| t * anchors[i][k] + (1.0 - t) * anchors[j][k])
                .collect();
            let inner: f64 = (0..n).map(|k| (beta[k] - p[k]) * (z[k] - p[k])).sum();
            assert!(inner <= 1e-6 * (1.0 + span * span), "inner product {inner}");
        }
    }
}

#[test]
fn projection_output_is_feasible() {
    let mut r = rng(4);
    for f in random_fixtures(13, 10).into_iter().chain(named_fixtures()) {
        let fs = build_feasible_set(&f.instance);
        let opts = ProjectionOptions::default();
        for _ in 0..10 {
            let beta = DVector::from_fn(fs.n_agents(), |_, _| r.random_range(-500.0..500.0));
            let p = project_onto_feasible(&fs, &beta, &opts).unwrap();
            let pv: Vec<f64> = p.point.iter().copied().collect();
            assert!(check_feasibility(&fs, &pv, opts.tol * 10.0).unwrap().feasible());
        }
    }
}

#[test]
fn empty_feasible_set_is_reported() {
    // Capacities of 1 kWh cannot absorb r = 100 between two agents.
    let agents = vec![
        AggregatorParams {
            a: 0.1,
            b: 1.0,
            e: 0.0,
            xhat: 1.0,
        };
        2
    ];
    let inst = MarketInstance::new(100.0, 1.0, 0.0, 10.0, agents, vec![]).unwrap();
    let fs = build_feasible_set(&inst);
    assert!(matches!(
        modify_bids(&fs, &[0.0, 0.0]),
        Err(GneError::EmptyFeasibleSet(_))
    ));
    assert!(fs.slater_point(1e-9).is_err());
}

#[test]
fn invalid_instances() {
    let ag = AggregatorParams {
        a: 0.1,
        b: 1.0,
        e: 0.0,
        xhat: 10.0,
    };
    assert!(MarketInstance::new(10.0, 1.0, 0.0, 10.0, vec![ag], vec![]).is_err());
    assert!(MarketInstance::new(10.0, 0.0, 0.0, 10.0, vec![ag; 2], vec![]).is_err());
    assert!(MarketInstance::new(10.0, 1.0, 5.0, 1.0, vec![ag; 2], vec![]).is_err());
    let short = Line {
        pi: vec![1.0],
        fhat: 1.0,
    };
    assert!(MarketInstance::new(10.0, 1.0, 0.0, 10.0, vec![ag; 2], vec![short]).is_err());
    let neg = Line {
        pi: vec![1.0, 0.0],
        fhat: -1.0,
    };
    assert!(MarketInstance::new(10.0, 1.0, 0.0, 10.0, vec![ag; 2], vec![neg]).is_err());
}
