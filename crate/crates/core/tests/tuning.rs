mod common;

use common::*;
use gneflex_core::fixtures;
use gneflex_core::market::build_feasible_set;
use gneflex_core::tuning::{
    self, admissible_kappa_interval, cocoercivity_constants, default_gains, kappa_interval,
    pd_kappa_interval, schur_conditions, theta_from_xi, verify_gains, AgentGains, DEFAULT_SAFETY,
};
use gneflex_core::{AggregatorParams, GainSet, GneError, MarketInstance};
use nalgebra::DMatrix;
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn t2_constants() {
    let inst = fixtures::t2().instance;
    assert!(tuning::mu(&inst).iter().all(|&m| close(m, 0.6, 1e-15)));
    assert!(tuning::ell(&inst).iter().all(|&l| close(l, -0.1, 1e-15)));
    let g = 0.5f64.sqrt();
    assert!(close(tuning::gamma(&inst), g, 1e-15));
    let iv = kappa_interval(&inst).unwrap();
    assert!(close(iv.lo, 0.6f64.sqrt() - g, 1e-12) && close(iv.hi, 0.6f64.sqrt() + g, 1e-12));
    assert!(close(iv.lo, 0.0675, 1e-3) && close(iv.hi, 1.4817, 1e-4));
}

#[test]
fn cs5_constants() {
    let f = fixtures::cs5();
    let inst = &f.instance;
    // Raw lower end sqrt(max mu) - gamma is negative, so the interval starts at 0.
    let m = tuning::mu(inst);
    let g = tuning::gamma(inst);
    let max_mu = m.iter().copied().fold(0.0, f64::max);
    let min_mu = m.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max_mu.sqrt() - g < 0.0);
    let iv = kappa_interval(inst).unwrap();
    assert_eq!(iv.lo, 0.0);
    assert!(close(iv.hi, min_mu.sqrt() + g, 1e-14));
    assert!(close(iv.hi, 1.3505, 1e-4));

    let adm = admissible_kappa_interval(inst).unwrap();
    let pd = pd_kappa_interval(inst);
    assert!(adm.lo >= iv.lo && adm.lo >= pd.lo && adm.hi <= iv.hi && adm.hi <= pd.hi);
    // kappa = 0.1 lies in the raw interval but leaves some R_n + R_n' indefinite.
    assert!(iv.contains(0.1) && !pd.contains(0.1));
    assert!(matches!(
        cocoercivity_constants(inst, &f.graph, 0.1),
        Err(GneError::CocoercivityNotGuaranteed(_))
    ));

    let ring = 2.0 - 2.0 * (4.0 * std::f64::consts::PI / 5.0).cos();
    assert!(close(f.graph.lambda_max(), ring, 1e-12));

    let gains = auto_gains(&f);
    assert!(close(gains.kappa, 0.77133, 1e-5));
    assert!(close(gains.eps, 0.150679, 1e-5));
    assert!(close(gains.agents[0].tau, 0.28629, 1e-5));
    assert!(close(gains.agents[0].rho, 0.0121375, 1e-5));
    assert!(close(gains.agents[0].eta, 0.00951916, 1e-5));
}

/// `eps_bar` and `eps_under` against eigenvalues of the 2x2 blocks.
#[test]
fn closed_forms_match_eigenvalues() {
    let mut r = rng(30);
    for _ in 0..500 {
        let mu: f64 = r.random_range(0.01..3.0);
        let ell: f64 = r.random_range(-2.0..2.0);
        let k: f64 = r.random_range(0.01..3.0);
        let rn = DMatrix::from_row_slice(2, 2, &[mu, ell, -k, k]);
        let sym = &rn + rn.transpose();
        let lo = sym.symmetric_eigenvalues().min();
        assert!((tuning::eps_bar(mu, ell, k) - lo).abs() <= 1e-12 * (1.0 + lo.abs()));
        let rtr = rn.transpose() * &rn;
        let hi = rtr.symmetric_eigenvalues().max();
        assert!((tuning::eps_under(mu, ell, k) - 2.0 * hi).abs() <= 1e-10 * (1.0 + hi));
    }
}

#[test]
fn uniformity_violation_is_reported() {
    let ag = |a| AggregatorParams {
        a,
        b: 1.0,
        e: 0.0,
        xhat: 10.0,
    };
    let inst = MarketInstance::new(10.0, 100.0, 0.0, 10.0, vec![ag(0.001), ag(1.0)], vec![]).unwrap();
    assert!(matches!(
        tuning::check_uniformity(&inst),
        Err(GneError::UniformityViolated { .. })
    ));
    assert!(kappa_interval(&inst).is_err());
    assert!(tuning::default_kappa(&inst).is_err());
}

#[test]
fn default_gains_on_random_instances() {
    for f in random_fixtures(31, 30).into_iter().chain(named_fixtures()) {
        let fs = build_feasible_set(&f.instance);
        let gains = auto_gains(&f);
        assert!(admissible_kappa_interval(&f.instance).unwrap().contains(gains.kappa));
        let margin = verify_gains(&gains, &fs, &f.graph).unwrap();
        assert!(margin > 0.0);
        assert!(schur_conditions(&gains, &fs, &f.graph).holds());
        assert!(gains.xi > 0.5 && gains.theta > 0.0 && gains.theta < 1.0);
        let step = DEFAULT_SAFETY * 2.0 * gains.eps;
        for a in &gains.agents {
            assert!(close(a.tau, step, 1e-15) && close(a.delta, step, 1e-15));
            assert!(a.delta < 2.0 * gains.eps);
        }
    }
}

#[test]
fn schur_test_agrees_with_eigenvalue_test() {
    let mut r = rng(32);
    let mut seen = (0, 0);
    for f in random_fixtures(33, 15) {
        let fs = build_feasible_set(&f.instance);
        let base = auto_gains(&f);
        for _ in 0..10 {
            let s: f64 = r.random_range(0.5..3.0);
            let rows: Vec<AgentGains> = base
                .agents
                .iter()
                .map(|a| AgentGains {
                    tau: a.tau * s,
                    rho: a.rho * r.random_range(0.5..3.0),
                    eta: a.eta * r.random_range(0.5..3.0),
                    ..*a
                })
                .collect();
            let g = GainSet::from_steps(base.kappa, rows, base.eps, &fs, &f.graph).unwrap();
            let view = tuning::assemble_phi(&g, &fs, &f.graph).unwrap();
            let margin = view.lambda_min - 1.0 / (2.0 * g.eps);
            if margin.abs() < 1e-9 {
                continue;
            }
            let schur = schur_conditions(&g, &fs, &f.graph).holds();
            assert_eq!(schur, margin > 0.0, "margin {margin}");
            assert_eq!(verify_gains(&g, &fs, &f.graph).is_ok(), margin > 0.0);
            if schur {
                seen.0 += 1;
            } else {
                seen.1 += 1;
            }
        }
    }
    assert!(seen.0 > 0 && seen.1 > 0, "{seen:?}");
}

#[test]
fn invalid_gain_inputs() {
    let f = fixtures::t2();
    let fs = build_feasible_set(&f.instance);
    let base = auto_gains(&f);
    let mut rows = base.agents.clone();
    rows[1].eta = -1.0;
    assert!(GainSet::from_steps(base.kappa, rows, base.eps, &fs, &f.graph).is_err());
    assert!(GainSet::from_steps(base.kappa, base.agents[..1].to_vec(), base.eps, &fs, &f.graph).is_err());
    let rep = cocoercivity_constants(&f.instance, &f.graph, base.kappa).unwrap();
    assert!(default_gains(&rep, &fs, &f.graph, 1.0).is_err());
    assert!(cocoercivity_constants(&f.instance, &f.graph, 5.0).is_err());
}

#[test]
fn theta_from_xi_values() {
    assert!(close(theta_from_xi(1.0), 2.0 / 3.0, 1e-15));
    assert!(theta_from_xi(0.51) < 1.0 && theta_from_xi(100.0) > 0.5);
}
