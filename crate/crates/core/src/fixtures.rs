//! Reference instances and a seeded generator of random ones.
//!
//! `cs5` uses the five-aggregator data of the 33-bus case (costs, net loads,
//! capacities, requirement, bid box and line limits). Its line-flow
//! distribution factors and communication weights are not published with that
//! data; the values here are derived, see [`cs5_line_flow_factors`].

use rand::Rng;

use crate::game::GameModel;
use crate::graph::CommGraph;
use crate::market::{AggregatorParams, Line, MarketInstance};
use crate::tuning;

#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: String,
    pub instance: MarketInstance,
    pub graph: CommGraph,
}

fn t2_agents() -> Vec<AggregatorParams> {
    vec![
        AggregatorParams {
            a: 0.1,
            b: 1.0,
            e: 0.0,
            xhat: 10.0,
        };
        2
    ]
}

/// Two symmetric agents, `r = 10`, `alpha = 1`, bids in `[0, 10]`, no lines.
pub fn t2() -> Fixture {
    Fixture {
        name: "t2".into(),
        instance: MarketInstance::new(10.0, 1.0, 0.0, 10.0, t2_agents(), vec![]).unwrap(),
        graph: CommGraph::new(2, &[(0, 1, 1.0)]).unwrap(),
    }
}

/// `t2` with bids allowed in `[-5, 10]`; the equilibrium is interior.
pub fn t2i() -> Fixture {
    Fixture {
        name: "t2i".into(),
        instance: MarketInstance::new(10.0, 1.0, -5.0, 10.0, t2_agents(), vec![]).unwrap(),
        graph: CommGraph::new(2, &[(0, 1, 1.0)]).unwrap(),
    }
}

pub const CS5_A: [f64; 5] = [0.0050, 0.0065, 0.0085, 0.0070, 0.0095];
pub const CS5_B: [f64; 5] = [0.40, 0.38, 0.36, 0.37, 0.80];
pub const CS5_E: [f64; 5] = [1250.0, -1300.0, 1050.0, 1700.0, 1480.0];
pub const CS5_XHAT: [f64; 5] = [250.0, 200.0, 250.0, 110.0, 220.0];
pub const CS5_FHAT: [f64; 4] = [1400.0, 6000.0, 2000.0, 2000.0];

/// Distribution factors of the tie lines (3,19), (4,5), (7,26), (9,10).
///
/// Derived for a radial feeder fed from the slack bus in area 1: the flow on a
/// tie line equals the net load of all areas downstream of it, so
/// `pi[l][n] = 1` when area `n` lies below line `l` and `0` otherwise.
/// Area 2 sits below (3,19); areas 3-5 below (4,5); area 4 below (7,26);
/// area 5 below (9,10).
pub fn cs5_line_flow_factors() -> [[f64; 5]; 4] {
    [
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ]
}

/// Unit-weight ring 1-2-3-4-5-1.
pub fn cs5_edges() -> Vec<(usize, usize, f64)> {
    (0..5).map(|i| (i, (i + 1) % 5, 1.0)).collect()
}

pub fn cs5() -> Fixture {
    let agents = (0..5)
        .map(|i| AggregatorParams {
            a: CS5_A[i],
            b: CS5_B[i],
            e: CS5_E[i],
            xhat: CS5_XHAT[i],
        })
        .collect();
    let lines = cs5_line_flow_factors()
        .iter()
        .zip(CS5_FHAT)
        .map(|(pi, fhat)| Line {
            pi: pi.to_vec(),
            fhat,
        })
        .collect();
    Fixture {
        name: "cs5".into(),
        instance: MarketInstance::new(600.0, 1.0, 0.0, 150.0, agents, lines).unwrap(),
        graph: CommGraph::new(5, &cs5_edges()).unwrap(),
    }
}

/// Random instance with `n_agents` aggregators and `n_lines` lines.
///
/// Costs `a in [0.001, 0.02]`, `b in [0.1, 1]`, `alpha in [0.5, 2]`.
/// Capacities and line limits are sized around the constant-bid point, where
/// every allocation equals `r/N`, so that point is strictly feasible.
/// Draws that violate the curvature uniformity condition, have an empty
/// admissible `kappa` range, or a pseudo-gradient that is not strongly
/// monotone are rejected and redrawn. The graph is a random spanning tree plus
/// extra edges, weights in `[0.5, 1.5]`.
pub fn random_instance<R: Rng>(rng: &mut R, n_agents: usize, n_lines: usize) -> Fixture {
    loop {
        if let Some(f) = try_random_instance(rng, n_agents, n_lines) {
            return f;
        }
    }
}

fn try_random_instance<R: Rng>(rng: &mut R, n: usize, h: usize) -> Option<Fixture> {
    let alpha = rng.random_range(0.5..2.0);
    let share = rng.random_range(20.0..80.0);
    let r = share * n as f64;
    let beta_min = -rng.random_range(0.0..0.5) * share;
    let beta_max = rng.random_range(0.5..1.5) * share;
    let agents: Vec<AggregatorParams> = (0..n)
        .map(|_| AggregatorParams {
            a: rng.random_range(0.001..0.02),
            b: rng.random_range(0.1..1.0),
            e: rng.random_range(-3.0..3.0) * share,
            xhat: share * rng.random_range(1.01..1.2),
        })
        .collect();
    let lines = (0..h)
        .map(|_| {
            let pi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let flow: f64 = pi
                .iter()
                .zip(&agents)
                .map(|(p, ag)| p * (ag.e - share))
                .sum();
            Line {
                fhat: flow.abs() + rng.random_range(0.01..0.15) * share,
                pi,
            }
        })
        .collect();
    let inst = MarketInstance::new(r, alpha, beta_min, beta_max, agents, lines).ok()?;

    tuning::admissible_kappa_interval(&inst).ok()?;
    let m = GameModel::new(inst.clone()).affine_form().matrix;
    if tuning::min_eigenvalue(&(&m + m.transpose())) <= 1e-9 {
        return None;
    }

    let mut edges: Vec<(usize, usize, f64)> = (1..n)
        .map(|i| (rng.random_range(0..i), i, rng.random_range(0.5..1.5)))
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            let present = edges
                .iter()
                .any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i));
            if !present && rng.random_bool(0.3) {
                edges.push((i, j, rng.random_range(0.5..1.5)));
            }
        }
    }
    let graph = CommGraph::new(n, &edges).ok()?;
    Some(Fixture {
        name: format!("random-n{n}-h{h}"),
        instance: inst,
        graph,
    })
}
