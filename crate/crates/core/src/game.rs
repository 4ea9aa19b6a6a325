//! Objectives and pseudo-gradients of the bidding game.
//!
//! Each aggregator pays its prosumers `C_n(x) = (a_n x + b_n) x` and is paid
//! `p x_n` by the utility. Expressed in bids, agent `n` minimises
//! `J_n(beta) = C_n(x_n(beta)) - p(beta) x_n(beta)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Result};
use crate::market::{build_feasible_set, AggregatorParams, FeasibleSet, MarketInstance};

/// Prosumer payment `a x^2 + b x`.
pub fn cost(params: &AggregatorParams, x: f64) -> f64 {
    (params.a * x + params.b) * x
}

/// `C'_n(x) = 2 a x + b`.
pub fn marginal_cost(params: &AggregatorParams, x: f64) -> f64 {
    2.0 * params.a * x + params.b
}

/// Pseudo-gradient entry `f_n = dJ_n/dbeta_n` given the aggregate `1'beta`.
///
/// Needs only agent `n`'s private cost data plus the public `N`, `r`, `alpha`,
/// so it is also what an agent evaluates locally with `aggregate = N sigma_n`.
pub fn gradient_entry(
    params: &AggregatorParams,
    n_agents: usize,
    r: f64,
    alpha: f64,
    aggregate: f64,
    beta_n: f64,
) -> f64 {
    let big_n = n_agents as f64;
    let x_n = (r - aggregate) / big_n + beta_n;
    (big_n - 1.0) / big_n * marginal_cost(params, x_n)
        + ((aggregate - r) * (big_n - 2.0) + big_n * beta_n) / (alpha * big_n * big_n)
}

/// Market instance paired with its coupling constraints.
#[derive(Debug, Clone)]
pub struct GameModel {
    inst: MarketInstance,
    fs: FeasibleSet,
}

/// `F(beta) = matrix * beta + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineForm {
    pub fn apply(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * beta + &self.offset
    }
}

impl GameModel {
    pub fn new(inst: MarketInstance) -> Self {
        let fs = build_feasible_set(&inst);
        Self { inst, fs }
    }

    pub fn instance(&self) -> &MarketInstance {
        &self.inst
    }

    pub fn feasible_set(&self) -> &FeasibleSet {
        &self.fs
    }

    pub fn n_agents(&self) -> usize {
        self.inst.n_agents()
    }

    /// `J_n` evaluated through the bid-level expression.
    pub fn objective(&self, n: usize, beta: &[f64]) -> Result<f64> {
        check_len("bids", self.n_agents(), beta.len())?;
        let big_n = self.n_agents() as f64;
        let r = self.inst.r();
        let gap = r - beta.iter().sum::<f64>();
        let x_n = gap / big_n + beta[n];
        let revenue = (gap + big_n * beta[n]) * gap / (self.inst.alpha() * big_n * big_n);
        Ok(cost(self.inst.agent(n), x_n) - revenue)
    }

    /// Curvature of `J_n` in its own bid: `2 a_n ((N-1)/N)^2 + (2N-2)/(alpha N^2)`.
    pub fn own_curvature(&self, n: usize) -> f64 {
        let big_n = self.n_agents() as f64;
        let share = (big_n - 1.0) / big_n;
        2.0 * self.inst.agent(n).a * share * share
            + (2.0 * big_n - 2.0) / (self.inst.alpha() * big_n * big_n)
    }

    fn gradient_entry(&self, n: usize, aggregate: f64, beta_n: f64) -> f64 {
        gradient_entry(
            self.inst.agent(n),
            self.n_agents(),
            self.inst.r(),
            self.inst.alpha(),
            aggregate,
            beta_n,
        )
    }

    pub fn pseudo_gradient(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_len("bids", self.n_agents(), beta.len())?;
        let total: f64 = beta.iter().sum();
        Ok((0..self.n_agents())
            .map(|n| self.gradient_entry(n, total, beta[n]))
            .collect())
    }

    /// Extended pseudo-gradient entry: the aggregate `1'beta` replaced by the
    /// agent's estimate `N sigma_n`.
    pub fn local_gradient(&self, n: usize, beta_n: f64, sigma_n: f64) -> f64 {
        self.gradient_entry(n, self.n_agents() as f64 * sigma_n, beta_n)
    }

    pub fn extended_pseudo_gradient(&self, beta: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
        check_len("bids", self.n_agents(), beta.len())?;
        check_len("estimates", self.n_agents(), sigma.len())?;
        Ok((0..self.n_agents())
            .map(|n| self.local_gradient(n, beta[n], sigma[n]))
            .collect())
    }

    /// Closed form of `F` as an affine map.
    pub fn affine_form(&self) -> AffineForm {
        let nn = self.n_agents();
        let big_n = nn as f64;
        let alpha = self.inst.alpha();
        let r = self.inst.r();
        let share = (big_n - 1.0) / big_n;
        let coupling = (big_n - 2.0) / (alpha * big_n * big_n);
        let matrix = DMatrix::from_fn(nn, nn, |i, j| {
            let a = self.inst.agent(i).a;
            let centering = if i == j { 1.0 - 1.0 / big_n } else { -1.0 / big_n };
            let own = if i == j { 1.0 / (alpha * big_n) } else { 0.0 };
            share * 2.0 * a * centering + coupling + own
        });
        let offset = DVector::from_fn(nn, |i, _| {
            let ag = self.inst.agent(i);
            share * (2.0 * ag.a * r / big_n + ag.b) - r * coupling
        });
        AffineForm { matrix, offset }
    }
}
