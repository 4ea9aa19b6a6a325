//! Shared helpers for the integration tests.
//!
//! The dense step below rebuilds the whole iteration from full matrices
//! (Laplacian from the edge list, block-diagonal coupling, stacked `d`), so it
//! shares no code path with the per-agent update it is compared against.

#![allow(dead_code)]

use gneflex_core::fixtures::{self, Fixture};
use gneflex_core::graph::CommGraph;
use gneflex_core::solver::{DistributedSolver, SolverState};
use gneflex_core::tuning::{self, GainSet, OmegaLayout, DEFAULT_SAFETY};
use gneflex_core::{FeasibleSet, GameModel, MarketInstance};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn named_fixtures() -> Vec<Fixture> {
    vec![fixtures::t2(), fixtures::t2i(), fixtures::cs5()]
}

/// `count` random fixtures with `N in 2..=6`, `H in 0..=3`.
pub fn random_fixtures(seed: u64, count: usize) -> Vec<Fixture> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n = r.random_range(2..=6);
            let h = r.random_range(0..=3);
            fixtures::random_instance(&mut r, n, h)
        })
        .collect()
}

pub fn auto_gains(f: &Fixture) -> GainSet {
    let k = tuning::default_kappa(&f.instance).unwrap();
    let rep = tuning::cocoercivity_constants(&f.instance, &f.graph, k).unwrap();
    let fs = gneflex_core::market::build_feasible_set(&f.instance);
    tuning::default_gains(&rep, &fs, &f.graph, DEFAULT_SAFETY).unwrap()
}

pub fn solver_for(f: &Fixture) -> DistributedSolver {
    let gains = auto_gains(f);
    DistributedSolver::new(GameModel::new(f.instance.clone()), f.graph.clone(), gains).unwrap()
}

/// Weighted Laplacian assembled directly from the edge list.
pub fn dense_laplacian(g: &CommGraph) -> DMatrix<f64> {
    let n = g.n_nodes();
    let mut l = DMatrix::zeros(n, n);
    for e in g.edges() {
        l[(e.a, e.b)] -= e.weight;
        l[(e.b, e.a)] -= e.weight;
        l[(e.a, e.a)] += e.weight;
        l[(e.b, e.b)] += e.weight;
    }
    l
}

pub fn kron_eye(l: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    l.kronecker(&DMatrix::identity(m, m))
}

/// Extended pseudo-gradient written out from its closed form.
pub fn f_hat(inst: &MarketInstance, beta: &DVector<f64>, sigma: &DVector<f64>) -> DVector<f64> {
    let n = inst.n_agents() as f64;
    let (r, alpha) = (inst.r(), inst.alpha());
    DVector::from_fn(inst.n_agents(), |j, _| {
        let ag = inst.agent(j);
        let x = (r - n * sigma[j]) / n + beta[j];
        (n - 1.0) / n * (2.0 * ag.a * x + ag.b)
            + ((n * sigma[j] - r) * (n - 2.0) + n * beta[j]) / (alpha * n * n)
    })
}

/// Full-matrix data of the compact iteration.
pub struct Dense {
    pub lay: OmegaLayout,
    pub l: DMatrix<f64>,
    pub ll: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub dbar: DVector<f64>,
    pub inst: MarketInstance,
    pub fs: FeasibleSet,
    pub gains: GainSet,
}

impl Dense {
    pub fn new(f: &Fixture, gains: &GainSet) -> Self {
        let fs = gneflex_core::market::build_feasible_set(&f.instance);
        let (n, m) = (fs.n_agents(), fs.n_rows());
        let l = dense_laplacian(&f.graph);
        let ll = kron_eye(&l, m);
        let mut abar = DMatrix::zeros(n * m, n);
        let mut dbar = DVector::zeros(n * m);
        for j in 0..n {
            for i in 0..m {
                abar[(j * m + i, j)] = fs.a_tilde()[(i, j)];
                dbar[j * m + i] = fs.d_split()[j][i];
            }
        }
        Self {
            lay: OmegaLayout::new(n, m),
            l,
            ll,
            abar,
            dbar,
            inst: f.instance.clone(),
            fs,
            gains: gains.clone(),
        }
    }

    fn diag(&self, pick: impl Fn(&tuning::AgentGains) -> f64, width: usize) -> DVector<f64> {
        DVector::from_fn(self.lay.n * width, |i, _| pick(&self.gains.agents[i / width]))
    }

    /// One step of the compact iteration on the stacked iterate.
    pub fn step(&self, w: &DVector<f64>) -> DVector<f64> {
        let (n, m) = (self.lay.n, self.lay.m);
        let lay = self.lay;
        let beta = w.rows(lay.beta(), n).into_owned();
        let psi = w.rows(lay.psi(), n).into_owned();
        let sigma = w.rows(lay.sigma(), n).into_owned();
        let z = w.rows(lay.z(), n * m).into_owned();
        let lambda = w.rows(lay.lambda(), n * m).into_owned();
        let tau = self.diag(|g| g.tau, 1);
        let ups = self.diag(|g| g.upsilon, 1);
        let rho = self.diag(|g| g.rho, 1);
        let del = self.diag(|g| g.delta, m);
        let eta = self.diag(|g| g.eta, m);
        let kappa = self.gains.kappa;

        let grad = f_hat(&self.inst, &beta, &sigma) + self.abar.transpose() * &lambda;
        let beta1 = (&beta - tau.component_mul(&grad))
            .map(|v| v.clamp(self.fs.beta_min(), self.fs.beta_max()));
        let psi1 = &psi + ups.component_mul(&(&self.l * &sigma));
        let sigma1 = &sigma
            + rho.component_mul(
                &((&beta - &sigma) * kappa - &self.l * (&psi1 * 2.0 - &psi)),
            );
        let z1 = &z + del.component_mul(&(&self.ll * &lambda));
        let pull = &self.ll * &lambda + &self.dbar - &self.abar * (&beta1 * 2.0 - &beta)
            + &self.ll * (&z1 * 2.0 - &z);
        let lambda1 = (&lambda - eta.component_mul(&pull)).map(|v| v.max(0.0));

        let mut out = DVector::zeros(lay.dim());
        out.rows_mut(lay.beta(), n).copy_from(&beta1);
        out.rows_mut(lay.psi(), n).copy_from(&psi1);
        out.rows_mut(lay.sigma(), n).copy_from(&sigma1);
        out.rows_mut(lay.z(), n * m).copy_from(&z1);
        out.rows_mut(lay.lambda(), n * m).copy_from(&lambda1);
        out
    }
}

/// A random iterate with bids in the box and nonnegative multipliers.
pub fn random_omega<R: Rng>(rng: &mut R, fs: &FeasibleSet, scale: f64) -> DVector<f64> {
    let lay = OmegaLayout::new(fs.n_agents(), fs.n_rows());
    DVector::from_fn(lay.dim(), |i, _| {
        if i < lay.psi() {
            rng.random_range(fs.beta_min()..=fs.beta_max())
        } else if i < lay.lambda() {
            scale * rng.random_range(-1.0..1.0)
        } else if rng.random_bool(0.3) {
            0.0
        } else {
            scale * rng.random_range(0.0..1.0)
        }
    })
}

pub fn state_from(s: &DistributedSolver, w: &DVector<f64>) -> SolverState {
    SolverState::from_omega(s.layout(), w, 0).unwrap()
}

/// `sqrt(v' Phi v)`.
pub fn phi_norm(phi: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(phi * v)).max(0.0).sqrt()
}

pub fn inf_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}
