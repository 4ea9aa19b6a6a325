//! Centralised reference solver and equilibrium certificates.
//!
//! The variational equilibrium solves `VI(K, F)`: find `beta* in K` with
//! `(x - beta*)' F(beta*) >= 0` for every `x in K`. `F` is affine and monotone
//! but not symmetric, so there is no potential to minimise; the oracle runs an
//! extragradient iteration with exact projections onto `K` instead. The shared
//! multiplier of the coupling rows is reconstructed afterwards by nonnegative
//! least squares on the stationarity condition.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_len, GneError, Result};
use crate::game::GameModel;
use crate::market::{project_onto_feasible, FeasibleSet, ProjectionOptions};

/// Rows with `|A_tilde beta - d|` below this count as active for multiplier
/// recovery.
pub const ACTIVE_ROW_TOL: f64 = 1e-6;

/// A bid within this distance of a box bound is treated as sitting on it.
pub const BOX_ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Target for the natural residual `||beta - P_K(beta - F(beta))||_inf`.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction of `1/||M||` used as the extragradient step.
    pub step_safety: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1_000_000,
            step_safety: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VgneCertificate {
    pub beta_star: Vec<f64>,
    /// Shared multiplier of the `M` coupling rows.
    pub gamma2: Vec<f64>,
    pub kkt_residual: f64,
    /// `|beta*_n - BR_n(beta*_{-n})|` per agent.
    pub best_response_gap: Vec<f64>,
    pub natural_residual: f64,
    pub iterations: usize,
}

fn projector(fs: &FeasibleSet) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>> + '_ {
    let opts = ProjectionOptions::default();
    move |p| Ok(project_onto_feasible(fs, p, &opts)?.point)
}

/// `||beta - P_K(beta - F(beta))||_inf`.
pub fn natural_residual(gm: &GameModel, beta: &[f64]) -> Result<f64> {
    check_len("bids", gm.n_agents(), beta.len())?;
    let af = gm.affine_form();
    let b = DVector::from_column_slice(beta);
    let p = projector(gm.feasible_set())(&(&b - af.apply(&b)))?;
    Ok((b - p).amax())
}

pub fn solve_vgne(gm: &GameModel, opts: &OracleOptions) -> Result<VgneCertificate> {
    let fs = gm.feasible_set();
    let start = fs.slater_point(1e-9)?;
    let af = gm.affine_form();
    let proj = projector(fs);
    let step = opts.step_safety / af.matrix.clone().svd(false, false).singular_values.max();

    let mut beta = start;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if iterations % 10 == 0 {
            residual = (&beta - proj(&(&beta - af.apply(&beta)))?).amax();
            if residual <= opts.tol {
                break;
            }
        }
        let y = proj(&(&beta - af.apply(&beta) * step))?;
        beta = proj(&(&beta - af.apply(&y) * step))?;
        iterations += 1;
    }
    if residual > opts.tol {
        return Err(GneError::OracleNotConverged {
            iterations,
            residual,
        });
    }

    let beta_star: Vec<f64> = beta.iter().copied().collect();
    let gamma2 = recover_multiplier(gm, &beta_star)?;
    let kkt = kkt_residual(gm, &beta_star, &gamma2)?;
    let best_response_gap = (0..gm.n_agents())
        .map(|n| best_response(gm, n, &beta_star).map(|br| (br - beta_star[n]).abs()))
        .collect::<Result<Vec<_>>>()?;
    Ok(VgneCertificate {
        beta_star,
        gamma2,
        kkt_residual: kkt,
        best_response_gap,
        natural_residual: residual,
        iterations,
    })
}

/// Multiplier of the coupling rows at `beta`: nonnegative least squares on
/// `F(beta) + A_A' gamma - nu_lo + nu_hi = 0` over the active rows `A` and
/// active box bounds.
pub fn recover_multiplier(gm: &GameModel, beta: &[f64]) -> Result<Vec<f64>> {
    let fs = gm.feasible_set();
    let b = DVector::from_column_slice(beta);
    let f = gm.affine_form().apply(&b);
    let slack = fs.slack_violation(&b);
    let active: Vec<usize> = (0..fs.n_rows())
        .filter(|&i| slack[i].abs() <= ACTIVE_ROW_TOL)
        .collect();
    let n = fs.n_agents();
    let mut cols: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| fs.a_tilde().row(i).transpose())
        .collect();
    for j in 0..n {
        if (beta[j] - fs.beta_min()).abs() <= ACTIVE_ROW_TOL {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            cols.push(e);
        }
        if (beta[j] - fs.beta_max()).abs() <= ACTIVE_ROW_TOL {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            cols.push(e);
        }
    }
    let mut gamma = vec![0.0; fs.n_rows()];
    if cols.is_empty() {
        return Ok(gamma);
    }
    let c = DMatrix::from_columns(&cols);
    let x = nnls(&c, &(-f));
    for (k, &i) in active.iter().enumerate() {
        gamma[i] = x[k];
    }
    Ok(gamma)
}

/// Lawson-Hanson active-set solver for `min ||C x - b||` subject to `x >= 0`.
pub fn nnls(c: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = c.ncols();
    let tol = 1e-12 * (1.0 + c.amax() * b.amax());
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    for _ in 0..3 * k + 10 {
        let w = c.transpose() * (b - c * &x);
        let candidate = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            if idx.is_empty() {
                break;
            }
            let sub = DMatrix::from_columns(&idx.iter().map(|&i| c.column(i)).collect::<Vec<_>>());
            let sol = sub
                .svd(true, true)
                .solve(b, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            let mut z = DVector::zeros(k);
            for (p, &i) in idx.iter().enumerate() {
                z[i] = sol[p];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&i| z[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Largest of the stationarity, primal feasibility and complementarity
/// residuals of `VI(K, F)` at `(beta, gamma2)`.
///
/// Stationarity is the distance of `-F(beta) - A_tilde' gamma2` to the normal
/// cone of the box at `beta`; complementarity is `sum_i gamma2_i |d_i -
/// (A_tilde beta)_i|`, which coincides with `|gamma2'(d - A_tilde beta)|` at
/// feasible points.
pub fn kkt_residual(gm: &GameModel, beta: &[f64], gamma2: &[f64]) -> Result<f64> {
    let fs = gm.feasible_set();
    check_len("bids", fs.n_agents(), beta.len())?;
    check_len("multiplier", fs.n_rows(), gamma2.len())?;
    let b = DVector::from_column_slice(beta);
    let g = DVector::from_column_slice(gamma2);
    let force = -(gm.affine_form().apply(&b) + fs.a_tilde().transpose() * &g);

    let (lo, hi) = (fs.beta_min(), fs.beta_max());
    let mut stationarity = 0.0f64;
    let mut box_violation = 0.0f64;
    for j in 0..fs.n_agents() {
        let at_lo = (beta[j] - lo).abs() <= BOX_ACTIVE_TOL * (1.0 + lo.abs());
        let at_hi = (beta[j] - hi).abs() <= BOX_ACTIVE_TOL * (1.0 + hi.abs());
        let dist = match (at_lo, at_hi) {
            (true, true) => 0.0,
            (true, false) => force[j].max(0.0),
            (false, true) => (-force[j]).max(0.0),
            (false, false) => force[j].abs(),
        };
        stationarity = stationarity.max(dist);
        box_violation = box_violation.max(lo - beta[j]).max(beta[j] - hi);
    }
    let slack = fs.slack_violation(&b);
    let primal = slack.max().max(0.0).max(box_violation);
    let complementarity: f64 = g.iter().zip(slack.iter()).map(|(gi, si)| gi * si.abs()).sum();
    let dual_sign = g.iter().fold(0.0f64, |acc, &v| acc.max(-v));
    // `+ 0.0` turns a signed zero into `0`.
    Ok(stationarity
        .max(primal)
        .max(complementarity.abs())
        .max(dual_sign)
        + 0.0)
}

/// Admissible interval of agent `n`'s bid given the others' bids.
pub fn feasible_interval(fs: &FeasibleSet, n: usize, beta: &[f64]) -> Result<(f64, f64)> {
    check_len("bids", fs.n_agents(), beta.len())?;
    let (mut lo, mut hi) = (fs.beta_min(), fs.beta_max());
    for i in 0..fs.n_rows() {
        let coef = fs.a_tilde()[(i, n)];
        let others: f64 = (0..fs.n_agents())
            .filter(|&m| m != n)
            .map(|m| fs.a_tilde()[(i, m)] * beta[m])
            .sum();
        let rest = fs.d()[i] - others;
        if coef > 1e-14 {
            hi = hi.min(rest / coef);
        } else if coef < -1e-14 {
            lo = lo.max(rest / coef);
        } else if rest < 0.0 {
            return Err(GneError::EmptyBestResponse { agent: n, lo, hi });
        }
    }
    // A pinned bid can invert the interval by rounding alone.
    let slack = 1e-9 * (1.0 + lo.abs() + hi.abs());
    if lo > hi + slack {
        return Err(GneError::EmptyBestResponse { agent: n, lo, hi });
    }
    if lo > hi {
        let mid = (0.5 * (lo + hi)).clamp(fs.beta_min(), fs.beta_max());
        return Ok((mid, mid));
    }
    Ok((lo, hi))
}

/// Minimiser of `J_n(., beta_{-n})` over the admissible interval. Entry `n` of
/// `beta` is ignored.
pub fn best_response(gm: &GameModel, n: usize, beta: &[f64]) -> Result<f64> {
    let (lo, hi) = feasible_interval(gm.feasible_set(), n, beta)?;
    let mut probe = beta.to_vec();
    probe[n] = 0.0;
    let slope = gm.pseudo_gradient(&probe)?[n];
    let unconstrained = -slope / gm.own_curvature(n);
    Ok(unconstrained.clamp(lo, hi))
}

/// Exhaustive check (for `N <= 3`) that no agent can lower its objective by
/// moving along a grid of its admissible interval.
pub fn grid_certify(gm: &GameModel, beta_star: &[f64], grid_step: f64) -> Result<bool> {
    let n_agents = gm.n_agents();
    if n_agents > 3 {
        return Err(GneError::InvalidInstance(format!(
            "grid certification is limited to 3 agents, got {n_agents}"
        )));
    }
    if !(grid_step > 0.0) {
        return Err(GneError::InvalidInstance("grid step must be positive".into()));
    }
    let fs = gm.feasible_set();
    for n in 0..n_agents {
        let (lo, hi) = feasible_interval(fs, n, beta_star)?;
        let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        if beta_star[n] < lo - slack || beta_star[n] > hi + slack {
            return Ok(false);
        }
        let best = gm.objective(n, beta_star)?;
        let tol = 1e-9 * (1.0 + best.abs());
        let steps = ((hi - lo) / grid_step).floor() as usize;
        let mut probe = beta_star.to_vec();
        for k in 0..=steps + 1 {
            probe[n] = (lo + k as f64 * grid_step).min(hi);
            if gm.objective(n, &probe)? + tol < best {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
