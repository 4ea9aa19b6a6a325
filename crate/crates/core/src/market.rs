//! Demand-response market: clearing price, load allocation and the polyhedral
//! set of admissible bids.
//!
//! Bids `beta` are in kWh, prices in currency/kWh. The utility clears
//!
//! ```text
//!   p   = (r - 1'beta) / (alpha N)
//!   x_n = (r - 1'beta) / N + beta_n          (so sum_n x_n = r)
//! ```
//!
//! and requires `0 <= x <= xhat` and `|Pi (e - x)| <= fhat` line-wise. Written
//! over the bids these become `A_tilde beta <= d` with
//! `A_tilde = [A; -A; -Pi A; Pi A]`, `A = I - 11'/N`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, GneError, Result};

/// Private data of one aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    /// Cost curvature, currency/kWh^2.
    pub a: f64,
    /// Cost intercept, currency/kWh.
    pub b: f64,
    /// Pre-scheduled net load, kWh.
    pub e: f64,
    /// Load adjustment capacity, kWh.
    pub xhat: f64,
}

/// A distribution line: flow distribution factors (one per agent) and capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub pi: Vec<f64>,
    /// Capacity, kWh.
    pub fhat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    r: f64,
    alpha: f64,
    beta_min: f64,
    beta_max: f64,
    agents: Vec<AggregatorParams>,
    lines: Vec<Line>,
}

impl MarketInstance {
    pub fn new(
        r: f64,
        alpha: f64,
        beta_min: f64,
        beta_max: f64,
        agents: Vec<AggregatorParams>,
        lines: Vec<Line>,
    ) -> Result<Self> {
        let inst = Self {
            r,
            alpha,
            beta_min,
            beta_max,
            agents,
            lines,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GneError::InvalidInstance(m));
        let all_finite = [self.r, self.alpha, self.beta_min, self.beta_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite scalar parameter".into());
        }
        if self.agents.len() < 2 {
            return bad(format!("need at least 2 agents, got {}", self.agents.len()));
        }
        if self.r < 0.0 {
            return bad(format!("requirement r must be >= 0, got {}", self.r));
        }
        if self.alpha <= 0.0 {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.beta_min > self.beta_max {
            return bad(format!(
                "bid box is empty: [{}, {}]",
                self.beta_min, self.beta_max
            ));
        }
        for (i, ag) in self.agents.iter().enumerate() {
            if !(ag.a > 0.0 && ag.b > 0.0) {
                return bad(format!("agent {}: a and b must be > 0", i + 1));
            }
            if !(ag.xhat >= 0.0) || !ag.e.is_finite() {
                return bad(format!("agent {}: xhat must be >= 0 and e finite", i + 1));
            }
        }
        for (l, line) in self.lines.iter().enumerate() {
            if line.pi.len() != self.agents.len() {
                return bad(format!(
                    "line {}: {} distribution factors for {} agents",
                    l + 1,
                    line.pi.len(),
                    self.agents.len()
                ));
            }
            if !(line.fhat >= 0.0) {
                return bad(format!("line {}: capacity must be >= 0", l + 1));
            }
            if line.pi.iter().any(|v| !v.is_finite()) {
                return bad(format!("line {}: non-finite distribution factor", l + 1));
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }
    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }
    pub fn agents(&self) -> &[AggregatorParams] {
        &self.agents
    }
    pub fn agent(&self, n: usize) -> &AggregatorParams {
        &self.agents[n]
    }
    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// Same instance with a different bid box.
    pub fn with_box(&self, beta_min: f64, beta_max: f64) -> Result<Self> {
        let mut out = self.clone();
        out.beta_min = beta_min;
        out.beta_max = beta_max;
        out.validate()?;
        Ok(out)
    }

    /// Centering projector `A = I - 11'/N`.
    pub fn centering(&self) -> DMatrix<f64> {
        let n = self.n_agents();
        let inv = 1.0 / n as f64;
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - inv } else { -inv })
    }

    /// `H x N` matrix of line-flow distribution factors.
    pub fn pi_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_lines(), self.n_agents(), |l, n| self.lines[l].pi[n])
    }

    /// `c = (r/N) 1`.
    pub fn offset(&self) -> DVector<f64> {
        DVector::from_element(self.n_agents(), self.r / self.n_agents() as f64)
    }

    pub fn in_box(&self, v: f64) -> bool {
        v >= self.beta_min && v <= self.beta_max
    }

    fn warn_outside_box(&self, beta: &[f64]) {
        if let Some(i) = beta.iter().position(|&v| !self.in_box(v)) {
            warn!(
                "bid of agent {} ({}) outside [{}, {}]",
                i + 1,
                beta[i],
                self.beta_min,
                self.beta_max
            );
        }
    }
}

/// Clearing price `(r - 1'beta) / (alpha N)`.
pub fn clearing_price(inst: &MarketInstance, beta: &[f64]) -> Result<f64> {
    check_len("bids", inst.n_agents(), beta.len())?;
    inst.warn_outside_box(beta);
    let n = inst.n_agents() as f64;
    let total: f64 = beta.iter().sum();
    Ok((inst.r - total) / (inst.alpha * n))
}

/// Cleared load adjustment `x_n = (r - 1'beta)/N + beta_n`.
pub fn load_adjustment(inst: &MarketInstance, beta: &[f64]) -> Result<Vec<f64>> {
    check_len("bids", inst.n_agents(), beta.len())?;
    let n = inst.n_agents() as f64;
    let total: f64 = beta.iter().sum();
    let share = (inst.r - total) / n;
    Ok(beta.iter().map(|b| share + b).collect())
}

/// Coupling constraints `A_tilde beta <= d` together with the bid box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibleSet {
    n: usize,
    h: usize,
    a_tilde: DMatrix<f64>,
    d: DVector<f64>,
    d_split: Vec<DVector<f64>>,
    beta_min: f64,
    beta_max: f64,
}

impl FeasibleSet {
    pub fn n_agents(&self) -> usize {
        self.n
    }
    pub fn n_lines(&self) -> usize {
        self.h
    }
    /// Number of coupling rows, `2N + 2H`.
    pub fn n_rows(&self) -> usize {
        2 * self.n + 2 * self.h
    }
    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }
    pub fn d_split(&self) -> &[DVector<f64>] {
        &self.d_split
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    /// Column `n` of `A_tilde`: the coupling footprint of agent `n`'s bid.
    pub fn column(&self, n: usize) -> DVector<f64> {
        self.a_tilde.column(n).into_owned()
    }

    pub fn clamp_to_box(&self, v: f64) -> f64 {
        v.clamp(self.beta_min, self.beta_max)
    }

    /// Largest singular value of `blkdiag(A_tilde_n)`, i.e. the largest column norm.
    pub fn block_column_norm(&self) -> f64 {
        (0..self.n)
            .map(|j| self.a_tilde.column(j).norm())
            .fold(0.0, f64::max)
    }

    /// Row-wise `A_tilde beta - d`.
    pub fn slack_violation(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.a_tilde * beta - &self.d
    }

    /// A point of the box with every coupling slack at least `min_slack`.
    pub fn slater_point(&self, min_slack: f64) -> Result<DVector<f64>> {
        let mid = DVector::from_element(self.n, 0.5 * (self.beta_min + self.beta_max));
        let shrunk = self.d.add_scalar(-2.0 * min_slack);
        let p = dykstra(self, &mid, &shrunk, &ProjectionOptions::default()).map_err(|e| {
            GneError::EmptyFeasibleSet(format!("no strictly feasible bid found ({e})"))
        })?;
        let worst = self.slack_violation(&p.point).max();
        if worst > -min_slack {
            return Err(GneError::EmptyFeasibleSet(format!(
                "largest coupling slack {:.3e} below {:.1e}",
                -worst, min_slack
            )));
        }
        Ok(p.point)
    }
}

/// Assemble the stacked constraints and the per-agent split of `d`.
pub fn build_feasible_set(inst: &MarketInstance) -> FeasibleSet {
    let n = inst.n_agents();
    let h = inst.n_lines();
    let m = 2 * n + 2 * h;
    let a = inst.centering();
    let pi = inst.pi_matrix();
    let pa = &pi * &a;
    let c = inst.offset();
    let xhat = DVector::from_iterator(n, inst.agents.iter().map(|ag| ag.xhat));
    let e = DVector::from_iterator(n, inst.agents.iter().map(|ag| ag.e));
    let fhat = DVector::from_iterator(h, inst.lines.iter().map(|l| l.fhat));

    let mut a_tilde = DMatrix::zeros(m, n);
    a_tilde.view_mut((0, 0), (n, n)).copy_from(&a);
    a_tilde.view_mut((n, 0), (n, n)).copy_from(&(-&a));
    a_tilde.view_mut((2 * n, 0), (h, n)).copy_from(&(-&pa));
    a_tilde.view_mut((2 * n + h, 0), (h, n)).copy_from(&pa);

    let pi_ec = &pi * (&e - &c);
    let mut d = DVector::zeros(m);
    d.rows_mut(0, n).copy_from(&(&xhat - &c));
    d.rows_mut(n, n).copy_from(&c);
    d.rows_mut(2 * n, h).copy_from(&(&fhat - &pi_ec));
    d.rows_mut(2 * n + h, h).copy_from(&(&fhat + &pi_ec));

    // Uniform share of the public data plus each agent's private terms.
    let inv_n = 1.0 / n as f64;
    let pi_c = &pi * &c;
    let mut shared = DVector::zeros(m);
    shared.rows_mut(0, n).copy_from(&(-&c * inv_n));
    shared.rows_mut(n, n).copy_from(&(&c * inv_n));
    shared
        .rows_mut(2 * n, h)
        .copy_from(&((&fhat + &pi_c) * inv_n));
    shared
        .rows_mut(2 * n + h, h)
        .copy_from(&((&fhat - &pi_c) * inv_n));
    let d_split = (0..n)
        .map(|j| {
            let mut dj = shared.clone();
            dj[j] += xhat[j];
            let pe = pi.column(j) * e[j];
            for l in 0..h {
                dj[2 * n + l] -= pe[l];
                dj[2 * n + h + l] += pe[l];
            }
            dj
        })
        .collect();

    FeasibleSet {
        n,
        h,
        a_tilde,
        d,
        d_split,
        beta_min: inst.beta_min,
        beta_max: inst.beta_max,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibilityReport {
    pub box_ok: bool,
    pub coupling_ok: bool,
    /// Agents (0-based) whose bid is outside the box.
    pub box_violations: Vec<usize>,
    /// Coupling rows (0-based) with `A_tilde beta > d + tol`.
    pub violated_rows: Vec<usize>,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.box_ok && self.coupling_ok
    }
}

pub fn check_feasibility(fs: &FeasibleSet, beta: &[f64], tol: f64) -> Result<FeasibilityReport> {
    check_len("bids", fs.n, beta.len())?;
    let b = DVector::from_column_slice(beta);
    let box_violations: Vec<usize> = beta
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v >= fs.beta_min && v <= fs.beta_max))
        .map(|(i, _)| i)
        .collect();
    let viol = fs.slack_violation(&b);
    let violated_rows: Vec<usize> = viol
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v <= tol))
        .map(|(i, _)| i)
        .collect();
    Ok(FeasibilityReport {
        box_ok: box_violations.is_empty(),
        coupling_ok: violated_rows.is_empty(),
        box_violations,
        violated_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_cycles: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_cycles: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: DVector<f64>,
    pub cycles: usize,
}

/// Euclidean projection onto `K = box ∩ {A_tilde beta <= d}`.
pub fn project_onto_feasible(
    fs: &FeasibleSet,
    point: &DVector<f64>,
    opts: &ProjectionOptions,
) -> Result<Projection> {
    check_len("point", fs.n, point.len())?;
    dykstra(fs, point, &fs.d, opts)
}

/// Closest admissible bids to `beta`.
pub fn modify_bids(fs: &FeasibleSet, beta: &[f64]) -> Result<Vec<f64>> {
    check_len("bids", fs.n, beta.len())?;
    let p = project_onto_feasible(fs, &DVector::from_column_slice(beta), &Default::default())
        .map_err(|e| match e {
            GneError::ProjectionNotConverged { .. } => GneError::EmptyFeasibleSet(e.to_string()),
            other => other,
        })?;
    Ok(p.point.iter().copied().collect())
}

/// Dykstra's alternating projections over the halfspaces `a_i' x <= rhs_i`
/// followed by the box. The box comes last in every cycle, so the returned
/// point is always inside it.
fn dykstra(
    fs: &FeasibleSet,
    start: &DVector<f64>,
    rhs: &DVector<f64>,
    opts: &ProjectionOptions,
) -> Result<Projection> {
    let n = fs.n;
    let rows: Vec<(DVector<f64>, f64)> = (0..fs.a_tilde.nrows())
        .map(|i| {
            let r = fs.a_tilde.row(i).transpose();
            let nsq = r.norm_squared();
            (r, nsq)
        })
        .collect();
    for (i, (_, nsq)) in rows.iter().enumerate() {
        if *nsq <= f64::EPSILON && rhs[i] < 0.0 {
            return Err(GneError::EmptyFeasibleSet(format!(
                "row {} reads 0 <= {}",
                i + 1,
                rhs[i]
            )));
        }
    }

    let mut x = start.clone();
    let mut t = vec![0.0; rows.len()];
    let mut q = DVector::<f64>::zeros(n);
    let mut prev = x.clone();
    let mut violation = f64::INFINITY;
    for cycle in 1..=opts.max_cycles {
        prev.copy_from(&x);
        for (i, (row, nsq)) in rows.iter().enumerate() {
            if *nsq <= f64::EPSILON {
                continue;
            }
            // y = x + t_i a_i, projected back onto the halfspace.
            let s = row.dot(&x) + t[i] * nsq - rhs[i];
            let t_new = if s > 0.0 { s / nsq } else { 0.0 };
            x.axpy(t[i] - t_new, row, 1.0);
            t[i] = t_new;
        }
        for j in 0..n {
            let y = x[j] + q[j];
            let c = y.clamp(fs.beta_min, fs.beta_max);
            q[j] = y - c;
            x[j] = c;
        }
        let change = (&x - &prev).amax();
        violation = rows
            .iter()
            .enumerate()
            .map(|(i, (row, _))| row.dot(&x) - rhs[i])
            .fold(0.0, f64::max);
        if change <= opts.tol && violation <= opts.tol {
            return Ok(Projection {
                point: x,
                cycles: cycle,
            });
        }
    }
    Err(GneError::ProjectionNotConverged {
        iterations: opts.max_cycles,
        violation,
    })
}
