//! Step-size selection for the distributed iteration.
//!
//! The forward operator restricted to `(beta, sigma)` has the per-agent
//! Jacobian `R_n = [[mu_n, ell_n], [-kappa, kappa]]`. For `kappa` in the
//! admissible range the map is `eps_tilde`-cocoercive, and the gains below
//! make the preconditioner satisfy `Phi > I / (2 eps)`, which makes the
//! preconditioned forward-backward map averaged.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::market::{FeasibleSet, MarketInstance};

/// Default margin applied to every strict step-size inequality.
pub const DEFAULT_SAFETY: f64 = 0.95;

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaInterval {
    pub lo: f64,
    pub hi: f64,
}

impl KappaInterval {
    pub fn contains(&self, k: f64) -> bool {
        k > self.lo && k < self.hi
    }
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
    fn intersect(&self, other: &KappaInterval) -> KappaInterval {
        KappaInterval {
            lo: self.lo.max(other.lo),
            hi: self.hi.min(other.hi),
        }
    }
    fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }
}

/// `mu_n = 2 a_n (N-1)/N + 1/(alpha N)`.
pub fn mu(inst: &MarketInstance) -> Vec<f64> {
    let n = inst.n_agents() as f64;
    inst.agents()
        .iter()
        .map(|ag| 2.0 * ag.a * (n - 1.0) / n + 1.0 / (inst.alpha() * n))
        .collect()
}

/// `ell_n = -2 a_n (N-1)/N + (N-2)/(alpha N)`.
pub fn ell(inst: &MarketInstance) -> Vec<f64> {
    let n = inst.n_agents() as f64;
    inst.agents()
        .iter()
        .map(|ag| -2.0 * ag.a * (n - 1.0) / n + (n - 2.0) / (inst.alpha() * n))
        .collect()
}

/// `gamma = sqrt((N-1)/(alpha N))`; note `mu_n + ell_n = gamma^2`.
pub fn gamma(inst: &MarketInstance) -> f64 {
    let n = inst.n_agents() as f64;
    ((n - 1.0) / (inst.alpha() * n)).sqrt()
}

fn mu_extremes(inst: &MarketInstance) -> (f64, f64) {
    let m = mu(inst);
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Heterogeneity condition on the cost curvatures:
/// `sqrt(max mu) - sqrt(min mu) <= 2 gamma`.
pub fn check_uniformity(inst: &MarketInstance) -> Result<()> {
    let (lo, hi) = mu_extremes(inst);
    let spread = hi.sqrt() - lo.sqrt();
    let bound = 2.0 * gamma(inst);
    if spread > bound {
        return Err(GneError::UniformityViolated { spread, bound });
    }
    Ok(())
}

/// `(sqrt(max mu) - gamma, sqrt(min mu) + gamma)` clipped to `kappa > 0`.
pub fn kappa_interval(inst: &MarketInstance) -> Result<KappaInterval> {
    check_uniformity(inst)?;
    let (lo, hi) = mu_extremes(inst);
    let g = gamma(inst);
    let iv = KappaInterval {
        lo: (hi.sqrt() - g).max(0.0),
        hi: lo.sqrt() + g,
    };
    if iv.is_empty() {
        return Err(GneError::EmptyKappaInterval {
            lo: iv.lo,
            hi: iv.hi,
        });
    }
    Ok(iv)
}

/// Values of `kappa` for which every `R_n + R_n'` is positive definite:
/// `kappa in ((sqrt(mu_n) - gamma)^2, (sqrt(mu_n) + gamma)^2)` for all `n`.
pub fn pd_kappa_interval(inst: &MarketInstance) -> KappaInterval {
    let g = gamma(inst);
    mu(inst).iter().fold(
        KappaInterval {
            lo: 0.0,
            hi: f64::INFINITY,
        },
        |acc, &m| {
            acc.intersect(&KappaInterval {
                lo: (m.sqrt() - g).powi(2),
                hi: (m.sqrt() + g).powi(2),
            })
        },
    )
}

/// `kappa_interval` intersected with `pd_kappa_interval`.
pub fn admissible_kappa_interval(inst: &MarketInstance) -> Result<KappaInterval> {
    let iv = kappa_interval(inst)?.intersect(&pd_kappa_interval(inst));
    if iv.is_empty() {
        return Err(GneError::EmptyKappaInterval {
            lo: iv.lo,
            hi: iv.hi,
        });
    }
    Ok(iv)
}

pub fn default_kappa(inst: &MarketInstance) -> Result<f64> {
    Ok(admissible_kappa_interval(inst)?.midpoint())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CocoercivityReport {
    pub kappa: f64,
    pub mu: Vec<f64>,
    pub ell: Vec<f64>,
    pub gamma: f64,
    pub kappa_interval: KappaInterval,
    pub uniformity_holds: bool,
    /// `lambda_min(R_n + R_n')`.
    pub eps_bar: Vec<f64>,
    /// `2 lambda_max(R_n' R_n)`.
    pub eps_under: Vec<f64>,
    pub eps_tilde: f64,
    pub lambda_max_laplacian: f64,
    /// `min(eps_tilde, 1/lambda_max(L))`.
    pub eps: f64,
}

pub fn eps_bar(mu: f64, ell: f64, kappa: f64) -> f64 {
    kappa + mu - ((mu - kappa).powi(2) + (ell - kappa).powi(2)).sqrt()
}

pub fn eps_under(mu: f64, ell: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    mu * mu
        + ell * ell
        + 2.0 * k2
        + ((mu + ell).powi(2) * (mu - ell).powi(2) + 4.0 * (k2 - mu * ell).powi(2)).sqrt()
}

pub fn cocoercivity_constants(
    inst: &MarketInstance,
    g: &CommGraph,
    kappa: f64,
) -> Result<CocoercivityReport> {
    let iv = kappa_interval(inst)?;
    if !iv.contains(kappa) {
        return Err(GneError::CocoercivityNotGuaranteed(format!(
            "kappa = {kappa} outside ({:.6}, {:.6})",
            iv.lo, iv.hi
        )));
    }
    let mu = mu(inst);
    let ell = ell(inst);
    let eps_bar: Vec<f64> = mu
        .iter()
        .zip(&ell)
        .map(|(&m, &l)| eps_bar(m, l, kappa))
        .collect();
    if let Some(i) = eps_bar.iter().position(|&e| !(e > 0.0)) {
        let pd = pd_kappa_interval(inst);
        return Err(GneError::CocoercivityNotGuaranteed(format!(
            "R_n + R_n' is not positive definite for agent {} at kappa = {kappa} \
             (needs kappa in ({:.6}, {:.6}))",
            i + 1,
            pd.lo,
            pd.hi
        )));
    }
    let eps_under: Vec<f64> = mu
        .iter()
        .zip(&ell)
        .map(|(&m, &l)| eps_under(m, l, kappa))
        .collect();
    let min_bar = eps_bar.iter().copied().fold(f64::INFINITY, f64::min);
    let max_under = eps_under.iter().copied().fold(0.0, f64::max);
    let eps_tilde = min_bar / max_under;
    let eps = eps_tilde.min(1.0 / g.lambda_max());
    Ok(CocoercivityReport {
        kappa,
        mu,
        ell,
        gamma: gamma(inst),
        kappa_interval: iv,
        uniformity_holds: true,
        eps_bar,
        eps_under,
        eps_tilde,
        lambda_max_laplacian: g.lambda_max(),
        eps,
    })
}

/// Per-agent step sizes of the distributed iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentGains {
    pub tau: f64,
    pub upsilon: f64,
    pub rho: f64,
    pub delta: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainSet {
    pub kappa: f64,
    pub agents: Vec<AgentGains>,
    pub eps: f64,
    /// `eps / lambda_max(Phi^{-1})`.
    pub xi: f64,
    /// `1 / (2 - 1/(2 xi))`; inside `(0, 1)` exactly when `xi > 1/2`.
    pub theta: f64,
}

pub fn theta_from_xi(xi: f64) -> f64 {
    1.0 / (2.0 - 1.0 / (2.0 * xi))
}

impl GainSet {
    /// Wrap explicit step sizes; `xi` and `theta` follow from the assembled `Phi`.
    pub fn from_steps(
        kappa: f64,
        agents: Vec<AgentGains>,
        eps: f64,
        fs: &FeasibleSet,
        g: &CommGraph,
    ) -> Result<Self> {
        if agents.len() != fs.n_agents() {
            return Err(GneError::Dimension {
                what: "gain rows",
                expected: fs.n_agents(),
                got: agents.len(),
            });
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(kappa) && positive(eps)) {
            return Err(GneError::InvalidGains("kappa and eps must be positive".into()));
        }
        for (i, a) in agents.iter().enumerate() {
            if ![a.tau, a.upsilon, a.rho, a.delta, a.eta]
                .into_iter()
                .all(positive)
            {
                return Err(GneError::InvalidGains(format!(
                    "agent {}: step sizes must be positive",
                    i + 1
                )));
            }
        }
        let mut gains = GainSet {
            kappa,
            agents,
            eps,
            xi: f64::NAN,
            theta: f64::NAN,
        };
        let view = assemble_phi(&gains, fs, g)?;
        gains.xi = eps / view.lambda_max_phi_inv;
        gains.theta = theta_from_xi(gains.xi);
        Ok(gains)
    }
}

/// Gains satisfying the step-size bounds with margin `safety`:
/// `tau = upsilon = delta = safety * 2 eps`, and `rho`, `eta` at `safety`
/// times the reciprocal of their lower bounds on `1/rho`, `1/eta`.
pub fn default_gains(
    rep: &CocoercivityReport,
    fs: &FeasibleSet,
    g: &CommGraph,
    safety: f64,
) -> Result<GainSet> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(GneError::InvalidGains(format!(
            "safety factor must lie in (0, 1), got {safety}"
        )));
    }
    let eps = rep.eps;
    let inv_2eps = 1.0 / (2.0 * eps);
    let step = safety * 2.0 * eps;
    let lmax2 = g.lambda_max().powi(2);
    let abar2 = fs.block_column_norm().powi(2);
    // All three equal `step`, so the max over agents is `step` too.
    let margin = 1.0 / step - inv_2eps;
    let rho_inv_bound = lmax2 / margin + inv_2eps;
    let eta_inv_bound = abar2 / margin + lmax2 / margin + inv_2eps;
    let row = AgentGains {
        tau: step,
        upsilon: step,
        rho: safety / rho_inv_bound,
        delta: step,
        eta: safety / eta_inv_bound,
    };
    GainSet::from_steps(rep.kappa, vec![row; fs.n_agents()], eps, fs, g)
}

/// Index layout of the stacked iterate `(beta, psi, sigma, z, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaLayout {
    pub n: usize,
    pub m: usize,
}

impl OmegaLayout {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }
    pub fn dim(&self) -> usize {
        3 * self.n + 2 * self.n * self.m
    }
    pub fn beta(&self) -> usize {
        0
    }
    pub fn psi(&self) -> usize {
        self.n
    }
    pub fn sigma(&self) -> usize {
        2 * self.n
    }
    pub fn z(&self) -> usize {
        3 * self.n
    }
    pub fn lambda(&self) -> usize {
        3 * self.n + self.n * self.m
    }
}

#[derive(Debug, Clone)]
pub struct PreconditionerView {
    pub phi: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max_phi_inv: f64,
}

/// `blkdiag(A_tilde_n)`, an `NM x N` matrix.
pub fn block_coupling(fs: &FeasibleSet) -> DMatrix<f64> {
    let (n, m) = (fs.n_agents(), fs.n_rows());
    let mut out = DMatrix::zeros(n * m, n);
    for j in 0..n {
        out.view_mut((j * m, j), (m, 1)).copy_from(&fs.a_tilde().column(j));
    }
    out
}

/// `L ⊗ I_M`.
pub fn kron_laplacian(g: &CommGraph, m: usize) -> DMatrix<f64> {
    let n = g.n_nodes();
    let l = g.laplacian();
    DMatrix::from_fn(n * m, n * m, |r, c| {
        if r % m == c % m {
            l[(r / m, c / m)]
        } else {
            0.0
        }
    })
}

pub fn assemble_phi(gains: &GainSet, fs: &FeasibleSet, g: &CommGraph) -> Result<PreconditionerView> {
    let lay = OmegaLayout::new(fs.n_agents(), fs.n_rows());
    let (n, m) = (lay.n, lay.m);
    let mut phi = DMatrix::zeros(lay.dim(), lay.dim());
    for (j, a) in gains.agents.iter().enumerate() {
        phi[(lay.beta() + j, lay.beta() + j)] = 1.0 / a.tau;
        phi[(lay.psi() + j, lay.psi() + j)] = 1.0 / a.upsilon;
        phi[(lay.sigma() + j, lay.sigma() + j)] = 1.0 / a.rho;
        for i in 0..m {
            phi[(lay.z() + j * m + i, lay.z() + j * m + i)] = 1.0 / a.delta;
            phi[(lay.lambda() + j * m + i, lay.lambda() + j * m + i)] = 1.0 / a.eta;
        }
    }
    let l = g.laplacian();
    phi.view_mut((lay.psi(), lay.sigma()), (n, n)).copy_from(l);
    phi.view_mut((lay.sigma(), lay.psi()), (n, n)).copy_from(l);
    let ll = kron_laplacian(g, m);
    phi.view_mut((lay.z(), lay.lambda()), (n * m, n * m))
        .copy_from(&ll);
    phi.view_mut((lay.lambda(), lay.z()), (n * m, n * m))
        .copy_from(&ll);
    let abar = block_coupling(fs);
    phi.view_mut((lay.lambda(), lay.beta()), (n * m, n))
        .copy_from(&(-&abar));
    phi.view_mut((lay.beta(), lay.lambda()), (n, n * m))
        .copy_from(&(-abar.transpose()));

    let lambda_min = min_eigenvalue(&phi);
    if !(lambda_min > 0.0) {
        return Err(GneError::SingularPreconditioner(lambda_min));
    }
    Ok(PreconditionerView {
        phi,
        lambda_min,
        lambda_max_phi_inv: 1.0 / lambda_min,
    })
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalues of the three Schur-complement conditions that together
/// are equivalent to `Phi - I/(2 eps) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchurReport {
    /// `min` over agents of `1/tau`, `1/upsilon`, `1/delta` minus `1/(2 eps)`.
    pub diagonal: f64,
    /// `(rho^-1 - c) - L (upsilon^-1 - c)^-1 L`.
    pub consensus: f64,
    /// `(eta^-1 - c) - Abar (tau^-1 - c)^-1 Abar' - L_l (delta^-1 - c)^-1 L_l`.
    pub multiplier: f64,
}

impl SchurReport {
    pub fn holds(&self) -> bool {
        self.diagonal > 0.0 && self.consensus > 0.0 && self.multiplier > 0.0
    }
}

pub fn schur_conditions(gains: &GainSet, fs: &FeasibleSet, g: &CommGraph) -> SchurReport {
    let c = 1.0 / (2.0 * gains.eps);
    let (n, m) = (fs.n_agents(), fs.n_rows());
    let diagonal = gains
        .agents
        .iter()
        .flat_map(|a| [1.0 / a.tau, 1.0 / a.upsilon, 1.0 / a.delta])
        .fold(f64::INFINITY, f64::min)
        - c;

    let l = g.laplacian();
    let ups = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / (1.0 / gains.agents[i].upsilon - c)
        } else {
            0.0
        }
    });
    let rho = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / gains.agents[i].rho - c
        } else {
            0.0
        }
    });
    let consensus = min_eigenvalue(&(rho - l * ups * l));

    let abar = block_coupling(fs);
    let ll = kron_laplacian(g, m);
    let tau = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 / (1.0 / gains.agents[i].tau - c)
        } else {
            0.0
        }
    });
    let delta = DMatrix::from_fn(n * m, n * m, |i, j| {
        if i == j {
            1.0 / (1.0 / gains.agents[i / m].delta - c)
        } else {
            0.0
        }
    });
    let eta = DMatrix::from_fn(n * m, n * m, |i, j| {
        if i == j {
            1.0 / gains.agents[i / m].eta - c
        } else {
            0.0
        }
    });
    let schur = eta - &abar * tau * abar.transpose() - &ll * delta * &ll;
    SchurReport {
        diagonal,
        consensus,
        multiplier: min_eigenvalue(&schur),
    }
}

/// `lambda_min(Phi - I/(2 eps)) > 0`, the averagedness requirement on the gains.
pub fn verify_gains(gains: &GainSet, fs: &FeasibleSet, g: &CommGraph) -> Result<f64> {
    let view = assemble_phi(gains, fs, g)?;
    let margin = view.lambda_min - 1.0 / (2.0 * gains.eps);
    if !(margin > 0.0) {
        return Err(GneError::InvalidGains(format!(
            "lambda_min(Phi) = {:.6e} does not exceed 1/(2 eps) = {:.6e}",
            view.lambda_min,
            1.0 / (2.0 * gains.eps)
        )));
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::market::build_feasible_set;

    #[test]
    fn t2_constants_at_kappa_06() {
        let f = fixtures::t2();
        let rep = cocoercivity_constants(&f.instance, &f.graph, 0.6).unwrap();
        for n in 0..2 {
            assert!((rep.mu[n] - 0.6).abs() < 1e-15);
            assert!((rep.ell[n] + 0.1).abs() < 1e-15);
            assert!((rep.eps_bar[n] - 0.5).abs() < 1e-12);
            assert!((rep.eps_under[n] - 2.0).abs() < 1e-12);
        }
        assert!((rep.gamma - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((rep.eps_tilde - 0.25).abs() < 1e-12);
        // 1/lambda_max(L) = 0.5 for K2.
        assert!((rep.eps - 0.25).abs() < 1e-12);
    }

    #[test]
    fn t2_interval() {
        let iv = kappa_interval(&fixtures::t2().instance).unwrap();
        assert!((iv.lo - (0.6f64.sqrt() - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((iv.lo - 0.0675).abs() < 1e-4);
        assert!((iv.hi - 1.4817).abs() < 1e-4);
    }

    #[test]
    fn cs5_mu_and_interval() {
        let inst = fixtures::cs5().instance;
        let m = mu(&inst);
        let expected = [0.208, 0.2104, 0.2136, 0.2112, 0.2152];
        for (a, b) in m.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        check_uniformity(&inst).unwrap();
        let iv = kappa_interval(&inst).unwrap();
        assert_eq!(iv.lo, 0.0);
        assert!((iv.hi - 1.3505).abs() < 1e-4);
        let raw_lo = 0.2152f64.sqrt() - gamma(&inst);
        assert!((raw_lo - (-0.4305)).abs() < 1e-4);
    }

    #[test]
    fn cs5_small_kappa_fails_pd() {
        // Inside the clipped interval but below (sqrt(mu) - gamma)^2.
        let f = fixtures::cs5();
        let err = cocoercivity_constants(&f.instance, &f.graph, 0.1).unwrap_err();
        assert!(matches!(err, GneError::CocoercivityNotGuaranteed(_)));
        assert!(cocoercivity_constants(&f.instance, &f.graph, default_kappa(&f.instance).unwrap()).is_ok());
    }

    #[test]
    fn kappa_outside_interval_rejected() {
        let f = fixtures::t2();
        assert!(cocoercivity_constants(&f.instance, &f.graph, 2.0).is_err());
        assert!(cocoercivity_constants(&f.instance, &f.graph, 0.01).is_err());
    }

    #[test]
    fn symmetric_agents_interval() {
        let inst = fixtures::t2().instance;
        let m = mu(&inst)[0];
        let g = gamma(&inst);
        let iv = kappa_interval(&inst).unwrap();
        assert!((iv.lo - (m.sqrt() - g)).abs() < 1e-15);
        assert!((iv.hi - (m.sqrt() + g)).abs() < 1e-15);
    }

    #[test]
    fn theta_formula() {
        assert!((theta_from_xi(1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn t2_default_gains() {
        let f = fixtures::t2();
        let fs = build_feasible_set(&f.instance);
        let rep = cocoercivity_constants(&f.instance, &f.graph, 0.6).unwrap();
        let gains = default_gains(&rep, &fs, &f.graph, 0.95).unwrap();
        for a in &gains.agents {
            assert!((a.tau - 0.475).abs() < 1e-12);
            assert!((a.upsilon - 0.475).abs() < 1e-12);
            assert!((a.delta - 0.475).abs() < 1e-12);
            assert!(a.rho > 0.0 && a.eta > 0.0);
        }
        assert!(gains.xi > 0.5);
        assert!(gains.theta > 0.0 && gains.theta < 1.0);
        assert!(verify_gains(&gains, &fs, &f.graph).unwrap() > 0.0);
        assert!(schur_conditions(&gains, &fs, &f.graph).holds());
    }

    #[test]
    fn phi_dimension_and_symmetry() {
        let f = fixtures::t2();
        let fs = build_feasible_set(&f.instance);
        let rep = cocoercivity_constants(&f.instance, &f.graph, 0.6).unwrap();
        let gains = default_gains(&rep, &fs, &f.graph, 0.95).unwrap();
        let view = assemble_phi(&gains, &fs, &f.graph).unwrap();
        assert_eq!(view.phi.nrows(), 22);
        assert_eq!((&view.phi - view.phi.transpose()).amax(), 0.0);
    }

    #[test]
    fn bad_safety_rejected() {
        let f = fixtures::t2();
        let fs = build_feasible_set(&f.instance);
        let rep = cocoercivity_constants(&f.instance, &f.graph, 0.6).unwrap();
        assert!(default_gains(&rep, &fs, &f.graph, 1.0).is_err());
        assert!(default_gains(&rep, &fs, &f.graph, 0.0).is_err());
    }
}
