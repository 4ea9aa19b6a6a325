//! Round-synchronous distributed equilibrium seeking.
//!
//! Every round has two communication phases. In phase 1 each agent broadcasts
//! `(sigma, psi, z, lambda)` to its neighbours and computes its new bid, `psi`
//! and `z`. In phase 2 it broadcasts the new `psi` and `z`, then updates
//! `sigma` and `lambda`. Bids are never transmitted.
//!
//! An agent's update is a pure function of its [`AgentContext`] (private data
//! and public market scalars), its own [`AgentLocal`] and the messages in its
//! inbox. The router in this module only ever fills an inbox with messages
//! from graph neighbours.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, GneError, Result};
use crate::game::{gradient_entry, GameModel};
use crate::graph::CommGraph;
use crate::market::{load_adjustment, AggregatorParams};
use crate::oracle;
use crate::tuning::{AgentGains, GainSet, OmegaLayout};

/// State held by one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLocal {
    pub id: usize,
    pub beta: f64,
    pub psi: f64,
    pub sigma: f64,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

/// What agent `id` knows: its own cost data, coupling column and share of the
/// right-hand side, its gains, its neighbours' weights and the public scalars.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub id: usize,
    pub n_agents: usize,
    pub r: f64,
    pub alpha: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kappa: f64,
    pub params: AggregatorParams,
    pub column: DVector<f64>,
    pub d_share: DVector<f64>,
    pub gains: AgentGains,
    /// `(neighbour, weight)`, ascending by neighbour id.
    pub neighbors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Msg {
    pub from: usize,
    pub sigma: f64,
    pub psi: f64,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Msg {
    pub from: usize,
    pub psi: f64,
    pub z: DVector<f64>,
}

/// Values an agent computes in phase 1 of round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Out {
    pub beta: f64,
    pub psi: f64,
    pub z: DVector<f64>,
}

impl AgentLocal {
    pub fn phase1_msg(&self) -> Phase1Msg {
        Phase1Msg {
            from: self.id,
            sigma: self.sigma,
            psi: self.psi,
            z: self.z.clone(),
            lambda: self.lambda.clone(),
        }
    }
}

impl AgentContext {
    fn check_inbox(&self, senders: impl Iterator<Item = usize>) {
        let expected = self.neighbors.iter().map(|&(m, _)| m);
        assert!(
            senders.eq(expected),
            "agent {}: inbox does not match its neighbour list",
            self.id
        );
    }

    /// Bid, `psi` and `z` updates.
    pub fn phase1(&self, me: &AgentLocal, inbox: &[Phase1Msg]) -> Phase1Out {
        self.check_inbox(inbox.iter().map(|m| m.from));
        let g = &self.gains;
        let grad = gradient_entry(
            &self.params,
            self.n_agents,
            self.r,
            self.alpha,
            self.n_agents as f64 * me.sigma,
            me.beta,
        ) + self.column.dot(&me.lambda);
        let beta = (me.beta - g.tau * grad).clamp(self.beta_min, self.beta_max);

        let mut sigma_mix = 0.0;
        let mut lambda_mix = DVector::zeros(me.lambda.len());
        for (msg, &(_, w)) in inbox.iter().zip(&self.neighbors) {
            sigma_mix += w * (me.sigma - msg.sigma);
            lambda_mix += (&me.lambda - &msg.lambda) * w;
        }
        Phase1Out {
            beta,
            psi: me.psi + g.upsilon * sigma_mix,
            z: &me.z + lambda_mix * g.delta,
        }
    }

    /// `sigma` and multiplier updates; returns the agent's state for round `k+1`.
    pub fn phase2(
        &self,
        me: &AgentLocal,
        out: &Phase1Out,
        inbox1: &[Phase1Msg],
        inbox2: &[Phase2Msg],
    ) -> AgentLocal {
        self.check_inbox(inbox1.iter().map(|m| m.from));
        self.check_inbox(inbox2.iter().map(|m| m.from));
        let g = &self.gains;
        let mut psi_mix = 0.0;
        let mut lambda_mix = DVector::zeros(me.lambda.len());
        let mut z_mix = DVector::zeros(me.z.len());
        for ((m1, m2), &(_, w)) in inbox1.iter().zip(inbox2).zip(&self.neighbors) {
            psi_mix += w * (2.0 * (out.psi - m2.psi) - (me.psi - m1.psi));
            lambda_mix += (&me.lambda - &m1.lambda) * w;
            z_mix += ((&out.z - &m2.z) * 2.0 - (&me.z - &m1.z)) * w;
        }
        let sigma = me.sigma + g.rho * (self.kappa * (me.beta - me.sigma) - psi_mix);
        let pull = lambda_mix + &self.d_share + &self.column * (me.beta - 2.0 * out.beta) + z_mix;
        let lambda = (&me.lambda - pull * g.eta).map(|v| v.max(0.0));
        AgentLocal {
            id: me.id,
            beta: out.beta,
            psi: out.psi,
            sigma,
            z: out.z.clone(),
            lambda,
        }
    }
}

/// Phase-1 inbox of agent `n`: messages from its neighbours only.
pub fn phase1_inbox(g: &CommGraph, n: usize, agents: &[AgentLocal]) -> Vec<Phase1Msg> {
    g.neighbors(n)
        .iter()
        .map(|&(m, _)| agents[m].phase1_msg())
        .collect()
}

/// Phase-2 inbox of agent `n`.
pub fn phase2_inbox(g: &CommGraph, n: usize, outs: &[Phase1Out]) -> Vec<Phase2Msg> {
    g.neighbors(n)
        .iter()
        .map(|&(m, _)| Phase2Msg {
            from: m,
            psi: outs[m].psi,
            z: outs[m].z.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub agents: Vec<AgentLocal>,
    pub k: usize,
}

impl SolverState {
    pub fn beta(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.beta).collect()
    }
    pub fn sigma(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.sigma).collect()
    }
    pub fn psi(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.psi).collect()
    }
    /// Multipliers stacked agent by agent.
    pub fn lambda_stacked(&self) -> Vec<f64> {
        self.agents
            .iter()
            .flat_map(|a| a.lambda.iter().copied())
            .collect()
    }
    pub fn mean_lambda(&self) -> Vec<f64> {
        let m = self.agents[0].lambda.len();
        let mut acc = DVector::zeros(m);
        for a in &self.agents {
            acc += &a.lambda;
        }
        (acc / self.agents.len() as f64).iter().copied().collect()
    }

    /// `omega = (beta, psi, sigma, z, lambda)` with `z`, `lambda` agent-major.
    pub fn to_omega(&self) -> DVector<f64> {
        let n = self.agents.len();
        let m = self.agents[0].lambda.len();
        let lay = OmegaLayout::new(n, m);
        let mut w = DVector::zeros(lay.dim());
        for (j, a) in self.agents.iter().enumerate() {
            w[lay.beta() + j] = a.beta;
            w[lay.psi() + j] = a.psi;
            w[lay.sigma() + j] = a.sigma;
            w.rows_mut(lay.z() + j * m, m).copy_from(&a.z);
            w.rows_mut(lay.lambda() + j * m, m).copy_from(&a.lambda);
        }
        w
    }

    pub fn from_omega(lay: OmegaLayout, w: &DVector<f64>, k: usize) -> Result<Self> {
        check_len("stacked iterate", lay.dim(), w.len())?;
        let m = lay.m;
        let agents = (0..lay.n)
            .map(|j| AgentLocal {
                id: j,
                beta: w[lay.beta() + j],
                psi: w[lay.psi() + j],
                sigma: w[lay.sigma() + j],
                z: w.rows(lay.z() + j * m, m).into_owned(),
                lambda: w.rows(lay.lambda() + j * m, m).into_owned(),
            })
            .collect();
        Ok(Self { agents, k })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// All zeros, bids clamped into the box.
    Zero,
    /// Bids uniform in the box, `psi`, `sigma`, `z` uniform in
    /// `[-scale, scale]`, multipliers uniform in `[0, scale]`.
    Random { seed: u64, scale: f64 },
    /// A stacked `omega`, taken as is.
    Explicit(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    /// Bound on `||omega^{k+1} - omega^k||_inf`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Residuals {
    pub fixed_point: f64,
    pub sigma_consensus: f64,
    pub lambda_consensus: f64,
    pub sigma_tracking: f64,
    pub constraint_violation: f64,
    pub kkt: f64,
}

/// One recorded iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda_mean: Vec<f64>,
    /// `||omega^k - omega^{k-1}||_inf`; `None` at `k = 0`.
    pub step: Option<f64>,
    pub sigma_consensus: f64,
    pub lambda_consensus: f64,
    pub sigma_tracking: f64,
    pub constraint_violation: f64,
    pub kkt: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SolverState,
    pub trajectory: Vec<TrajectoryRow>,
    pub reason: StopReason,
    /// Last `||omega^{k+1} - omega^k||_inf`.
    pub last_step: f64,
    /// First iteration whose step fell to `1e-3` or below.
    pub iterations_to_1e3: Option<usize>,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.reason == StopReason::Converged
    }
}

pub struct DistributedSolver {
    gm: GameModel,
    graph: CommGraph,
    gains: GainSet,
    contexts: Vec<AgentContext>,
}

fn inf_diff(a: &SolverState, b: &SolverState) -> f64 {
    let mut d = 0.0f64;
    for (x, y) in a.agents.iter().zip(&b.agents) {
        d = d
            .max((x.beta - y.beta).abs())
            .max((x.psi - y.psi).abs())
            .max((x.sigma - y.sigma).abs())
            .max((&x.z - &y.z).amax())
            .max((&x.lambda - &y.lambda).amax());
    }
    d
}

impl DistributedSolver {
    pub fn new(gm: GameModel, graph: CommGraph, gains: GainSet) -> Result<Self> {
        let n = gm.n_agents();
        check_len("graph nodes", n, graph.n_nodes())?;
        check_len("gain rows", n, gains.agents.len())?;
        let inst = gm.instance();
        let fs = gm.feasible_set();
        let contexts = (0..n)
            .map(|j| AgentContext {
                id: j,
                n_agents: n,
                r: inst.r(),
                alpha: inst.alpha(),
                beta_min: fs.beta_min(),
                beta_max: fs.beta_max(),
                kappa: gains.kappa,
                params: *inst.agent(j),
                column: fs.column(j),
                d_share: fs.d_split()[j].clone(),
                gains: gains.agents[j],
                neighbors: graph.neighbors(j).to_vec(),
            })
            .collect();
        Ok(Self {
            gm,
            graph,
            gains,
            contexts,
        })
    }

    pub fn game(&self) -> &GameModel {
        &self.gm
    }
    pub fn graph(&self) -> &CommGraph {
        &self.graph
    }
    pub fn gains(&self) -> &GainSet {
        &self.gains
    }
    pub fn context(&self, n: usize) -> &AgentContext {
        &self.contexts[n]
    }
    pub fn layout(&self) -> OmegaLayout {
        OmegaLayout::new(self.gm.n_agents(), self.gm.feasible_set().n_rows())
    }

    pub fn init(&self, spec: &InitialState) -> Result<SolverState> {
        let lay = self.layout();
        let fs = self.gm.feasible_set();
        let omega = match spec {
            InitialState::Zero => {
                let mut w = DVector::zeros(lay.dim());
                for j in 0..lay.n {
                    w[lay.beta() + j] = fs.clamp_to_box(0.0);
                }
                w
            }
            InitialState::Random { seed, scale } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(GneError::InvalidInitialState(format!(
                        "scale must be finite and nonnegative, got {scale}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let sym = |rng: &mut ChaCha8Rng| scale * rng.random_range(-1.0..=1.0);
                let mut w = DVector::zeros(lay.dim());
                for j in 0..lay.n {
                    w[lay.beta() + j] = rng.random_range(fs.beta_min()..=fs.beta_max());
                }
                for i in lay.psi()..lay.lambda() {
                    w[i] = sym(&mut rng);
                }
                for i in lay.lambda()..lay.dim() {
                    w[i] = scale * rng.random_range(0.0..=1.0);
                }
                w
            }
            InitialState::Explicit(w) => w.clone(),
        };
        let state = SolverState::from_omega(lay, &omega, 0)?;
        for a in &state.agents {
            if !(a.beta >= fs.beta_min() && a.beta <= fs.beta_max()) {
                return Err(GneError::InvalidInitialState(format!(
                    "bid of agent {} is {} outside [{}, {}]",
                    a.id + 1,
                    a.beta,
                    fs.beta_min(),
                    fs.beta_max()
                )));
            }
            if a.lambda.iter().any(|v| !(*v >= 0.0)) {
                return Err(GneError::InvalidInitialState(format!(
                    "multiplier estimate of agent {} has a negative entry",
                    a.id + 1
                )));
            }
        }
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(GneError::InvalidInitialState("non-finite entry".into()));
        }
        Ok(state)
    }

    /// One synchronous round.
    pub fn step(&self, state: &SolverState) -> SolverState {
        let n = self.contexts.len();
        let inbox1: Vec<Vec<Phase1Msg>> = (0..n)
            .map(|j| phase1_inbox(&self.graph, j, &state.agents))
            .collect();
        let outs: Vec<Phase1Out> = (0..n)
            .map(|j| self.contexts[j].phase1(&state.agents[j], &inbox1[j]))
            .collect();
        let agents = (0..n)
            .map(|j| {
                let inbox2 = phase2_inbox(&self.graph, j, &outs);
                self.contexts[j].phase2(&state.agents[j], &outs[j], &inbox1[j], &inbox2)
            })
            .collect();
        SolverState {
            agents,
            k: state.k + 1,
        }
    }

    pub fn residuals(&self, state: &SolverState) -> Result<Residuals> {
        let next = self.step(state);
        let row = self.row(state, Some(inf_diff(&next, state)))?;
        Ok(Residuals {
            fixed_point: row.step.unwrap_or(0.0),
            sigma_consensus: row.sigma_consensus,
            lambda_consensus: row.lambda_consensus,
            sigma_tracking: row.sigma_tracking,
            constraint_violation: row.constraint_violation,
            kkt: row.kkt,
        })
    }

    fn row(&self, state: &SolverState, step: Option<f64>) -> Result<TrajectoryRow> {
        let fs = self.gm.feasible_set();
        let beta = state.beta();
        let sigma = state.sigma();
        let l = self.graph.laplacian();
        let sigma_v = DVector::from_column_slice(&sigma);
        let sigma_consensus = (l * &sigma_v).amax();
        let mut lambda_consensus = 0.0f64;
        for (j, a) in state.agents.iter().enumerate() {
            let mut mix = DVector::zeros(a.lambda.len());
            for &(m, w) in self.graph.neighbors(j) {
                mix += (&a.lambda - &state.agents[m].lambda) * w;
            }
            lambda_consensus = lambda_consensus.max(mix.amax());
        }
        let mean_beta = beta.iter().sum::<f64>() / beta.len() as f64;
        let sigma_tracking = sigma
            .iter()
            .fold(0.0f64, |acc, s| acc.max((s - mean_beta).abs()));
        let constraint_violation = fs
            .slack_violation(&DVector::from_column_slice(&beta))
            .max()
            .max(0.0);
        let lambda_mean = state.mean_lambda();
        let kkt = oracle::kkt_residual(&self.gm, &beta, &lambda_mean)?;
        Ok(TrajectoryRow {
            k: state.k,
            beta,
            sigma,
            lambda_mean,
            step,
            sigma_consensus,
            lambda_consensus,
            sigma_tracking,
            constraint_violation,
            kkt,
        })
    }

    /// Iterate until the step falls to `stop.tol` or `stop.max_iter` rounds
    /// have run. With `record = Some(s)`, every `s`-th iterate plus the first
    /// and last are kept.
    pub fn run(
        &self,
        state: SolverState,
        stop: &StopCriteria,
        record: Option<usize>,
    ) -> Result<RunOutcome> {
        let stride = record.map(|s| s.max(1));
        let mut trajectory = Vec::new();
        if stride.is_some() {
            trajectory.push(self.row(&state, None)?);
        }
        let mut state = state;
        let mut last_step = f64::INFINITY;
        let mut iterations_to_1e3 = None;
        let mut reason = StopReason::MaxIterations;
        for _ in 0..stop.max_iter {
            let next = self.step(&state);
            last_step = inf_diff(&next, &state);
            state = next;
            if iterations_to_1e3.is_none() && last_step <= 1e-3 {
                iterations_to_1e3 = Some(state.k);
            }
            let done = last_step <= stop.tol;
            if let Some(s) = stride {
                if state.k.is_multiple_of(s) || done {
                    trajectory.push(self.row(&state, Some(last_step))?);
                }
            }
            if done {
                reason = StopReason::Converged;
                break;
            }
        }
        if let Some(s) = stride {
            if reason == StopReason::MaxIterations && !state.k.is_multiple_of(s) {
                trajectory.push(self.row(&state, Some(last_step))?);
            }
        }
        Ok(RunOutcome {
            state,
            trajectory,
            reason,
            last_step,
            iterations_to_1e3,
        })
    }

    /// Load adjustments implied by the current bids.
    pub fn allocation(&self, state: &SolverState) -> Result<Vec<f64>> {
        load_adjustment(self.gm.instance(), &state.beta())
    }
}
