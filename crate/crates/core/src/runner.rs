//! CLI commands: `run`, `oracle`, `tune` and `compare`.
//!
//! Every written file carries the config hash and the gain set in use.
//! Numbers are printed with Rust's shortest round-trip formatting, so equal
//! inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};

use crate::config::{GainsConfig, InitialConfig, Problem, RunConfig};
use crate::error::{GneError, Result};
use crate::game::GameModel;
use crate::market::{clearing_price, load_adjustment};
use crate::oracle::{self, OracleOptions, VgneCertificate};
use crate::solver::{DistributedSolver, InitialState, RunOutcome, StopCriteria, TrajectoryRow};
use crate::tuning::{self, CocoercivityReport, GainSet, DEFAULT_SAFETY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Accept explicit gains that fail the averagedness check.
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct CommandReport {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// Human-readable summary (for `tune`, the full report).
    pub message: String,
}

/// Config with overrides applied, its hash and the built problem.
struct Session {
    cfg: RunConfig,
    hash: String,
    problem: Problem,
    gm: GameModel,
    out: PathBuf,
    force: bool,
}

impl Session {
    fn new(mut cfg: RunConfig, opts: &RunOptions) -> Result<Self> {
        if let Some(s) = opts.seed {
            cfg.solver.seed = s;
        }
        if let Some(t) = opts.tol {
            cfg.solver.tol = t;
        }
        if let Some(m) = opts.max_iter {
            cfg.solver.max_iter = m;
        }
        let problem = cfg.problem()?;
        let gm = GameModel::new(problem.instance.clone());
        let out = opts
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&cfg.outputs.directory));
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            problem,
            gm,
            out,
            force: opts.force,
        })
    }

    fn gains(&self) -> Result<(CocoercivityReport, GainSet)> {
        let inst = &self.problem.instance;
        let g = &self.problem.graph;
        let fs = self.gm.feasible_set();
        match &self.cfg.gains {
            GainsConfig::Keyword(_) => {
                let rep = tuning::cocoercivity_constants(inst, g, tuning::default_kappa(inst)?)?;
                let gains = tuning::default_gains(&rep, fs, g, DEFAULT_SAFETY)?;
                Ok((rep, gains))
            }
            GainsConfig::Explicit(e) => {
                let rep = tuning::cocoercivity_constants(inst, g, e.kappa)?;
                let rows = e.agents.iter().map(|&r| r.into()).collect();
                if self.force {
                    let gains = match GainSet::from_steps(e.kappa, rows, rep.eps, fs, g) {
                        Ok(gains) => gains,
                        // xi and theta are undefined without a positive definite Phi.
                        Err(GneError::SingularPreconditioner(_)) => GainSet {
                            kappa: e.kappa,
                            agents: e.agents.iter().map(|&r| r.into()).collect(),
                            eps: rep.eps,
                            xi: f64::NAN,
                            theta: f64::NAN,
                        },
                        Err(err) => return Err(err),
                    };
                    log::warn!("--force: running with unverified gains");
                    return Ok((rep, gains));
                }
                let gains = GainSet::from_steps(e.kappa, rows, rep.eps, fs, g)?;
                tuning::verify_gains(&gains, fs, g)?;
                Ok((rep, gains))
            }
        }
    }

    fn initial(&self) -> Result<InitialState> {
        Ok(match &self.cfg.solver.initial {
            InitialConfig::Zero => InitialState::Zero,
            InitialConfig::Random { scale } => InitialState::Random {
                seed: self.cfg.solver.seed,
                scale: *scale,
            },
            InitialConfig::Explicit(w) => {
                InitialState::Explicit(nalgebra::DVector::from_column_slice(w))
            }
        })
    }

    fn write(&self, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        files.push(path);
        Ok(())
    }

    fn header(&self, gains: Option<&GainSet>) -> Value {
        json!({
            "config": self.cfg.display_name(),
            "config_sha256": self.hash,
            "gains": gains,
        })
    }

    fn run_solver(&self, gains: &GainSet) -> Result<(DistributedSolver, RunOutcome)> {
        let solver = DistributedSolver::new(
            self.gm.clone(),
            self.problem.graph.clone(),
            gains.clone(),
        )?;
        let state = solver.init(&self.initial()?)?;
        let stop = StopCriteria {
            tol: self.cfg.solver.tol,
            max_iter: self.cfg.solver.max_iter,
        };
        let record = self
            .cfg
            .outputs
            .trajectory
            .then_some(self.cfg.solver.record_stride);
        let outcome = solver.run(state, &stop, record)?;
        info!(
            "{}: {:?} after {} rounds, last step {:.3e}",
            self.cfg.display_name(),
            outcome.reason,
            outcome.state.k,
            outcome.last_step
        );
        Ok((solver, outcome))
    }
}

fn fmt_gains_lines(gains: &GainSet) -> String {
    let mut s = format!(
        "# gains kappa={} eps={} xi={} theta={}\n",
        gains.kappa, gains.eps, gains.xi, gains.theta
    );
    for (j, a) in gains.agents.iter().enumerate() {
        let _ = writeln!(
            s,
            "# gains agent={} tau={} upsilon={} rho={} delta={} eta={}",
            j + 1,
            a.tau,
            a.upsilon,
            a.rho,
            a.delta,
            a.eta
        );
    }
    s
}

pub fn trajectory_csv(hash: &str, gains: &GainSet, rows: &[TrajectoryRow]) -> String {
    let mut s = format!("# gneflex trajectory\n# config_sha256={hash}\n");
    s.push_str(&fmt_gains_lines(gains));
    let Some(first) = rows.first() else {
        return s;
    };
    let n = first.beta.len();
    let m = first.lambda_mean.len();
    let mut cols = vec!["k".to_string()];
    cols.extend((1..=n).map(|i| format!("beta_{i}")));
    cols.extend((1..=n).map(|i| format!("sigma_{i}")));
    cols.extend((1..=m).map(|i| format!("lambda_mean_{i}")));
    cols.extend(
        [
            "step",
            "sigma_consensus",
            "lambda_consensus",
            "sigma_tracking",
            "constraint_violation",
            "kkt",
        ]
        .map(String::from),
    );
    s.push_str(&cols.join(","));
    s.push('\n');
    for r in rows {
        let mut fields = vec![r.k.to_string()];
        fields.extend(r.beta.iter().map(f64::to_string));
        fields.extend(r.sigma.iter().map(f64::to_string));
        fields.extend(r.lambda_mean.iter().map(f64::to_string));
        fields.push(r.step.map(|v| v.to_string()).unwrap_or_default());
        fields.extend(
            [
                r.sigma_consensus,
                r.lambda_consensus,
                r.sigma_tracking,
                r.constraint_violation,
                r.kkt,
            ]
            .map(|v| v.to_string()),
        );
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

pub fn plot_manifest(hash: &str, gains: &GainSet, n: usize, m: usize) -> String {
    let series = |prefix: &str, count: usize| {
        (1..=count)
            .map(|i| format!("{prefix}_{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = format!("# gneflex plot manifest\n# config_sha256={hash}\n");
    s.push_str(&fmt_gains_lines(gains));
    let _ = write!(
        s,
        "\n[bids]\nfile = trajectory.csv\nx = k\nx_label = iteration\n\
         y = {}\ny_label = bid (kWh)\nscale = linear\n\
         \n[estimates]\nfile = trajectory.csv\nx = k\nx_label = iteration\n\
         y = {}\ny_label = aggregate estimate sigma (kWh)\nscale = linear\n\
         \n[multipliers]\nfile = trajectory.csv\nx = k\nx_label = iteration\n\
         y = {}\ny_label = mean multiplier estimate\nscale = linear\n\
         \n[residuals]\nfile = trajectory.csv\nx = k\nx_label = iteration\n\
         y = step sigma_consensus lambda_consensus sigma_tracking constraint_violation kkt\n\
         y_label = residual\nscale = log\n",
        series("beta", n),
        series("sigma", n),
        series("lambda_mean", m)
    );
    s
}

fn outcome_json(sess: &Session, solver: &DistributedSolver, out: &RunOutcome) -> Result<Value> {
    let inst = &sess.problem.instance;
    let beta = out.state.beta();
    let res = solver.residuals(&out.state)?;
    Ok(json!({
        "converged": out.converged(),
        "iterations": out.state.k,
        "tol": sess.cfg.solver.tol,
        "max_iter": sess.cfg.solver.max_iter,
        "last_step": out.last_step,
        "iterations_to_residual_1e-3": out.iterations_to_1e3,
        "beta_kwh": beta,
        "sigma_kwh": out.state.sigma(),
        "load_adjustment_kwh": load_adjustment(inst, &beta)?,
        "price": clearing_price(inst, &beta)?,
        "lambda_mean": out.state.mean_lambda(),
        "residuals": res,
    }))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serialises") + "\n"
}

fn certificate_json(sess: &Session, gains: Option<&GainSet>, cert: &VgneCertificate) -> Value {
    let mut v = sess.header(gains);
    v["certificate"] = json!(cert);
    v
}

fn write_trajectory(
    sess: &Session,
    gains: &GainSet,
    out: &RunOutcome,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    if sess.cfg.outputs.trajectory {
        sess.write(
            "trajectory.csv",
            &trajectory_csv(&sess.hash, gains, &out.trajectory),
            files,
        )?;
        let fs = sess.gm.feasible_set();
        sess.write(
            "plot_manifest.txt",
            &plot_manifest(&sess.hash, gains, fs.n_agents(), fs.n_rows()),
            files,
        )?;
    }
    Ok(())
}

/// Run a command body; on failure still write a diagnostic `summary.json`.
fn guarded(
    sess: &Session,
    command: &str,
    body: impl FnOnce(&mut Vec<PathBuf>) -> Result<(i32, String)>,
) -> CommandReport {
    let mut files = Vec::new();
    match body(&mut files) {
        Ok((exit_code, message)) => CommandReport {
            exit_code,
            files,
            message,
        },
        Err(e) => {
            let mut v = sess.header(None);
            v["command"] = json!(command);
            v["error"] = json!(e.to_string());
            let _ = sess.write("summary.json", &pretty(&v), &mut files);
            CommandReport {
                exit_code: EXIT_ERROR,
                files,
                message: format!("{command} failed: {e}"),
            }
        }
    }
}

pub fn cmd_run(cfg: RunConfig, opts: &RunOptions) -> Result<CommandReport> {
    let sess = Session::new(cfg, opts)?;
    Ok(guarded(&sess, "run", |files| {
        let (_, gains) = sess.gains()?;
        let (solver, out) = sess.run_solver(&gains)?;
        write_trajectory(&sess, &gains, &out, files)?;
        let mut v = sess.header(Some(&gains));
        v["command"] = json!("run");
        v["run"] = outcome_json(&sess, &solver, &out)?;
        sess.write("summary.json", &pretty(&v), files)?;
        let code = if out.converged() {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        };
        Ok((
            code,
            format!(
                "run: {} after {} rounds (last step {:.3e}), beta = {:?}",
                if out.converged() { "converged" } else { "not converged" },
                out.state.k,
                out.last_step,
                out.state.beta()
            ),
        ))
    }))
}

pub fn cmd_oracle(cfg: RunConfig, opts: &RunOptions) -> Result<CommandReport> {
    let sess = Session::new(cfg, opts)?;
    Ok(guarded(&sess, "oracle", |files| {
        let gains = sess.gains().ok().map(|(_, g)| g);
        let cert = oracle::solve_vgne(&sess.gm, &OracleOptions::default())?;
        sess.write(
            "certificate.json",
            &pretty(&certificate_json(&sess, gains.as_ref(), &cert)),
            files,
        )?;
        Ok((
            EXIT_OK,
            format!(
                "oracle: beta* = {:?}, kkt residual {:.3e}",
                cert.beta_star, cert.kkt_residual
            ),
        ))
    }))
}

/// Build the `tune` report as JSON.
pub fn tune_report(cfg: RunConfig, opts: &RunOptions) -> Result<Value> {
    let sess = Session::new(cfg, opts)?;
    let (rep, gains) = sess.gains()?;
    let fs = sess.gm.feasible_set();
    let g = &sess.problem.graph;
    let schur = tuning::schur_conditions(&gains, fs, g);
    let view = tuning::assemble_phi(&gains, fs, g)?;
    let mut v = sess.header(Some(&gains));
    v["command"] = json!("tune");
    v["cocoercivity"] = json!(rep);
    v["positive_definite_kappa_interval"] = json!(tuning::pd_kappa_interval(&sess.problem.instance));
    v["phi"] = json!({
        "dimension": view.phi.nrows(),
        "lambda_min": view.lambda_min,
        "lambda_max_phi_inv": view.lambda_max_phi_inv,
        "margin_over_half_inv_eps": view.lambda_min - 1.0 / (2.0 * gains.eps),
    });
    v["schur"] = json!({
        "diagonal": schur.diagonal,
        "consensus": schur.consensus,
        "multiplier": schur.multiplier,
        "holds": schur.holds(),
    });
    Ok(v)
}

pub fn cmd_tune(cfg: RunConfig, opts: &RunOptions) -> Result<CommandReport> {
    let v = tune_report(cfg, opts)?;
    Ok(CommandReport {
        exit_code: EXIT_OK,
        files: Vec::new(),
        message: pretty(&v),
    })
}

pub fn cmd_compare(cfg: RunConfig, opts: &RunOptions) -> Result<CommandReport> {
    let sess = Session::new(cfg, opts)?;
    Ok(guarded(&sess, "compare", |files| {
        let (_, gains) = sess.gains()?;
        let (solver, out) = sess.run_solver(&gains)?;
        let cert = oracle::solve_vgne(&sess.gm, &OracleOptions::default())?;
        write_trajectory(&sess, &gains, &out, files)?;
        sess.write(
            "certificate.json",
            &pretty(&certificate_json(&sess, Some(&gains), &cert)),
            files,
        )?;
        let beta = out.state.beta();
        let bid_gap = beta
            .iter()
            .zip(&cert.beta_star)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let lambda = out.state.mean_lambda();
        let multiplier_gap = lambda
            .iter()
            .zip(&cert.gamma2)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        let kkt_distributed = oracle::kkt_residual(&sess.gm, &beta, &lambda)?;
        let mut v = sess.header(Some(&gains));
        v["command"] = json!("compare");
        v["run"] = outcome_json(&sess, &solver, &out)?;
        v["comparison"] = json!({
            "bid_gap_inf": bid_gap,
            "multiplier_gap_inf": multiplier_gap,
            "kkt_distributed": kkt_distributed,
            "kkt_oracle": cert.kkt_residual,
            "oracle_beta_kwh": cert.beta_star,
            "oracle_gamma2": cert.gamma2,
        });
        sess.write("summary.json", &pretty(&v), files)?;
        let code = if out.converged() {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        };
        Ok((
            code,
            format!(
                "compare: bid gap {bid_gap:.3e}, multiplier gap {multiplier_gap:.3e}, \
                 kkt distributed {kkt_distributed:.3e}, kkt oracle {:.3e}",
                cert.kkt_residual
            ),
        ))
    }))
}

/// Dispatch by command name.
pub fn dispatch(command: &str, config: &Path, opts: &RunOptions) -> Result<CommandReport> {
    let cfg = crate::config::load_config(config)?;
    match command {
        "run" => cmd_run(cfg, opts),
        "oracle" => cmd_oracle(cfg, opts),
        "tune" => cmd_tune(cfg, opts),
        "compare" => cmd_compare(cfg, opts),
        other => Err(GneError::Config(format!("unknown command `{other}`"))),
    }
}
