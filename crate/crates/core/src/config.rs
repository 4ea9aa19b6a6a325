//! JSON run configuration.
//!
//! Units are part of the field names (`r_kwh`, `a_per_kwh2`, ...). Agent and
//! node indices are 1-based in the file and 0-based in memory. Unknown keys
//! are rejected. Data that does not come from the published case study (line
//! flow factors, communication weights) may be placed under `non_paper_data`
//! so that it stays visibly separate.
//!
//! ```json
//! {
//!   "name": "t2",
//!   "market": {
//!     "r_kwh": 10, "alpha": 1, "beta_min_kwh": 0, "beta_max_kwh": 10,
//!     "agents": [
//!       {"a_per_kwh2": 0.1, "b_per_kwh": 1, "e_kwh": 0, "xhat_kwh": 10},
//!       {"a_per_kwh2": 0.1, "b_per_kwh": 1, "e_kwh": 0, "xhat_kwh": 10}
//!     ],
//!     "lines": []
//!   },
//!   "graph": {"edges": [{"nodes": [1, 2], "weight": 1}]},
//!   "gains": "auto",
//!   "solver": {"tol": 1e-8, "max_iter": 100000, "record_stride": 1, "seed": 0, "initial": "zero"},
//!   "outputs": {"directory": "out/t2", "trajectory": true}
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::market::{AggregatorParams, Line, MarketInstance};
use crate::tuning::AgentGains;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub market: MarketConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_paper_data: Option<NonPaperData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub r_kwh: f64,
    pub alpha: f64,
    pub beta_min_kwh: f64,
    pub beta_max_kwh: f64,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub lines: Vec<LineConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub a_per_kwh2: f64,
    pub b_per_kwh: f64,
    pub e_kwh: f64,
    pub xhat_kwh: f64,
}

/// A line's capacity and, unless given under `non_paper_data`, its factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fhat_kwh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub nodes: [usize; 2],
    /// Optional in the schema so that a missing weight can be reported
    /// together with the edge it belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonPaperData {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// One row of `N` factors per line, in the order of `market.lines`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_flow_factors: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
}

/// `"auto"` or explicit per-agent step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainsConfig {
    Keyword(String),
    Explicit(ExplicitGains),
}

impl Default for GainsConfig {
    fn default() -> Self {
        GainsConfig::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitGains {
    pub kappa: f64,
    pub agents: Vec<GainRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainRow {
    pub tau: f64,
    pub upsilon: f64,
    pub rho: f64,
    pub delta: f64,
    pub eta: f64,
}

impl From<GainRow> for AgentGains {
    fn from(g: GainRow) -> Self {
        AgentGains {
            tau: g.tau,
            upsilon: g.upsilon,
            rho: g.rho,
            delta: g.delta,
            eta: g.eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Keep every `record_stride`-th iterate in the trajectory.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialConfig,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    100_000
}
fn default_stride() -> usize {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            record_stride: default_stride(),
            seed: 0,
            initial: InitialConfig::Zero,
        }
    }
}

/// `"zero"`, `{"random": {"scale": s}}` (seeded by `solver.seed`) or
/// `{"explicit": [omega...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    #[default]
    Zero,
    Random {
        scale: f64,
    },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_true")]
    pub trajectory: bool,
}

fn default_dir() -> String {
    "out".into()
}
fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            trajectory: true,
        }
    }
}

/// The validated problem a config describes.
#[derive(Debug, Clone)]
pub struct Problem {
    pub instance: MarketInstance,
    pub graph: CommGraph,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| GneError::Config(e.to_string()))?;
        cfg.problem()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical (compact) serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn display_name(&self) -> &str {
        self.name.as_deref().unwrap_or("unnamed")
    }

    fn graph_config(&self) -> Result<&GraphConfig> {
        let extra = self.non_paper_data.as_ref().and_then(|d| d.graph.as_ref());
        match (&self.graph, extra) {
            (Some(g), None) | (None, Some(g)) => Ok(g),
            (Some(_), Some(_)) => Err(GneError::Config(
                "graph given both at top level and under non_paper_data".into(),
            )),
            (None, None) => Err(GneError::Config("missing field `graph`".into())),
        }
    }

    fn lines(&self) -> Result<Vec<Line>> {
        let n = self.market.agents.len();
        let extra = self
            .non_paper_data
            .as_ref()
            .and_then(|d| d.line_flow_factors.as_ref());
        if let Some(rows) = extra {
            if rows.len() != self.market.lines.len() {
                return Err(GneError::Config(format!(
                    "non_paper_data.line_flow_factors has {} rows for {} lines",
                    rows.len(),
                    self.market.lines.len()
                )));
            }
        }
        self.market
            .lines
            .iter()
            .enumerate()
            .map(|(l, lc)| {
                let pi = match (&lc.pi, extra) {
                    (Some(p), None) => p.clone(),
                    (None, Some(rows)) => rows[l].clone(),
                    (Some(_), Some(_)) => {
                        return Err(GneError::Config(format!(
                            "line {}: factors given both inline and under non_paper_data",
                            l + 1
                        )))
                    }
                    (None, None) => {
                        return Err(GneError::Config(format!(
                            "line {}: missing flow distribution factors `pi`",
                            l + 1
                        )))
                    }
                };
                if pi.len() != n {
                    return Err(GneError::Config(format!(
                        "line {}: {} factors for {} agents",
                        l + 1,
                        pi.len(),
                        n
                    )));
                }
                Ok(Line {
                    pi,
                    fhat: lc.fhat_kwh,
                })
            })
            .collect()
    }

    /// Validate and build the market instance and communication graph.
    pub fn problem(&self) -> Result<Problem> {
        let m = &self.market;
        let agents = m
            .agents
            .iter()
            .map(|a| AggregatorParams {
                a: a.a_per_kwh2,
                b: a.b_per_kwh,
                e: a.e_kwh,
                xhat: a.xhat_kwh,
            })
            .collect();
        let instance = MarketInstance::new(
            m.r_kwh,
            m.alpha,
            m.beta_min_kwh,
            m.beta_max_kwh,
            agents,
            self.lines()?,
        )?;
        let n = instance.n_agents();
        let mut edges = Vec::new();
        for (i, e) in self.graph_config()?.edges.iter().enumerate() {
            let [a, b] = e.nodes;
            let weight = e.weight.ok_or_else(|| {
                GneError::Config(format!("edge {} ({a}-{b}) has no `weight`", i + 1))
            })?;
            if a == 0 || b == 0 || a > n || b > n {
                return Err(GneError::Config(format!(
                    "edge {} ({a}-{b}): nodes are numbered 1..{n}",
                    i + 1
                )));
            }
            edges.push((a - 1, b - 1, weight));
        }
        let graph = CommGraph::new(n, &edges)?;

        let s = &self.solver;
        if !(s.tol > 0.0) {
            return Err(GneError::Config(format!("solver.tol must be positive, got {}", s.tol)));
        }
        if s.record_stride == 0 {
            return Err(GneError::Config("solver.record_stride must be >= 1".into()));
        }
        match &self.gains {
            GainsConfig::Keyword(k) if k != "auto" => {
                return Err(GneError::Config(format!(
                    "gains must be \"auto\" or an object, got \"{k}\""
                )))
            }
            GainsConfig::Explicit(g) if g.agents.len() != n => {
                return Err(GneError::Config(format!(
                    "gains.agents has {} rows for {} agents",
                    g.agents.len(),
                    n
                )))
            }
            _ => {}
        }
        Ok(Problem { instance, graph })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| GneError::Io(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text).map_err(|e| match e {
        GneError::Config(msg) => GneError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_json() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const T2: &str = r#"{
      "market": {"r_kwh": 10, "alpha": 1, "beta_min_kwh": 0, "beta_max_kwh": 10,
        "agents": [
          {"a_per_kwh2": 0.1, "b_per_kwh": 1, "e_kwh": 0, "xhat_kwh": 10},
          {"a_per_kwh2": 0.1, "b_per_kwh": 1, "e_kwh": 0, "xhat_kwh": 10}]},
      "graph": {"edges": [{"nodes": [1, 2], "weight": 1}]}
    }"#;

    #[test]
    fn minimal_config_with_defaults() {
        let cfg = RunConfig::from_json(T2).unwrap();
        assert_eq!(cfg.gains, GainsConfig::Keyword("auto".into()));
        assert_eq!(cfg.solver, SolverConfig::default());
        let p = cfg.problem().unwrap();
        assert_eq!(p.instance.n_agents(), 2);
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let bad = T2.replace("\"alpha\"", "\"alpah\"");
        let err = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("alpah"), "{err}");
    }

    #[test]
    fn missing_weight_names_edge() {
        let bad = T2.replace(", \"weight\": 1", "");
        let err = RunConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("edge 1 (1-2)"), "{err}");
    }

    #[test]
    fn bad_gain_keyword() {
        let bad = T2.replace("\"graph\"", "\"gains\": \"fast\", \"graph\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }
}
