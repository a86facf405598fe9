//! Flat key = value experiment configuration.
//!
//! Grammar (one `key = value` pair per line, `#` starts a comment):
//!
//! ```text
//! T = 1000                 # rounds
//! K = 3                    # agents
//! d = 1                    # cost dimensions
//! rho = 0.5                # d comma-separated thresholds in (0,1]
//! gamma = 0.9              # discount factor in (0,1)
//! value_dist = uniform(0,1)          # all agents; value_dist.2 overrides agent 2
//! cost_dist = uniform(0.35,0.65)     # d comma-separated dists, or one for all dims
//! updater = oftrl_fp       # vanilla | ftrl | oftrl_fp | constant_zero
//! epoch_scheme = doubling  # doubling | uniform(L)
//! eta_scale = 1.0
//! vanilla_eta = 0.0316     # optional; default 1/sqrt(T)
//! fp_mode = exact          # exact | approx
//! fp_grid = 201
//! fp_tolerance = 1e-6
//! archive_include_exploration = true
//! agents = q_learning      # truthful | constant_shift(0.1) | q_learning; agents.i overrides
//! q_alpha = 0.1
//! q_persist = true
//! benchmark = none         # none | exhaustive | lp_bound
//! n_trials = 200
//! seed = 42
//! label = oftrl-fp
//! emit_trace = true
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::BenchmarkMode;
use crate::dist::Dist;
use crate::dual::{EtaSchedule, FpMode, Regularizer, UpdaterParams};
use crate::market::{build_epoch_schedule, EpochScheme, MarketConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Which dual machinery drives the mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdaterKind {
    Ftrl,
    OftrlFp,
    /// Diagnostics-only null updater.
    ConstantZero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
pub enum MechanismSpec {
    /// Epoch-lazy incentive-aware mechanism.
    Algorithm1 {
        updater: UpdaterKind,
        scheme: EpochScheme,
        params: UpdaterParams,
    },
    /// Per-round primal-dual baseline: same allocation rule and safety
    /// rejection, no epochs, no exploration, and no payments.
    VanillaBaseline { eta: Option<f64> },
}

impl MechanismSpec {
    /// Short name used in outputs and compare keys.
    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::VanillaBaseline { .. } => "vanilla",
            MechanismSpec::Algorithm1 { updater, .. } => match updater {
                UpdaterKind::Ftrl => "ftrl",
                UpdaterKind::OftrlFp => "oftrl_fp",
                UpdaterKind::ConstantZero => "constant_zero",
            },
        }
    }

    /// Stream tag separating mechanism-internal coins across compare arms;
    /// value/cost draws deliberately exclude it so arms stay paired.
    pub fn stream_tag(&self) -> u64 {
        match self {
            MechanismSpec::VanillaBaseline { .. } => 1,
            MechanismSpec::Algorithm1 { updater, .. } => match updater {
                UpdaterKind::Ftrl => 2,
                UpdaterKind::OftrlFp => 3,
                UpdaterKind::ConstantZero => 4,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicySpec {
    Truthful,
    ConstantShift { delta: f64 },
    QLearning,
}

/// Everything needed to run a seeded multi-trial experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub market: MarketConfig,
    pub mechanism: MechanismSpec,
    pub agent_policies: Vec<PolicySpec>,
    pub n_trials: usize,
    pub master_seed: u64,
    pub benchmark: BenchmarkMode,
    pub q_alpha: f64,
    /// Q-tables persist across trials (the learning axis). Disabling makes
    /// learning curves flat in expectation.
    pub q_persist: bool,
    pub label: String,
    pub emit_trace: bool,
}

impl ExperimentPlan {
    pub fn from_file(path: &Path) -> Result<(Self, Vec<String>), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned());
        Self::from_str_with_label(&text, stem)
    }

    pub fn from_config_str(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        Self::from_str_with_label(text, None)
    }

    /// Parses the config text; returns the plan plus lint warnings.
    fn from_str_with_label(
        text: &str,
        default_label: Option<String>,
    ) -> Result<(Self, Vec<String>), ConfigError> {
        let kv = parse_key_values(text)?;
        build_plan(kv, default_label)
    }

    /// Full validation: market invariants plus mechanism parameter checks.
    /// Returns lint warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let warnings = self
            .market
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n_trials < 1 {
            return Err(ConfigError::Invalid("n_trials must be >= 1".into()));
        }
        if self.agent_policies.len() != self.market.n_agents {
            return Err(ConfigError::Invalid(format!(
                "{} agent policies for K={} agents",
                self.agent_policies.len(),
                self.market.n_agents
            )));
        }
        if !(self.q_alpha > 0.0 && self.q_alpha <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "q_alpha={} outside (0,1]",
                self.q_alpha
            )));
        }
        match &self.mechanism {
            MechanismSpec::Algorithm1 { scheme, params, .. } => {
                build_epoch_schedule(self.market.horizon, *scheme)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                params.validate().map_err(ConfigError::Invalid)?;
            }
            MechanismSpec::VanillaBaseline { eta } => {
                if let Some(e) = eta {
                    if !(*e > 0.0) {
                        return Err(ConfigError::Invalid(format!("vanilla_eta={e} must be > 0")));
                    }
                }
            }
        }
        Ok(warnings)
    }
}

type Kv = BTreeMap<String, (usize, String)>;

fn parse_key_values(text: &str) -> Result<Kv, ConfigError> {
    let mut kv = Kv::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim().to_string();
        if kv.contains_key(&key) {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: format!("duplicate key {key:?}"),
            });
        }
        kv.insert(key, (line_no, value.trim().to_string()));
    }
    Ok(kv)
}

/// Splits on commas at parenthesis depth zero.
fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth -= 1;
                cur.push(ch);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur = String::new();
            }
            _ => cur.push(ch),
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_dist(s: &str, line: usize) -> Result<Dist, ConfigError> {
    let err = |msg: String| ConfigError::Parse { line, msg };
    let (name, args) = match s.find('(') {
        Some(p) if s.ends_with(')') => (&s[..p], &s[p + 1..s.len() - 1]),
        _ => return Err(err(format!("expected dist(args), got {s:?}"))),
    };
    let nums: Vec<f64> = split_top_level(args)
        .iter()
        .map(|a| {
            a.parse::<f64>()
                .map_err(|_| err(format!("bad number {a:?} in {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    match (name.trim(), nums.as_slice()) {
        ("point", [at]) => Ok(Dist::Point { at: *at }),
        ("uniform", [lo, hi]) => Ok(Dist::Uniform { lo: *lo, hi: *hi }),
        ("truncnormal", [mean, sd]) => Ok(Dist::TruncNormal { mean: *mean, sd: *sd }),
        _ => Err(err(format!("unknown distribution {s:?}"))),
    }
}

fn parse_policy(s: &str, line: usize) -> Result<PolicySpec, ConfigError> {
    let err = |msg: String| ConfigError::Parse { line, msg };
    match s {
        "truthful" => Ok(PolicySpec::Truthful),
        "q_learning" => Ok(PolicySpec::QLearning),
        _ => {
            if let Some(rest) = s.strip_prefix("constant_shift(") {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| err(format!("bad policy {s:?}")))?;
                let delta: f64 = inner
                    .parse()
                    .map_err(|_| err(format!("bad shift {inner:?}")))?;
                Ok(PolicySpec::ConstantShift { delta })
            } else {
                Err(err(format!("unknown policy {s:?}")))
            }
        }
    }
}

fn parse_scheme(s: &str, line: usize) -> Result<EpochScheme, ConfigError> {
    let err = |msg: String| ConfigError::Parse { line, msg };
    if s == "doubling" {
        return Ok(EpochScheme::Doubling);
    }
    if let Some(rest) = s.strip_prefix("uniform(") {
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| err(format!("bad epoch scheme {s:?}")))?;
        let l: usize = inner
            .parse()
            .map_err(|_| err(format!("bad epoch count {inner:?}")))?;
        return Ok(EpochScheme::Uniform { l });
    }
    Err(err(format!("unknown epoch scheme {s:?}")))
}

fn build_plan(kv: Kv, default_label: Option<String>) -> Result<(ExperimentPlan, Vec<String>), ConfigError> {
    let get = |key: &str| kv.get(key).map(|(l, v)| (*l, v.as_str()));
    let parse_num = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match get(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("bad number for {key}: {v:?}"),
            }),
        }
    };
    let parse_usize = |key: &str, default: usize| -> Result<usize, ConfigError> {
        match get(key) {
            None => Ok(default),
            Some((line, v)) => v.parse().map_err(|_| ConfigError::Parse {
                line,
                msg: format!("bad integer for {key}: {v:?}"),
            }),
        }
    };
    let parse_bool = |key: &str, default: bool| -> Result<bool, ConfigError> {
        match get(key) {
            None => Ok(default),
            Some((line, v)) => match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ConfigError::Parse {
                    line,
                    msg: format!("bad bool for {key}: {v:?}"),
                }),
            },
        }
    };

    let missing = |key: &str| ConfigError::Invalid(format!("missing required key {key:?}"));
    if get("T").is_none() {
        return Err(missing("T"));
    }
    let horizon = parse_usize("T", 0)?;
    if horizon == 0 {
        return Err(ConfigError::Invalid("T must be >= 1".into()));
    }
    if get("K").is_none() {
        return Err(missing("K"));
    }
    let n_agents = parse_usize("K", 0)?;
    if n_agents == 0 {
        return Err(ConfigError::Invalid("K must be >= 1".into()));
    }
    let cost_dims = parse_usize("d", 1)?;
    let rho: Vec<f64> = match get("rho") {
        None => return Err(missing("rho")),
        Some((line, v)) => split_top_level(v)
            .iter()
            .map(|x| {
                x.parse::<f64>().map_err(|_| ConfigError::Parse {
                    line,
                    msg: format!("bad rho entry {x:?}"),
                })
            })
            .collect::<Result<_, _>>()?,
    };
    let rho = if rho.len() == 1 && cost_dims > 1 {
        vec![rho[0]; cost_dims]
    } else {
        rho
    };
    let gamma = parse_num("gamma", 0.9)?;

    // Distributions: a bare key applies to every agent; `key.i` overrides
    // agent i (1-based). Cost entries may list one dist per dimension.
    let default_value = match get("value_dist") {
        Some((line, v)) => Some(parse_dist(v, line)?),
        None => Some(Dist::uniform(0.0, 1.0)),
    };
    let mut value_dists = Vec::with_capacity(n_agents);
    for i in 1..=n_agents {
        let key = format!("value_dist.{i}");
        let dist = match kv.get(&key) {
            Some((line, v)) => parse_dist(v, *line)?,
            None => default_value.clone().unwrap(),
        };
        value_dists.push(dist);
    }
    let parse_cost_row = |spec: &str, line: usize| -> Result<Vec<Dist>, ConfigError> {
        let parts = split_top_level(spec);
        let dists: Vec<Dist> = parts
            .iter()
            .map(|p| parse_dist(p, line))
            .collect::<Result<_, _>>()?;
        if dists.len() == 1 {
            Ok(vec![dists[0].clone(); cost_dims])
        } else if dists.len() == cost_dims {
            Ok(dists)
        } else {
            Err(ConfigError::Parse {
                line,
                msg: format!("{} cost distributions for d={cost_dims}", dists.len()),
            })
        }
    };
    let default_cost = match get("cost_dist") {
        Some((line, v)) => parse_cost_row(v, line)?,
        None => vec![Dist::uniform(0.0, 1.0); cost_dims],
    };
    let mut cost_dists = Vec::with_capacity(n_agents);
    for i in 1..=n_agents {
        let key = format!("cost_dist.{i}");
        let row = match kv.get(&key) {
            Some((line, v)) => parse_cost_row(v, *line)?,
            None => default_cost.clone(),
        };
        cost_dists.push(row);
    }

    let market = MarketConfig {
        horizon,
        n_agents,
        cost_dims,
        rho,
        gamma,
        value_dists,
        cost_dists,
    };

    let updater = match get("updater") {
        None => "oftrl_fp".to_string(),
        Some((_, v)) => v.to_string(),
    };
    let scheme = match get("epoch_scheme") {
        None => EpochScheme::Doubling,
        Some((line, v)) => parse_scheme(v, line)?,
    };
    let eta_scale = parse_num("eta_scale", 1.0)?;
    let fp_mode = match get("fp_mode") {
        None => FpMode::Exact,
        Some((line, v)) => match v {
            "exact" => FpMode::Exact,
            "approx" => FpMode::Approximation,
            _ => {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("fp_mode must be exact or approx, got {v:?}"),
                })
            }
        },
    };
    let params = UpdaterParams {
        regularizer: Regularizer::HalfSquaredL2,
        eta: match updater.as_str() {
            "ftrl" => EtaSchedule::TheoremFtrl { scale: eta_scale },
            _ => EtaSchedule::TheoremOftrlFp { scale: eta_scale },
        },
        fp_mode,
        fp_grid: parse_usize("fp_grid", 201)?,
        fp_tolerance: parse_num("fp_tolerance", 1e-6)?,
        include_exploration_in_archive: parse_bool("archive_include_exploration", true)?,
    };
    let mechanism = match updater.as_str() {
        "vanilla" => MechanismSpec::VanillaBaseline {
            eta: get("vanilla_eta")
                .map(|(line, v)| {
                    v.parse::<f64>().map_err(|_| ConfigError::Parse {
                        line,
                        msg: format!("bad vanilla_eta {v:?}"),
                    })
                })
                .transpose()?,
        },
        "ftrl" => MechanismSpec::Algorithm1 {
            updater: UpdaterKind::Ftrl,
            scheme,
            params,
        },
        "oftrl_fp" => MechanismSpec::Algorithm1 {
            updater: UpdaterKind::OftrlFp,
            scheme,
            params,
        },
        "constant_zero" => MechanismSpec::Algorithm1 {
            updater: UpdaterKind::ConstantZero,
            scheme,
            params,
        },
        other => {
            let line = get("updater").map(|(l, _)| l).unwrap_or(0);
            return Err(ConfigError::Parse {
                line,
                msg: format!("unknown updater {other:?}"),
            });
        }
    };

    let default_policy = match get("agents") {
        Some((line, v)) => parse_policy(v, line)?,
        None => PolicySpec::Truthful,
    };
    let mut agent_policies = Vec::with_capacity(n_agents);
    for i in 1..=n_agents {
        let key = format!("agents.{i}");
        let p = match kv.get(&key) {
            Some((line, v)) => parse_policy(v, *line)?,
            None => default_policy,
        };
        agent_policies.push(p);
    }

    let benchmark = match get("benchmark") {
        None => BenchmarkMode::None,
        Some((line, v)) => match v {
            "none" => BenchmarkMode::None,
            "exhaustive" => BenchmarkMode::Exhaustive,
            "lp_bound" => BenchmarkMode::LpBound,
            _ => {
                return Err(ConfigError::Parse {
                    line,
                    msg: format!("benchmark must be none | exhaustive | lp_bound, got {v:?}"),
                })
            }
        },
    };

    let label = match get("label") {
        Some((_, v)) => v.to_string(),
        None => default_label.unwrap_or_else(|| mechanism.name().to_string()),
    };

    // Reject unknown keys so typos fail loudly.
    let known_prefixes = ["value_dist.", "cost_dist.", "agents."];
    let known = [
        "T", "K", "d", "rho", "gamma", "value_dist", "cost_dist", "updater", "epoch_scheme",
        "eta_scale", "vanilla_eta", "fp_mode", "fp_grid", "fp_tolerance",
        "archive_include_exploration", "agents", "q_alpha", "q_persist", "benchmark", "n_trials",
        "seed", "label", "emit_trace",
    ];
    for (key, (line, _)) in &kv {
        if !known.contains(&key.as_str()) && !known_prefixes.iter().any(|p| key.starts_with(p)) {
            return Err(ConfigError::Parse {
                line: *line,
                msg: format!("unknown key {key:?}"),
            });
        }
    }

    let plan = ExperimentPlan {
        market,
        mechanism,
        agent_policies,
        n_trials: parse_usize("n_trials", 1)?,
        master_seed: parse_num("seed", 0.0)? as u64,
        benchmark,
        q_alpha: parse_num("q_alpha", 0.1)?,
        q_persist: parse_bool("q_persist", true)?,
        label,
        emit_trace: parse_bool("emit_trace", true)?,
    };
    let warnings = plan.validate()?;
    Ok((plan, warnings))
}
