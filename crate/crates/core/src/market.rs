//! Market primitives: configuration, round sampling, the dual feasible box,
//! and epoch schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Dist;
use crate::rng::{purpose, SeedDeriver};

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("invalid market config: {0}")]
    InvalidConfig(String),
    #[error("invalid epoch schedule: uniform({l}) requires 1 <= L <= T, got T={t}")]
    InvalidSchedule { l: usize, t: usize },
}

/// Static description of the market: horizon, agents, cost dimensions,
/// thresholds, discounting, and the per-agent value/cost distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Number of rounds T.
    pub horizon: usize,
    /// Number of agents K.
    pub n_agents: usize,
    /// Number of cost dimensions d.
    pub cost_dims: usize,
    /// Per-dimension long-term thresholds, each in (0, 1].
    pub rho: Vec<f64>,
    /// Agents' discount factor, in (0, 1).
    pub gamma: f64,
    /// One value distribution per agent, support in [0,1].
    pub value_dists: Vec<Dist>,
    /// Per agent, one distribution per cost dimension, support in [0,1].
    pub cost_dists: Vec<Vec<Dist>>,
}

impl MarketConfig {
    /// Validates invariants and returns lint warnings (non-fatal).
    ///
    /// The only lint today: a point-mass cost distribution violates the
    /// smooth-cost assumption that backs the theory. It is a warning, not an
    /// error, because the mechanism itself never uses that assumption.
    pub fn validate(&self) -> Result<Vec<String>, MarketError> {
        let err = |m: String| Err(MarketError::InvalidConfig(m));
        if self.horizon < 1 {
            return err("T must be >= 1".into());
        }
        if self.n_agents < 1 {
            return err("K must be >= 1".into());
        }
        if self.cost_dims < 1 {
            return err("d must be >= 1".into());
        }
        if self.rho.len() != self.cost_dims {
            return err(format!("rho has {} entries, want d={}", self.rho.len(), self.cost_dims));
        }
        for (j, &r) in self.rho.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return err(format!("rho[{j}]={r} outside (0,1]"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return err(format!("gamma={} outside (0,1)", self.gamma));
        }
        if self.value_dists.len() != self.n_agents {
            return err(format!(
                "{} value distributions, want K={}",
                self.value_dists.len(),
                self.n_agents
            ));
        }
        if self.cost_dists.len() != self.n_agents {
            return err(format!(
                "{} cost distribution rows, want K={}",
                self.cost_dists.len(),
                self.n_agents
            ));
        }
        for (i, d) in self.value_dists.iter().enumerate() {
            if !d.support_in(0.0, 1.0) {
                return err(format!("value distribution for agent {} leaves [0,1]", i + 1));
            }
        }
        let mut warnings = Vec::new();
        for (i, row) in self.cost_dists.iter().enumerate() {
            if row.len() != self.cost_dims {
                return err(format!(
                    "agent {} has {} cost distributions, want d={}",
                    i + 1,
                    row.len(),
                    self.cost_dims
                ));
            }
            for (j, d) in row.iter().enumerate() {
                if !d.support_in(0.0, 1.0) {
                    return err(format!(
                        "cost distribution for agent {} dim {j} leaves [0,1]",
                        i + 1
                    ));
                }
                if d.has_atom() {
                    warnings.push(format!(
                        "cost distribution for agent {} dim {j} has an atom; the smooth-cost condition does not hold",
                        i + 1
                    ));
                }
            }
        }
        Ok(warnings)
    }
}

/// Dual vector constrained to the box `0 <= lambda_j <= 1/rho_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualVector(Vec<f64>);

impl DualVector {
    pub fn zeros(d: usize) -> Self {
        DualVector(vec![0.0; d])
    }

    /// Clamp an arbitrary vector into the dual box. Idempotent.
    pub fn clipped(x: &[f64], rho: &[f64]) -> Self {
        assert_eq!(x.len(), rho.len());
        DualVector(
            x.iter()
                .zip(rho)
                .map(|(&v, &r)| v.clamp(0.0, 1.0 / r))
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, c: &[f64]) -> f64 {
        self.0.iter().zip(c).map(|(a, b)| a * b).sum()
    }

    pub fn in_region(&self, rho: &[f64]) -> bool {
        self.0.len() == rho.len()
            && self
                .0
                .iter()
                .zip(rho)
                .all(|(&l, &r)| (0.0..=1.0 / r).contains(&l))
    }
}

/// Per-coordinate clamp of `x` to the dual box defined by `rho`.
pub fn clip_to_dual_region(x: &[f64], rho: &[f64]) -> DualVector {
    DualVector::clipped(x, rho)
}

/// How the horizon is split into epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum EpochScheme {
    /// L epochs of (near-)equal length.
    Uniform { l: usize },
    /// Epoch l covers [2^(l-1), min(2^l - 1, T)].
    Doubling,
}

/// Ordered, disjoint, contiguous round intervals covering [1, T]. Intervals
/// are 1-based and inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSchedule {
    epochs: Vec<(usize, usize)>,
}

impl EpochSchedule {
    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.epochs
    }

    pub fn num_epochs(&self) -> usize {
        self.epochs.len()
    }

    /// Length of epoch `l` (1-based).
    pub fn epoch_len(&self, l: usize) -> usize {
        let (a, b) = self.epochs[l - 1];
        b - a + 1
    }

    /// 1-based epoch index containing round `t`.
    pub fn epoch_of(&self, t: usize) -> usize {
        match self.epochs.binary_search_by(|&(a, b)| {
            if t < a {
                std::cmp::Ordering::Greater
            } else if t > b {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Equal
            }
        }) {
            Ok(i) => i + 1,
            Err(_) => panic!("round {t} outside schedule"),
        }
    }
}

/// Builds the epoch partition of [1, T] for the given scheme.
///
/// Uniform(L) uses the balanced split `[floor((l-1)T/L)+1, floor(lT/L)]`,
/// which reduces to contiguous blocks of T/L rounds when L divides T.
pub fn build_epoch_schedule(t: usize, scheme: EpochScheme) -> Result<EpochSchedule, MarketError> {
    if t < 1 {
        return Err(MarketError::InvalidSchedule { l: 0, t });
    }
    let epochs = match scheme {
        EpochScheme::Uniform { l } => {
            if l < 1 || l > t {
                return Err(MarketError::InvalidSchedule { l, t });
            }
            (1..=l)
                .map(|i| ((i - 1) * t / l + 1, i * t / l))
                .collect::<Vec<_>>()
        }
        EpochScheme::Doubling => {
            let mut v = Vec::new();
            let mut start = 1usize;
            while start <= t {
                let end = (2 * start - 1).min(t);
                v.push((start, end));
                start = end + 1;
            }
            v
        }
    };
    debug_assert_eq!(epochs.first().map(|e| e.0), Some(1));
    debug_assert_eq!(epochs.last().map(|e| e.1), Some(t));
    Ok(EpochSchedule { epochs })
}

/// One round of private values and public costs. `values[i]` and `costs[i]`
/// belong to agent i+1; the forfeit option (index 0, value 0, cost 0) is
/// implicit and handled by the allocation rules.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSample {
    pub values: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
}

/// Draws one round of values and costs. Each (trial, round, agent) pair gets
/// its own sub-stream, so draws are invariant to the presence of other agents.
pub fn sample_round(
    config: &MarketConfig,
    deriver: &SeedDeriver,
    trial: u64,
    round: u64,
) -> RoundSample {
    let mut values = Vec::with_capacity(config.n_agents);
    let mut costs = Vec::with_capacity(config.n_agents);
    for i in 0..config.n_agents {
        let agent = (i + 1) as u64;
        let mut vr = deriver.stream(&[purpose::VALUE, trial, round, agent]);
        values.push(config.value_dists[i].sample(&mut vr));
        let mut cr = deriver.stream(&[purpose::COST, trial, round, agent]);
        costs.push(
            config.cost_dists[i]
                .iter()
                .map(|d| d.sample(&mut cr))
                .collect(),
        );
    }
    RoundSample { values, costs }
}
