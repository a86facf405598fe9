//! Offline benchmark, regret, constraint violation, and experiment summary
//! statistics.
//!
//! The offline problem maximizes total true value subject to the cumulative
//! cost budget `T * rho`. Small instances are solved exactly by enumeration;
//! large ones get a Lagrangian-dual upper bound (weak duality makes any dual
//! point a valid bound, so the reported value always dominates the integral
//! optimum).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::TrialTrace;
use crate::market::{clip_to_dual_region, DualVector};
use crate::mechanism::argmax_dual_adjusted;

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("exhaustive search infeasible: (K+1)^T = {size:.3e} exceeds 1e7; use the LP relaxation bound")]
    TooLarge { size: f64 },
    #[error("inconsistent instance: {0}")]
    BadInstance(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineMethod {
    Exhaustive,
    LpRelaxationBound,
}

/// Hindsight-optimal allocation (exhaustive) or a fractional upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineSolution {
    /// Round-by-round winners; empty for the LP bound.
    pub allocation: Vec<usize>,
    pub welfare: f64,
    pub method: OfflineMethod,
}

/// Regret against the offline benchmark. `is_upper_bound` is set when the
/// benchmark side is the LP relaxation (conservative).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regret {
    pub value: f64,
    pub is_upper_bound: bool,
}

/// `regret = offline welfare - realized welfare`.
pub fn regret(trial_welfare: f64, offline: &OfflineSolution) -> Regret {
    Regret {
        value: offline.welfare - trial_welfare,
        is_upper_bound: offline.method == OfflineMethod::LpRelaxationBound,
    }
}

/// Constraint violation: `|| (sum_t c_{t,i_t} - T rho)_+ ||_1`.
pub fn violation(cost_trace: &[Vec<f64>], rho: &[f64], horizon: usize) -> f64 {
    let mut sums = vec![0.0; rho.len()];
    for row in cost_trace {
        for (s, &c) in sums.iter_mut().zip(row) {
            *s += c;
        }
    }
    sums.iter()
        .zip(rho)
        .map(|(&s, &r)| (s - horizon as f64 * r).max(0.0))
        .sum()
}

/// Exact offline optimum by lexicographic depth-first enumeration over
/// `{0} u [K]` per round, keeping the first allocation that strictly improves
/// welfare. Partial sums above the budget prune (costs are non-negative).
pub fn offline_exhaustive(
    values: &[Vec<f64>],
    costs: &[Vec<Vec<f64>>],
    rho: &[f64],
) -> Result<OfflineSolution, BenchmarkError> {
    let t = values.len();
    if t == 0 || costs.len() != t {
        return Err(BenchmarkError::BadInstance("empty or mismatched instance".into()));
    }
    let k = values[0].len();
    let size = ((k + 1) as f64).powi(t as i32);
    if size > 1e7 {
        return Err(BenchmarkError::TooLarge { size });
    }
    let budget: Vec<f64> = rho.iter().map(|&r| t as f64 * r).collect();

    struct Dfs<'a> {
        values: &'a [Vec<f64>],
        costs: &'a [Vec<Vec<f64>>],
        budget: &'a [f64],
        k: usize,
        best_welfare: f64,
        best_alloc: Vec<usize>,
        current: Vec<usize>,
    }
    impl Dfs<'_> {
        fn go(&mut self, t: usize, welfare: f64, used: &mut [f64]) {
            if t == self.values.len() {
                if welfare > self.best_welfare {
                    self.best_welfare = welfare;
                    self.best_alloc = self.current.clone();
                }
                return;
            }
            for i in 0..=self.k {
                if i == 0 {
                    self.current.push(0);
                    self.go(t + 1, welfare, used);
                    self.current.pop();
                    continue;
                }
                let c = &self.costs[t][i - 1];
                let feasible = used
                    .iter()
                    .zip(c)
                    .zip(self.budget)
                    .all(|((&u, &cc), &b)| u + cc <= b);
                if !feasible {
                    continue;
                }
                for (u, &cc) in used.iter_mut().zip(c) {
                    *u += cc;
                }
                self.current.push(i);
                self.go(t + 1, welfare + self.values[t][i - 1], used);
                self.current.pop();
                for (u, &cc) in used.iter_mut().zip(c) {
                    *u -= cc;
                }
            }
        }
    }

    let mut dfs = Dfs {
        values,
        costs,
        budget: &budget,
        k,
        best_welfare: f64::NEG_INFINITY,
        best_alloc: Vec::new(),
        current: Vec::new(),
    };
    let mut used = vec![0.0; rho.len()];
    dfs.go(0, 0.0, &mut used);
    Ok(OfflineSolution {
        allocation: dfs.best_alloc,
        welfare: dfs.best_welfare,
        method: OfflineMethod::Exhaustive,
    })
}

/// Lagrangian dual value at `lambda`:
/// `lambda^T (T rho) + sum_t max(0, max_i (v_{t,i} - lambda^T c_{t,i}))`.
/// By weak duality this upper-bounds every feasible integral welfare.
fn lagrangian_value(
    values: &[Vec<f64>],
    costs: &[Vec<Vec<f64>>],
    budget: &[f64],
    lambda: &DualVector,
) -> f64 {
    let mut total: f64 = lambda.as_slice().iter().zip(budget).map(|(l, b)| l * b).sum();
    for (v, c) in values.iter().zip(costs) {
        let w = argmax_dual_adjusted(v, c, lambda);
        if w != 0 {
            total += v[w - 1] - lambda.dot(&c[w - 1]);
        }
    }
    total
}

/// Subgradient of the dual value at `lambda` (using the tie-broken argmax).
fn lagrangian_subgradient(
    values: &[Vec<f64>],
    costs: &[Vec<Vec<f64>>],
    budget: &[f64],
    lambda: &DualVector,
) -> Vec<f64> {
    let mut g = budget.to_vec();
    for (v, c) in values.iter().zip(costs) {
        let w = argmax_dual_adjusted(v, c, lambda);
        if w != 0 {
            for (gj, &cj) in g.iter_mut().zip(&c[w - 1]) {
                *gj -= cj;
            }
        }
    }
    g
}

/// Upper bound on the offline optimum via the Lagrangian dual, minimized
/// over the dual box by projected subgradient descent with iterate averaging,
/// then per-coordinate bisection sweeps on the (convex piecewise-linear)
/// dual until the relative improvement drops below 1e-6. The returned value
/// is the best dual value seen, hence always a valid bound.
pub fn offline_lp_bound(
    values: &[Vec<f64>],
    costs: &[Vec<Vec<f64>>],
    rho: &[f64],
) -> Result<OfflineSolution, BenchmarkError> {
    let t = values.len();
    if t == 0 || costs.len() != t {
        return Err(BenchmarkError::BadInstance("empty or mismatched instance".into()));
    }
    let budget: Vec<f64> = rho.iter().map(|&r| t as f64 * r).collect();
    let d = rho.len();
    let diam: f64 = rho.iter().map(|r| (1.0 / r).powi(2)).sum::<f64>().sqrt();

    let mut lambda = DualVector::zeros(d);
    let mut best = lagrangian_value(values, costs, &budget, &lambda);
    let mut avg = vec![0.0; d];

    // Phase 1: projected subgradient with averaging.
    let iters = 400usize;
    for k in 1..=iters {
        let g = lagrangian_subgradient(values, costs, &budget, &lambda);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let step = diam / (norm * (k as f64).sqrt());
        let raw: Vec<f64> = lambda
            .as_slice()
            .iter()
            .zip(&g)
            .map(|(&l, &gj)| l - step * gj)
            .collect();
        lambda = clip_to_dual_region(&raw, rho);
        best = best.min(lagrangian_value(values, costs, &budget, &lambda));
        for (a, &l) in avg.iter_mut().zip(lambda.as_slice()) {
            *a += l;
        }
        if k % 16 == 0 {
            let mean: Vec<f64> = avg.iter().map(|a| a / k as f64).collect();
            best = best.min(lagrangian_value(values, costs, &budget, &clip_to_dual_region(&mean, rho)));
        }
    }

    // Phase 2: coordinate bisection. The dual is convex in each coordinate,
    // so its one-sided derivative sign brackets the minimizer.
    let mut point: Vec<f64> = avg.iter().map(|a| a / iters as f64).collect();
    for sweep in 0..25 {
        let before = best;
        for j in 0..d {
            let (mut lo, mut hi) = (0.0f64, 1.0 / rho[j]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                point[j] = mid;
                let lam = clip_to_dual_region(&point, rho);
                let deriv = lagrangian_subgradient(values, costs, &budget, &lam)[j];
                if deriv >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            point[j] = 0.5 * (lo + hi);
            let lam = clip_to_dual_region(&point, rho);
            best = best.min(lagrangian_value(values, costs, &budget, &lam));
        }
        let _ = sweep;
        if (before - best).abs() <= 1e-6 * best.abs().max(1.0) {
            break;
        }
    }

    Ok(OfflineSolution {
        allocation: Vec::new(),
        welfare: best,
        method: OfflineMethod::LpRelaxationBound,
    })
}

/// Dispatch on the requested method.
pub fn offline_optimal(
    values: &[Vec<f64>],
    costs: &[Vec<Vec<f64>>],
    rho: &[f64],
    method: OfflineMethod,
) -> Result<OfflineSolution, BenchmarkError> {
    match method {
        OfflineMethod::Exhaustive => offline_exhaustive(values, costs, rho),
        OfflineMethod::LpRelaxationBound => offline_lp_bound(values, costs, rho),
    }
}

/// Which benchmark the harness computes per trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMode {
    #[default]
    None,
    Exhaustive,
    LpBound,
}

/// Per-trial metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub welfare: f64,
    pub regret: Option<Regret>,
    pub violation: f64,
    pub budget_utilization: Vec<f64>,
    pub mean_abs_misreport: f64,
    pub exploration_count: usize,
    pub rejected_count: usize,
}

/// Computes one trial's metrics from its trace.
pub fn trial_metrics(
    trace: &TrialTrace,
    rho: &[f64],
    benchmark: BenchmarkMode,
) -> Result<TrialMetrics, BenchmarkError> {
    let t = trace.rounds.len();
    let mut welfare = 0.0;
    let mut misreport = 0.0;
    let mut misreport_n = 0usize;
    let mut exploration_count = 0usize;
    let mut rejected_count = 0usize;
    let mut cost_trace = Vec::with_capacity(t);
    let d = rho.len();
    for r in &trace.rounds {
        if r.winner != 0 {
            welfare += r.true_values[r.winner - 1];
            cost_trace.push(r.costs[r.winner - 1].clone());
        } else {
            cost_trace.push(vec![0.0; d]);
        }
        for (u, v) in r.reports.iter().zip(&r.true_values) {
            misreport += (u - v).abs();
            misreport_n += 1;
        }
        exploration_count += r.exploration as usize;
        rejected_count += r.safety_rejected as usize;
    }
    let viol = violation(&cost_trace, rho, t);
    let utilization: Vec<f64> = {
        let mut sums = vec![0.0; d];
        for row in &cost_trace {
            for (s, &c) in sums.iter_mut().zip(row) {
                *s += c;
            }
        }
        sums.iter()
            .zip(rho)
            .map(|(&s, &r)| s / (t as f64 * r))
            .collect()
    };
    let regret = match benchmark {
        BenchmarkMode::None => None,
        BenchmarkMode::Exhaustive | BenchmarkMode::LpBound => {
            let values: Vec<Vec<f64>> = trace.rounds.iter().map(|r| r.true_values.clone()).collect();
            let costs: Vec<Vec<Vec<f64>>> = trace.rounds.iter().map(|r| r.costs.clone()).collect();
            let method = if benchmark == BenchmarkMode::Exhaustive {
                OfflineMethod::Exhaustive
            } else {
                OfflineMethod::LpRelaxationBound
            };
            let offline = offline_optimal(&values, &costs, rho, method)?;
            Some(regret(welfare, &offline))
        }
    };
    Ok(TrialMetrics {
        welfare,
        regret,
        violation: viol,
        budget_utilization: utilization,
        mean_abs_misreport: if misreport_n == 0 { 0.0 } else { misreport / misreport_n as f64 },
        exploration_count,
        rejected_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub welfare_mean: f64,
    pub welfare_std: f64,
    pub welfare_p10: f64,
    pub welfare_p50: f64,
    pub welfare_p90: f64,
    pub misreport_mean: f64,
    pub misreport_std: f64,
    pub violation_mean: f64,
    pub violation_max: f64,
    pub utilization_mean: Vec<f64>,
    pub regret_mean: Option<f64>,
    pub regret_std: Option<f64>,
    pub regret_is_upper_bound: bool,
    pub exploration_mean: f64,
    pub rejected_mean: f64,
}

/// Per-trial metrics plus cross-trial aggregates. `curves` follow the trial
/// index, which is the learning axis for Q-learning experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub per_trial: Vec<TrialMetrics>,
    pub aggregate: AggregateStats,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // Nearest-rank on a pre-sorted slice.
    let n = sorted.len();
    let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Deterministic fold over traces, sorted by trial index.
pub fn summarize(
    traces: &[TrialTrace],
    rho: &[f64],
    benchmark: BenchmarkMode,
) -> Result<SummaryStats, BenchmarkError> {
    assert!(!traces.is_empty(), "summarize needs at least one trace");
    let mut ordered: Vec<&TrialTrace> = traces.iter().collect();
    ordered.sort_by_key(|t| t.trial);
    let per_trial: Vec<TrialMetrics> = ordered
        .iter()
        .map(|t| trial_metrics(t, rho, benchmark))
        .collect::<Result<_, _>>()?;

    let (welfare_mean, welfare_std) = mean_std(per_trial.iter().map(|m| m.welfare));
    let mut sorted_welfare: Vec<f64> = per_trial.iter().map(|m| m.welfare).collect();
    sorted_welfare.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (misreport_mean, misreport_std) = mean_std(per_trial.iter().map(|m| m.mean_abs_misreport));
    let (violation_mean, _) = mean_std(per_trial.iter().map(|m| m.violation));
    let violation_max = per_trial.iter().map(|m| m.violation).fold(0.0, f64::max);
    let d = rho.len();
    let utilization_mean: Vec<f64> = (0..d)
        .map(|j| {
            per_trial.iter().map(|m| m.budget_utilization[j]).sum::<f64>() / per_trial.len() as f64
        })
        .collect();
    let regrets: Vec<f64> = per_trial.iter().filter_map(|m| m.regret.map(|r| r.value)).collect();
    let (regret_mean, regret_std) = if regrets.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(regrets.iter().cloned());
        (Some(m), Some(s))
    };
    let regret_is_upper_bound = per_trial
        .iter()
        .any(|m| m.regret.map(|r| r.is_upper_bound).unwrap_or(false));
    let (exploration_mean, _) = mean_std(per_trial.iter().map(|m| m.exploration_count as f64));
    let (rejected_mean, _) = mean_std(per_trial.iter().map(|m| m.rejected_count as f64));

    Ok(SummaryStats {
        aggregate: AggregateStats {
            welfare_mean,
            welfare_std,
            welfare_p10: quantile(&sorted_welfare, 0.10),
            welfare_p50: quantile(&sorted_welfare, 0.50),
            welfare_p90: quantile(&sorted_welfare, 0.90),
            misreport_mean,
            misreport_std,
            violation_mean,
            violation_max,
            utilization_mean,
            regret_mean,
            regret_std,
            regret_is_upper_bound,
            exploration_mean,
            rejected_mean,
        },
        per_trial,
    })
}
