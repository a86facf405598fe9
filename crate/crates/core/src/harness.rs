//! Seeded multi-trial experiment runner and analysis-ready output files.
//!
//! A trial executes the interaction protocol round by round: sample values
//! and costs, collect reports, let the mechanism decide, feed rewards back to
//! learning agents. Q-tables thread through trials in order; mechanism
//! randomness is independent per trial.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentPolicy, QLearningParams};
use crate::benchmark::{summarize, BenchmarkError, SummaryStats};
use crate::config::{ConfigError, ExperimentPlan, MechanismSpec, PolicySpec, UpdaterKind};
use crate::dual::{
    ftrl_dual, solve_oftrlfp, DualUpdateInfo, EpochDualUpdater, FpMode, LossHistory, UpdaterParams,
};
use crate::market::{build_epoch_schedule, sample_round, DualVector, EpochSchedule};
use crate::mechanism::{argmax_dual_adjusted, safety_check, MechanismState};
use crate::rng::{purpose, SeedDeriver};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One round of the per-trial trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    /// Epoch index for the epoch-lazy mechanism; equals `t` for the
    /// per-round vanilla baseline.
    pub epoch: usize,
    pub lambda: Vec<f64>,
    pub exploration: bool,
    pub explored_agent: Option<usize>,
    pub offered_price: Option<f64>,
    pub reports: Vec<f64>,
    pub true_values: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub winner: usize,
    pub payment: f64,
    pub safety_rejected: bool,
    pub cumulative_cost: Vec<f64>,
}

/// Per-epoch dual diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochDiag {
    pub epoch: usize,
    pub lambda: Vec<f64>,
    pub residual: f64,
    pub warning: bool,
    pub grad_norm: f64,
}

/// Fixed-point diagnostics: both solve modes plus the FTRL reference, all on
/// the same history and learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpDiag {
    pub epoch: usize,
    pub lambda_exact: Vec<f64>,
    pub residual_exact: f64,
    pub lambda_approx: Vec<f64>,
    pub residual_approx: f64,
    /// ||exact - approx||_2 / ||exact||_2, or the absolute difference when
    /// the denominator is zero (flagged below).
    pub rel_diff: f64,
    pub rel_diff_is_absolute: bool,
    pub lambda_ftrl: Vec<f64>,
    /// ||exact - ftrl||_2 / ||exact||_2 under the same flag convention.
    pub rel_diff_ftrl: f64,
}

/// Full per-trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial: usize,
    pub rounds: Vec<RoundRecord>,
    pub epoch_diags: Vec<EpochDiag>,
    pub fp_diags: Vec<FpDiag>,
    pub final_lambda: Vec<f64>,
    pub final_cumulative_cost: Vec<f64>,
}

/// Experiment output: config echo plus per-trial and aggregate statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub label: String,
    pub mechanism: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub plan: ExperimentPlan,
    pub stats: SummaryStats,
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn build_policies(plan: &ExperimentPlan) -> Vec<AgentPolicy> {
    plan.agent_policies
        .iter()
        .map(|spec| match spec {
            PolicySpec::Truthful => AgentPolicy::Truthful,
            PolicySpec::ConstantShift { delta } => AgentPolicy::ConstantShift { delta: *delta },
            PolicySpec::QLearning => AgentPolicy::q_learning(
                plan.market.cost_dims,
                QLearningParams {
                    alpha: plan.q_alpha,
                    gamma: plan.market.gamma,
                },
            ),
        })
        .collect()
}

fn fp_diag_row(
    epoch: usize,
    history: &LossHistory,
    params: &UpdaterParams,
    rho: &[f64],
    n_agents: usize,
    schedule: &EpochSchedule,
) -> FpDiag {
    let eta = params.eta.eta(epoch, schedule, rho, n_agents);
    let epoch_len = schedule.epoch_len(epoch.min(schedule.num_epochs()));
    let mut p = *params;
    p.fp_mode = FpMode::Exact;
    let exact = solve_oftrlfp(history, &p, eta, rho, epoch_len);
    p.fp_mode = FpMode::Approximation;
    let approx = solve_oftrlfp(history, &p, eta, rho, epoch_len);
    let ftrl = ftrl_dual(&history.cumulative_gradient(), eta, rho);

    let norm = l2(exact.lambda.as_slice());
    let diff = l2_diff(exact.lambda.as_slice(), approx.lambda.as_slice());
    let diff_ftrl = l2_diff(exact.lambda.as_slice(), ftrl.as_slice());
    let (rel_diff, rel_diff_ftrl, absolute) = if norm > 0.0 {
        (diff / norm, diff_ftrl / norm, false)
    } else {
        (diff, diff_ftrl, true)
    };
    FpDiag {
        epoch,
        lambda_exact: exact.lambda.as_slice().to_vec(),
        residual_exact: exact.residual,
        lambda_approx: approx.lambda.as_slice().to_vec(),
        residual_approx: approx.residual,
        rel_diff,
        rel_diff_is_absolute: absolute,
        lambda_ftrl: ftrl.as_slice().to_vec(),
        rel_diff_ftrl,
    }
}

fn epoch_updater(updater: UpdaterKind, params: UpdaterParams) -> EpochDualUpdater {
    match updater {
        UpdaterKind::Ftrl => EpochDualUpdater::ftrl(params),
        UpdaterKind::OftrlFp => EpochDualUpdater::oftrl_fp(params),
        UpdaterKind::ConstantZero => EpochDualUpdater::constant_zero(),
    }
}

fn run_algorithm1_trial(
    plan: &ExperimentPlan,
    trial_index: usize,
    policies: &mut [AgentPolicy],
    updater: UpdaterKind,
    params: UpdaterParams,
    schedule: &EpochSchedule,
    with_fp_diag: bool,
) -> TrialTrace {
    let market = &plan.market;
    let (t_max, k, rho) = (market.horizon, market.n_agents, market.rho.clone());
    let deriver = SeedDeriver::new(plan.master_seed);
    let mech_tag = plan.mechanism.stream_tag();
    let trial = trial_index as u64;

    let handle = epoch_updater(updater, params);
    let mut history = LossHistory::new(market.cost_dims);
    let (mut state, info) = MechanismState::start(
        t_max,
        k,
        rho.clone(),
        schedule.clone(),
        &handle,
        &history,
    );
    let mut epoch_diags = vec![EpochDiag {
        epoch: 1,
        lambda: info.lambda.as_slice().to_vec(),
        residual: info.residual,
        warning: info.warning,
        grad_norm: 0.0,
    }];
    let mut fp_diags = Vec::new();
    if with_fp_diag {
        fp_diags.push(fp_diag_row(1, &history, &params, &rho, k, schedule));
    }

    let mut rounds = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        if state.epoch_finished() {
            epoch_diags.last_mut().unwrap().grad_norm = l2(state.epoch_gradient());
            let DualUpdateInfo {
                lambda,
                residual,
                warning,
            } = state.advance_epoch(&handle, &mut history);
            epoch_diags.push(EpochDiag {
                epoch: state.epoch_index(),
                lambda: lambda.as_slice().to_vec(),
                residual,
                warning,
                grad_norm: 0.0,
            });
            if with_fp_diag {
                fp_diags.push(fp_diag_row(
                    state.epoch_index(),
                    &history,
                    &params,
                    &rho,
                    k,
                    schedule,
                ));
            }
        }

        let sample = sample_round(market, &deriver, trial, t as u64);
        let lambda = state.lambda().clone();
        let mut reports = Vec::with_capacity(k);
        for (i, policy) in policies.iter_mut().enumerate() {
            let mut arng =
                deriver.stream(&[purpose::AGENT, mech_tag, trial, t as u64, (i + 1) as u64]);
            reports.push(policy.report(
                sample.values[i],
                &lambda,
                &rho,
                t,
                t_max,
                trial,
                &mut arng,
            ));
        }

        let mut mrng = deriver.stream(&[purpose::MECHANISM, mech_tag, trial, t as u64]);
        let out = state.decide_round(&reports, &sample.costs, &mut mrng);
        for (i, policy) in policies.iter_mut().enumerate() {
            let reward = if out.winner == i + 1 {
                sample.values[i] - out.payment
            } else {
                0.0
            };
            policy.observe_reward(reward);
        }

        rounds.push(RoundRecord {
            t,
            epoch: state.epoch_index(),
            lambda: lambda.as_slice().to_vec(),
            exploration: out.was_exploration,
            explored_agent: out.explored_agent,
            offered_price: out.offered_price,
            reports,
            true_values: sample.values,
            costs: sample.costs,
            winner: out.winner,
            payment: out.payment,
            safety_rejected: out.safety_rejected,
            cumulative_cost: state.cumulative_cost().to_vec(),
        });
    }
    epoch_diags.last_mut().unwrap().grad_norm = l2(state.epoch_gradient());
    let final_lambda = state.lambda().as_slice().to_vec();
    let final_cumulative = state.cumulative_cost().to_vec();
    state.finalize_epoch(&mut history);
    for policy in policies.iter_mut() {
        policy.end_of_trial();
    }
    TrialTrace {
        trial: trial_index,
        rounds,
        epoch_diags,
        fp_diags,
        final_lambda,
        final_cumulative_cost: final_cumulative,
    }
}

fn run_vanilla_trial(
    plan: &ExperimentPlan,
    trial_index: usize,
    policies: &mut [AgentPolicy],
    eta: Option<f64>,
) -> TrialTrace {
    let market = &plan.market;
    let (t_max, k, d) = (market.horizon, market.n_agents, market.cost_dims);
    let rho = market.rho.clone();
    let eta = eta.unwrap_or(1.0 / (t_max as f64).sqrt());
    let deriver = SeedDeriver::new(plan.master_seed);
    let mech_tag = plan.mechanism.stream_tag();
    let trial = trial_index as u64;

    let mut lambda = DualVector::zeros(d);
    let mut cumulative = vec![0.0; d];
    let mut rounds = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let sample = sample_round(market, &deriver, trial, t as u64);
        let mut reports = Vec::with_capacity(k);
        for (i, policy) in policies.iter_mut().enumerate() {
            let mut arng =
                deriver.stream(&[purpose::AGENT, mech_tag, trial, t as u64, (i + 1) as u64]);
            reports.push(policy.report(
                sample.values[i],
                &lambda,
                &rho,
                t,
                t_max,
                trial,
                &mut arng,
            ));
        }

        // Same allocation rule and safety veto as the epoch mechanism, but
        // no exploration and no payments.
        let tentative = argmax_dual_adjusted(&reports, &sample.costs, &lambda);
        let zero = vec![0.0; d];
        let candidate = if tentative == 0 {
            &zero
        } else {
            &sample.costs[tentative - 1]
        };
        let rejected = !safety_check(&cumulative, candidate, t_max, &rho);
        let winner = if rejected { 0 } else { tentative };
        if winner != 0 {
            for (c, &x) in cumulative.iter_mut().zip(&sample.costs[winner - 1]) {
                *c += x;
            }
        }
        for (i, policy) in policies.iter_mut().enumerate() {
            let reward = if winner == i + 1 { sample.values[i] } else { 0.0 };
            policy.observe_reward(reward);
        }
        let lambda_used = lambda.as_slice().to_vec();
        let realized = if winner == 0 {
            zero.clone()
        } else {
            sample.costs[winner - 1].clone()
        };
        lambda = crate::dual::vanilla_dual_step(&lambda, &realized, &rho, eta);

        rounds.push(RoundRecord {
            t,
            epoch: t,
            lambda: lambda_used,
            exploration: false,
            explored_agent: None,
            offered_price: None,
            reports,
            true_values: sample.values,
            costs: sample.costs,
            winner,
            payment: 0.0,
            safety_rejected: rejected,
            cumulative_cost: cumulative.clone(),
        });
    }
    for policy in policies.iter_mut() {
        policy.end_of_trial();
    }
    TrialTrace {
        trial: trial_index,
        rounds,
        epoch_diags: Vec::new(),
        fp_diags: Vec::new(),
        final_lambda: lambda.as_slice().to_vec(),
        final_cumulative_cost: cumulative,
    }
}

/// Runs one trial of the plan's mechanism. Deterministic given
/// `(master_seed, trial_index)` and the incoming agent state.
pub fn run_trial(
    plan: &ExperimentPlan,
    trial_index: usize,
    policies: &mut [AgentPolicy],
) -> TrialTrace {
    run_trial_inner(plan, trial_index, policies, false)
}

fn run_trial_inner(
    plan: &ExperimentPlan,
    trial_index: usize,
    policies: &mut [AgentPolicy],
    with_fp_diag: bool,
) -> TrialTrace {
    match &plan.mechanism {
        MechanismSpec::Algorithm1 {
            updater,
            scheme,
            params,
        } => {
            let schedule =
                build_epoch_schedule(plan.market.horizon, *scheme).expect("validated schedule");
            run_algorithm1_trial(
                plan,
                trial_index,
                policies,
                *updater,
                *params,
                &schedule,
                with_fp_diag,
            )
        }
        MechanismSpec::VanillaBaseline { eta } => {
            run_vanilla_trial(plan, trial_index, policies, *eta)
        }
    }
}

fn run_all_trials(plan: &ExperimentPlan, with_fp_diag: bool) -> Vec<TrialTrace> {
    let learning_threads = plan.q_persist
        && plan
            .agent_policies
            .iter()
            .any(|p| matches!(p, PolicySpec::QLearning));
    if learning_threads {
        // Q-tables thread through trials: sequential by construction.
        let mut policies = build_policies(plan);
        (0..plan.n_trials)
            .map(|i| run_trial_inner(plan, i, &mut policies, with_fp_diag))
            .collect()
    } else {
        (0..plan.n_trials)
            .into_par_iter()
            .map(|i| {
                let mut policies = build_policies(plan);
                run_trial_inner(plan, i, &mut policies, with_fp_diag)
            })
            .collect()
    }
}

fn check_algorithm1_invariants(plan: &ExperimentPlan, traces: &[TrialTrace]) {
    if !matches!(plan.mechanism, MechanismSpec::Algorithm1 { .. }) {
        return;
    }
    for trace in traces {
        // Safety: cumulative cost never exceeds the budget, so the final
        // violation is exactly zero.
        for (j, (&cum, &r)) in trace
            .final_cumulative_cost
            .iter()
            .zip(&plan.market.rho)
            .enumerate()
        {
            assert!(
                cum <= plan.market.horizon as f64 * r,
                "trial {}: cumulative cost dim {j} exceeds budget",
                trace.trial
            );
        }
        // The dual vector is constant within each epoch.
        let mut by_epoch: BTreeMap<usize, &[f64]> = BTreeMap::new();
        for r in &trace.rounds {
            match by_epoch.get(&r.epoch) {
                None => {
                    by_epoch.insert(r.epoch, &r.lambda);
                }
                Some(first) => assert_eq!(
                    *first, &r.lambda[..],
                    "trial {}: lambda changed within epoch {}",
                    trace.trial, r.epoch
                ),
            }
        }
    }
}

/// Runs all trials and aggregates. Trials with persistent Q-learning agents
/// run sequentially (learning state threads through); everything else runs
/// in parallel with a deterministic ordered fold.
pub fn run_experiment(
    plan: &ExperimentPlan,
) -> Result<(ExperimentSummary, Vec<TrialTrace>), HarnessError> {
    plan.validate()?;
    let traces = run_all_trials(plan, false);
    check_algorithm1_invariants(plan, &traces);
    let stats = summarize(&traces, &plan.market.rho, plan.benchmark)?;
    let summary = ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        label: plan.label.clone(),
        mechanism: plan.mechanism.name().to_string(),
        master_seed: plan.master_seed,
        n_trials: plan.n_trials,
        plan: plan.clone(),
        stats,
    };
    Ok((summary, traces))
}

/// Per-epoch aggregate of the fixed-point diagnostics across trials.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FpEpochAggregate {
    pub epoch: usize,
    pub mean_rel_diff: f64,
    pub max_rel_diff: f64,
    pub mean_residual_exact: f64,
    pub mean_residual_approx: f64,
    pub mean_rel_diff_ftrl: f64,
}

/// Runs the plan with per-epoch fixed-point diagnostics (exact mode,
/// approximation mode, and the FTRL reference computed on the shared
/// history). Requires the O-FTRL-FP updater.
pub fn run_fp_diagnostics(
    plan: &ExperimentPlan,
) -> Result<(Vec<TrialTrace>, Vec<FpEpochAggregate>), HarnessError> {
    plan.validate()?;
    match &plan.mechanism {
        MechanismSpec::Algorithm1 {
            updater: UpdaterKind::OftrlFp,
            ..
        } => {}
        _ => {
            return Err(HarnessError::Config(ConfigError::Invalid(
                "fixed-point diagnostics require updater = oftrl_fp".into(),
            )))
        }
    }
    let traces = run_all_trials(plan, true);
    check_algorithm1_invariants(plan, &traces);

    let mut by_epoch: BTreeMap<usize, Vec<&FpDiag>> = BTreeMap::new();
    for trace in &traces {
        for diag in &trace.fp_diags {
            by_epoch.entry(diag.epoch).or_default().push(diag);
        }
    }
    let aggregates = by_epoch
        .into_iter()
        .map(|(epoch, rows)| {
            let n = rows.len() as f64;
            FpEpochAggregate {
                epoch,
                mean_rel_diff: rows.iter().map(|r| r.rel_diff).sum::<f64>() / n,
                max_rel_diff: rows.iter().map(|r| r.rel_diff).fold(0.0, f64::max),
                mean_residual_exact: rows.iter().map(|r| r.residual_exact).sum::<f64>() / n,
                mean_residual_approx: rows.iter().map(|r| r.residual_approx).sum::<f64>() / n,
                mean_rel_diff_ftrl: rows.iter().map(|r| r.rel_diff_ftrl).sum::<f64>() / n,
            }
        })
        .collect();
    Ok((traces, aggregates))
}

// ---------------------------------------------------------------------------
// Output files. Every CSV starts with a `# schema_version=N` comment line;
// JSON documents carry a schema_version field.
// ---------------------------------------------------------------------------

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

pub fn write_summary_json(path: &Path, summary: &ExperimentSummary) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(path, &json)
}

/// Per-round trace CSV with the documented column layout.
pub fn write_trace_csv(path: &Path, traces: &[TrialTrace], k: usize, d: usize) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
    let mut header = vec!["trial".to_string(), "t".to_string(), "epoch".to_string()];
    header.extend((0..d).map(|j| format!("lambda_{j}")));
    header.extend([
        "exploration".to_string(),
        "explored_agent".to_string(),
        "offered_price".to_string(),
    ]);
    header.extend((1..=k).map(|i| format!("report_{i}")));
    header.extend((1..=k).map(|i| format!("true_value_{i}")));
    for i in 1..=k {
        header.extend((0..d).map(move |j| format!("cost_{i}_{j}")));
    }
    header.extend([
        "winner".to_string(),
        "payment".to_string(),
        "safety_rejected".to_string(),
    ]);
    header.extend((0..d).map(|j| format!("cumulative_cost_{j}")));
    out.push_str(&header.join(","));
    out.push('\n');

    for trace in traces {
        for r in &trace.rounds {
            let mut row: Vec<String> = vec![
                trace.trial.to_string(),
                r.t.to_string(),
                r.epoch.to_string(),
            ];
            row.extend(r.lambda.iter().map(|x| x.to_string()));
            row.push(r.exploration.to_string());
            row.push(fmt_opt(&r.explored_agent));
            row.push(fmt_opt(&r.offered_price));
            row.extend(r.reports.iter().map(|x| x.to_string()));
            row.extend(r.true_values.iter().map(|x| x.to_string()));
            for c in &r.costs {
                row.extend(c.iter().map(|x| x.to_string()));
            }
            row.push(r.winner.to_string());
            row.push(r.payment.to_string());
            row.push(r.safety_rejected.to_string());
            row.extend(r.cumulative_cost.iter().map(|x| x.to_string()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// Per-trial metrics CSV (one row per trial index: the learning curves).
pub fn write_trials_csv(path: &Path, stats: &SummaryStats, d: usize) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
    let mut header = vec![
        "trial".to_string(),
        "welfare".to_string(),
        "mean_abs_misreport".to_string(),
        "violation".to_string(),
    ];
    header.extend((0..d).map(|j| format!("utilization_{j}")));
    header.extend([
        "exploration_count".to_string(),
        "rejected_count".to_string(),
        "regret".to_string(),
        "regret_is_upper_bound".to_string(),
    ]);
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, m) in stats.per_trial.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            m.welfare.to_string(),
            m.mean_abs_misreport.to_string(),
            m.violation.to_string(),
        ];
        row.extend(m.budget_utilization.iter().map(|x| x.to_string()));
        row.push(m.exploration_count.to_string());
        row.push(m.rejected_count.to_string());
        row.push(fmt_opt(&m.regret.map(|r| r.value)));
        row.push(fmt_opt(&m.regret.map(|r| r.is_upper_bound)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Per-epoch dual diagnostics CSV.
pub fn write_epochs_csv(path: &Path, traces: &[TrialTrace], d: usize) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
    let mut header = vec!["trial".to_string(), "epoch".to_string()];
    header.extend((0..d).map(|j| format!("lambda_{j}")));
    header.extend([
        "residual".to_string(),
        "warning".to_string(),
        "grad_norm".to_string(),
    ]);
    out.push_str(&header.join(","));
    out.push('\n');
    for trace in traces {
        for e in &trace.epoch_diags {
            let mut row = vec![trace.trial.to_string(), e.epoch.to_string()];
            row.extend(e.lambda.iter().map(|x| x.to_string()));
            row.push(e.residual.to_string());
            row.push(e.warning.to_string());
            row.push(e.grad_norm.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// Fixed-point diagnostics CSV.
pub fn write_fpdiag_csv(path: &Path, traces: &[TrialTrace], d: usize) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
    let mut header = vec!["trial".to_string(), "epoch".to_string()];
    header.extend((0..d).map(|j| format!("lambda_exact_{j}")));
    header.push("residual_exact".to_string());
    header.extend((0..d).map(|j| format!("lambda_approx_{j}")));
    header.push("residual_approx".to_string());
    header.extend([
        "rel_diff".to_string(),
        "rel_diff_is_absolute".to_string(),
    ]);
    header.extend((0..d).map(|j| format!("lambda_ftrl_{j}")));
    header.push("rel_diff_ftrl".to_string());
    out.push_str(&header.join(","));
    out.push('\n');
    for trace in traces {
        for f in &trace.fp_diags {
            let mut row = vec![trace.trial.to_string(), f.epoch.to_string()];
            row.extend(f.lambda_exact.iter().map(|x| x.to_string()));
            row.push(f.residual_exact.to_string());
            row.extend(f.lambda_approx.iter().map(|x| x.to_string()));
            row.push(f.residual_approx.to_string());
            row.push(f.rel_diff.to_string());
            row.push(f.rel_diff_is_absolute.to_string());
            row.extend(f.lambda_ftrl.iter().map(|x| x.to_string()));
            row.push(f.rel_diff_ftrl.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// Tidy long-format CSV (metric, trial, value) for external plotting.
pub fn write_plotdata_csv(path: &Path, stats: &SummaryStats, d: usize) -> Result<(), HarnessError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version={SCHEMA_VERSION}\n"));
    out.push_str("metric,trial,value\n");
    for (i, m) in stats.per_trial.iter().enumerate() {
        out.push_str(&format!("welfare,{i},{}\n", m.welfare));
        out.push_str(&format!("mean_abs_misreport,{i},{}\n", m.mean_abs_misreport));
        out.push_str(&format!("violation,{i},{}\n", m.violation));
        for j in 0..d {
            out.push_str(&format!(
                "utilization_{j},{i},{}\n",
                m.budget_utilization[j]
            ));
        }
        if let Some(r) = m.regret {
            out.push_str(&format!("regret,{i},{}\n", r.value));
        }
    }
    write_file(path, &out)
}

/// Runs a plan and writes `summary.json`, `trials.csv`, `epochs.csv`, and
/// (when the plan asks for it) `trace.csv` and `plotdata.csv` under `out`.
pub fn run_to_dir(
    plan: &ExperimentPlan,
    out: &Path,
    emit_plot_data: bool,
) -> Result<ExperimentSummary, HarnessError> {
    let (summary, traces) = run_experiment(plan)?;
    let (k, d) = (plan.market.n_agents, plan.market.cost_dims);
    write_summary_json(&out.join("summary.json"), &summary)?;
    write_trials_csv(&out.join("trials.csv"), &summary.stats, d)?;
    if matches!(plan.mechanism, MechanismSpec::Algorithm1 { .. }) {
        write_epochs_csv(&out.join("epochs.csv"), &traces, d)?;
    }
    if plan.emit_trace {
        write_trace_csv(&out.join("trace.csv"), &traces, k, d)?;
    }
    if emit_plot_data {
        write_plotdata_csv(&out.join("plotdata.csv"), &summary.stats, d)?;
    }
    Ok(summary)
}

/// Comparison output: per-arm aggregates keyed by label.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareSummary {
    pub schema_version: u32,
    pub master_seeds: BTreeMap<String, u64>,
    /// Value/cost draws are paired across arms (same sub-streams); only
    /// mechanism-internal coins differ.
    pub paired_value_cost_streams: bool,
    pub arms: BTreeMap<String, crate::benchmark::AggregateStats>,
}

/// Runs several plans (shared seeds pair their value/cost draws), writing
/// each arm under `out/<label>/` plus a merged `compare.json`.
pub fn compare_to_dir(
    plans: &[ExperimentPlan],
    out: &Path,
    emit_plot_data: bool,
) -> Result<CompareSummary, HarnessError> {
    let mut labels = std::collections::BTreeSet::new();
    for plan in plans {
        if !labels.insert(plan.label.clone()) {
            return Err(HarnessError::Config(ConfigError::Invalid(format!(
                "duplicate arm label {:?}; set distinct `label` keys",
                plan.label
            ))));
        }
    }
    let mut arms = BTreeMap::new();
    let mut seeds = BTreeMap::new();
    for plan in plans {
        let summary = run_to_dir(plan, &out.join(&plan.label), emit_plot_data)?;
        seeds.insert(plan.label.clone(), plan.master_seed);
        arms.insert(plan.label.clone(), summary.stats.aggregate.clone());
    }
    let compare = CompareSummary {
        schema_version: SCHEMA_VERSION,
        master_seeds: seeds,
        paired_value_cost_streams: true,
        arms,
    };
    let json = serde_json::to_string_pretty(&compare).expect("compare serializes");
    write_file(&out.join("compare.json"), &json)?;
    Ok(compare)
}

/// Runs fixed-point diagnostics and writes `fpdiag.csv` plus
/// `fpdiag_summary.json` under `out`.
pub fn fpdiag_to_dir(
    plan: &ExperimentPlan,
    out: &Path,
) -> Result<Vec<FpEpochAggregate>, HarnessError> {
    let (traces, aggregates) = run_fp_diagnostics(plan)?;
    write_fpdiag_csv(&out.join("fpdiag.csv"), &traces, plan.market.cost_dims)?;
    #[derive(Serialize)]
    struct FpSummary<'a> {
        schema_version: u32,
        label: &'a str,
        epochs: &'a [FpEpochAggregate],
    }
    let json = serde_json::to_string_pretty(&FpSummary {
        schema_version: SCHEMA_VERSION,
        label: &plan.label,
        epochs: &aggregates,
    })
    .expect("fp summary serializes");
    write_file(&out.join("fpdiag_summary.json"), &json)?;
    Ok(aggregates)
}
