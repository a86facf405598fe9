//! Fixed-point diagnostics on a market whose dual prices are active (mean
//! cost above the threshold), so the three dual candidates separate: the
//! approximation tracks the exact fixed point closely while plain FTRL lags
//! the optimism term.

use allocsim::benchmark::BenchmarkMode;
use allocsim::config::{ExperimentPlan, MechanismSpec, PolicySpec, UpdaterKind};
use allocsim::dist::Dist;
use allocsim::dual::{EtaSchedule, FpMode, Regularizer, UpdaterParams};
use allocsim::harness::run_fp_diagnostics;
use allocsim::market::{EpochScheme, MarketConfig};

fn dual_active_plan() -> ExperimentPlan {
    let market = MarketConfig {
        horizon: 1000,
        n_agents: 3,
        cost_dims: 1,
        rho: vec![0.4],
        gamma: 0.9,
        value_dists: vec![Dist::uniform(0.0, 1.0); 3],
        cost_dists: vec![vec![Dist::uniform(0.5, 0.9)]; 3],
    };
    ExperimentPlan {
        market,
        mechanism: MechanismSpec::Algorithm1 {
            updater: UpdaterKind::OftrlFp,
            scheme: EpochScheme::Doubling,
            params: UpdaterParams {
                regularizer: Regularizer::HalfSquaredL2,
                eta: EtaSchedule::TheoremOftrlFp { scale: 1.0 },
                fp_mode: FpMode::Exact,
                fp_grid: 201,
                fp_tolerance: 1e-6,
                include_exploration_in_archive: true,
            },
        },
        agent_policies: vec![PolicySpec::Truthful; 3],
        n_trials: 3,
        master_seed: 11,
        benchmark: BenchmarkMode::None,
        q_alpha: 0.1,
        q_persist: true,
        label: "fpdiag-directional".into(),
        emit_trace: false,
    }
}

#[test]
fn approximation_tracks_exact_while_ftrl_lags() {
    let plan = dual_active_plan();
    let (traces, _) = run_fp_diagnostics(&plan).unwrap();

    let mut late_epochs = 0usize;
    let mut ftrl_worse = 0usize;
    for trace in &traces {
        for d in trace.fp_diags.iter().filter(|d| d.epoch >= 4) {
            // With active duals the two solves agree to within a few
            // percent; the lambda scale here (~0.2) makes one grid cell of
            // disagreement worth ~5%.
            assert!(
                d.rel_diff <= 0.10,
                "trial {} epoch {}: exact-vs-approx {}",
                trace.trial,
                d.epoch,
                d.rel_diff
            );
            late_epochs += 1;
            if d.rel_diff_ftrl > d.rel_diff {
                ftrl_worse += 1;
            }
        }
    }
    assert!(late_epochs > 0);
    let frac = ftrl_worse as f64 / late_epochs as f64;
    assert!(
        frac >= 0.8,
        "FTRL-vs-exact exceeded exact-vs-approx in only {:.0}% of late epochs",
        100.0 * frac
    );
}

#[test]
fn achieved_residual_non_increasing_trend_in_late_epochs() {
    let plan = dual_active_plan();
    let (traces, _) = run_fp_diagnostics(&plan).unwrap();
    for trace in &traces {
        let late: Vec<f64> = trace
            .epoch_diags
            .iter()
            .filter(|e| e.epoch >= 4)
            .map(|e| e.residual)
            .collect();
        for w in late.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "trial {}: residual rose from {} to {}",
                trace.trial,
                w[0],
                w[1]
            );
        }
    }
}
