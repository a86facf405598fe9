//! One round of the incentive-aware mechanism: exploration lottery,
//! dual-adjusted allocation and payment, safety rejection, and the state
//! carried across epochs.
//!
//! Index 0 is the forfeit option (value 0, cost 0) and agents are 1..=K.
//! Slices like `reports` and `costs` are indexed by agent-1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{DualUpdateInfo, EpochDualUpdater, LossHistory};
use crate::market::{DualVector, EpochSchedule};

/// Winner of the dual-adjusted argmax over {0} u [K].
///
/// Tie rule, used mechanism-wide and by the dual-updater predictions:
/// smallest index among maximizers. The forfeit option enters at adjusted
/// value 0 and wins any tie it is part of.
pub fn argmax_dual_adjusted(reports: &[f64], costs: &[Vec<f64>], lambda: &DualVector) -> usize {
    let mut best = 0usize;
    let mut best_val = 0.0f64; // forfeit option
    for (i, (&u, c)) in reports.iter().zip(costs).enumerate() {
        let adj = u - lambda.dot(c);
        if adj > best_val {
            best = i + 1;
            best_val = adj;
        }
    }
    best
}

/// Standard-round allocation: winner maximizes the dual-adjusted report
/// `u_i - lambda^T c_i`; the winner pays their dual-priced cost plus the
/// second-highest adjusted report (the forfeit option participates at 0).
/// A forfeited round pays nothing.
pub fn standard_allocate(
    reports: &[f64],
    costs: &[Vec<f64>],
    lambda: &DualVector,
) -> (usize, f64) {
    let winner = argmax_dual_adjusted(reports, costs, lambda);
    if winner == 0 {
        return (0, 0.0);
    }
    let mut second = 0.0f64; // adjusted report of the forfeit option
    for (i, (&u, c)) in reports.iter().zip(costs).enumerate() {
        if i + 1 != winner {
            second = second.max(u - lambda.dot(c));
        }
    }
    let payment = lambda.dot(&costs[winner - 1]) + second;
    (winner, payment)
}

/// Exploration round: the selected agent takes the posted price iff their
/// report clears it (weak inequality).
pub fn exploration_allocate(report: f64, price: f64, agent: usize) -> (usize, f64) {
    if report >= price {
        (agent, price)
    } else {
        (0, 0.0)
    }
}

/// Accepts a candidate allocation iff it keeps every cumulative cost within
/// the budget `T * rho`. Rejection leaves cumulative cost unchanged.
pub fn safety_check(cumulative: &[f64], candidate: &[f64], horizon: usize, rho: &[f64]) -> bool {
    cumulative
        .iter()
        .zip(candidate)
        .zip(rho)
        .all(|((&cum, &cand), &r)| cum + cand <= horizon as f64 * r)
}

/// Outcome of a single round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    /// 0 = forfeit, otherwise the winning agent in 1..=K.
    pub winner: usize,
    /// Payment charged to the winner; 0 whenever winner = 0.
    pub payment: f64,
    pub was_exploration: bool,
    pub explored_agent: Option<usize>,
    pub offered_price: Option<f64>,
    pub safety_rejected: bool,
}

/// Public history entry: everything all participants observe after a round.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub reports: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub winner: usize,
    pub payment: f64,
}

/// Append-only public history `H_{t,0}`.
#[derive(Clone, Debug, Default)]
pub struct PublicHistory {
    entries: Vec<HistoryEntry>,
}

impl PublicHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mechanism state for one trial: the epoch position, the epoch's dual
/// vector, cumulative consumed cost, and the running epoch gradient.
#[derive(Clone, Debug)]
pub struct MechanismState {
    horizon: usize,
    n_agents: usize,
    rho: Vec<f64>,
    schedule: EpochSchedule,
    epoch_index: usize,
    lambda: DualVector,
    cumulative_cost: Vec<f64>,
    round: usize,
    epoch_grad_acc: Vec<f64>,
    epoch_reports: Vec<(Vec<f64>, Vec<Vec<f64>>, bool)>,
}

impl MechanismState {
    /// Sets up epoch 1, asking the updater for the initial dual vector
    /// (the regularizer minimum, 0, for every updater on empty history).
    pub fn start(
        horizon: usize,
        n_agents: usize,
        rho: Vec<f64>,
        schedule: EpochSchedule,
        updater: &EpochDualUpdater,
        history: &LossHistory,
    ) -> (Self, DualUpdateInfo) {
        let d = rho.len();
        let info = updater.compute(1, history, &rho, n_agents, &schedule);
        let state = MechanismState {
            horizon,
            n_agents,
            rho,
            schedule,
            epoch_index: 1,
            lambda: info.lambda.clone(),
            cumulative_cost: vec![0.0; d],
            round: 1,
            epoch_grad_acc: vec![0.0; d],
            epoch_reports: Vec::new(),
        };
        (state, info)
    }

    pub fn lambda(&self) -> &DualVector {
        &self.lambda
    }

    pub fn epoch_index(&self) -> usize {
        self.epoch_index
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn cumulative_cost(&self) -> &[f64] {
        &self.cumulative_cost
    }

    pub fn schedule(&self) -> &EpochSchedule {
        &self.schedule
    }

    /// Running gradient sum `sum_{tau in epoch so far} (rho - c_{tau,i_tau})`.
    pub fn epoch_gradient(&self) -> &[f64] {
        &self.epoch_grad_acc
    }

    /// True when the next round starts a new epoch.
    pub fn epoch_finished(&self) -> bool {
        let (_, end) = self.schedule.intervals()[self.epoch_index - 1];
        self.round > end
    }

    /// Plays one round: exploration lottery with probability `1/|E_l|`,
    /// otherwise the standard dual-adjusted allocation; then the safety
    /// check. Updates cumulative cost and the running epoch gradient using
    /// the realized winner (possibly 0).
    pub fn decide_round<R: Rng>(
        &mut self,
        reports: &[f64],
        costs: &[Vec<f64>],
        rng: &mut R,
    ) -> RoundOutcome {
        debug_assert_eq!(reports.len(), self.n_agents);
        debug_assert!(!self.epoch_finished(), "round past current epoch");
        let epoch_len = self.schedule.epoch_len(self.epoch_index);
        let explore = rng.random::<f64>() < 1.0 / epoch_len as f64;

        let (mut winner, mut payment, explored_agent, offered_price);
        if explore {
            let agent = rng.random_range(1..=self.n_agents);
            let price: f64 = rng.random();
            (winner, payment) = exploration_allocate(reports[agent - 1], price, agent);
            explored_agent = Some(agent);
            offered_price = Some(price);
        } else {
            (winner, payment) = standard_allocate(reports, costs, &self.lambda);
            explored_agent = None;
            offered_price = None;
            // Payment range from the dual box: |p| <= 1 + 2 ||rho^-1||_1.
            debug_assert!({
                let bound = 1.0 + 2.0 * self.rho.iter().map(|r| 1.0 / r).sum::<f64>();
                payment.abs() <= bound + 1e-9
            });
        }

        let zero_cost = vec![0.0; self.rho.len()];
        let candidate = if winner == 0 {
            &zero_cost
        } else {
            &costs[winner - 1]
        };
        let safety_rejected = !safety_check(&self.cumulative_cost, candidate, self.horizon, &self.rho);
        if safety_rejected {
            winner = 0;
            payment = 0.0;
        }

        if winner != 0 {
            for (cum, &c) in self.cumulative_cost.iter_mut().zip(&costs[winner - 1]) {
                *cum += c;
            }
        }
        for (j, g) in self.epoch_grad_acc.iter_mut().enumerate() {
            let c = if winner == 0 { 0.0 } else { costs[winner - 1][j] };
            *g += self.rho[j] - c;
        }
        self.epoch_reports
            .push((reports.to_vec(), costs.to_vec(), explore));
        self.round += 1;

        RoundOutcome {
            winner,
            payment,
            was_exploration: explore,
            explored_agent,
            offered_price,
            safety_rejected,
        }
    }

    /// Folds the completed epoch's gradient and report archive into the loss
    /// history. Call once after the last round of each epoch.
    pub fn finalize_epoch(&mut self, history: &mut LossHistory) {
        let grad = std::mem::replace(&mut self.epoch_grad_acc, vec![0.0; self.rho.len()]);
        let rounds = std::mem::take(&mut self.epoch_reports);
        history.push_epoch(grad, rounds);
    }

    /// Finalizes the completed epoch, obtains the next dual vector from the
    /// updater, and advances the epoch index.
    pub fn advance_epoch(
        &mut self,
        updater: &EpochDualUpdater,
        history: &mut LossHistory,
    ) -> DualUpdateInfo {
        self.finalize_epoch(history);
        self.epoch_index += 1;
        let info = updater.compute(
            self.epoch_index,
            history,
            &self.rho,
            self.n_agents,
            &self.schedule,
        );
        self.lambda = info.lambda.clone();
        debug_assert!(self.lambda.in_region(&self.rho));
        info
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::UpdaterParams;
    use crate::market::{build_epoch_schedule, EpochScheme};
    use crate::rng::{purpose, SeedDeriver};

    fn dv(x: &[f64], rho: &[f64]) -> DualVector {
        DualVector::clipped(x, rho)
    }

    #[test]
    fn standard_allocate_worked_example() {
        // K=3, d=1, lambda=0.5: adjusted reports (0.7, 0.5, 0.25).
        let lambda = dv(&[0.5], &[0.5]);
        let reports = [0.9, 0.6, 0.3];
        let costs = vec![vec![0.4], vec![0.2], vec![0.1]];
        let (winner, payment) = standard_allocate(&reports, &costs, &lambda);
        assert_eq!(winner, 1);
        assert!((payment - 0.7).abs() < 1e-15);

        // Oracle: enumerate all adjusted reports directly.
        let adj: Vec<f64> = reports
            .iter()
            .zip(&costs)
            .map(|(&u, c)| u - lambda.dot(c))
            .collect();
        let best = adj
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert_eq!(best, adj[0]);
        let second = adj[1..].iter().cloned().fold(0.0f64, f64::max);
        assert!((payment - (lambda.dot(&costs[0]) + second)).abs() < 1e-15);
    }

    #[test]
    fn all_negative_adjusted_reports_forfeit() {
        let lambda = dv(&[2.0], &[0.5]);
        let reports = [0.1, 0.2];
        let costs = vec![vec![0.9], vec![0.8]];
        let (winner, payment) = standard_allocate(&reports, &costs, &lambda);
        assert_eq!(winner, 0);
        assert_eq!(payment, 0.0);
    }

    #[test]
    fn single_agent_pays_forfeit_price() {
        let lambda = dv(&[0.0, 0.0], &[0.5, 0.5]);
        let (winner, payment) = standard_allocate(&[0.5], &[vec![0.0, 0.0]], &lambda);
        assert_eq!(winner, 1);
        assert_eq!(payment, 0.0);
    }

    #[test]
    fn exploration_branches() {
        assert_eq!(exploration_allocate(0.6, 0.4, 2), (2, 0.4));
        assert_eq!(exploration_allocate(0.3, 0.4, 2), (0, 0.0));
        // Weak inequality: report equal to price wins.
        assert_eq!(exploration_allocate(0.4, 0.4, 2), (2, 0.4));
    }

    #[test]
    fn safety_check_boundaries() {
        assert!(!safety_check(&[0.9], &[0.2], 2, &[0.5])); // 1.1 > 1.0
        assert!(safety_check(&[0.8], &[0.2], 2, &[0.5])); // equality accepted
        assert!(safety_check(&[1.0], &[0.0], 2, &[0.5])); // forfeit always fits
    }

    #[test]
    fn epoch_length_one_forces_exploration() {
        let schedule = build_epoch_schedule(1, EpochScheme::Doubling).unwrap();
        let updater = EpochDualUpdater::constant_zero();
        let history = LossHistory::new(1);
        let (state, _) = MechanismState::start(1, 2, vec![0.5], schedule, &updater, &history);
        let deriver = SeedDeriver::new(1);
        for trial in 0..50u64 {
            let mut s = state.clone();
            let mut rng = deriver.stream(&[purpose::MECHANISM, trial, 1]);
            let out = s.decide_round(&[0.5, 0.5], &[vec![0.1], vec![0.1]], &mut rng);
            assert!(out.was_exploration);
        }
    }

    #[test]
    fn non_exploration_round_equals_standard_allocate_plus_safety() {
        let schedule = build_epoch_schedule(100, EpochScheme::Uniform { l: 1 }).unwrap();
        let updater = EpochDualUpdater::constant_zero();
        let history = LossHistory::new(1);
        let (mut state, _) =
            MechanismState::start(100, 2, vec![0.5], schedule, &updater, &history);
        let deriver = SeedDeriver::new(9);
        let reports = [0.8, 0.4];
        let costs = vec![vec![0.3], vec![0.2]];
        let mut checked = 0;
        for t in 1..=100u64 {
            let mut rng = deriver.stream(&[purpose::MECHANISM, 0, t]);
            let lambda = state.lambda().clone();
            let out = state.decide_round(&reports, &costs, &mut rng);
            if !out.was_exploration {
                let (w, p) = standard_allocate(&reports, &costs, &lambda);
                let accept = out.winner != 0;
                if accept {
                    assert_eq!(out.winner, w);
                    assert_eq!(out.payment, p);
                }
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn exploration_frequency_matches_epoch_length() {
        // 1e5 rounds in an epoch of length 100: frequency 0.01 +- 3e-3
        // (binomial three-sigma is ~9.4e-4, so the window is generous).
        let n = 100_000usize;
        let schedule = build_epoch_schedule(n, EpochScheme::Uniform { l: n / 100 }).unwrap();
        let updater = EpochDualUpdater::constant_zero();
        let mut history = LossHistory::new(1);
        let (mut state, _) =
            MechanismState::start(n, 1, vec![1.0], schedule, &updater, &history);
        let deriver = SeedDeriver::new(123);
        let mut count = 0usize;
        for t in 1..=n {
            if state.epoch_finished() {
                state.advance_epoch(&updater, &mut history);
            }
            let mut rng = deriver.stream(&[purpose::MECHANISM, 0, t as u64]);
            let out = state.decide_round(&[0.0], &[vec![0.0]], &mut rng);
            if out.was_exploration {
                count += 1;
            }
        }
        let freq = count as f64 / n as f64;
        assert!((freq - 0.01).abs() < 3e-3, "frequency {freq}");
    }

    #[test]
    fn constant_zero_updater_keeps_lambda_zero_and_logs_gradients() {
        let schedule = build_epoch_schedule(10, EpochScheme::Doubling).unwrap();
        let updater = EpochDualUpdater::constant_zero();
        let mut history = LossHistory::new(1);
        let (mut state, _) =
            MechanismState::start(10, 1, vec![0.5], schedule, &updater, &history);
        let deriver = SeedDeriver::new(4);
        let mut updates = 1; // epoch 1 computed at start
        for t in 1..=10u64 {
            if state.epoch_finished() {
                state.advance_epoch(&updater, &mut history);
                updates += 1;
                assert_eq!(state.lambda().as_slice(), &[0.0]);
            }
            let mut rng = deriver.stream(&[purpose::MECHANISM, 0, t]);
            state.decide_round(&[0.9], &[vec![0.4]], &mut rng);
        }
        state.finalize_epoch(&mut history);
        // Doubling with T=10 gives 4 epochs: 4 updater invocations, 4 logged gradients.
        assert_eq!(updates, 4);
        assert_eq!(history.epoch_gradients().len(), 4);
    }

    #[test]
    fn ftrl_updater_on_empty_history_returns_zero() {
        let schedule = build_epoch_schedule(8, EpochScheme::Doubling).unwrap();
        let updater = EpochDualUpdater::ftrl(UpdaterParams::default());
        let history = LossHistory::new(2);
        let (state, info) =
            MechanismState::start(8, 2, vec![0.5, 0.25], schedule, &updater, &history);
        assert_eq!(state.lambda().as_slice(), &[0.0, 0.0]);
        assert_eq!(info.residual, 0.0);
    }

    #[test]
    fn cumulative_cost_never_exceeds_budget() {
        let t = 200usize;
        let schedule = build_epoch_schedule(t, EpochScheme::Doubling).unwrap();
        let updater = EpochDualUpdater::constant_zero();
        let mut history = LossHistory::new(1);
        let (mut state, _) =
            MechanismState::start(t, 2, vec![0.3], schedule, &updater, &history);
        let deriver = SeedDeriver::new(77);
        for round in 1..=t {
            if state.epoch_finished() {
                state.advance_epoch(&updater, &mut history);
            }
            let mut rng = deriver.stream(&[purpose::MECHANISM, 0, round as u64]);
            // High reports and high costs stress the budget.
            state.decide_round(&[0.99, 0.95], &[vec![0.8], vec![0.7]], &mut rng);
            for (j, &cum) in state.cumulative_cost().iter().enumerate() {
                assert!(cum <= t as f64 * 0.3 + 0.0, "dim {j} over budget");
            }
        }
    }
}
