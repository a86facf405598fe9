//! Agent reporting policies: truthful, constant-shift misreporting, and the
//! tabular Q-learning agent that learns across trials.
//!
//! The Q-state is `(t_bin, lambda_bins, v_bin)` with 10 bins per component;
//! dual coordinates are normalized by their box width (`x = lambda_j * rho_j`)
//! before binning. Actions are the 10 report-bin midpoints 0.05, 0.15, ...,
//! 0.95.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::market::DualVector;

pub const BINS: usize = 10;

/// Bin index of `x` in [0,1]: `min(floor(10 x), 9)`. Monotone and surjective
/// onto 0..=9.
pub fn discretize(x: f64) -> usize {
    ((x * BINS as f64) as usize).min(BINS - 1)
}

/// Report value represented by action bin `a`.
pub fn action_midpoint(a: usize) -> f64 {
    (a as f64 + 0.5) / BINS as f64
}

/// Tabular Q-function over 10^(2+d) states x 10 actions, zero-initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    cost_dims: usize,
    q: Vec<f64>,
}

impl QTable {
    pub fn new(cost_dims: usize) -> Self {
        let states = BINS.pow(2 + cost_dims as u32);
        QTable {
            cost_dims,
            q: vec![0.0; states * BINS],
        }
    }

    pub fn num_states(&self) -> usize {
        self.q.len() / BINS
    }

    /// Flat state index for (round, dual, value). `t` is 1-based.
    pub fn state_index(&self, t: usize, horizon: usize, lambda: &DualVector, rho: &[f64], v: f64) -> usize {
        debug_assert_eq!(lambda.dim(), self.cost_dims);
        let t_bin = discretize((t - 1) as f64 / horizon as f64);
        let mut idx = t_bin;
        for (l, r) in lambda.as_slice().iter().zip(rho) {
            idx = idx * BINS + discretize(l * r);
        }
        idx * BINS + discretize(v)
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.q[state * BINS + action]
    }

    /// Greedy action: lowest index among maximizers.
    pub fn greedy_action(&self, state: usize) -> usize {
        let row = &self.q[state * BINS..(state + 1) * BINS];
        let mut best = 0usize;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, state: usize) -> f64 {
        let row = &self.q[state * BINS..(state + 1) * BINS];
        row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLearningParams {
    /// Learning rate alpha.
    pub alpha: f64,
    /// Discount gamma (the agents' impatience factor).
    pub gamma: f64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        QLearningParams {
            alpha: 0.1,
            gamma: 0.9,
        }
    }
}

/// Exploration rate for the n-th trial (n is 0-based): 0.995^n.
pub fn epsilon_for_trial(trial_index: u64) -> f64 {
    0.995f64.powi(trial_index.min(i32::MAX as u64) as i32)
}

/// One Q-learning update: `Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a))`.
/// `next_state = None` designates the absorbing terminal state pinned at 0,
/// so the target reduces to `r`.
pub fn q_update(
    table: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next_state: Option<usize>,
    params: &QLearningParams,
) {
    let future = next_state.map_or(0.0, |s| table.max_value(s));
    let target = reward + params.gamma * future;
    let cell = &mut table.q[state * BINS + action];
    *cell += params.alpha * (target - *cell);
}

#[derive(Clone, Copy, Debug)]
struct PendingStep {
    state: usize,
    action: usize,
    reward: f64,
}

/// Q-learning agent state threaded across trials.
#[derive(Clone, Debug)]
pub struct QLearningAgent {
    pub table: QTable,
    pub params: QLearningParams,
    pending: Option<PendingStep>,
    value_history: Vec<f64>,
}

impl QLearningAgent {
    pub fn new(cost_dims: usize, params: QLearningParams) -> Self {
        QLearningAgent {
            table: QTable::new(cost_dims),
            params,
            pending: None,
            value_history: Vec::new(),
        }
    }
}

/// Agent reporting policy. Reports are always clamped to [0,1].
#[derive(Clone, Debug)]
pub enum AgentPolicy {
    Truthful,
    ConstantShift { delta: f64 },
    QLearning(QLearningAgent),
}

impl AgentPolicy {
    pub fn q_learning(cost_dims: usize, params: QLearningParams) -> Self {
        AgentPolicy::QLearning(QLearningAgent::new(cost_dims, params))
    }

    /// Produces the round-t report for private value `v` under dual `lambda`.
    ///
    /// For the Q-learning policy this also applies the pending update from
    /// the previous round (its successor state only becomes known here) and
    /// records the new (state, action) pair awaiting this round's reward.
    #[allow(clippy::too_many_arguments)]
    pub fn report<R: Rng>(
        &mut self,
        v: f64,
        lambda: &DualVector,
        rho: &[f64],
        t: usize,
        horizon: usize,
        trial_index: u64,
        rng: &mut R,
    ) -> f64 {
        match self {
            AgentPolicy::Truthful => v,
            AgentPolicy::ConstantShift { delta } => (v + *delta).clamp(0.0, 1.0),
            AgentPolicy::QLearning(agent) => {
                let state = agent.table.state_index(t, horizon, lambda, rho, v);
                if let Some(p) = agent.pending.take() {
                    q_update(
                        &mut agent.table,
                        p.state,
                        p.action,
                        p.reward,
                        Some(state),
                        &agent.params,
                    );
                }
                let eps = epsilon_for_trial(trial_index);
                let action = if rng.random::<f64>() < eps {
                    rng.random_range(0..BINS)
                } else {
                    agent.table.greedy_action(state)
                };
                agent.pending = Some(PendingStep {
                    state,
                    action,
                    reward: 0.0,
                });
                agent.value_history.push(v);
                action_midpoint(action)
            }
        }
    }

    /// Records the realized reward `(v - p) 1[i_t = i]` for the report made
    /// this round. No-op for non-learning policies.
    pub fn observe_reward(&mut self, reward: f64) {
        if let AgentPolicy::QLearning(agent) = self {
            if let Some(p) = agent.pending.as_mut() {
                p.reward = reward;
            }
        }
    }

    /// Trial boundary: flush the terminal update against the absorbing state,
    /// clear the per-trial value history, keep the Q-table.
    pub fn end_of_trial(&mut self) {
        if let AgentPolicy::QLearning(agent) = self {
            if let Some(p) = agent.pending.take() {
                q_update(&mut agent.table, p.state, p.action, p.reward, None, &agent.params);
            }
            agent.value_history.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, SeedDeriver};

    #[test]
    fn discretize_edges() {
        assert_eq!(discretize(0.05), 0);
        assert_eq!(discretize(1.0), 9);
        assert_eq!(discretize(0.999999), 9);
        assert_eq!(discretize(0.0), 0);
    }

    #[test]
    fn discretize_monotone_surjective() {
        let mut seen = [false; BINS];
        let mut prev = 0;
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let b = discretize(x);
            assert!(b >= prev);
            prev = b;
            seen[b] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn truthful_and_shift_reports() {
        let lambda = DualVector::zeros(1);
        let rho = [0.5];
        let mut rng = SeedDeriver::new(0).stream(&[purpose::MISC, 0]);
        let mut truthful = AgentPolicy::Truthful;
        assert_eq!(truthful.report(0.37, &lambda, &rho, 1, 10, 0, &mut rng), 0.37);
        let mut shift = AgentPolicy::ConstantShift { delta: 0.2 };
        assert_eq!(shift.report(0.95, &lambda, &rho, 1, 10, 0, &mut rng), 1.0);
        let mut down = AgentPolicy::ConstantShift { delta: -0.5 };
        assert_eq!(down.report(0.2, &lambda, &rho, 1, 10, 0, &mut rng), 0.0);
    }

    #[test]
    fn q_update_examples() {
        let params = QLearningParams { alpha: 0.1, gamma: 0.9 };
        let mut table = QTable::new(1);
        q_update(&mut table, 0, 0, 1.0, Some(1), &params);
        assert!((table.get(0, 0) - 0.1).abs() < 1e-15);

        let mut table = QTable::new(1);
        table.q[0] = 0.5;
        q_update(&mut table, 0, 0, 0.0, Some(1), &params);
        assert!((table.get(0, 0) - 0.45).abs() < 1e-15);

        // alpha = 0 leaves the table untouched.
        let frozen = QLearningParams { alpha: 0.0, gamma: 0.9 };
        let mut table = QTable::new(1);
        table.q[0] = 0.5;
        q_update(&mut table, 0, 0, 3.0, Some(1), &frozen);
        assert_eq!(table.get(0, 0), 0.5);
    }

    #[test]
    fn terminal_update_ignores_future() {
        let params = QLearningParams { alpha: 1.0, gamma: 0.9 };
        let mut table = QTable::new(1);
        table.q[BINS] = 100.0; // a tempting next state that must not be used
        q_update(&mut table, 0, 0, 0.25, None, &params);
        assert_eq!(table.get(0, 0), 0.25);
    }

    #[test]
    fn epsilon_one_reports_uniform_over_midpoints() {
        // Trial 0 has epsilon = 1: all actions uniform. Chi-square over 10
        // bins with 1e4 draws; threshold 27.88 is the 0.001 tail for 9 dof.
        let mut counts = [0usize; BINS];
        let deriver = SeedDeriver::new(17);
        let lambda = DualVector::zeros(1);
        let rho = [0.5];
        let mut policy = AgentPolicy::q_learning(1, QLearningParams::default());
        for round in 0..10_000u64 {
            let mut rng = deriver.stream(&[purpose::AGENT, 0, round, 1]);
            let u = policy.report(0.5, &lambda, &rho, 1, 10, 0, &mut rng);
            let bin = discretize(u);
            assert!((u - action_midpoint(bin)).abs() < 1e-12);
            counts[bin] += 1;
        }
        let expected = 10_000.0 / BINS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.88, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn greedy_with_frozen_table_is_deterministic() {
        let mut policy = AgentPolicy::q_learning(1, QLearningParams { alpha: 0.0, gamma: 0.9 });
        if let AgentPolicy::QLearning(agent) = &mut policy {
            // Make action 7 the argmax of every state.
            for s in 0..agent.table.num_states() {
                agent.table.q[s * BINS + 7] = 1.0;
            }
        }
        let lambda = DualVector::zeros(1);
        let rho = [0.5];
        let deriver = SeedDeriver::new(3);
        // Large trial index pushes epsilon to ~0; all reports must be greedy.
        for round in 0..200u64 {
            let mut rng = deriver.stream(&[purpose::AGENT, 0, round, 1]);
            let u = policy.report(0.3, &lambda, &rho, 5, 10, 5_000, &mut rng);
            assert_eq!(u, action_midpoint(7));
        }
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(epsilon_for_trial(0), 1.0);
        assert!((epsilon_for_trial(1) - 0.995).abs() < 1e-15);
        assert!((epsilon_for_trial(2) - 0.995 * 0.995).abs() < 1e-15);
    }

    mod prop_tests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Every policy reports inside [0,1] for any input.
            #[test]
            fn reports_always_in_unit_interval(
                v in 0.0f64..=1.0,
                delta in -2.0f64..2.0,
                lambda_raw in 0.0f64..5.0,
                t in 1usize..1000,
                trial in 0u64..2000,
                seed: u64,
            ) {
                let rho = [0.5];
                let lambda = DualVector::clipped(&[lambda_raw], &rho);
                let horizon = 1000;
                let mut rng = SeedDeriver::new(seed).stream(&[purpose::MISC, 0]);
                let mut policies = [
                    AgentPolicy::Truthful,
                    AgentPolicy::ConstantShift { delta },
                    AgentPolicy::q_learning(1, QLearningParams::default()),
                ];
                for p in policies.iter_mut() {
                    let u = p.report(v, &lambda, &rho, t, horizon, trial, &mut rng);
                    prop_assert!((0.0..=1.0).contains(&u), "report {u}");
                }
            }
        }
    }

    #[test]
    fn qtable_serialization_roundtrip_preserves_behavior() {
        let mut policy = AgentPolicy::q_learning(1, QLearningParams::default());
        let lambda = DualVector::zeros(1);
        let rho = [0.5];
        let deriver = SeedDeriver::new(10);
        // Burn in some learning.
        for round in 0..500u64 {
            let mut rng = deriver.stream(&[purpose::AGENT, 0, round, 1]);
            policy.report(0.3, &lambda, &rho, 1, 10, 0, &mut rng);
            policy.observe_reward(0.2);
        }
        policy.end_of_trial();
        let table = match &policy {
            AgentPolicy::QLearning(a) => a.table.clone(),
            _ => unreachable!(),
        };
        let json = serde_json::to_string(&table).unwrap();
        let restored: QTable = serde_json::from_str(&json).unwrap();
        assert_eq!(restored, table);

        // Same seeds, same subsequent behavior.
        let mut a = AgentPolicy::QLearning(QLearningAgent {
            table,
            params: QLearningParams::default(),
            pending: None,
            value_history: Vec::new(),
        });
        let mut b = AgentPolicy::QLearning(QLearningAgent {
            table: restored,
            params: QLearningParams::default(),
            pending: None,
            value_history: Vec::new(),
        });
        for round in 0..200u64 {
            let mut ra = deriver.stream(&[purpose::AGENT, 1, round, 1]);
            let mut rb = deriver.stream(&[purpose::AGENT, 1, round, 1]);
            let ua = a.report(0.3, &lambda, &rho, 2, 10, 1, &mut ra);
            let ub = b.report(0.3, &lambda, &rho, 2, 10, 1, &mut rb);
            assert_eq!(ua, ub);
        }
    }
}
