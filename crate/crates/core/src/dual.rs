//! Epoch dual updates: FTRL, optimistic FTRL with fixed points (exact
//! residual minimization and its cheaper approximation), the per-round
//! vanilla primal-dual step, and the FTRL regret-bound calculator used by the
//! self-checks.
//!
//! The regularizer is `Psi(lambda) = ||lambda||^2 / 2` throughout, so the
//! inner minimization `argmin_{lambda in Box} g^T lambda + Psi(lambda)/eta`
//! has the closed form `clamp(-eta * g)` per coordinate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::{clip_to_dual_region, DualVector, EpochSchedule};
use crate::mechanism::argmax_dual_adjusted;

/// One archived round available to the prediction term: the public reports
/// and costs, plus whether the round was an exploration round (a config
/// switch can exclude those from predictions).
#[derive(Clone, Debug)]
pub struct ArchivedRound {
    pub reports: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub exploration: bool,
}

/// Completed-epoch gradients and the per-round report/cost archive.
#[derive(Clone, Debug)]
pub struct LossHistory {
    dims: usize,
    epoch_grads: Vec<Vec<f64>>,
    archive: Vec<ArchivedRound>,
}

impl LossHistory {
    pub fn new(dims: usize) -> Self {
        LossHistory {
            dims,
            epoch_grads: Vec::new(),
            archive: Vec::new(),
        }
    }

    /// Appends a completed epoch: its gradient `sum_tau (rho - c_{tau,i_tau})`
    /// and the rounds it contained.
    pub fn push_epoch(&mut self, grad: Vec<f64>, rounds: Vec<(Vec<f64>, Vec<Vec<f64>>, bool)>) {
        debug_assert_eq!(grad.len(), self.dims);
        debug_assert!(grad.iter().all(|g| g.abs() <= rounds.len() as f64 + 1e-9));
        self.epoch_grads.push(grad);
        self.archive.extend(
            rounds
                .into_iter()
                .map(|(reports, costs, exploration)| ArchivedRound {
                    reports,
                    costs,
                    exploration,
                }),
        );
    }

    pub fn epoch_gradients(&self) -> &[Vec<f64>] {
        &self.epoch_grads
    }

    pub fn archive(&self) -> &[ArchivedRound] {
        &self.archive
    }

    /// Sum of completed-epoch gradients.
    pub fn cumulative_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.dims];
        for eg in &self.epoch_grads {
            for (a, b) in g.iter_mut().zip(eg) {
                *a += b;
            }
        }
        g
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

/// Learning-rate rule producing `eta_l` for epoch `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EtaSchedule {
    /// `||rho^-1||_2 / sqrt(2d) * (sum_{l'<=l} |E_l'|^2)^(-1/2)`, scaled.
    TheoremFtrl { scale: f64 },
    /// `||rho^-1||_2 / (sqrt(112 d) K^2) * (sum_{l'<=l} |E_l'|)^(-1/2)`, scaled.
    TheoremOftrlFp { scale: f64 },
    /// Fixed learning rate (diagnostics and tests).
    Fixed { eta: f64 },
}

impl EtaSchedule {
    pub fn eta(&self, epoch: usize, schedule: &EpochSchedule, rho: &[f64], n_agents: usize) -> f64 {
        let rho_inv_l2 = rho.iter().map(|r| (1.0 / r).powi(2)).sum::<f64>().sqrt();
        let d = rho.len() as f64;
        match *self {
            EtaSchedule::TheoremFtrl { scale } => {
                let sum_sq: f64 = (1..=epoch)
                    .map(|l| (schedule.epoch_len(l) as f64).powi(2))
                    .sum();
                scale * rho_inv_l2 / (2.0 * d).sqrt() / sum_sq.sqrt()
            }
            EtaSchedule::TheoremOftrlFp { scale } => {
                let sum: f64 = (1..=epoch).map(|l| schedule.epoch_len(l) as f64).sum();
                let k2 = (n_agents as f64).powi(2);
                scale * rho_inv_l2 / ((112.0 * d).sqrt() * k2) / sum.sqrt()
            }
            EtaSchedule::Fixed { eta } => eta,
        }
    }
}

/// Fixed-point solve mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpMode {
    /// Minimize the fixed-point residual over the dual box.
    Exact,
    /// Minimize the optimistic objective with the prediction evaluated at
    /// the decision variable itself.
    Approximation,
}

/// Regularizer choice. Only the half squared Euclidean norm ships; the
/// interface exists so a different strongly convex choice can slot in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    HalfSquaredL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdaterParams {
    pub regularizer: Regularizer,
    pub eta: EtaSchedule,
    pub fp_mode: FpMode,
    /// Grid points per dual coordinate for the fixed-point search.
    pub fp_grid: usize,
    /// Residual above which the solve is flagged (never fatal).
    pub fp_tolerance: f64,
    /// Whether exploration rounds enter the prediction archive.
    pub include_exploration_in_archive: bool,
}

impl Default for UpdaterParams {
    fn default() -> Self {
        UpdaterParams {
            regularizer: Regularizer::HalfSquaredL2,
            eta: EtaSchedule::TheoremOftrlFp { scale: 1.0 },
            fp_mode: FpMode::Exact,
            fp_grid: 201,
            fp_tolerance: 1e-6,
            include_exploration_in_archive: true,
        }
    }
}

impl UpdaterParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.fp_grid < 2 {
            return Err(format!("fp_grid must be >= 2, got {}", self.fp_grid));
        }
        if !(self.fp_tolerance > 0.0) {
            return Err(format!("fp_tolerance must be > 0, got {}", self.fp_tolerance));
        }
        Ok(())
    }
}

/// FTRL closed form: `argmin_{lambda in Box} cum_grad^T lambda + ||lambda||^2/(2 eta)`
/// is the per-coordinate clamp of `-eta * cum_grad`.
pub fn ftrl_dual(cum_grad: &[f64], eta: f64, rho: &[f64]) -> DualVector {
    assert!(eta > 0.0);
    let raw: Vec<f64> = cum_grad.iter().map(|&g| -eta * g).collect();
    clip_to_dual_region(&raw, rho)
}

/// Optimistic prediction `g~_l(lambda)`: replay the dual-adjusted argmax on
/// every archived round at the candidate `lambda` and scale the mean
/// `(rho - c)` by the upcoming epoch length. Empty archive predicts zero.
pub fn predicted_gradient(
    lambda: &DualVector,
    archive: &[ArchivedRound],
    include_exploration: bool,
    rho: &[f64],
    epoch_len: usize,
) -> Vec<f64> {
    let mut sum = vec![0.0; rho.len()];
    let mut n = 0usize;
    for round in archive {
        if !include_exploration && round.exploration {
            continue;
        }
        let winner = argmax_dual_adjusted(&round.reports, &round.costs, lambda);
        for (j, s) in sum.iter_mut().enumerate() {
            let c = if winner == 0 {
                0.0
            } else {
                round.costs[winner - 1][j]
            };
            *s += rho[j] - c;
        }
        n += 1;
    }
    if n == 0 {
        return vec![0.0; rho.len()];
    }
    let scale = epoch_len as f64 / n as f64;
    sum.iter_mut().for_each(|s| *s *= scale);
    sum
}

/// Fixed-point residual at `lambda`: distance to the inner argmin of the
/// optimistic objective with the prediction frozen at `lambda`.
#[allow(clippy::too_many_arguments)]
pub fn oftrlfp_residual(
    lambda: &DualVector,
    cum_grad: &[f64],
    archive: &[ArchivedRound],
    include_exploration: bool,
    eta: f64,
    rho: &[f64],
    epoch_len: usize,
) -> f64 {
    let pred = predicted_gradient(lambda, archive, include_exploration, rho, epoch_len);
    let total: Vec<f64> = cum_grad.iter().zip(&pred).map(|(a, b)| a + b).collect();
    let target = ftrl_dual(&total, eta, rho);
    lambda
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Result of a fixed-point solve.
#[derive(Clone, Debug)]
pub struct FpSolution {
    pub lambda: DualVector,
    pub residual: f64,
    /// Set when the achieved residual exceeds `fp_tolerance`.
    pub warning: bool,
}

struct GridSpec {
    grid: usize,
    dims: usize,
    upper: Vec<f64>,
}

impl GridSpec {
    fn point(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        let mut out = vec![0.0; self.dims];
        for j in (0..self.dims).rev() {
            let idx = rest % self.grid;
            rest /= self.grid;
            out[j] = self.upper[j] * idx as f64 / (self.grid - 1) as f64;
        }
        out
    }

    fn total(&self) -> usize {
        self.grid.pow(self.dims as u32)
    }

    fn spacing(&self) -> Vec<f64> {
        self.upper
            .iter()
            .map(|u| u / (self.grid - 1) as f64)
            .collect()
    }
}

/// Deterministic minimization over the dual box: coordinate grid scan
/// followed by 20 halving refinements of the incumbent cell. Ties resolve to
/// the lowest lexicographic grid index, independent of worker count.
fn minimize_over_box(
    rho: &[f64],
    grid: usize,
    objective: impl Fn(&[f64]) -> f64 + Sync,
) -> (Vec<f64>, f64) {
    let spec = GridSpec {
        grid,
        dims: rho.len(),
        upper: rho.iter().map(|r| 1.0 / r).collect(),
    };
    let total = spec.total();
    let pick = |a: (f64, usize), b: (f64, usize)| {
        if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let (best_val, best_idx) = if total >= 1 << 14 {
        (0..total)
            .into_par_iter()
            .map(|i| (objective(&spec.point(i)), i))
            .reduce(|| (f64::INFINITY, usize::MAX), pick)
    } else {
        (0..total)
            .map(|i| (objective(&spec.point(i)), i))
            .fold((f64::INFINITY, usize::MAX), pick)
    };

    let mut best = spec.point(best_idx);
    let mut best_val = best_val;
    let mut half: Vec<f64> = spec.spacing().iter().map(|s| s / 2.0).collect();
    let offsets = 3usize.pow(rho.len() as u32);
    for _ in 0..20 {
        let mut improved = best.clone();
        let mut improved_val = best_val;
        for o in 0..offsets {
            let mut rest = o;
            let mut cand = best.clone();
            for j in (0..rho.len()).rev() {
                let s = rest % 3;
                rest /= 3;
                let delta = (s as f64 - 1.0) * half[j];
                cand[j] = (cand[j] + delta).clamp(0.0, 1.0 / rho[j]);
            }
            let v = objective(&cand);
            if v < improved_val {
                improved_val = v;
                improved = cand;
            }
        }
        best = improved;
        best_val = improved_val;
        half.iter_mut().for_each(|h| *h /= 2.0);
    }
    (best, best_val)
}

/// Solves the epoch-l fixed-point problem.
///
/// Exact mode minimizes the residual itself; approximation mode minimizes the
/// optimistic objective with the prediction evaluated at the decision
/// variable. With an empty prediction archive both reduce to plain FTRL and
/// the closed form is an exact fixed point.
pub fn solve_oftrlfp(
    history: &LossHistory,
    params: &UpdaterParams,
    eta: f64,
    rho: &[f64],
    epoch_len: usize,
) -> FpSolution {
    let cum_grad = history.cumulative_gradient();
    let include = params.include_exploration_in_archive;
    let archive = history.archive();
    let usable = archive.iter().filter(|r| include || !r.exploration).count();
    if usable == 0 {
        return FpSolution {
            lambda: ftrl_dual(&cum_grad, eta, rho),
            residual: 0.0,
            warning: false,
        };
    }

    let residual_at = |x: &[f64]| {
        oftrlfp_residual(
            &DualVector::clipped(x, rho),
            &cum_grad,
            archive,
            include,
            eta,
            rho,
            epoch_len,
        )
    };
    let lambda = match params.fp_mode {
        FpMode::Exact => {
            let (mut best, mut best_res) = minimize_over_box(rho, params.fp_grid, residual_at);
            // Polish: the inner argmin evaluated at the incumbent is the
            // natural next candidate; when the prediction is constant on the
            // incumbent's piece this lands exactly on a fixed point.
            for _ in 0..25 {
                let pred = predicted_gradient(
                    &DualVector::clipped(&best, rho),
                    archive,
                    include,
                    rho,
                    epoch_len,
                );
                let total: Vec<f64> = cum_grad.iter().zip(&pred).map(|(a, b)| a + b).collect();
                let target = ftrl_dual(&total, eta, rho);
                let res = residual_at(target.as_slice());
                if res < best_res {
                    best = target.as_slice().to_vec();
                    best_res = res;
                } else {
                    break;
                }
            }
            DualVector::clipped(&best, rho)
        }
        FpMode::Approximation => {
            let objective = |x: &[f64]| {
                let lam = DualVector::clipped(x, rho);
                let pred = predicted_gradient(&lam, archive, include, rho, epoch_len);
                let linear: f64 = lam
                    .as_slice()
                    .iter()
                    .zip(cum_grad.iter().zip(&pred))
                    .map(|(&l, (&g, &p))| l * (g + p))
                    .sum();
                let sq: f64 = lam.as_slice().iter().map(|l| l * l).sum();
                linear + sq / (2.0 * eta)
            };
            let (best, _) = minimize_over_box(rho, params.fp_grid, objective);
            DualVector::clipped(&best, rho)
        }
    };
    let residual = residual_at(lambda.as_slice());
    FpSolution {
        warning: residual > params.fp_tolerance,
        lambda,
        residual,
    }
}

/// Per-round vanilla primal-dual step, projected onto the dual box.
pub fn vanilla_dual_step(
    lambda: &DualVector,
    winner_cost: &[f64],
    rho: &[f64],
    eta: f64,
) -> DualVector {
    assert!(eta > 0.0);
    let raw: Vec<f64> = lambda
        .as_slice()
        .iter()
        .zip(rho.iter().zip(winner_cost))
        .map(|(&l, (&r, &c))| l - eta * (r - c))
        .collect();
    clip_to_dual_region(&raw, rho)
}

/// FTRL regret bound `Psi(lambda*) / eta_L + (1/2) sum_l eta_l ||g_l||_2^2`.
/// `grad_sq_norms` carries the squared gradient norms per epoch.
pub fn ftrl_regret_bound(grad_sq_norms: &[f64], etas: &[f64], psi_at_comparator: f64) -> f64 {
    assert_eq!(grad_sq_norms.len(), etas.len());
    assert!(!etas.is_empty());
    debug_assert!(etas.windows(2).all(|w| w[0] >= w[1]));
    let last_eta = *etas.last().unwrap();
    psi_at_comparator / last_eta
        + 0.5
            * grad_sq_norms
                .iter()
                .zip(etas)
                .map(|(&g, &e)| e * g)
                .sum::<f64>()
}

/// Result of a dual update, with diagnostics.
#[derive(Clone, Debug)]
pub struct DualUpdateInfo {
    pub lambda: DualVector,
    pub residual: f64,
    pub warning: bool,
}

/// Epoch dual-update sub-routine handle.
#[derive(Clone, Debug)]
pub enum EpochDualUpdater {
    /// Null updater: lambda stays at zero; gradients are still logged.
    ConstantZero,
    Ftrl(UpdaterParams),
    OftrlFp(UpdaterParams),
}

impl EpochDualUpdater {
    pub fn constant_zero() -> Self {
        EpochDualUpdater::ConstantZero
    }

    pub fn ftrl(mut params: UpdaterParams) -> Self {
        if matches!(params.eta, EtaSchedule::TheoremOftrlFp { .. }) {
            let scale = match params.eta {
                EtaSchedule::TheoremOftrlFp { scale } => scale,
                _ => unreachable!(),
            };
            params.eta = EtaSchedule::TheoremFtrl { scale };
        }
        EpochDualUpdater::Ftrl(params)
    }

    pub fn oftrl_fp(params: UpdaterParams) -> Self {
        EpochDualUpdater::OftrlFp(params)
    }

    /// Computes `lambda_l` for the given (1-based) epoch from the history of
    /// completed epochs.
    pub fn compute(
        &self,
        epoch: usize,
        history: &LossHistory,
        rho: &[f64],
        n_agents: usize,
        schedule: &EpochSchedule,
    ) -> DualUpdateInfo {
        match self {
            EpochDualUpdater::ConstantZero => DualUpdateInfo {
                lambda: DualVector::zeros(rho.len()),
                residual: 0.0,
                warning: false,
            },
            EpochDualUpdater::Ftrl(params) => {
                let eta = params.eta.eta(epoch, schedule, rho, n_agents);
                DualUpdateInfo {
                    lambda: ftrl_dual(&history.cumulative_gradient(), eta, rho),
                    residual: 0.0,
                    warning: false,
                }
            }
            EpochDualUpdater::OftrlFp(params) => {
                let eta = params.eta.eta(epoch, schedule, rho, n_agents);
                let epoch_len = schedule.epoch_len(epoch.min(schedule.num_epochs()));
                let sol = solve_oftrlfp(history, params, eta, rho, epoch_len);
                DualUpdateInfo {
                    lambda: sol.lambda,
                    residual: sol.residual,
                    warning: sol.warning,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{purpose, SeedDeriver};
    use rand::Rng;

    fn archived(reports: Vec<f64>, costs: Vec<Vec<f64>>) -> ArchivedRound {
        ArchivedRound {
            reports,
            costs,
            exploration: false,
        }
    }

    /// Independent oracle: minimize the FTRL objective by scanning a dense
    /// lambda grid (no clamp formula involved).
    fn ftrl_grid_oracle(cum_grad: f64, eta: f64, rho: f64, points: usize) -> f64 {
        let upper = 1.0 / rho;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..points {
            let lam = upper * i as f64 / (points - 1) as f64;
            let obj = cum_grad * lam + lam * lam / (2.0 * eta);
            if obj < best.0 {
                best = (obj, lam);
            }
        }
        best.1
    }

    #[test]
    fn ftrl_empty_history_is_zero() {
        let lam = ftrl_dual(&[0.0, 0.0], 0.1, &[0.5, 0.5]);
        assert_eq!(lam.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn ftrl_closed_form_matches_grid_oracle() {
        let lam = ftrl_dual(&[-2.0], 0.1, &[0.5]);
        assert!((lam.as_slice()[0] - 0.2).abs() < 1e-15);
        let oracle = ftrl_grid_oracle(-2.0, 0.1, 0.5, 10_000);
        assert!((lam.as_slice()[0] - oracle).abs() < 2.0 / 9_999.0);

        let clamped = ftrl_dual(&[-30.0], 0.1, &[0.5]);
        assert_eq!(clamped.as_slice(), &[2.0]);
        let oracle = ftrl_grid_oracle(-30.0, 0.1, 0.5, 10_000);
        assert!((clamped.as_slice()[0] - oracle).abs() < 2.0 / 9_999.0);
    }

    #[test]
    fn ftrl_closed_form_matches_grid_on_random_instances() {
        let deriver = SeedDeriver::new(31);
        for trial in 0..1000u64 {
            let mut rng = deriver.stream(&[purpose::MISC, trial]);
            let d = 1 + (rng.random_range(0..3usize));
            let rho: Vec<f64> = (0..d).map(|_| 0.1 + 0.9 * rng.random::<f64>()).collect();
            let eta = 0.01 + rng.random::<f64>();
            let grad: Vec<f64> = (0..d).map(|_| 40.0 * (rng.random::<f64>() - 0.5)).collect();
            let lam = ftrl_dual(&grad, eta, &rho);
            for j in 0..d {
                let oracle = ftrl_grid_oracle(grad[j], eta, rho[j], 2000);
                let cell = (1.0 / rho[j]) / 1999.0;
                assert!(
                    (lam.as_slice()[j] - oracle).abs() <= cell,
                    "trial {trial} dim {j}"
                );
            }
        }
    }

    #[test]
    fn predicted_gradient_hand_examples() {
        let rho = [0.5];
        let archive = vec![archived(vec![1.0, 0.0], vec![vec![1.0], vec![0.0]])];
        // lambda = 0: agent 1 wins, g~ = 4 * (0.5 - 1) = -2.
        let g = predicted_gradient(&DualVector::clipped(&[0.0], &rho), &archive, true, &rho, 4);
        assert_eq!(g, vec![-2.0]);
        // lambda = 2: adjusted (-1, 0); forfeit ties agent 2 at 0 and wins.
        let g = predicted_gradient(&DualVector::clipped(&[2.0], &rho), &archive, true, &rho, 4);
        assert_eq!(g, vec![2.0]);
    }

    #[test]
    fn predicted_gradient_forfeit_only_archive() {
        let rho = [0.4, 0.8];
        // Reports of zero lose to the forfeit option at any lambda.
        let archive = vec![
            archived(vec![0.0], vec![vec![0.7, 0.2]]),
            archived(vec![0.0], vec![vec![0.3, 0.9]]),
        ];
        let g = predicted_gradient(&DualVector::zeros(2), &archive, true, &rho, 5);
        assert_eq!(g, vec![5.0 * 0.4, 5.0 * 0.8]);
    }

    #[test]
    fn predicted_gradient_empty_archive_is_zero() {
        let g = predicted_gradient(&DualVector::zeros(1), &[], true, &[0.5], 7);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn prediction_sup_norm_bounded_by_epoch_len() {
        let deriver = SeedDeriver::new(8);
        for trial in 0..200u64 {
            let mut rng = deriver.stream(&[purpose::MISC, trial]);
            let k = rng.random_range(1..4usize);
            let d = rng.random_range(1..3usize);
            let rho: Vec<f64> = (0..d).map(|_| 0.2 + 0.8 * rng.random::<f64>()).collect();
            let rounds = rng.random_range(1..20usize);
            let archive: Vec<ArchivedRound> = (0..rounds)
                .map(|_| {
                    archived(
                        (0..k).map(|_| rng.random()).collect(),
                        (0..k)
                            .map(|_| (0..d).map(|_| rng.random()).collect())
                            .collect(),
                    )
                })
                .collect();
            let lam_raw: Vec<f64> = rho.iter().map(|r| rng.random::<f64>() / r).collect();
            let lam = DualVector::clipped(&lam_raw, &rho);
            let epoch_len = rng.random_range(1..50usize);
            let g = predicted_gradient(&lam, &archive, true, &rho, epoch_len);
            for gj in g {
                assert!(gj.abs() <= epoch_len as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn prediction_piecewise_constant_under_tiny_perturbation() {
        let rho = [0.5];
        let archive = vec![
            archived(vec![0.9, 0.3], vec![vec![0.6], vec![0.2]]),
            archived(vec![0.2, 0.8], vec![vec![0.1], vec![0.9]]),
        ];
        let lam = DualVector::clipped(&[0.7], &rho);
        let base = predicted_gradient(&lam, &archive, true, &rho, 8);
        for eps in [1e-12, -1e-12, 5e-11] {
            let lam2 = DualVector::clipped(&[0.7 + eps], &rho);
            let same_profile: Vec<usize> = archive
                .iter()
                .map(|r| argmax_dual_adjusted(&r.reports, &r.costs, &lam2))
                .collect();
            let base_profile: Vec<usize> = archive
                .iter()
                .map(|r| argmax_dual_adjusted(&r.reports, &r.costs, &lam))
                .collect();
            if same_profile == base_profile {
                let g = predicted_gradient(&lam2, &archive, true, &rho, 8);
                assert_eq!(g, base, "bitwise identical within a cell");
            }
        }
    }

    #[test]
    fn residual_zero_cases() {
        // No history, no prediction: lambda = 0 is an exact fixed point.
        let r = oftrlfp_residual(&DualVector::zeros(1), &[0.0], &[], true, 0.1, &[0.5], 4);
        assert_eq!(r, 0.0);
        // g~ forced to zero (empty archive): the FTRL output has residual 0.
        let cum = [-3.0];
        let lam = ftrl_dual(&cum, 0.2, &[0.5]);
        let r = oftrlfp_residual(&lam, &cum, &[], true, 0.2, &[0.5], 4);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn residual_matches_independent_grid_reimplementation() {
        // Inner argmin re-derived by dense grid scan plus ternary refinement,
        // no clamp formula.
        let deriver = SeedDeriver::new(77);
        let mut rng = deriver.stream(&[purpose::MISC, 0]);
        let rho = [0.5];
        let k = 3usize;
        let archive: Vec<ArchivedRound> = (0..20)
            .map(|_| {
                archived(
                    (0..k).map(|_| rng.random()).collect(),
                    (0..k).map(|_| vec![rng.random()]).collect(),
                )
            })
            .collect();
        let cum = [rng.random::<f64>() * 10.0 - 5.0];
        let eta = 0.05;
        let epoch_len = 16;
        for _ in 0..20 {
            let lam = DualVector::clipped(&[rng.random::<f64>() * 2.0], &rho);
            let pred = predicted_gradient(&lam, &archive, true, &rho, epoch_len);
            let a = cum[0] + pred[0];
            // Grid scan of the inner quadratic over 1e5 points.
            let points = 100_000usize;
            let upper = 2.0;
            let obj = |x: f64| a * x + x * x / (2.0 * eta);
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..points {
                let x = upper * i as f64 / (points - 1) as f64;
                let v = obj(x);
                if v < best.0 {
                    best = (v, x);
                }
            }
            // Ternary refinement within the bracketing cells.
            let cell = upper / (points - 1) as f64;
            let (mut lo, mut hi) = ((best.1 - cell).max(0.0), (best.1 + cell).min(upper));
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if obj(m1) <= obj(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let inner = (lo + hi) / 2.0;
            let oracle = (lam.as_slice()[0] - inner).abs();
            let r = oftrlfp_residual(&lam, &cum, &archive, true, eta, &rho, epoch_len);
            assert!((r - oracle).abs() < 1e-9, "residual {r}, oracle {oracle}");
        }
    }

    #[test]
    fn solve_empty_history_returns_zero() {
        let history = LossHistory::new(1);
        let sol = solve_oftrlfp(&history, &UpdaterParams::default(), 0.1, &[0.5], 1);
        assert_eq!(sol.lambda.as_slice(), &[0.0]);
        assert_eq!(sol.residual, 0.0);
        assert!(!sol.warning);
    }

    #[test]
    fn exact_mode_residual_never_above_approximation_mode() {
        let deriver = SeedDeriver::new(21);
        for trial in 0..20u64 {
            let mut rng = deriver.stream(&[purpose::MISC, trial]);
            let rho = [0.5];
            let mut history = LossHistory::new(1);
            let rounds: Vec<(Vec<f64>, Vec<Vec<f64>>, bool)> = (0..16)
                .map(|_| {
                    (
                        vec![rng.random(), rng.random()],
                        vec![vec![rng.random()], vec![rng.random()]],
                        false,
                    )
                })
                .collect();
            let grad = vec![rounds
                .iter()
                .map(|r| 0.5 - r.1[0][0])
                .sum::<f64>()];
            history.push_epoch(grad, rounds);
            let mut params = UpdaterParams {
                fp_grid: 101,
                ..UpdaterParams::default()
            };
            params.fp_mode = FpMode::Exact;
            let exact = solve_oftrlfp(&history, &params, 0.05, &rho, 16);
            params.fp_mode = FpMode::Approximation;
            let approx = solve_oftrlfp(&history, &params, 0.05, &rho, 16);
            assert!(
                exact.residual <= approx.residual + 1e-12,
                "trial {trial}: exact {} > approx {}",
                exact.residual,
                approx.residual
            );
        }
    }

    #[test]
    fn vanilla_step_examples() {
        let rho = [0.5];
        let lam = DualVector::clipped(&[0.5], &rho);
        let next = vanilla_dual_step(&lam, &[0.9], &rho, 0.1);
        assert!((next.as_slice()[0] - 0.54).abs() < 1e-15);
        // c = rho: no movement.
        let next = vanilla_dual_step(&lam, &[0.5], &rho, 0.1);
        assert_eq!(next.as_slice(), &[0.5]);
        // Lower clamp.
        let zero = DualVector::zeros(1);
        let next = vanilla_dual_step(&zero, &[0.0], &rho, 0.1);
        assert_eq!(next.as_slice(), &[0.0]);
    }

    #[test]
    fn regret_bound_examples() {
        assert_eq!(ftrl_regret_bound(&[0.0, 0.0], &[1.0, 0.5], 2.0), 4.0);
        assert_eq!(ftrl_regret_bound(&[4.0], &[1.0], 2.0), 4.0);
    }

    #[test]
    fn eta_schedules_non_increasing() {
        let schedule =
            crate::market::build_epoch_schedule(1000, crate::market::EpochScheme::Doubling)
                .unwrap();
        let rho = [0.5];
        for rule in [
            EtaSchedule::TheoremFtrl { scale: 1.0 },
            EtaSchedule::TheoremOftrlFp { scale: 1.0 },
        ] {
            let mut prev = f64::INFINITY;
            for l in 1..=schedule.num_epochs() {
                let eta = rule.eta(l, &schedule, &rho, 3);
                assert!(eta > 0.0);
                assert!(eta <= prev);
                prev = eta;
            }
        }
    }
}
