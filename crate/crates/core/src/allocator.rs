//! Stage two: Bernoulli retention probabilities over a candidate pool,
//! learned with a score-function (REINFORCE) gradient and a moving-average
//! baseline, kept inside the cost-weighted budget polytope, and finally
//! turned into a binary mask by greedy top-score selection.

use std::collections::VecDeque;

use crate::error::{CapError, Result};
use crate::rng::CapRng;

/// Largest candidate count for exact enumeration of the expected loss.
pub const MAX_ENUMERATION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradientConfig {
    pub learning_rate: f64,
    pub baseline_beta: f64,
    pub epsilon: f64,
    /// Outer passes over the calibration set.
    pub iterations: usize,
    /// Number of recent losses averaged into each baseline update.
    pub window: usize,
    pub samples_per_step: usize,
    pub seed: u64,
}

impl Default for PolicyGradientConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            baseline_beta: 0.9,
            epsilon: 1e-8,
            iterations: 3,
            window: 5,
            samples_per_step: 1,
            seed: 0,
        }
    }
}

impl PolicyGradientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CapError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("pg learning rate must be positive");
        }
        if !(self.baseline_beta > 0.0 && self.baseline_beta < 1.0) {
            return bad("pg baseline beta must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("pg epsilon must be positive");
        }
        if self.window == 0 || self.samples_per_step == 0 {
            return bad("pg window and samples must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetentionState {
    pub probs: Vec<f64>,
    pub baseline: f64,
    pub costs: Vec<usize>,
    pub budget: usize,
    pub step: usize,
    recent: VecDeque<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub bits: Vec<bool>,
    pub loss: f64,
}

/// Uniform start at `initial_prob`, projected into the budget; baseline 0.
pub fn init_state(costs: &[usize], budget: usize, initial_prob: f64) -> Result<RetentionState> {
    if budget == 0 {
        return Err(CapError::InvalidBudget("budget must be positive".into()));
    }
    if !(0.0..=1.0).contains(&initial_prob) {
        return Err(CapError::InvalidConfig(format!(
            "initial probability {initial_prob} outside [0, 1]"
        )));
    }
    if let Some(k) = costs.iter().position(|&c| c == 0) {
        return Err(CapError::InvalidConfig(format!("candidate {k} has zero cost")));
    }
    let probs = project_to_budget(&vec![initial_prob; costs.len()], costs, budget as f64)?;
    Ok(RetentionState {
        probs,
        baseline: 0.0,
        costs: costs.to_vec(),
        budget,
        step: 0,
        recent: VecDeque::new(),
    })
}

/// Independent Bernoulli draw per candidate, one uniform per candidate in
/// index order.
pub fn sample_mask(state: &RetentionState, rng: &mut CapRng) -> Vec<bool> {
    state.probs.iter().map(|&p| rng.bernoulli(p)).collect()
}

/// `∂/∂s log p(m | s) = (m − s) / (s(1 − s) + ε)`.
pub fn log_prob_grad(m: bool, s: f64, epsilon: f64) -> f64 {
    let m = if m { 1.0 } else { 0.0 };
    (m - s) / (s * (1.0 - s) + epsilon)
}

/// Single-sample estimate `(𝓛 − δ) ∇ log p(m | s)` of the expected-loss
/// gradient.
pub fn reinforce_estimate(bits: &[bool], probs: &[f64], loss: f64, baseline: f64, epsilon: f64) -> Vec<f64> {
    let adv = loss - baseline;
    bits.iter()
        .zip(probs)
        .map(|(&m, &s)| adv * log_prob_grad(m, s, epsilon))
        .collect()
}

impl RetentionState {
    /// Applies every sample in order (baseline first, then probabilities),
    /// then projects back into the budget.
    pub fn apply(&mut self, samples: &[MaskSample], config: &PolicyGradientConfig) -> Result<()> {
        for sample in samples {
            if sample.bits.len() != self.probs.len() {
                return Err(CapError::LengthMismatch {
                    expected: self.probs.len(),
                    found: sample.bits.len(),
                });
            }
            self.recent.push_back(sample.loss);
            while self.recent.len() > config.window.max(1) {
                self.recent.pop_front();
            }
            let windowed = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
            self.baseline = config.baseline_beta * self.baseline + (1.0 - config.baseline_beta) * windowed;

            let adv = sample.loss - self.baseline;
            for (s, &m) in self.probs.iter_mut().zip(&sample.bits) {
                *s -= config.learning_rate * adv * log_prob_grad(m, *s, config.epsilon);
            }
        }
        self.probs = project_to_budget(&self.probs, &self.costs, self.budget as f64)?;
        self.step += 1;
        Ok(())
    }

    /// Seeds δ and the loss window with losses observed under the current
    /// policy, so the first updates are not dominated by a cold baseline.
    pub fn prime_baseline(&mut self, losses: &[f64]) {
        if losses.is_empty() {
            return;
        }
        self.baseline = losses.iter().sum::<f64>() / losses.len() as f64;
        self.recent = losses.iter().copied().collect();
    }

    /// `Σ s_k c_k`.
    pub fn expected_cost(&self) -> f64 {
        self.probs.iter().zip(&self.costs).map(|(s, &c)| s * c as f64).sum()
    }
}

/// One policy-gradient step; returns the updated state.
pub fn reinforce_step(
    state: &RetentionState,
    samples: &[MaskSample],
    config: &PolicyGradientConfig,
) -> Result<RetentionState> {
    let mut next = state.clone();
    next.apply(samples, config)?;
    Ok(next)
}

const BISECTION_TOL: f64 = 1e-10;
const BISECTION_MAX_ITERS: usize = 200;

/// Euclidean projection onto `{s : Σ c_k s_k ≤ K, 0 ≤ s_k ≤ 1}`.
///
/// When clipping alone is feasible the clipped vector is returned; otherwise
/// `clip(s − ν c, 0, 1)` with the multiplier `ν ≥ 0` found by bisection on
/// the budget equation. The upper end of the bracket is used, so the result
/// never exceeds the budget.
pub fn project_to_budget(probs: &[f64], costs: &[usize], budget: f64) -> Result<Vec<f64>> {
    if probs.len() != costs.len() {
        return Err(CapError::LengthMismatch {
            expected: costs.len(),
            found: probs.len(),
        });
    }
    if !(budget >= 0.0) {
        return Err(CapError::InvalidBudget(format!("budget {budget} is negative")));
    }
    let clipped: Vec<f64> = probs.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    let weighted = |nu: f64| -> f64 {
        probs
            .iter()
            .zip(costs)
            .map(|(&s, &c)| (s - nu * c as f64).clamp(0.0, 1.0) * c as f64)
            .sum()
    };
    if weighted(0.0) <= budget {
        return Ok(clipped);
    }
    // At `hi` every coordinate clips to zero.
    let mut lo = 0.0;
    let mut hi = probs
        .iter()
        .zip(costs)
        .map(|(&s, &c)| s / c as f64)
        .fold(0.0, f64::max);
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = weighted(mid);
        if f > budget {
            lo = mid;
        } else {
            hi = mid;
            if budget - f <= BISECTION_TOL {
                break;
            }
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(probs
        .iter()
        .zip(costs)
        .map(|(&s, &c)| (s - hi * c as f64).clamp(0.0, 1.0))
        .collect())
}

/// Greedy selection in descending score (ties by index), skipping any
/// candidate that no longer fits the remaining budget.
pub fn greedy_select(scores: &[f64], costs: &[usize], budget: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut remaining = budget;
    let mut mask = vec![false; scores.len()];
    for k in order {
        if costs[k] <= remaining {
            remaining -= costs[k];
            mask[k] = true;
        }
    }
    mask
}

/// Final deterministic mask from the learned probabilities.
pub fn finalize_masks(state: &RetentionState) -> Vec<bool> {
    greedy_select(&state.probs, &state.costs, state.budget)
}

/// Exact `∇_s E_{m∼Bern(s)}[loss(m)]` by enumerating all `2ⁿ` masks.
///
/// Uses `∂E/∂s_k = E[loss | m_k = 1] − E[loss | m_k = 0]`.
pub fn exact_expected_loss_grad(probs: &[f64], loss_of_mask: impl Fn(&[bool]) -> f64) -> Result<Vec<f64>> {
    let n = probs.len();
    if n > MAX_ENUMERATION {
        return Err(CapError::TooLarge {
            n,
            limit: MAX_ENUMERATION,
        });
    }
    let mut grad = vec![0.0; n];
    let mut bits = vec![false; n];
    for code in 0u32..(1u32 << n) {
        for (k, b) in bits.iter_mut().enumerate() {
            *b = code >> k & 1 == 1;
        }
        let loss = loss_of_mask(&bits);
        for k in 0..n {
            let others: f64 = (0..n)
                .filter(|&j| j != k)
                .map(|j| if bits[j] { probs[j] } else { 1.0 - probs[j] })
                .product();
            grad[k] += if bits[k] { others * loss } else { -others * loss };
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn init_state_cases() {
        let st = init_state(&[1, 1, 1, 1], 4, 0.5).unwrap();
        assert_eq!(st.probs, vec![0.5; 4]);
        assert_eq!((st.baseline, st.step), (0.0, 0));

        let st = init_state(&[1, 1], 1, 1.0).unwrap();
        assert_close(&st.probs, &[0.5, 0.5], 1e-9);

        assert!(matches!(init_state(&[4, 1], 0, 0.5), Err(CapError::InvalidBudget(_))));
    }

    #[test]
    fn sampling_respects_endpoints() {
        let st = RetentionState {
            probs: vec![0.0, 1.0],
            baseline: 0.0,
            costs: vec![1, 1],
            budget: 2,
            step: 0,
            recent: VecDeque::new(),
        };
        let mut rng = CapRng::seed_from(9);
        for _ in 0..10_000 {
            assert_eq!(sample_mask(&st, &mut rng), vec![false, true]);
        }
    }

    #[test]
    fn log_prob_grad_values() {
        assert_eq!(log_prob_grad(true, 0.5, 0.0), 2.0);
        assert_eq!(log_prob_grad(false, 0.5, 0.0), -2.0);
        assert_eq!(log_prob_grad(true, 1.0, 1e-8), 0.0);
    }

    #[test]
    fn zero_advantage_leaves_probs() {
        let mut st = init_state(&[1, 2, 3], 6, 0.5).unwrap();
        st.baseline = 2.0;
        // A window of one with the loss equal to δ keeps δ and s fixed.
        let cfg = PolicyGradientConfig {
            window: 1,
            ..Default::default()
        };
        st.recent.clear();
        let before = st.probs.clone();
        let sample = MaskSample {
            bits: vec![true, false, true],
            loss: 2.0,
        };
        let next = reinforce_step(&st, &[sample], &cfg).unwrap();
        assert_eq!(next.probs, before);
        assert_eq!(next.baseline, 2.0);
        assert_eq!(next.step, 1);
    }

    #[test]
    fn baseline_arithmetic() {
        let st = init_state(&[1], 1, 0.5).unwrap();
        let cfg = PolicyGradientConfig {
            window: 1,
            ..Default::default()
        };
        let next = reinforce_step(
            &st,
            &[MaskSample {
                bits: vec![true],
                loss: 1.0,
            }],
            &cfg,
        )
        .unwrap();
        assert!((next.baseline - 0.1).abs() < 1e-15);
    }

    #[test]
    fn learns_single_useful_candidate() {
        let mut st = init_state(&[1], 1, 0.5).unwrap();
        let cfg = PolicyGradientConfig {
            window: 1,
            ..Default::default()
        };
        let mut rng = CapRng::seed_from(3);
        for _ in 0..500 {
            let bits = sample_mask(&st, &mut rng);
            let loss = if bits[0] { 0.0 } else { 1.0 };
            st.apply(&[MaskSample { bits, loss }], &cfg).unwrap();
        }
        assert!(st.probs[0] > 0.95, "{:?}", st.probs);
    }

    #[test]
    fn rejects_sample_length_mismatch() {
        let st = init_state(&[1, 1], 2, 0.5).unwrap();
        let bad = MaskSample {
            bits: vec![true],
            loss: 0.0,
        };
        assert!(reinforce_step(&st, &[bad], &PolicyGradientConfig::default()).is_err());
    }

    #[test]
    fn projection_examples() {
        let p = project_to_budget(&[0.8, 0.8, 0.8], &[1, 1, 1], 1.5).unwrap();
        assert_close(&p, &[0.5, 0.5, 0.5], 1e-9);

        let p = project_to_budget(&[0.2, 0.3], &[2, 1], 5.0).unwrap();
        assert_eq!(p, vec![0.2, 0.3]);

        let p = project_to_budget(&[1.2, -0.1], &[1, 1], 2.0).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);

        assert!(project_to_budget(&[0.5], &[1], -1.0).is_err());
    }

    #[test]
    fn finalize_examples() {
        let mut st = init_state(&[4, 1, 1], 5, 0.5).unwrap();
        st.probs = vec![0.9, 0.8, 0.7];
        assert_eq!(finalize_masks(&st), vec![true, true, false]);

        st.budget = 6;
        assert_eq!(finalize_masks(&st), vec![true; 3]);
        assert_eq!(greedy_select(&[0.9, 0.8, 0.7], &[4, 1, 1], 0), vec![false; 3]);
    }

    #[test]
    fn greedy_skips_what_does_not_fit() {
        assert_eq!(greedy_select(&[0.9, 0.8, 0.1], &[3, 4, 2], 5), vec![true, false, true]);
    }

    #[test]
    fn exact_grad_small_cases() {
        let g = exact_expected_loss_grad(&[0.3, 0.6], |_| 2.5).unwrap();
        assert_close(&g, &[0.0, 0.0], 1e-15);
        let g = exact_expected_loss_grad(&[0.4], |m| if m[0] { 0.0 } else { 1.0 }).unwrap();
        assert_close(&g, &[-1.0], 1e-15);
        assert!(exact_expected_loss_grad(&[0.5; 17], |_| 0.0).is_err());
    }
}
