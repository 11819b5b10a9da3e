//! Brute-force ground truth for tiny instances: exhaustive budgeted mask
//! search and the exact expectation of a loss under product-Bernoulli masks.

use crate::error::{CapError, Result};
use crate::pool::masked_cost;

/// Largest candidate count accepted by [`brute_force_best_mask`].
pub const MAX_BRUTE_FORCE: usize = 20;
/// Largest candidate count accepted by [`exact_expected_loss`].
pub const MAX_EXPECTATION: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_mask: Vec<bool>,
    pub best_loss: f64,
    pub enumerated: usize,
    pub feasible: usize,
}

/// Bit `k` of `code` is candidate `k`.
pub fn mask_from_code(code: u64, n: usize) -> Vec<bool> {
    (0..n).map(|k| code >> k & 1 == 1).collect()
}

/// Exhaustive search over every mask whose cost fits `budget`.
///
/// Masks are visited in the order of their code, reading candidate 0 as the
/// most significant choice: a tie in loss keeps the mask that retains the
/// earlier candidates.
pub fn brute_force_best_mask(costs: &[usize], budget: usize, loss_fn: impl Fn(&[bool]) -> f64) -> Result<OracleResult> {
    let n = costs.len();
    if n > MAX_BRUTE_FORCE {
        return Err(CapError::TooLarge {
            n,
            limit: MAX_BRUTE_FORCE,
        });
    }
    let total = 1u64 << n;
    let mut best: Option<(Vec<bool>, f64)> = None;
    let mut feasible = 0;
    // Descending codes with bit n-1-k standing for candidate k, so earlier
    // candidates kept wins ties.
    for rank in (0..total).rev() {
        let mask: Vec<bool> = (0..n).map(|k| rank >> (n - 1 - k) & 1 == 1).collect();
        if masked_cost(costs, &mask)? > budget {
            continue;
        }
        feasible += 1;
        let loss = loss_fn(&mask);
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((mask, loss));
        }
    }
    let (best_mask, best_loss) = best.expect("the empty mask is always feasible");
    Ok(OracleResult {
        best_mask,
        best_loss,
        enumerated: total as usize,
        feasible,
    })
}

/// Probability of `mask` under independent Bernoulli(`probs`).
pub fn mask_probability(probs: &[f64], mask: &[bool]) -> f64 {
    probs
        .iter()
        .zip(mask)
        .map(|(&p, &m)| if m { p } else { 1.0 - p })
        .product()
}

/// `Σ_m Π p(m_k | s_k) · loss(m)` over all `2ⁿ` masks.
pub fn exact_expected_loss(probs: &[f64], loss_fn: impl Fn(&[bool]) -> f64) -> Result<f64> {
    let n = probs.len();
    if n > MAX_EXPECTATION {
        return Err(CapError::TooLarge {
            n,
            limit: MAX_EXPECTATION,
        });
    }
    let mut total = 0.0;
    for code in 0..(1u64 << n) {
        let mask = mask_from_code(code, n);
        let p = mask_probability(probs, &mask);
        if p != 0.0 {
            total += p * loss_fn(&mask);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_examples() {
        let table = |m: &[bool]| (m[0] as u8 as f64) + 2.0 * (m[1] as u8 as f64);
        assert_eq!(exact_expected_loss(&[1.0, 1.0], table).unwrap(), 3.0);
        assert_eq!(exact_expected_loss(&[0.0, 0.0], table).unwrap(), 0.0);
        assert!((exact_expected_loss(&[0.5, 0.5], table).unwrap() - 1.5).abs() < 1e-15);
        assert!(exact_expected_loss(&[0.5; 17], table).is_err());
    }

    #[test]
    fn brute_force_budget_extremes() {
        let costs = [3, 1, 2];
        let loss = |m: &[bool]| 10.0 - 3.0 * m[0] as u8 as f64 - m[1] as u8 as f64 - 2.0 * m[2] as u8 as f64;
        let all = brute_force_best_mask(&costs, 6, loss).unwrap();
        assert_eq!(all.best_mask, vec![true; 3]);
        assert_eq!((all.enumerated, all.feasible), (8, 8));

        let none = brute_force_best_mask(&costs, 0, loss).unwrap();
        assert_eq!(none.best_mask, vec![false; 3]);
        assert_eq!(none.best_loss, 10.0);

        let mid = brute_force_best_mask(&costs, 3, loss).unwrap();
        assert_eq!(mid.best_loss, 7.0);
        // Ties between {0} and {1, 2}: the earlier candidate wins.
        assert_eq!(mid.best_mask, vec![true, false, false]);
    }

    #[test]
    fn brute_force_rejects_large() {
        assert!(brute_force_best_mask(&[1; 21], 3, |_| 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn mask_probabilities_sum_to_one(probs in proptest::collection::vec(0.0f64..=1.0, 0..10)) {
            let n = probs.len();
            let total: f64 = (0..1u64 << n).map(|c| mask_probability(&probs, &mask_from_code(c, n))).sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
