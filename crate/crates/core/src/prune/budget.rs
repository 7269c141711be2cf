use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

/// What the per-iteration fraction `zeta` is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetBase {
    /// Weights still unmasked at the start of the iteration.
    #[default]
    Remaining,
    /// All weights of the considered layers, masked or not.
    Initial,
}

/// `round(zeta * base)` with halves rounded up; errors if that exceeds the
/// `remaining` weights.
pub fn budget_from_counts(zeta: f64, base: usize, remaining: usize) -> Result<usize> {
    let budget = (zeta * base as f64).round() as usize;
    if budget > remaining {
        return Err(Error::BudgetExceedsRemaining {
            budget,
            available: remaining,
        });
    }
    Ok(budget)
}

/// Number of weights to prune this iteration over the considered layers.
/// Biases are never counted.
pub fn global_budget(net: &Network, zeta: f64, base: BudgetBase) -> Result<usize> {
    if net.considered_layers().is_empty() {
        return Err(Error::InvalidNetwork("network has no prunable layer".into()));
    }
    let remaining = net.considered_weight_remaining();
    let base_count = match base {
        BudgetBase::Remaining => remaining,
        BudgetBase::Initial => net.considered_weight_total(),
    };
    budget_from_counts(zeta, base_count, remaining)
}

/// Mean entropy times the mean absolute value of the unmasked weights;
/// zero for a layer without unmasked weights.
pub fn layer_irrelevance(layer: &Layer, mean_entropy: f64) -> f64 {
    let Some(p) = layer.params() else {
        return 0.0;
    };
    let n = p.unmasked_count();
    if n == 0 {
        return 0.0;
    }
    mean_entropy * (p.unmasked_abs_sum() / n as f64)
}

/// `R_l = sum(I) / I_l`, or 0 where `I_l == 0`.
pub fn layer_relevance(irrelevances: &[f64]) -> Vec<f64> {
    let total: f64 = irrelevances.iter().sum();
    irrelevances
        .iter()
        .map(|&i| if i != 0.0 { total / i } else { 0.0 })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax_shares(relevances: &[f64]) -> Vec<f64> {
    let max = relevances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = relevances.iter().map(|r| (r - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Largest-remainder (Hamilton) rounding of `shares * total` to integers that
/// sum to exactly `total`. Ties go to the lower index.
pub fn apportion(shares: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut assigned: usize = out.iter().sum();
    if assigned > total {
        // only reachable through rounding in the quotas; trim from the back
        for v in out.iter_mut().rev() {
            let take = (*v).min(assigned - total);
            *v -= take;
            assigned -= take;
            if assigned == total {
                break;
            }
        }
    }
    let mut order: Vec<usize> = (0..shares.len()).collect();
    let frac = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total - assigned) {
        out[i] += 1;
    }
    out
}

/// Splits `budget` over a pool of layers by `softmax(relevances)`.
///
/// Any layer whose integer share exceeds its `remaining` count is assigned
/// all of its remaining weights and leaves the pool; the leftover budget is
/// then re-split over the rest of the pool the same way until every share fits.
pub fn allocate_budgets(relevances: &[f64], remaining: &[usize], budget: usize) -> Result<Vec<usize>> {
    if relevances.len() != remaining.len() {
        return Err(Error::Shape("relevances and capacities differ in length".into()));
    }
    let available: usize = remaining.iter().sum();
    if budget > available {
        return Err(Error::BudgetExceedsRemaining { budget, available });
    }
    let mut alloc = vec![0usize; relevances.len()];
    let mut pool: Vec<usize> = (0..relevances.len()).collect();
    let mut residual = budget;
    while residual > 0 {
        if pool.is_empty() {
            return Err(Error::EmptyPool { residual });
        }
        let r: Vec<f64> = pool.iter().map(|&i| relevances[i]).collect();
        let shares = apportion(&softmax_shares(&r), residual);
        let overflow: Vec<usize> = pool
            .iter()
            .zip(&shares)
            .filter(|(&i, &s)| s > remaining[i])
            .map(|(&i, _)| i)
            .collect();
        if overflow.is_empty() {
            for (&i, s) in pool.iter().zip(shares) {
                alloc[i] = s;
            }
            break;
        }
        for &i in &overflow {
            alloc[i] = remaining[i];
            residual -= remaining[i];
        }
        pool.retain(|i| !overflow.contains(i));
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn budget_rounding() {
        assert_eq!(budget_from_counts(0.5, 1000, 1000).unwrap(), 500);
        assert_eq!(budget_from_counts(0.5, 7, 7).unwrap(), 4);
        assert!(matches!(
            budget_from_counts(0.5, 1000, 100),
            Err(Error::BudgetExceedsRemaining { budget: 500, available: 100 })
        ));
    }

    #[test]
    fn irrelevance_uses_unmasked_mean() {
        let mut layer = Layer::dense(
            Tensor::new(vec![1, 3], vec![0.2, -0.4, 0.7]).unwrap(),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap();
        let p = layer.params_mut().unwrap();
        p.mask[2] = false;
        p.apply_mask();
        assert!((layer_irrelevance(&layer, 0.5) - 0.15).abs() < 1e-15);
        assert_eq!(layer_irrelevance(&layer, 0.0), 0.0);
        let p = layer.params_mut().unwrap();
        p.mask.iter_mut().for_each(|m| *m = false);
        p.apply_mask();
        assert_eq!(layer_irrelevance(&layer, 0.5), 0.0);
    }

    #[test]
    fn relevance_examples() {
        assert_eq!(layer_relevance(&[1.0, 1.0]), [2.0, 2.0]);
        let r = layer_relevance(&[0.1, 0.3]);
        assert!((r[0] - 4.0).abs() < 1e-12 && (r[1] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(layer_relevance(&[0.0, 0.5]), [0.0, 1.0]);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_budgets(&[1.0; 3], &[100; 3], 9).unwrap(), [3, 3, 3]);
        assert_eq!(allocate_budgets(&[2.0, 0.0], &[500, 500], 100).unwrap(), [88, 12]);
        assert_eq!(allocate_budgets(&[2.0, 0.0], &[40, 500], 100).unwrap(), [40, 60]);
    }

    #[test]
    fn allocation_rejects_oversized_budget() {
        assert!(allocate_budgets(&[1.0, 1.0], &[1, 1], 3).is_err());
    }

    #[test]
    fn apportion_breaks_ties_low() {
        assert_eq!(apportion(&[0.5, 0.5], 3), [2, 1]);
        assert_eq!(apportion(&[0.25; 4], 2), [1, 1, 0, 0]);
    }

    proptest! {
        #[test]
        fn allocation_conserves_and_respects_capacity(
            layers in proptest::collection::vec((0.0f64..20.0, 0usize..300), 1..8),
            frac in 0.0f64..=1.0,
        ) {
            let r: Vec<f64> = layers.iter().map(|l| l.0).collect();
            let cap: Vec<usize> = layers.iter().map(|l| l.1).collect();
            let budget = (cap.iter().sum::<usize>() as f64 * frac) as usize;
            let a = allocate_budgets(&r, &cap, budget).unwrap();
            prop_assert_eq!(a.iter().sum::<usize>(), budget);
            prop_assert!(a.iter().zip(&cap).all(|(x, c)| x <= c));
        }

        #[test]
        fn allocation_is_shift_invariant(
            r in proptest::collection::vec(0.0f64..5.0, 1..6),
            shift in -3.0f64..3.0,
            budget in 0usize..500,
        ) {
            // shift by a dyadic constant so that r - max is computed exactly
            let shift = (shift * 4.0).round() / 4.0;
            let cap = vec![1000; r.len()];
            let shifted: Vec<f64> = r.iter().map(|v| v + shift).collect();
            let maxr = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let maxs = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exact = r.iter().zip(&shifted).all(|(a, b)| a - maxr == b - maxs);
            prop_assume!(exact);
            prop_assert_eq!(
                allocate_budgets(&r, &cap, budget).unwrap(),
                allocate_budgets(&shifted, &cap, budget).unwrap()
            );
        }

        #[test]
        fn larger_relevance_gets_larger_share(
            r in proptest::collection::vec(-5.0f64..5.0, 2..6),
        ) {
            let s = softmax_shares(&r);
            for i in 0..r.len() {
                for j in 0..r.len() {
                    if r[i] > r[j] {
                        prop_assert!(s[i] >= s[j]);
                    }
                }
            }
        }
    }
}
