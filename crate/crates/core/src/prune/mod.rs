//! Entropy-guided iterative pruning.
//!
//! Each iteration measures the ON/OFF entropy of every ReLU layer, derives a
//! per-layer *irrelevance* (mean entropy times mean unmasked weight magnitude)
//! and its complementary *relevance*, and splits a global budget of
//! `round(zeta * remaining)` weights across layers with a softmax over the
//! relevances. Inside each layer the smallest-magnitude weights go first.
//! Layers with low entropy and small weights therefore absorb most of the
//! budget, which pushes them toward zero entropy and eventual removal.

mod budget;
mod magnitude;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::entropy::{classify_states, collect_stats, EntropyReport};
use crate::error::{Error, Result};
use crate::nn::{train_with_seed, Network, TrainConfig};

pub use budget::{
    allocate_budgets, apportion, budget_from_counts, global_budget, layer_irrelevance,
    layer_relevance, softmax_shares, BudgetBase,
};
pub use magnitude::{global_magnitude_prune, magnitude_prune_layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// Entropy-weighted per-layer allocation.
    #[default]
    Egp,
    /// One global magnitude threshold over all considered layers.
    Vanilla,
}

impl PruneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMode::Egp => "egp",
            PruneMode::Vanilla => "vanilla",
        }
    }
}

/// How layers whose mean entropy is already zero take part in allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroEntropyPolicy {
    /// Left out of the softmax pool; they only receive budget the other
    /// layers cannot hold.
    #[default]
    Exclude,
    /// Kept in the pool with relevance 0.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub zeta: f64,
    pub iterations: usize,
    pub finetune: TrainConfig,
    pub mode: PruneMode,
    pub budget_base: BudgetBase,
    pub zero_entropy: ZeroEntropyPolicy,
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Config(format!(
                "prune.zeta must be in (0, 1), got {}",
                self.zeta
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("prune.iterations must be at least 1".into()));
        }
        self.finetune.validate("prune.finetune")
    }
}

/// Per-layer quantities that drive one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRelevance {
    pub layer_index: usize,
    pub mean_entropy: f64,
    pub mean_abs_weight: f64,
    pub irrelevance: f64,
    pub relevance: f64,
}

/// Irrelevance and relevance of every considered layer of `net`.
pub fn layer_relevances(net: &Network, report: &EntropyReport) -> Result<Vec<LayerRelevance>> {
    let mut out = Vec::new();
    for li in net.considered_layers() {
        let entropy = report
            .layer(li)
            .ok_or_else(|| Error::StatsMismatch(format!("no entropy for layer {li}")))?
            .mean_entropy;
        let p = net.layers[li].params().expect("considered layer has weights");
        let n = p.unmasked_count();
        let mean_abs = if n == 0 { 0.0 } else { p.unmasked_abs_sum() / n as f64 };
        out.push(LayerRelevance {
            layer_index: li,
            mean_entropy: entropy,
            mean_abs_weight: mean_abs,
            irrelevance: layer_irrelevance(&net.layers[li], entropy),
            relevance: 0.0,
        });
    }
    let irr: Vec<f64> = out.iter().map(|r| r.irrelevance).collect();
    for (r, rel) in out.iter_mut().zip(layer_relevance(&irr)) {
        r.relevance = rel;
    }
    Ok(out)
}

/// Weights to prune per layer in one iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneBudget {
    pub global: usize,
    /// `(layer_index, count)` in layer order.
    pub per_layer: Vec<(usize, usize)>,
}

/// Entropy-guided allocation of `budget` across the considered layers.
pub fn egp_budget(
    net: &Network,
    relevances: &[LayerRelevance],
    budget: usize,
    policy: ZeroEntropyPolicy,
) -> Result<PruneBudget> {
    let remaining = |li: usize| net.layers[li].params().map_or(0, |p| p.unmasked_count());
    let (pool, rest): (Vec<&LayerRelevance>, Vec<&LayerRelevance>) = relevances
        .iter()
        .partition(|r| policy == ZeroEntropyPolicy::Literal || r.mean_entropy != 0.0);
    let mut per_layer: Vec<(usize, usize)> = relevances.iter().map(|r| (r.layer_index, 0)).collect();
    let mut assign = |group: &[&LayerRelevance], amount: usize| -> Result<()> {
        let r: Vec<f64> = group.iter().map(|x| x.relevance).collect();
        let cap: Vec<usize> = group.iter().map(|x| remaining(x.layer_index)).collect();
        for (x, n) in group.iter().zip(allocate_budgets(&r, &cap, amount)?) {
            per_layer.iter_mut().find(|(li, _)| *li == x.layer_index).unwrap().1 += n;
        }
        Ok(())
    };
    let pool_cap: usize = pool.iter().map(|r| remaining(r.layer_index)).sum();
    if budget <= pool_cap {
        assign(&pool, budget)?;
    } else {
        // the entropic layers cannot hold the whole budget: empty them and
        // spill the rest over the zero-entropy layers
        if !pool.is_empty() {
            assign(&pool, pool_cap)?;
        }
        assign(&rest, budget - pool_cap)?;
    }
    Ok(PruneBudget {
        global: budget,
        per_layer,
    })
}

/// Data used by [`egp_iterate`].
#[derive(Debug, Clone, Copy)]
pub struct PruneData<'a> {
    /// Fine-tuning set.
    pub train: &'a Dataset,
    /// Set over which ON/OFF statistics are gathered.
    pub entropy: &'a Dataset,
    /// Accuracy is reported on this set (falls back to `train`).
    pub eval: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerIterationLog {
    pub layer_index: usize,
    /// Mean entropy after this iteration's fine-tuning.
    pub mean_entropy: f64,
    pub relevance: f64,
    pub pruned_this_iter: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub global_budget: usize,
    pub sparsity_pct: f64,
    pub accuracy: f64,
    pub layers_zero_entropy: usize,
    pub layers: Vec<LayerIterationLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub net: Network,
    pub log: Vec<IterationLog>,
    /// Entropy report of the final network on the entropy set.
    pub report: EntropyReport,
}

const STATS_BATCH: usize = 256;

/// Runs `cfg.iterations` rounds of measure, allocate, prune and fine-tune.
/// Zero iterations return the network unchanged with an empty log.
pub fn egp_iterate(mut net: Network, data: PruneData<'_>, cfg: &PruneConfig) -> Result<PruneOutcome> {
    if !(cfg.zeta > 0.0 && cfg.zeta < 1.0) {
        return Err(Error::Config(format!("prune.zeta must be in (0, 1), got {}", cfg.zeta)));
    }
    let considered = net.considered_layers();
    if considered.is_empty() {
        return Err(Error::InvalidNetwork("network has no prunable layer".into()));
    }
    let mut report = classify_states(&collect_stats(&net, data.entropy, STATS_BATCH)?)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for iteration in 1..=cfg.iterations {
        let relevances = layer_relevances(&net, &report)?;
        let budget = global_budget(&net, cfg.zeta, cfg.budget_base)?;
        let pruned: Vec<(usize, usize)> = match cfg.mode {
            PruneMode::Vanilla => {
                let counts = global_magnitude_prune(&mut net, &considered, budget)?;
                considered.iter().copied().zip(counts).collect()
            }
            PruneMode::Egp => {
                let plan = egp_budget(&net, &relevances, budget, cfg.zero_entropy)?;
                for &(li, k) in &plan.per_layer {
                    let p = net.layers[li].params_mut().expect("considered layer");
                    magnitude_prune_layer(p, k).map_err(|e| match e {
                        Error::PruneTooLarge {
                            requested,
                            available,
                            ..
                        } => Error::PruneTooLarge {
                            layer: li,
                            requested,
                            available,
                        },
                        e => e,
                    })?;
                }
                plan.per_layer
            }
        };
        let seed = net.rng_seed.wrapping_add(0x9e37_79b9 * iteration as u64);
        train_with_seed(&mut net, data.train, &cfg.finetune, seed)?;
        report = classify_states(&collect_stats(&net, data.entropy, STATS_BATCH)?)?;
        let accuracy = net.accuracy(data.eval.unwrap_or(data.train))?;
        let layers = pruned
            .iter()
            .zip(&relevances)
            .map(|(&(li, k), rel)| LayerIterationLog {
                layer_index: li,
                mean_entropy: report.layer(li).map_or(0.0, |l| l.mean_entropy),
                relevance: rel.relevance,
                pruned_this_iter: k,
                remaining: net.layers[li].params().map_or(0, |p| p.unmasked_count()),
            })
            .collect();
        log.push(IterationLog {
            iteration,
            global_budget: budget,
            sparsity_pct: net.sparsity_pct(),
            accuracy,
            layers_zero_entropy: report.zero_entropy_layers().len(),
            layers,
        });
    }
    Ok(PruneOutcome { net, log, report })
}

/// Iteration log as CSV: fixed columns followed by
/// `mean_entropy_L<i>,pruned_L<i>,remaining_L<i>` for every considered layer.
pub fn log_csv(log: &[IterationLog]) -> String {
    let mut out = String::from("iteration,sparsity_pct,accuracy,layers_zero_entropy");
    if let Some(first) = log.first() {
        for l in &first.layers {
            let i = l.layer_index;
            let _ = write!(out, ",mean_entropy_L{i},pruned_L{i},remaining_L{i}");
        }
    }
    out.push('\n');
    for row in log {
        let _ = write!(
            out,
            "{},{},{},{}",
            row.iteration, row.sparsity_pct, row.accuracy, row.layers_zero_entropy
        );
        for l in &row.layers {
            let _ = write!(out, ",{},{},{}", l.mean_entropy, l.pruned_this_iter, l.remaining);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::LayerDef;

    fn small_setup() -> (Network, Dataset, PruneConfig) {
        let data = make_blobs(1, 16, 2, 4, 0.3).unwrap();
        let net = Network::build(
            &[4],
            &[LayerDef::Dense { units: 8 }, LayerDef::Dense { units: 8 }],
            2,
            2,
        )
        .unwrap();
        let cfg = PruneConfig {
            zeta: 0.5,
            iterations: 2,
            finetune: TrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                batch_size: 8,
                epochs: 1,
                weight_decay: 0.0,
            },
            mode: PruneMode::Egp,
            budget_base: BudgetBase::Remaining,
            zero_entropy: ZeroEntropyPolicy::Exclude,
        };
        (net, data, cfg)
    }

    #[test]
    fn zero_iterations_is_a_dry_run() {
        let (net, data, mut cfg) = small_setup();
        cfg.iterations = 0;
        let d = PruneData {
            train: &data,
            entropy: &data,
            eval: None,
        };
        let out = egp_iterate(net.clone(), d, &cfg).unwrap();
        assert_eq!(out.net, net);
        assert!(out.log.is_empty());
    }

    #[test]
    fn two_iterations_reach_75_percent() {
        let (net, data, cfg) = small_setup();
        let d = PruneData {
            train: &data,
            entropy: &data,
            eval: None,
        };
        // 4*8 + 8*8 = 96 considered weights
        let out = egp_iterate(net, d, &cfg).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.log[0].global_budget, 48);
        assert_eq!(out.log[1].global_budget, 24);
        assert_eq!(out.log[1].sparsity_pct, 75.0);
    }

    #[test]
    fn initial_base_runs_out() {
        let (net, data, mut cfg) = small_setup();
        cfg.budget_base = BudgetBase::Initial;
        cfg.iterations = 3;
        let d = PruneData {
            train: &data,
            entropy: &data,
            eval: None,
        };
        let err = egp_iterate(net, d, &cfg).unwrap_err();
        assert!(matches!(err, Error::BudgetExceedsRemaining { .. }), "{err}");
    }

    #[test]
    fn zero_entropy_layers_only_receive_spill() {
        let (net, _, _) = small_setup();
        let rel = vec![
            LayerRelevance {
                layer_index: 0,
                mean_entropy: 0.0,
                mean_abs_weight: 0.5,
                irrelevance: 0.0,
                relevance: 0.0,
            },
            LayerRelevance {
                layer_index: 1,
                mean_entropy: 0.7,
                mean_abs_weight: 0.5,
                irrelevance: 0.35,
                relevance: 1.0,
            },
        ];
        let b = egp_budget(&net, &rel, 50, ZeroEntropyPolicy::Exclude).unwrap();
        assert_eq!(b.per_layer, [(0, 0), (1, 50)]);
        // layer 1 holds 64 weights; the overflow goes to layer 0
        let b = egp_budget(&net, &rel, 70, ZeroEntropyPolicy::Exclude).unwrap();
        assert_eq!(b.per_layer, [(0, 6), (1, 64)]);
        let b = egp_budget(&net, &rel, 50, ZeroEntropyPolicy::Literal).unwrap();
        assert!(b.per_layer[0].1 > 0);
        assert_eq!(b.per_layer.iter().map(|x| x.1).sum::<usize>(), 50);
    }

    #[test]
    fn csv_has_per_layer_columns() {
        let (net, data, cfg) = small_setup();
        let d = PruneData {
            train: &data,
            entropy: &data,
            eval: None,
        };
        let out = egp_iterate(net, d, &cfg).unwrap();
        let csv = log_csv(&out.log);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "iteration,sparsity_pct,accuracy,layers_zero_entropy,mean_entropy_L0,pruned_L0,remaining_L0,mean_entropy_L1,pruned_L1,remaining_L1"
        );
        assert_eq!(csv.lines().count(), 3);
    }
}
