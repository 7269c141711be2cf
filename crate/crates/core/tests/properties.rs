use egp_core::data::{encode_idx_labels, parse_idx_labels};
use egp_core::entropy::neuron_entropy;
use egp_core::prune::{allocate_budgets, budget_from_counts};
use proptest::prelude::*;

proptest! {
    #[test]
    fn entropy_is_symmetric_and_bounded(p in 0.0f64..=1.0) {
        let h = neuron_entropy(p).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - neuron_entropy(1.0 - p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn allocation_conserves_budget(
        layers in prop::collection::vec((0.0f64..20.0, 0usize..5000), 1..10),
        frac in 0.0f64..=1.0,
    ) {
        let (rel, cap): (Vec<f64>, Vec<usize>) = layers.into_iter().unzip();
        let budget = (frac * cap.iter().sum::<usize>() as f64).floor() as usize;
        let got = allocate_budgets(&rel, &cap, budget).unwrap();
        prop_assert_eq!(got.iter().sum::<usize>(), budget);
        prop_assert!(got.iter().zip(&cap).all(|(g, c)| g <= c));
    }

    #[test]
    fn halving_budget_never_exceeds_remaining(remaining in 0usize..1_000_000) {
        let b = budget_from_counts(0.5, remaining, remaining).unwrap();
        prop_assert!(b <= remaining);
        prop_assert!(b.abs_diff(remaining / 2) <= 1);
    }

    #[test]
    fn label_files_round_trip(labels in prop::collection::vec(any::<u8>(), 0..300)) {
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }
}
