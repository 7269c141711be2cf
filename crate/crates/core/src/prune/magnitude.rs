use crate::error::{Error, Result};
use crate::nn::{Network, Params};

/// Masks the `k` unmasked weights of smallest magnitude (ties: lowest flat
/// index) and zeroes them.
pub fn magnitude_prune_layer(params: &mut Params, k: usize) -> Result<()> {
    let w = params.weights.data();
    let mut candidates: Vec<usize> = (0..w.len()).filter(|&i| params.mask[i]).collect();
    if k > candidates.len() {
        return Err(Error::PruneTooLarge {
            layer: usize::MAX,
            requested: k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    for &i in &candidates[..k] {
        params.mask[i] = false;
    }
    params.apply_mask();
    Ok(())
}

/// Prunes `k` weights with the smallest magnitude across `layers` taken
/// together (ties: lower layer, then lower flat index). Returns the number
/// pruned per entry of `layers`.
pub fn global_magnitude_prune(net: &mut Network, layers: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (pos, &li) in layers.iter().enumerate() {
        let p = net.layers[li]
            .params()
            .ok_or_else(|| Error::InvalidNetwork(format!("layer {li} has no weights")))?;
        for (i, (&w, &m)) in p.weights.data().iter().zip(&p.mask).enumerate() {
            if m {
                candidates.push((w.abs(), pos, i));
            }
        }
    }
    if k > candidates.len() {
        return Err(Error::BudgetExceedsRemaining {
            budget: k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut counts = vec![0; layers.len()];
    for &(_, pos, i) in &candidates[..k] {
        net.layers[layers[pos]].params_mut().unwrap().mask[i] = false;
        counts[pos] += 1;
    }
    for &li in layers {
        net.layers[li].params_mut().unwrap().apply_mask();
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use crate::tensor::Tensor;

    fn params(w: &[f64]) -> Params {
        Layer::dense(
            Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            vec![0.0],
            Activation::Relu,
        )
        .unwrap()
        .params
        .unwrap()
    }

    #[test]
    fn prunes_two_smallest() {
        let mut p = params(&[0.1, -0.05, 0.3, -0.2]);
        magnitude_prune_layer(&mut p, 2).unwrap();
        assert_eq!(p.mask, [false, false, true, true]);
        assert_eq!(p.weights.data(), &[0.0, 0.0, 0.3, -0.2]);
    }

    #[test]
    fn zero_k_is_a_no_op() {
        let mut p = params(&[0.1, -0.05]);
        let before = p.clone();
        magnitude_prune_layer(&mut p, 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut p = params(&[0.1, -0.1]);
        magnitude_prune_layer(&mut p, 1).unwrap();
        assert_eq!(p.mask, [false, true]);
    }

    #[test]
    fn already_masked_weights_are_skipped() {
        let mut p = params(&[0.1, 0.2, 0.3]);
        magnitude_prune_layer(&mut p, 1).unwrap();
        magnitude_prune_layer(&mut p, 1).unwrap();
        assert_eq!(p.mask, [false, false, true]);
        assert!(magnitude_prune_layer(&mut p, 2).is_err());
    }
}
