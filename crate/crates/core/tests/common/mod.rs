//! Reference implementations used as oracles by the integration tests.
//! They share no code with the library beyond its data types.

#![allow(dead_code)]

use egp_core::data::{Dataset, Split};
use egp_core::nn::{Activation, Layer, LayerKind, Network};
use egp_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pre-activations of every layer (empty for flatten) and the logits, for a
/// single sample, computed with plain index arithmetic.
pub fn naive_trace(net: &Network, sample: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = sample.to_vec();
    let mut pre = Vec::new();
    for layer in &net.layers {
        let z = match layer.kind {
            LayerKind::Flatten => {
                pre.push(Vec::new());
                continue;
            }
            LayerKind::Dense => {
                let p = layer.params().unwrap();
                let (rows, cols) = (layer.out_shape[0], layer.in_shape[0]);
                (0..rows)
                    .map(|o| {
                        let mut s = 0.0;
                        for i in 0..cols {
                            s += p.weights.data()[o * cols + i] * x[i];
                        }
                        s + p.bias[o]
                    })
                    .collect::<Vec<f64>>()
            }
            LayerKind::Conv2d => {
                let p = layer.params().unwrap();
                let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
                let ws = p.weights.shape();
                let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
                let (oh, ow) = (h - kh + 1, w - kw + 1);
                let mut z = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut s = 0.0;
                            for ci in 0..c {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let wv = p.weights.data()[((o * c + ci) * kh + dy) * kw + dx];
                                        s += wv * x[(ci * h + y + dy) * w + xx + dx];
                                    }
                                }
                            }
                            z[(o * oh + y) * ow + xx] = s + p.bias[o];
                        }
                    }
                }
                z
            }
        };
        x = match layer.activation {
            Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Identity => z.clone(),
        };
        pre.push(z);
    }
    (pre, x)
}

pub fn naive_logits(net: &Network, batch: &Tensor) -> Vec<f64> {
    (0..batch.rows())
        .flat_map(|i| naive_trace(net, batch.row(i)).1)
        .collect()
}

/// Mean softmax cross-entropy, computed with log-sum-exp.
pub fn naive_loss(net: &Network, batch: &Tensor, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = naive_trace(net, batch.row(i)).1;
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / labels.len() as f64
}

fn random_params(layer: &mut Layer, rng: &mut ChaCha8Rng, mask_prob: f64) {
    let p = layer.params_mut().unwrap();
    for (w, m) in p.weights.data_mut().iter_mut().zip(p.mask.iter_mut()) {
        *w = rng.random_range(-1.0..1.0);
        *m = !rng.random_bool(mask_prob);
    }
    for b in &mut p.bias {
        *b = rng.random_range(-0.5..0.5);
    }
    p.apply_mask();
}

/// Dense ReLU network with the given widths (input first, classes last) and
/// random weights, biases and masks.
pub fn random_mlp(rng: &mut ChaCha8Rng, widths: &[usize], mask_prob: f64) -> Network {
    let mut layers = Vec::new();
    for (k, pair) in widths.windows(2).enumerate() {
        let act = if k + 2 == widths.len() { Activation::Identity } else { Activation::Relu };
        let mut l = Layer::dense(Tensor::zeros(vec![pair[1], pair[0]]), vec![0.0; pair[1]], act).unwrap();
        random_params(&mut l, rng, mask_prob);
        layers.push(l);
    }
    Network::new(layers, 0).unwrap()
}

/// conv -> conv -> flatten -> dense -> dense on a `[c, h, w]` input.
pub fn random_conv_net(rng: &mut ChaCha8Rng, input: [usize; 3], channels: [usize; 2], hidden: usize, classes: usize) -> Network {
    let [c, h, w] = input;
    let mut l0 = Layer::conv2d([c, h, w], Tensor::zeros(vec![channels[0], c, 2, 2]), vec![0.0; channels[0]], Activation::Relu).unwrap();
    random_params(&mut l0, rng, 0.2);
    let s = l0.out_shape.clone();
    let mut l1 = Layer::conv2d([s[0], s[1], s[2]], Tensor::zeros(vec![channels[1], s[0], 2, 2]), vec![0.0; channels[1]], Activation::Relu).unwrap();
    random_params(&mut l1, rng, 0.2);
    let f = Layer::flatten(l1.out_shape.clone());
    let n = f.out_shape[0];
    let mut l2 = Layer::dense(Tensor::zeros(vec![hidden, n]), vec![0.0; hidden], Activation::Relu).unwrap();
    random_params(&mut l2, rng, 0.2);
    let mut l3 = Layer::dense(Tensor::zeros(vec![classes, hidden]), vec![0.0; classes], Activation::Identity).unwrap();
    random_params(&mut l3, rng, 0.2);
    Network::new(vec![l0, l1, f, l2, l3], 0).unwrap()
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let mut full = vec![n];
    full.extend_from_slice(shape);
    Tensor::new(full, (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, shape: &[usize], classes: usize) -> Dataset {
    let images = random_batch(rng, n, shape);
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(images, labels, classes, Split::Train).unwrap()
}

/// Central finite differences against the analytic gradient of every
/// unmasked weight and every bias. Returns the worst relative error
/// `|g - fd| / max(|g|, |fd|, floor)` and checks that masked weights get a
/// zero gradient.
pub fn gradient_check(net: &Network, batch: &Tensor, labels: &[usize], h: f64, floor: f64) -> f64 {
    let grads = net.backward(batch, labels).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    let mut compare = |g: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * h);
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
        worst = worst.max(err);
    };
    for (li, layer) in net.layers.iter().enumerate() {
        let Some(p) = layer.params() else { continue };
        let g = grads.layers[li].as_ref().unwrap();
        for i in 0..p.weights.len() {
            if !p.mask[i] {
                assert_eq!(g.weights[i], 0.0, "masked weight {i} of layer {li} has a gradient");
                continue;
            }
            let w0 = p.weights.data()[i];
            probe.layers[li].params_mut().unwrap().weights.data_mut()[i] = w0 + h;
            let plus = naive_loss(&probe, batch, labels);
            probe.layers[li].params_mut().unwrap().weights.data_mut()[i] = w0 - h;
            let minus = naive_loss(&probe, batch, labels);
            probe.layers[li].params_mut().unwrap().weights.data_mut()[i] = w0;
            compare(g.weights[i], plus, minus);
        }
        for i in 0..p.bias.len() {
            let b0 = p.bias[i];
            probe.layers[li].params_mut().unwrap().bias[i] = b0 + h;
            let plus = naive_loss(&probe, batch, labels);
            probe.layers[li].params_mut().unwrap().bias[i] = b0 - h;
            let minus = naive_loss(&probe, batch, labels);
            probe.layers[li].params_mut().unwrap().bias[i] = b0;
            compare(g.bias[i], plus, minus);
        }
    }
    worst
}

/// ON-counts per considered layer obtained by dumping every pre-activation
/// and counting positives.
pub fn dump_on_counts(net: &Network, data: &Dataset) -> Vec<Vec<u64>> {
    let considered = net.considered_layers();
    let mut counts: Vec<Vec<u64>> = considered.iter().map(|&li| vec![0; net.layers[li].out_shape[0]]).collect();
    for i in 0..data.len() {
        let (pre, _) = naive_trace(net, data.images.row(i));
        for (k, &li) in considered.iter().enumerate() {
            let z = &pre[li];
            let positions = z.len() / counts[k].len();
            for (idx, &v) in z.iter().enumerate() {
                if v > 0.0 {
                    counts[k][idx / positions] += 1;
                }
            }
        }
    }
    counts
}

/// Softmax split of `budget` with largest-remainder rounding; layers whose
/// share exceeds their capacity are filled and the rest is split again among
/// the others, recursively.
pub fn oracle_allocate(relevance: &[f64], capacity: &[usize], budget: usize) -> Vec<usize> {
    fn split(pool: &[usize], relevance: &[f64], capacity: &[usize], budget: usize, out: &mut [usize]) {
        if budget == 0 {
            return;
        }
        assert!(!pool.is_empty(), "budget left with nobody to take it");
        let m = pool.iter().map(|&i| relevance[i]).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = pool.iter().map(|&i| (relevance[i] - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let quota: Vec<f64> = e.iter().map(|v| v / z * budget as f64).collect();
        let mut share: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
        let mut left = budget - share.iter().sum::<usize>();
        while left > 0 {
            // one unit at a time to the largest remainder not yet topped up
            let mut best: Option<usize> = None;
            for k in 0..pool.len() {
                if share[k] as f64 > quota[k].floor() {
                    continue;
                }
                let r = quota[k] - quota[k].floor();
                if best.is_none_or(|b| r > quota[b] - quota[b].floor()) {
                    best = Some(k);
                }
            }
            share[best.expect("more leftover units than layers")] += 1;
            left -= 1;
        }
        let over: Vec<usize> = (0..pool.len()).filter(|&k| share[k] > capacity[pool[k]]).collect();
        if over.is_empty() {
            for (k, &i) in pool.iter().enumerate() {
                out[i] = share[k];
            }
            return;
        }
        let mut rest = budget;
        for &k in &over {
            out[pool[k]] = capacity[pool[k]];
            rest -= capacity[pool[k]];
        }
        let next: Vec<usize> = (0..pool.len()).filter(|k| !over.contains(k)).map(|k| pool[k]).collect();
        split(&next, relevance, capacity, rest, out);
    }
    let mut out = vec![0; relevance.len()];
    let pool: Vec<usize> = (0..relevance.len()).collect();
    split(&pool, relevance, capacity, budget, &mut out);
    out
}
