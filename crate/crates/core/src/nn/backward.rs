use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Activation, LayerKind, Network};

/// Gradient of the loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Aligned with `Network::layers`; `None` for parameterless layers.
    pub layers: Vec<Option<ParamGrad>>,
    /// Mean softmax cross-entropy of the batch.
    pub loss: f64,
    /// Correct top-1 predictions in the batch, from the same forward pass.
    pub correct: usize,
}

/// Mean softmax cross-entropy over rows of `logits` and its gradient.
pub(crate) fn softmax_cross_entropy(
    logits: &[f64],
    classes: usize,
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (s, (row, &y)) in logits.chunks_exact(classes).zip(labels).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[y];
        for (k, &v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            let target = if k == y { 1.0 } else { 0.0 };
            grad[s * classes + k] = (p - target) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

impl Network {
    /// Mean cross-entropy loss and its gradients for a labelled batch.
    /// Gradient entries of masked weights are exactly zero.
    pub fn backward(&self, batch: &Tensor, labels: &[usize]) -> Result<Gradients> {
        let classes = self.num_outputs();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.rows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let trace = self.forward_trace(batch)?;
        let n = labels.len();
        let correct = trace
            .logits
            .chunks_exact(classes)
            .zip(labels)
            .filter(|(row, &y)| super::forward::argmax(row) == y)
            .count();
        let (loss, mut upstream) = softmax_cross_entropy(&trace.logits, classes, labels);

        let mut grads: Vec<Option<ParamGrad>> = vec![None; self.layers.len()];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre_activations[li];
            let x = &trace.inputs[li];
            // dL/dz
            let dz: Vec<f64> = match layer.activation {
                Activation::Identity => upstream,
                Activation::Relu => upstream
                    .iter()
                    .zip(z)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            };
            let need_dx = li > 0;
            let (pg, dx) = match layer.kind {
                LayerKind::Flatten => (None, dz),
                LayerKind::Dense => {
                    let p = layer.params.as_ref().expect("dense params");
                    let (out, inp) = (layer.out_shape[0], layer.in_shape[0]);
                    let w = p.weights.data();
                    let mut dw = vec![0.0; out * inp];
                    let mut db = vec![0.0; out];
                    let mut dx = if need_dx { vec![0.0; n * inp] } else { Vec::new() };
                    for s in 0..n {
                        let xs = &x[s * inp..(s + 1) * inp];
                        for o in 0..out {
                            let g = dz[s * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            db[o] += g;
                            let dw_row = &mut dw[o * inp..(o + 1) * inp];
                            for (d, xi) in dw_row.iter_mut().zip(xs) {
                                *d += g * xi;
                            }
                            if need_dx {
                                let w_row = &w[o * inp..(o + 1) * inp];
                                for (d, wi) in dx[s * inp..(s + 1) * inp].iter_mut().zip(w_row) {
                                    *d += g * wi;
                                }
                            }
                        }
                    }
                    (Some(ParamGrad { weights: dw, bias: db }), dx)
                }
                LayerKind::Conv2d => {
                    let p = layer.params.as_ref().expect("conv params");
                    let &[oc, ic, kh, kw] = p.weights.shape() else {
                        unreachable!("validated conv weights")
                    };
                    let (h, w) = (layer.in_shape[1], layer.in_shape[2]);
                    let (oh, ow) = (layer.out_shape[1], layer.out_shape[2]);
                    let wt = p.weights.data();
                    let in_len = ic * h * w;
                    let out_len = oc * oh * ow;
                    let mut dw = vec![0.0; wt.len()];
                    let mut db = vec![0.0; oc];
                    let mut dx = if need_dx { vec![0.0; n * in_len] } else { Vec::new() };
                    for s in 0..n {
                        let xs = &x[s * in_len..(s + 1) * in_len];
                        let gs = &dz[s * out_len..(s + 1) * out_len];
                        for o in 0..oc {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let g = gs[(o * oh + y) * ow + xx];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    db[o] += g;
                                    for c in 0..ic {
                                        for ki in 0..kh {
                                            let k0 = ((o * ic + c) * kh + ki) * kw;
                                            let x0 = (c * h + y + ki) * w + xx;
                                            for kj in 0..kw {
                                                dw[k0 + kj] += g * xs[x0 + kj];
                                                if need_dx {
                                                    dx[s * in_len + x0 + kj] += g * wt[k0 + kj];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    (Some(ParamGrad { weights: dw, bias: db }), dx)
                }
            };
            if let (Some(mut pg), Some(p)) = (pg, layer.params.as_ref()) {
                for (g, &m) in pg.weights.iter_mut().zip(&p.mask) {
                    if !m {
                        *g = 0.0;
                    }
                }
                grads[li] = Some(pg);
            }
            upstream = dx;
        }
        Ok(Gradients {
            layers: grads,
            loss,
            correct,
        })
    }

    /// Mean cross-entropy without gradients.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(batch)?;
        let classes = self.num_outputs();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }
        Ok(softmax_cross_entropy(logits.data(), classes, labels).0)
    }
}
