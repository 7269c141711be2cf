use crate::data::Dataset;
use crate::entropy::ActivationStats;
use crate::error::{Error, Result};
use crate::tensor::{shape_len, Tensor};

use super::{Activation, Layer, LayerKind, Network};

/// Pre-activations `z` of one layer for a batch of flattened inputs.
pub(crate) fn pre_activation(layer: &Layer, x: &[f64], batch: usize) -> Vec<f64> {
    match layer.kind {
        LayerKind::Flatten => x.to_vec(),
        LayerKind::Dense => {
            let p = layer.params.as_ref().expect("dense params");
            let (out, inp) = (layer.out_shape[0], layer.in_shape[0]);
            let w = p.weights.data();
            let mut z = Vec::with_capacity(batch * out);
            for xs in x.chunks_exact(inp).take(batch) {
                for (row, &b) in w.chunks_exact(inp).zip(&p.bias) {
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(xs) {
                        acc += wi * xi;
                    }
                    z.push(acc + b);
                }
            }
            z
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
            let mut z = Vec::with_capacity(batch * oc * oh * ow);
            for xs in x.chunks_exact(in_len).take(batch) {
                for o in 0..oc {
                    let kernel = &wt[o * ic * kh * kw..(o + 1) * ic * kh * kw];
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = 0.0;
                            for c in 0..ic {
                                for ki in 0..kh {
                                    let krow = &kernel[(c * kh + ki) * kw..(c * kh + ki + 1) * kw];
                                    let start = (c * h + y + ki) * w + xx;
                                    for (wk, xk) in krow.iter().zip(&xs[start..start + kw]) {
                                        acc += wk * xk;
                                    }
                                }
                            }
                            z.push(acc + p.bias[o]);
                        }
                    }
                }
            }
            z
        }
    }
}

pub(crate) fn activate(activation: Activation, z: &[f64]) -> Vec<f64> {
    match activation {
        Activation::Identity => z.to_vec(),
        Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Per-layer inputs and pre-activations retained for backpropagation.
pub(crate) struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

impl Network {
    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() < 2 || shape[1..] != *self.input_shape() {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} is incompatible with network input {:?} (expected [batch, {}])",
                self.input_shape(),
                self.input_shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        Ok(shape[0])
    }

    fn run<F>(&self, batch: &Tensor, mut on_layer: F) -> Result<Tensor>
    where
        F: FnMut(usize, &Layer, &[f64], &[f64], usize),
    {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = pre_activation(layer, &x, n);
            on_layer(i, layer, &x, &z, n);
            x = activate(layer.activation, &z);
        }
        Tensor::new(vec![n, self.num_outputs()], x)
    }

    /// Logits for a `[batch, ..input_shape]` tensor.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.run(batch, |_, _, _, _, _| {})
    }

    /// As [`forward`](Self::forward), additionally counting ON states
    /// (`z > 0`) of every ReLU layer into `stats`.
    pub fn forward_with_states(
        &self,
        batch: &Tensor,
        stats: &mut ActivationStats,
    ) -> Result<Tensor> {
        stats.check_matches(self)?;
        let n = self.check_batch(batch)?;
        let out = self.run(batch, |i, layer, _, z, n| {
            if layer.is_considered() {
                stats.observe(i, layer, z, n);
            }
        })?;
        stats.add_samples(n as u64);
        Ok(out)
    }

    pub(crate) fn forward_trace(&self, batch: &Tensor) -> Result<Trace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let logits = self.run(batch, |_, _, x, z, _| {
            inputs.push(x.to_vec());
            pre_activations.push(z.to_vec());
        })?;
        Ok(Trace {
            inputs,
            pre_activations,
            logits: logits.into_data(),
        })
    }

    /// Arg-max class per sample; ties resolve to the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Top-1 accuracy over a dataset, evaluated in chunks of 256 samples.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(256) {
            let preds = self.predict(&data.images.select_rows(chunk))?;
            correct += preds
                .iter()
                .zip(chunk)
                .filter(|(p, &i)| **p == data.labels[i])
                .count();
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Number of input elements per sample.
    pub fn input_len(&self) -> usize {
        shape_len(self.input_shape())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
