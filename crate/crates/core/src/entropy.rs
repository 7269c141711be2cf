//! Activation-state statistics and binary state entropy.
//!
//! A ReLU neuron is ON at a given sample and spatial position when its
//! pre-activation is strictly positive and OFF otherwise. Over a dataset the
//! ON-frequency of neuron `i` in layer `l` is
//! `p_on = on_count / (samples * positions_per_sample)`, and its entropy is
//! the binary entropy of that frequency in bits. Classification into
//! always-ON / always-OFF / mixed uses the integer counts directly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};

/// ON-counts of one ReLU layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    /// Index into `Network::layers`.
    pub layer_index: usize,
    /// Spatial positions per sample: 1 for dense layers, `oh * ow` for conv.
    pub positions_per_sample: u64,
    pub on_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationStats {
    pub layers: Vec<LayerStats>,
    pub samples_seen: u64,
}

impl ActivationStats {
    /// Empty accumulator for every considered (weighted ReLU) layer of `net`.
    pub fn new(net: &Network) -> Self {
        let layers = net
            .considered_layers()
            .into_iter()
            .map(|i| {
                let l = &net.layers[i];
                LayerStats {
                    layer_index: i,
                    positions_per_sample: l.positions() as u64,
                    on_counts: vec![0; l.neurons()],
                }
            })
            .collect();
        Self {
            layers,
            samples_seen: 0,
        }
    }

    fn geometry(&self) -> Vec<(usize, u64, usize)> {
        self.layers
            .iter()
            .map(|l| (l.layer_index, l.positions_per_sample, l.on_counts.len()))
            .collect()
    }

    pub fn check_matches(&self, net: &Network) -> Result<()> {
        if self.geometry() != ActivationStats::new(net).geometry() {
            return Err(Error::StatsMismatch(
                "ReLU layer geometry differs from the accumulator".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn observe(&mut self, layer_index: usize, layer: &Layer, z: &[f64], batch: usize) {
        let Some(stats) = self.layers.iter_mut().find(|l| l.layer_index == layer_index) else {
            return;
        };
        let m = layer.positions();
        let per_sample = stats.on_counts.len() * m;
        for s in 0..batch {
            let zs = &z[s * per_sample..(s + 1) * per_sample];
            for (count, neuron) in stats.on_counts.iter_mut().zip(zs.chunks_exact(m)) {
                *count += neuron.iter().filter(|&&v| v > 0.0).count() as u64;
            }
        }
    }

    pub(crate) fn add_samples(&mut self, n: u64) {
        self.samples_seen += n;
    }

    /// Adds another shard's counts; both must describe the same layers.
    pub fn merge(&mut self, other: &ActivationStats) -> Result<()> {
        if self.geometry() != other.geometry() {
            return Err(Error::StatsMismatch("cannot merge stats of different layer geometry".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.on_counts.iter_mut().zip(&b.on_counts) {
                *x += y;
            }
        }
        self.samples_seen += other.samples_seen;
        Ok(())
    }

    fn layer(&self, layer_index: usize) -> Result<&LayerStats> {
        self.layers
            .iter()
            .find(|l| l.layer_index == layer_index)
            .ok_or_else(|| Error::StatsMismatch(format!("no statistics for layer {layer_index}")))
    }

    /// Observations per neuron: `samples_seen * positions_per_sample`.
    pub fn total(&self, layer_index: usize) -> Result<u64> {
        Ok(self.samples_seen * self.layer(layer_index)?.positions_per_sample)
    }

    /// ON-frequency of `neuron` in network layer `layer_index`.
    pub fn p_on(&self, layer_index: usize, neuron: usize) -> Result<f64> {
        if self.samples_seen == 0 {
            return Err(Error::NoData);
        }
        let l = self.layer(layer_index)?;
        let count = *l
            .on_counts
            .get(neuron)
            .ok_or_else(|| Error::StatsMismatch(format!("layer {layer_index} has no neuron {neuron}")))?;
        Ok(count as f64 / (self.samples_seen * l.positions_per_sample) as f64)
    }
}

/// Runs `data` through `net` in batches and accumulates ON-counts.
pub fn collect_stats(net: &Network, data: &Dataset, batch_size: usize) -> Result<ActivationStats> {
    let mut stats = ActivationStats::new(net);
    for (batch, _) in crate::data::batches(data, batch_size, 0, 0, false) {
        net.forward_with_states(&batch, &mut stats)?;
    }
    Ok(stats)
}

/// [`collect_stats`] over `shards` contiguous slices on separate threads,
/// merged afterwards. The result is identical to the single-threaded one.
pub fn collect_stats_sharded(
    net: &Network,
    data: &Dataset,
    batch_size: usize,
    shards: usize,
) -> Result<ActivationStats> {
    let shards = shards.clamp(1, data.len().max(1));
    let per = data.len().div_ceil(shards);
    let parts: Vec<Dataset> = (0..shards)
        .map(|s| {
            let idx: Vec<usize> = (s * per..((s + 1) * per).min(data.len())).collect();
            data.subset(&idx)
        })
        .collect();
    let results: Vec<Result<ActivationStats>> = std::thread::scope(|scope| {
        let handles: Vec<_> = parts
            .iter()
            .map(|part| scope.spawn(move || collect_stats(net, part, batch_size)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stats worker panicked"))
            .collect()
    });
    let mut total = ActivationStats::new(net);
    for r in results {
        total.merge(&r?)?;
    }
    Ok(total)
}

/// Binary entropy in bits, with `0 * log 0 = 0`.
pub fn neuron_entropy(p_on: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_on) {
        return Err(Error::ProbabilityOutOfRange(p_on));
    }
    if p_on == 0.0 || p_on == 1.0 {
        return Ok(0.0);
    }
    let p_off = 1.0 - p_on;
    let h = -(p_on * p_on.ln() + p_off * p_off.ln()) / std::f64::consts::LN_2;
    Ok(h.clamp(0.0, 1.0))
}

/// Arithmetic mean of a layer's neuron entropies.
pub fn layer_mean_entropy(entropies: &[f64]) -> Result<f64> {
    if entropies.is_empty() {
        return Err(Error::EmptyLayer);
    }
    Ok(entropies.iter().sum::<f64>() / entropies.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronState {
    AlwaysOff,
    AlwaysOn,
    Mixed,
}

impl NeuronState {
    pub fn as_str(self) -> &'static str {
        match self {
            NeuronState::AlwaysOff => "always_off",
            NeuronState::AlwaysOn => "always_on",
            NeuronState::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StateCounts {
    pub always_on: usize,
    pub always_off: usize,
    pub mixed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntropy {
    pub layer_index: usize,
    pub p_on: Vec<f64>,
    pub entropy: Vec<f64>,
    pub states: Vec<NeuronState>,
    pub mean_entropy: f64,
}

impl LayerEntropy {
    pub fn counts(&self) -> StateCounts {
        let mut c = StateCounts::default();
        for s in &self.states {
            match s {
                NeuronState::AlwaysOn => c.always_on += 1,
                NeuronState::AlwaysOff => c.always_off += 1,
                NeuronState::Mixed => c.mixed += 1,
            }
        }
        c
    }

    pub fn is_zero_entropy(&self) -> bool {
        self.mean_entropy == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub layers: Vec<LayerEntropy>,
}

/// Per-neuron ON-frequency, entropy and state for every tracked layer.
pub fn classify_states(stats: &ActivationStats) -> Result<EntropyReport> {
    if stats.samples_seen == 0 {
        return Err(Error::NoData);
    }
    let layers = stats
        .layers
        .iter()
        .map(|l| {
            let total = stats.samples_seen * l.positions_per_sample;
            let mut p_on = Vec::with_capacity(l.on_counts.len());
            let mut entropy = Vec::with_capacity(l.on_counts.len());
            let mut states = Vec::with_capacity(l.on_counts.len());
            for &count in &l.on_counts {
                let state = if count == 0 {
                    NeuronState::AlwaysOff
                } else if count == total {
                    NeuronState::AlwaysOn
                } else {
                    NeuronState::Mixed
                };
                let p = count as f64 / total as f64;
                let h = match state {
                    NeuronState::Mixed => neuron_entropy(p)?,
                    _ => 0.0,
                };
                p_on.push(p);
                entropy.push(h);
                states.push(state);
            }
            Ok(LayerEntropy {
                layer_index: l.layer_index,
                mean_entropy: layer_mean_entropy(&entropy)?,
                p_on,
                entropy,
                states,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EntropyReport { layers })
}

impl EntropyReport {
    pub fn layer(&self, layer_index: usize) -> Option<&LayerEntropy> {
        self.layers.iter().find(|l| l.layer_index == layer_index)
    }

    /// Network indices of layers whose mean entropy is exactly zero.
    pub fn zero_entropy_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.is_zero_entropy())
            .map(|l| l.layer_index)
            .collect()
    }

    /// `layer_index,neuron_index,p_on,entropy_bits,state`
    pub fn neurons_csv(&self) -> String {
        let mut out = String::from("layer_index,neuron_index,p_on,entropy_bits,state\n");
        for l in &self.layers {
            for (i, ((p, h), s)) in l.p_on.iter().zip(&l.entropy).zip(&l.states).enumerate() {
                let _ = writeln!(out, "{},{i},{p},{h},{}", l.layer_index, s.as_str());
            }
        }
        out
    }

    /// `layer_index,n_neurons,n_always_on,n_always_off,n_mixed,mean_entropy`
    pub fn layers_csv(&self) -> String {
        let mut out =
            String::from("layer_index,n_neurons,n_always_on,n_always_off,n_mixed,mean_entropy\n");
        for l in &self.layers {
            let c = l.counts();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                l.layer_index,
                l.states.len(),
                c.always_on,
                c.always_off,
                c.mixed,
                l.mean_entropy
            );
        }
        out
    }
}
