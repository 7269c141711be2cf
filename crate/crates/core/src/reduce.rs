//! Structural edits driven by zero-entropy findings.
//!
//! An always-OFF neuron outputs exactly zero on the statistics set and can be
//! dropped together with the matching input column (or channel) of the next
//! weighted layer. A layer in which no neuron is mixed behaves linearly on
//! that set: after its dead neurons are gone, a dense layer is folded into its
//! dense successor (`W' = W2 W1`, `b' = W2 b1 + b2`) and a convolutional one
//! has its ReLU replaced by the identity.
//!
//! Equivalence only holds on the data the statistics were gathered from, so
//! [`apply_plan`] re-checks logits on caller-supplied probes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entropy::{EntropyReport, NeuronState};
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerKind, Network, Params};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edit {
    /// Remove neuron `neuron` of layer `layer` and its outgoing connections.
    DropNeuron { layer: usize, neuron: usize },
    /// Zero an always-OFF neuron's weights and bias so that it outputs 0
    /// under any activation; used on the last survivor of a dead layer.
    SilenceNeuron { layer: usize, neuron: usize },
    /// Replace dense layers `layer` and `layer + 1` by their composition.
    FuseDense { layer: usize },
    /// Replace the ReLU of `layer` by the identity.
    LinearizeActivation { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verification {
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
    pub n_probe_inputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    #[default]
    Planned,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionPlan {
    pub edits: Vec<Edit>,
    /// Number of `FuseDense` edits: layers that disappear from the network.
    pub layers_removed_count: usize,
    /// Number of `LinearizeActivation` edits: layers that stay but lose
    /// their non-linearity.
    pub layers_linearized_count: usize,
    /// ReLU layers of the network the plan was made for.
    pub considered_layers: usize,
    #[serde(default)]
    pub verification: Option<Verification>,
    #[serde(default)]
    pub status: PlanStatus,
}

impl FusionPlan {
    fn from_edits(edits: Vec<Edit>, considered_layers: usize) -> Self {
        let count = |f: fn(&Edit) -> bool| edits.iter().filter(|e| f(e)).count();
        Self {
            layers_removed_count: count(|e| matches!(e, Edit::FuseDense { .. })),
            layers_linearized_count: count(|e| matches!(e, Edit::LinearizeActivation { .. })),
            edits,
            considered_layers,
            verification: None,
            status: PlanStatus::Planned,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// True when the plan only drops neurons.
    pub fn is_drop_only(&self) -> bool {
        self.edits.iter().all(|e| matches!(e, Edit::DropNeuron { .. }))
    }

    /// Layers whose non-linearity is gone, fused or linearized.
    pub fn nonlinear_depth_removed(&self) -> usize {
        self.layers_removed_count + self.layers_linearized_count
    }

    /// SHA-256 of the serialized edit list, hex encoded.
    pub fn edits_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.edits).expect("edits serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: FusionPlan = serde_json::from_str(text)?;
        let expected = FusionPlan::from_edits(plan.edits.clone(), plan.considered_layers);
        if expected.layers_removed_count != plan.layers_removed_count
            || expected.layers_linearized_count != plan.layers_linearized_count
        {
            return Err(Error::InvalidEdit(
                "layer counts do not match the edit list".into(),
            ));
        }
        Ok(plan)
    }
}

/// Derives the structural edits implied by `report`, which must have been
/// computed on `net`.
///
/// Layers are visited from last to first and neurons from highest to lowest
/// index, so every edit's indices are valid at the time it is applied.
pub fn plan_reduction(net: &Network, report: &EntropyReport) -> Result<FusionPlan> {
    let considered = net.considered_layers();
    let reported: Vec<usize> = report.layers.iter().map(|l| l.layer_index).collect();
    if reported != considered {
        return Err(Error::StatsMismatch(format!(
            "report covers layers {reported:?}, network has ReLU layers {considered:?}"
        )));
    }
    for l in &report.layers {
        if l.states.len() != net.layers[l.layer_index].neurons() {
            return Err(Error::StatsMismatch(format!(
                "layer {} has {} neurons but the report lists {}",
                l.layer_index,
                net.layers[l.layer_index].neurons(),
                l.states.len()
            )));
        }
    }
    let mut edits = Vec::new();
    for le in report.layers.iter().rev() {
        let li = le.layer_index;
        let off: Vec<usize> = (0..le.states.len())
            .filter(|&i| le.states[i] == NeuronState::AlwaysOff)
            .collect();
        let counts = le.counts();
        if counts.mixed > 0 {
            edits.extend(off.iter().rev().map(|&neuron| Edit::DropNeuron { layer: li, neuron }));
            continue;
        }
        if counts.always_on == 0 {
            // dead layer: keep neuron 0 as a silent placeholder
            edits.extend(off[1..].iter().rev().map(|&neuron| Edit::DropNeuron { layer: li, neuron }));
            edits.push(Edit::SilenceNeuron { layer: li, neuron: 0 });
        } else {
            edits.extend(off.iter().rev().map(|&neuron| Edit::DropNeuron { layer: li, neuron }));
        }
        let fusable = net.layers[li].kind == LayerKind::Dense
            && net.layers.get(li + 1).is_some_and(|n| n.kind == LayerKind::Dense);
        edits.push(if fusable {
            Edit::FuseDense { layer: li }
        } else {
            Edit::LinearizeActivation { layer: li }
        });
    }
    Ok(FusionPlan::from_edits(edits, considered.len()))
}

fn weighted(net: &Network, li: usize) -> Result<&Params> {
    net.layers
        .get(li)
        .and_then(Layer::params)
        .ok_or_else(|| Error::InvalidEdit(format!("layer {li} does not exist or has no weights")))
}

/// Removes neuron `neuron` of layer `li` and the corresponding input of the
/// next weighted layer.
pub fn drop_neuron(net: &Network, li: usize, neuron: usize) -> Result<Network> {
    weighted(net, li)?;
    let neurons = net.layers[li].neurons();
    if neuron >= neurons {
        return Err(Error::InvalidEdit(format!("layer {li} has no neuron {neuron}")));
    }
    let is_output = li + 1 == net.layers.len();
    if neurons == 1 {
        return Err(Error::InvalidEdit(if is_output {
            "cannot remove the last neuron of the output layer".into()
        } else {
            format!("dropping the only neuron of layer {li} would leave it empty")
        }));
    }
    let mut out = net.clone();
    {
        let layer = &mut out.layers[li];
        let p = layer.params.as_mut().unwrap();
        let row = p.weights.len() / neurons;
        let mut shape = p.weights.shape().to_vec();
        shape[0] -= 1;
        let keep = |v: &[f64]| -> Vec<f64> {
            v.chunks_exact(row)
                .enumerate()
                .filter(|(i, _)| *i != neuron)
                .flat_map(|(_, c)| c.iter().copied())
                .collect()
        };
        let weights = keep(p.weights.data());
        p.mask = p
            .mask
            .chunks_exact(row)
            .enumerate()
            .filter(|(i, _)| *i != neuron)
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        p.weights = Tensor::new(shape, weights)?;
        p.bias.remove(neuron);
        layer.out_shape[0] -= 1;
    }
    if is_output {
        return Ok(out);
    }
    // spatial positions carried by the removed channel
    let positions = net.layers[li].positions();
    let mut next = li + 1;
    while out.layers[next].kind == LayerKind::Flatten {
        let f = &mut out.layers[next];
        f.in_shape[0] -= 1;
        f.out_shape = vec![f.in_shape.iter().product()];
        next += 1;
    }
    let layer = &mut out.layers[next];
    let p = layer.params.as_mut().expect("successor of a weighted layer has weights");
    match layer.kind {
        LayerKind::Dense => {
            let inp = layer.in_shape[0];
            let cols = neuron * positions..(neuron + 1) * positions;
            let keep: Vec<usize> = (0..inp).filter(|c| !cols.contains(c)).collect();
            let rows = layer.out_shape[0];
            let mut w = Vec::with_capacity(rows * keep.len());
            let mut m = Vec::with_capacity(rows * keep.len());
            for r in 0..rows {
                for &c in &keep {
                    w.push(p.weights.data()[r * inp + c]);
                    m.push(p.mask[r * inp + c]);
                }
            }
            p.weights = Tensor::new(vec![rows, keep.len()], w)?;
            p.mask = m;
            layer.in_shape = vec![keep.len()];
        }
        LayerKind::Conv2d => {
            let &[oc, ic, kh, kw] = p.weights.shape() else {
                unreachable!("validated conv weights")
            };
            let k = kh * kw;
            let mut w = Vec::with_capacity(oc * (ic - 1) * k);
            let mut m = Vec::with_capacity(oc * (ic - 1) * k);
            for o in 0..oc {
                for c in (0..ic).filter(|&c| c != neuron) {
                    let at = (o * ic + c) * k;
                    w.extend_from_slice(&p.weights.data()[at..at + k]);
                    m.extend_from_slice(&p.mask[at..at + k]);
                }
            }
            p.weights = Tensor::new(vec![oc, ic - 1, kh, kw], w)?;
            p.mask = m;
            layer.in_shape[0] -= 1;
        }
        LayerKind::Flatten => unreachable!(),
    }
    out.validate()?;
    Ok(out)
}

/// Zeroes and masks every incoming weight of `neuron` and sets its bias to 0.
pub fn silence_neuron(net: &Network, li: usize, neuron: usize) -> Result<Network> {
    weighted(net, li)?;
    let neurons = net.layers[li].neurons();
    if neuron >= neurons {
        return Err(Error::InvalidEdit(format!("layer {li} has no neuron {neuron}")));
    }
    let mut out = net.clone();
    let p = out.layers[li].params.as_mut().unwrap();
    let row = p.weights.len() / neurons;
    for i in neuron * row..(neuron + 1) * row {
        p.mask[i] = false;
    }
    p.apply_mask();
    p.bias[neuron] = 0.0;
    Ok(out)
}

/// Replaces dense layers `li` and `li + 1` with one dense layer computing
/// their composition. The result takes the activation of `li + 1` and an
/// all-ones mask.
pub fn fuse_dense(net: &Network, li: usize) -> Result<Network> {
    let (Some(first), Some(second)) = (net.layers.get(li), net.layers.get(li + 1)) else {
        return Err(Error::InvalidEdit(format!("layer {li} has no successor to fuse into")));
    };
    if first.kind != LayerKind::Dense || second.kind != LayerKind::Dense {
        return Err(Error::InvalidEdit(format!(
            "fusion needs two dense layers, found {:?} and {:?}",
            first.kind, second.kind
        )));
    }
    let (p1, p2) = (first.params().unwrap(), second.params().unwrap());
    let (mid, inp) = (first.out_shape[0], first.in_shape[0]);
    let out_n = second.out_shape[0];
    let (w1, w2) = (p1.weights.data(), p2.weights.data());
    let mut w = vec![0.0; out_n * inp];
    let mut b = Vec::with_capacity(out_n);
    for o in 0..out_n {
        let row2 = &w2[o * mid..(o + 1) * mid];
        for (j, wj) in w[o * inp..(o + 1) * inp].iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &a) in row2.iter().enumerate() {
                acc += a * w1[k * inp + j];
            }
            *wj = acc;
        }
        let mut acc = 0.0;
        for (k, &a) in row2.iter().enumerate() {
            acc += a * p1.bias[k];
        }
        b.push(acc + p2.bias[o]);
    }
    let fused = Layer::dense(Tensor::new(vec![out_n, inp], w)?, b, second.activation)?;
    let mut out = net.clone();
    out.layers.splice(li..li + 2, std::iter::once(fused));
    out.validate()?;
    Ok(out)
}

/// Switches layer `li` from ReLU to the identity.
pub fn linearize_activation(net: &Network, li: usize) -> Result<Network> {
    weighted(net, li)?;
    if net.layers[li].activation != Activation::Relu {
        return Err(Error::InvalidEdit(format!("layer {li} is not ReLU-activated")));
    }
    let mut out = net.clone();
    out.layers[li].activation = Activation::Identity;
    Ok(out)
}

pub fn apply_edit(net: &Network, edit: &Edit) -> Result<Network> {
    match *edit {
        Edit::DropNeuron { layer, neuron } => drop_neuron(net, layer, neuron),
        Edit::SilenceNeuron { layer, neuron } => silence_neuron(net, layer, neuron),
        Edit::FuseDense { layer } => fuse_dense(net, layer),
        Edit::LinearizeActivation { layer } => linearize_activation(net, layer),
    }
}

/// Element-wise maximum absolute and relative logit differences over
/// `probes`. The relative difference of a pair is `|a - b| / max(|a|, |b|)`
/// (zero when both are zero).
pub fn verify_equivalence(a: &Network, b: &Network, probes: &Tensor) -> Result<Verification> {
    if a.input_shape() != b.input_shape() || a.num_outputs() != b.num_outputs() {
        return Err(Error::Shape(format!(
            "networks differ in interface: {:?}->{} vs {:?}->{}",
            a.input_shape(),
            a.num_outputs(),
            b.input_shape(),
            b.num_outputs()
        )));
    }
    if probes.rows() == 0 {
        return Err(Error::Shape("no probe inputs".into()));
    }
    let (ya, yb) = (a.forward(probes)?, b.forward(probes)?);
    let mut v = Verification {
        max_abs_diff: 0.0,
        max_rel_diff: 0.0,
        n_probe_inputs: probes.rows(),
    };
    for (&x, &y) in ya.data().iter().zip(yb.data()) {
        let abs = (x - y).abs();
        let scale = x.abs().max(y.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        v.max_abs_diff = v.max_abs_diff.max(abs);
        v.max_rel_diff = v.max_rel_diff.max(rel);
    }
    Ok(v)
}

/// Acceptance bounds for [`apply_plan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub max_rel_diff: f64,
    /// Extra absolute bound for plans that only drop neurons.
    pub max_abs_diff_drop_only: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            max_rel_diff: 1e-6,
            max_abs_diff_drop_only: 1e-12,
        }
    }
}

/// Applies `plan` edit by edit and checks the result against `net` on
/// `probes`. On success the returned plan is marked accepted; otherwise the
/// error carries the plan marked rejected, with its verification filled in.
pub fn apply_plan(
    net: &Network,
    plan: &FusionPlan,
    probes: &Tensor,
    tol: Tolerance,
) -> Result<(Network, FusionPlan)> {
    let mut edited = net.clone();
    for (k, edit) in plan.edits.iter().enumerate() {
        edited = apply_edit(&edited, edit)
            .map_err(|e| Error::InvalidEdit(format!("stale plan at edit {k} ({edit:?}): {e}")))?;
    }
    let v = verify_equivalence(net, &edited, probes)?;
    let mut plan = plan.clone();
    plan.verification = Some(v);
    let ok = v.max_rel_diff <= tol.max_rel_diff
        && (!plan.is_drop_only() || v.max_abs_diff <= tol.max_abs_diff_drop_only);
    if !ok {
        plan.status = PlanStatus::Rejected;
        return Err(Error::EquivalenceRejected(Box::new(plan)));
    }
    plan.status = PlanStatus::Accepted;
    Ok((edited, plan))
}
