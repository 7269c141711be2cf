//! JSON checkpoint format.
//!
//! ```json
//! {"format_version": 1, "seed": 42, "layers": [
//!   {"kind": "dense", "activation": "relu", "in_shape": [4], "out_shape": [8],
//!    "weight_shape": [8, 4], "weights": [...], "bias": [...], "mask": [1, 0, ...]}
//! ], "metadata": {"key": "value"}}
//! ```
//!
//! Arrays are row-major. `weight_shape`, `weights`, `bias` and `mask` are
//! omitted for flatten layers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Activation, Layer, LayerKind, Network, Params};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub kind: LayerKind,
    pub activation: Activation,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    pub layers: Vec<CheckpointLayer>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl From<&Network> for Checkpoint {
    fn from(net: &Network) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                kind: l.kind,
                activation: l.activation,
                in_shape: l.in_shape.clone(),
                out_shape: l.out_shape.clone(),
                weight_shape: l.params.as_ref().map(|p| p.weights.shape().to_vec()),
                weights: l.params.as_ref().map(|p| p.weights.data().to_vec()),
                bias: l.params.as_ref().map(|p| p.bias.clone()),
                mask: l
                    .params
                    .as_ref()
                    .map(|p| p.mask.iter().map(|&m| m as u8).collect()),
            })
            .collect();
        Checkpoint {
            format_version: FORMAT_VERSION,
            seed: net.rng_seed,
            layers,
            metadata: net.metadata.clone(),
        }
    }
}

impl TryFrom<Checkpoint> for Network {
    type Error = Error;

    fn try_from(ck: Checkpoint) -> Result<Network> {
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormatVersion(ck.format_version));
        }
        let mut layers = Vec::with_capacity(ck.layers.len());
        for (i, cl) in ck.layers.into_iter().enumerate() {
            let invalid = |msg: &str| Error::InvalidNetwork(format!("layer {i}: {msg}"));
            let params = match cl.kind {
                LayerKind::Flatten => {
                    if cl.weight_shape.is_some()
                        || cl.weights.is_some()
                        || cl.bias.is_some()
                        || cl.mask.is_some()
                    {
                        return Err(invalid("flatten layer carries parameters"));
                    }
                    None
                }
                LayerKind::Dense | LayerKind::Conv2d => {
                    let (Some(shape), Some(weights), Some(bias), Some(mask)) =
                        (cl.weight_shape, cl.weights, cl.bias, cl.mask)
                    else {
                        return Err(invalid("weighted layer is missing parameters"));
                    };
                    let expected = shape
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .ok_or_else(|| invalid("weight shape overflows"))?;
                    if expected != weights.len() {
                        return Err(invalid("weight count does not match weight_shape"));
                    }
                    let mask = mask
                        .into_iter()
                        .map(|m| match m {
                            0 => Ok(false),
                            1 => Ok(true),
                            _ => Err(invalid("mask entries must be 0 or 1")),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(Params {
                        weights: Tensor::new(shape, weights)?,
                        bias,
                        mask,
                    })
                }
            };
            let layer = Layer {
                kind: cl.kind,
                activation: cl.activation,
                in_shape: cl.in_shape,
                out_shape: cl.out_shape,
                params,
            };
            layers.push(layer);
        }
        let net = Network {
            layers,
            rng_seed: ck.seed,
            metadata: ck.metadata,
        };
        net.validate()?;
        Ok(net)
    }
}

impl Network {
    pub fn to_checkpoint_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&Checkpoint::from(self))
            .expect("checkpoint serialization is infallible");
        s.push('\n');
        s
    }

    /// Parses and validates a checkpoint document.
    pub fn from_checkpoint_json(text: &str) -> Result<Network> {
        // check the version before the full schema so that future layouts get
        // a precise error
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormatVersion(v.format_version));
        }
        let ck: Checkpoint = serde_json::from_str(text)?;
        Network::try_from(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        Network::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerDef;

    fn sample_net() -> Network {
        let mut net = Network::build(
            &[1, 4, 4],
            &[
                LayerDef::Conv2d {
                    out_channels: 2,
                    kernel: [2, 2],
                },
                LayerDef::Dense { units: 3 },
            ],
            2,
            11,
        )
        .unwrap();
        let p = net.layers[0].params_mut().unwrap();
        p.mask[1] = false;
        p.apply_mask();
        net.metadata.insert("note".into(), "x".into());
        net
    }

    #[test]
    fn round_trip_preserves_network() {
        let net = sample_net();
        let back = Network::from_checkpoint_json(&net.to_checkpoint_json()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample_net().to_checkpoint_json().replacen(
            "\"format_version\": 1",
            "\"format_version\": 7",
            1,
        );
        assert!(matches!(
            Network::from_checkpoint_json(&text),
            Err(Error::UnsupportedFormatVersion(7))
        ));
    }

    #[test]
    fn bad_mask_value_is_rejected() {
        let mut ck = Checkpoint::from(&sample_net());
        ck.layers[0].mask.as_mut().unwrap()[0] = 2;
        assert!(Network::try_from(ck).is_err());
    }

    #[test]
    fn masked_nonzero_weight_is_rejected() {
        let mut ck = Checkpoint::from(&sample_net());
        ck.layers[0].weights.as_mut().unwrap()[1] = 0.5;
        assert!(Network::try_from(ck).is_err());
    }
}
