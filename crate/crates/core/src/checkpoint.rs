//! Self-describing JSON checkpoints.
//!
//! The archive carries a format tag and version, the full network spec,
//! neuron and delay configuration, every weight matrix and base-delay
//! vector, and the training epoch (the shift scale depends on it).

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::delay::DelayConfig;
use crate::error::{CadadError, Result};
use crate::network::{LayerParams, Network, NetworkSpec};
use crate::spike::NeuronConfig;

pub const FORMAT: &str = "cadad-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major `[n_out x n_in]`.
    weights: Vec<f64>,
    d_base: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    epoch: u32,
    seed: u64,
    spec: NetworkSpec,
    neuron: NeuronConfig,
    delay: DelayConfig,
    layers: Vec<LayerRecord>,
}

/// A network together with the epoch it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epoch: u32,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let net = &self.network;
        let archive = Archive {
            format: FORMAT.into(),
            version: VERSION,
            epoch: self.epoch,
            seed: self.seed,
            spec: net.spec.clone(),
            neuron: net.neuron,
            delay: net.delay,
            layers: net
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    d_base: l.d_base.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&archive)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Archive = serde_json::from_str(text)?;
        if a.format != FORMAT {
            return Err(CadadError::Config(format!("not a checkpoint (format '{}')", a.format)));
        }
        if a.version != VERSION {
            return Err(CadadError::Config(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                a.version
            )));
        }
        let layers = a
            .layers
            .into_iter()
            .map(|r| {
                let weights = Array2::from_shape_vec((r.rows, r.cols), r.weights)
                    .map_err(|e| CadadError::Config(format!("bad weight block: {e}")))?;
                Ok(LayerParams {
                    weights,
                    d_base: r.d_base,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let network = Network {
            spec: a.spec,
            neuron: a.neuron,
            delay: a.delay,
            layers,
        };
        network.spec.validate()?;
        for (k, (l, s)) in network.layers.iter().zip(&network.spec.layers).enumerate() {
            if l.weights.dim() != (s.n_out, s.n_in) || l.d_base.len() != s.n_in {
                return Err(CadadError::Config(format!("layer {k} does not match the stored spec")));
            }
        }
        if network.layers.len() != network.spec.layers.len() {
            return Err(CadadError::Config("layer count does not match the stored spec".into()));
        }
        Ok(Checkpoint {
            network,
            epoch: a.epoch,
            seed: a.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CadadError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CadadError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayMode;
    use crate::network::Readout;

    fn ckpt() -> Checkpoint {
        let spec = NetworkSpec::feedforward(5, &[7], 3, DelayMode::Dynamic, 0.25, Readout::MeanMembrane);
        let network = Network::new(spec, NeuronConfig::default(), DelayConfig::default(), 1.0, 17).unwrap();
        Checkpoint {
            network,
            epoch: 12,
            seed: 99,
        }
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let c = ckpt();
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_wrong_version_and_format() {
        let text = ckpt().to_json().unwrap();
        let v2 = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Checkpoint::from_json(&v2), Err(CadadError::Config(_))));
        let other = text.replace(FORMAT, "something-else");
        assert!(Checkpoint::from_json(&other).is_err());
        assert!(Checkpoint::from_json("{").is_err());
    }

    #[test]
    fn disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("net.json");
        let c = ckpt();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing.json")),
            Err(CadadError::Io { .. })
        ));
    }
}
