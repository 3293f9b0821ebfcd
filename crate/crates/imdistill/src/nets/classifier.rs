use std::path::Path;

use candle_core::{Device, Tensor};

use super::layers::{leaky_relu, Conv2d, Linear};
use super::params::ParamStore;
use super::ClassifierSpec;
use crate::error::{Error, Result};

/// Small strided conv net over a flattened spatial head, used as the
/// invariant (real-vs-generated) classifier. The head keeps the spatial
/// layout (no global pooling) so position- and orientation-level cues stay
/// visible to the decision.
pub struct Classifier {
    pub spec: ClassifierSpec,
    store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Linear,
}

fn strided_out(s: usize) -> usize {
    (s - 1) / 2 + 1 // k=3, stride=2, pad=1
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, seed: u64, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let store = ParamStore::new(seed, dev.clone());
        let c = spec.base_channels;
        let sp = strided_out(strided_out(strided_out(spec.input_size)));
        let conv1 = Conv2d::new(&store, "conv1", spec.input_channels, c, 3, 2, 1, 1)?;
        let conv2 = Conv2d::new(&store, "conv2", c, 2 * c, 3, 2, 1, 1)?;
        let conv3 = Conv2d::new(&store, "conv3", 2 * c, 4 * c, 3, 2, 1, 1)?;
        let head = Linear::new(&store, "head", 4 * c * sp * sp, spec.num_outputs)?;
        Ok(Self {
            spec,
            store,
            conv1,
            conv2,
            conv3,
            head,
        })
    }

    /// x: [b, c, s, s] -> logits [b, num_outputs].
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.spec.input_channels {
            return Err(Error::shape("Classifier::forward", format!("input {dims:?}")));
        }
        let mut h = leaky_relu(&self.conv1.forward(x)?, 0.1)?;
        h = leaky_relu(&self.conv2.forward(&h)?, 0.1)?;
        h = leaky_relu(&self.conv3.forward(&h)?, 0.1)?;
        let flat = h.flatten_from(1)?;
        self.head.forward(&flat)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let spec = toml::Value::try_from(&self.spec)
            .map_err(|e| Error::Checkpoint(format!("spec encode: {e}")))?;
        self.store.save(dir, "classifier", spec)
    }

    pub fn load(dir: &Path, dev: &Device) -> Result<Self> {
        let manifest = super::params::read_manifest(dir)?;
        if manifest.kind != "classifier" {
            return Err(Error::Checkpoint(format!(
                "expected a classifier checkpoint, found `{}`",
                manifest.kind
            )));
        }
        let spec: ClassifierSpec = manifest
            .spec
            .try_into()
            .map_err(|e| Error::Checkpoint(format!("spec decode: {e}")))?;
        let model = Self::new(spec, 0, dev)?;
        model.store.load(dir)?;
        Ok(model)
    }
}
