use std::path::Path;

use candle_core::{Device, Tensor, Var};

use super::layers::{leaky_relu, SpectralConv2d, SpectralLinear};
use super::params::{Init, ParamStore};
use super::DiscriminatorSpec;
use crate::error::{Error, Result};
use crate::losses::FeatureStack;

const LEAKY_SLOPE: f64 = 0.1;

/// DCGAN-style stack of spectral-normalized strided convolutions with class
/// conditioning via projection. Returns raw scores plus the per-layer
/// activations consumed by the feature-distillation loss.
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    store: ParamStore,
    convs: Vec<SpectralConv2d>,
    head: SpectralLinear,
    projection: Var,
}

impl Discriminator {
    pub fn new(spec: DiscriminatorSpec, seed: u64, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let store = ParamStore::new(seed, dev.clone());
        let mut convs = Vec::new();
        let mut cin = spec.input_channels;
        for i in 0..spec.num_layers {
            let cout = spec.channels_after(i);
            convs.push(SpectralConv2d::new(
                &store,
                &format!("convs.{i}"),
                cin,
                cout,
                3,
                2,
                1,
            )?);
            cin = cout;
        }
        let head = SpectralLinear::new(&store, "head", cin, 1)?;
        let projection = store.param(
            "projection.table",
            &[spec.num_classes, cin],
            Init::Normal(0.02),
        )?;
        Ok(Self {
            spec,
            store,
            convs,
            head,
            projection,
        })
    }

    /// x: [b, c, s, s]; labels: [b] u32. Returns (scores [b], features).
    pub fn forward(&self, x: &Tensor, labels: &Tensor, train: bool) -> Result<(Tensor, FeatureStack)> {
        let dims = x.dims();
        if dims.len() != 4 || dims[1] != self.spec.input_channels || dims[2] != self.spec.input_size
        {
            return Err(Error::shape(
                "Discriminator::forward",
                format!("input {:?}", dims),
            ));
        }
        let mut h = x.clone();
        let mut feats = Vec::new();
        for conv in &self.convs {
            h = leaky_relu(&conv.forward(&h, train)?, LEAKY_SLOPE)?;
            feats.push(h.clone());
        }
        let b = dims[0];
        let pooled = h.sum(3)?.sum(2)?; // [b, c_last]
        let linear = self.head.forward(&pooled, train)?.reshape(b)?;
        let embed = self.projection.as_tensor().index_select(labels, 0)?; // [b, c_last]
        let proj = embed.mul(&pooled)?.sum(1)?;
        let scores = (linear + proj)?;
        Ok((scores, FeatureStack::new(feats)?))
    }

    /// Extra power-iteration steps on every spectral-normalized weight.
    pub fn power_iterate(&self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            for conv in &self.convs {
                conv.power_iterate()?;
            }
            self.head.power_iterate()?;
        }
        Ok(())
    }

    pub fn normalized_conv_weights(&self) -> Result<Vec<Tensor>> {
        self.convs.iter().map(|c| c.normalized_weight()).collect()
    }

    /// The class-projection embedding table.
    pub fn projection_table(&self) -> &Var {
        &self.projection
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let spec = toml::Value::try_from(&self.spec)
            .map_err(|e| Error::Checkpoint(format!("spec encode: {e}")))?;
        self.store.save(dir, "discriminator", spec)
    }

    pub fn load(dir: &Path, dev: &Device) -> Result<Self> {
        let manifest = super::params::read_manifest(dir)?;
        if manifest.kind != "discriminator" {
            return Err(Error::Checkpoint(format!(
                "expected a discriminator checkpoint, found `{}`",
                manifest.kind
            )));
        }
        let spec: DiscriminatorSpec = manifest
            .spec
            .try_into()
            .map_err(|e| Error::Checkpoint(format!("spec decode: {e}")))?;
        let model = Self::new(spec, 0, dev)?;
        model.store.load(dir)?;
        Ok(model)
    }
}
