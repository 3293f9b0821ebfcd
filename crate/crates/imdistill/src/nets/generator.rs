use std::path::Path;

use candle_core::{Device, Tensor};

use super::layers::{ClassCondBatchNorm, Conv2d, Embedding, Linear, SepConv2d};
use super::params::ParamStore;
use super::{GeneratorSpec, CLASS_EMBED_DIM};
use crate::error::{Error, Result};

struct GenBlock {
    ccbn1: ClassCondBatchNorm,
    sep1: SepConv2d,
    ccbn2: ClassCondBatchNorm,
    sep2: SepConv2d,
    skip: Conv2d,
}

impl GenBlock {
    fn new(store: &ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self {
            ccbn1: ClassCondBatchNorm::new(store, &format!("{name}.ccbn1"), CLASS_EMBED_DIM, cin)?,
            sep1: SepConv2d::new(store, &format!("{name}.sep1"), cin, cout)?,
            ccbn2: ClassCondBatchNorm::new(store, &format!("{name}.ccbn2"), CLASS_EMBED_DIM, cout)?,
            sep2: SepConv2d::new(store, &format!("{name}.sep2"), cout, cout)?,
            skip: Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, 0, 1)?,
        })
    }

    fn forward(&self, x: &Tensor, embed: &Tensor, train: bool) -> Result<Tensor> {
        let (h, w) = (x.dims()[2], x.dims()[3]);
        let up = |t: &Tensor| -> Result<Tensor> { Ok(t.upsample_nearest2d(h * 2, w * 2)?) };
        let mut y = self.ccbn1.forward(x, embed, train)?.relu()?;
        y = up(&y)?;
        y = self.sep1.forward(&y)?;
        y = self.ccbn2.forward(&y, embed, train)?.relu()?;
        y = self.sep2.forward(&y)?;
        let skip = self.skip.forward(&up(x)?)?;
        Ok((y + skip)?)
    }
}

/// Compact class-conditional generator. Maps (latent batch, label batch) to
/// images in [-1, 1] (RGB mode) or masks in [0, 1] (mask mode).
pub struct Generator {
    pub spec: GeneratorSpec,
    store: ParamStore,
    embed: Embedding,
    fc: Linear,
    blocks: Vec<GenBlock>,
    out_norm: ClassCondBatchNorm,
    out_conv: Conv2d,
}

impl Generator {
    pub fn new(spec: GeneratorSpec, seed: u64, dev: &Device) -> Result<Self> {
        spec.validate()?;
        let store = ParamStore::new(seed, dev.clone());
        let grid = spec.initial_grid();
        let c0 = spec.channels_at(0);
        let embed = Embedding::new(&store, "embed", spec.num_classes, CLASS_EMBED_DIM)?;
        let fc = Linear::new(&store, "fc", spec.latent_dim, c0 * grid * grid)?;
        let mut blocks = Vec::new();
        for i in 0..spec.num_residual_blocks {
            blocks.push(GenBlock::new(
                &store,
                &format!("blocks.{i}"),
                spec.channels_at(i),
                spec.channels_at(i + 1),
            )?);
        }
        let out_norm =
            ClassCondBatchNorm::new(&store, "out_norm", CLASS_EMBED_DIM, spec.base_channels)?;
        let out_conv = Conv2d::new(
            &store,
            "out_conv",
            spec.base_channels,
            spec.output_channels,
            3,
            1,
            1,
            1,
        )?;
        Ok(Self {
            spec,
            store,
            embed,
            fc,
            blocks,
            out_norm,
            out_conv,
        })
    }

    /// z: [b, latent_dim] f32; labels: [b] u32. Returns [b, oc, s, s].
    pub fn forward(&self, z: &Tensor, labels: &Tensor, train: bool) -> Result<Tensor> {
        let b = z.dims()[0];
        if z.dims() != [b, self.spec.latent_dim] {
            return Err(Error::shape(
                "Generator::forward",
                format!("latent batch {:?}", z.dims()),
            ));
        }
        let e = self.embed.forward(labels)?;
        let grid = self.spec.initial_grid();
        let c0 = self.spec.channels_at(0);
        let mut x = self.fc.forward(z)?.reshape((b, c0, grid, grid))?;
        for block in &self.blocks {
            x = block.forward(&x, &e, train)?;
        }
        x = self.out_norm.forward(&x, &e, train)?.relu()?;
        x = self.out_conv.forward(&x)?;
        if self.spec.mask_mode() {
            Ok(candle_nn::ops::sigmoid(&x)?)
        } else {
            Ok(x.tanh()?)
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let spec = toml::Value::try_from(&self.spec)
            .map_err(|e| Error::Checkpoint(format!("spec encode: {e}")))?;
        self.store.save(dir, "generator", spec)
    }

    pub fn load(dir: &Path, dev: &Device) -> Result<Self> {
        let manifest = super::params::read_manifest(dir)?;
        if manifest.kind != "generator" {
            return Err(Error::Checkpoint(format!(
                "expected a generator checkpoint, found `{}`",
                manifest.kind
            )));
        }
        let spec: GeneratorSpec = manifest
            .spec
            .try_into()
            .map_err(|e| Error::Checkpoint(format!("spec decode: {e}")))?;
        let model = Self::new(spec, 0, dev)?;
        model.store.load(dir)?;
        Ok(model)
    }
}
