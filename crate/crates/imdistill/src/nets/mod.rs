//! Model builders: compact class-conditional generator (ResNet blocks with
//! depthwise-separable convolutions and class-conditional BatchNorm),
//! spectral-normalized projection discriminator, and a small classifier.
//!
//! Parameter counts are computable from a spec alone, without building the
//! model; `param_count` and the instantiated stores must agree exactly.

mod classifier;
mod discriminator;
mod generator;
pub mod layers;
pub mod params;
#[cfg(test)]
mod tests;

pub use classifier::Classifier;
pub use discriminator::Discriminator;
pub use generator::Generator;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of the shared class-embedding used for conditional normalization
/// and discriminator projection.
pub const CLASS_EMBED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub num_residual_blocks: usize,
    pub output_size: usize,
    /// 3 for RGB output, 1 for mask mode.
    pub output_channels: usize,
}

impl GeneratorSpec {
    /// Desk-scale profile for 28x28 runs.
    pub fn mnist28(output_channels: usize) -> Self {
        Self {
            latent_dim: 128,
            num_classes: 10,
            base_channels: 16,
            num_residual_blocks: 2,
            output_size: 28,
            output_channels,
        }
    }

    /// Full-scale profile bracketing the compact-generator parameter budget.
    pub fn imagenet256() -> Self {
        Self {
            latent_dim: 128,
            num_classes: 1000,
            base_channels: 20,
            num_residual_blocks: 6,
            output_size: 256,
            output_channels: 3,
        }
    }

    pub fn mask_mode(&self) -> bool {
        self.output_channels == 1
    }

    /// Initial spatial grid: 7 for the 28-pixel profile, 4 otherwise.
    pub fn initial_grid(&self) -> usize {
        if self.output_size % 7 == 0 {
            7
        } else {
            4
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.num_classes == 0 || self.base_channels == 0 {
            return Err(Error::Build("generator spec has zero-sized field".into()));
        }
        if !matches!(self.output_channels, 1 | 3) {
            return Err(Error::Build(format!(
                "output_channels must be 1 or 3, got {}",
                self.output_channels
            )));
        }
        let grid = self.initial_grid();
        let expected = grid << self.num_residual_blocks;
        if expected != self.output_size {
            return Err(Error::Build(format!(
                "output_size {} is not the {}x{} grid doubled {} times (would give {})",
                self.output_size, grid, grid, self.num_residual_blocks, expected
            )));
        }
        Ok(())
    }

    /// Channel width entering block `i` (i in 0..=blocks; the last entry is
    /// the width before the output convolution).
    pub fn channels_at(&self, i: usize) -> usize {
        self.base_channels << (self.num_residual_blocks - i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub num_classes: usize,
    pub base_channels: usize,
    pub num_layers: usize,
    pub input_size: usize,
    /// 3 for RGB inputs, 1 for mask inputs.
    pub input_channels: usize,
}

impl DiscriminatorSpec {
    pub fn mnist28(input_channels: usize) -> Self {
        Self {
            num_classes: 10,
            base_channels: 32,
            num_layers: 3,
            input_size: 28,
            input_channels,
        }
    }

    pub fn imagenet256() -> Self {
        Self {
            num_classes: 1000,
            base_channels: 64,
            num_layers: 6,
            input_size: 256,
            input_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.base_channels == 0 || self.num_layers == 0 {
            return Err(Error::Build("discriminator spec has zero-sized field".into()));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Build(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.final_spatial() < 4 {
            return Err(Error::Build(format!(
                "{} strided layers reduce {} below 4 pixels",
                self.num_layers, self.input_size
            )));
        }
        Ok(())
    }

    /// Channel width after layer `i` (doubling, capped at 8x base).
    pub fn channels_after(&self, i: usize) -> usize {
        self.base_channels * (1usize << i.min(3))
    }

    fn spatial_after(&self, layers: usize) -> usize {
        let mut s = self.input_size;
        for _ in 0..layers {
            s = s.div_ceil(2); // k3 s2 p1
        }
        s
    }

    pub fn final_spatial(&self) -> usize {
        self.spatial_after(self.num_layers)
    }

    /// Shape [channels, h, w] of each feature-stack layer for one sample.
    pub fn feature_shapes(&self) -> Vec<(usize, usize, usize)> {
        (0..self.num_layers)
            .map(|i| {
                let s = self.spatial_after(i + 1);
                (self.channels_after(i), s, s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub input_size: usize,
    pub input_channels: usize,
    pub num_outputs: usize,
    pub base_channels: usize,
}

impl ClassifierSpec {
    pub fn mnist28(num_outputs: usize) -> Self {
        Self {
            input_size: 28,
            input_channels: 3,
            num_outputs,
            base_channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_outputs < 2 {
            return Err(Error::Build("classifier needs at least 2 outputs".into()));
        }
        if self.base_channels == 0 || self.input_size < 8 {
            return Err(Error::Build("degenerate classifier spec".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum NetSpec {
    Generator(GeneratorSpec),
    Discriminator(DiscriminatorSpec),
}

/// Exact trainable-parameter count, computed from the spec alone.
pub fn param_count(spec: &NetSpec) -> usize {
    match spec {
        NetSpec::Generator(s) => generator_param_count(s),
        NetSpec::Discriminator(s) => discriminator_param_count(s),
    }
}

pub fn generator_param_count(spec: &GeneratorSpec) -> usize {
    let e = CLASS_EMBED_DIM;
    let grid = spec.initial_grid();
    let c0 = spec.channels_at(0);
    let mut n = spec.num_classes * e; // class embedding
    n += spec.latent_dim * c0 * grid * grid + c0 * grid * grid; // fc
    let ccbn = |c: usize| 2 * (e * c + c);
    let sep = |cin: usize, cout: usize| (cin * 9 + cin) + (cin * cout + cout);
    for i in 0..spec.num_residual_blocks {
        let cin = spec.channels_at(i);
        let cout = spec.channels_at(i + 1);
        n += ccbn(cin);
        n += sep(cin, cout);
        n += ccbn(cout);
        n += sep(cout, cout);
        n += cin * cout + cout; // 1x1 skip
    }
    let last = spec.base_channels;
    n += ccbn(last);
    n += last * spec.output_channels * 9 + spec.output_channels; // output conv
    n
}

pub fn discriminator_param_count(spec: &DiscriminatorSpec) -> usize {
    let mut n = 0;
    let mut cin = spec.input_channels;
    for i in 0..spec.num_layers {
        let cout = spec.channels_after(i);
        n += cin * cout * 9 + cout;
        cin = cout;
    }
    n += cin + 1; // spectral linear head
    n += spec.num_classes * cin; // projection embedding
    n
}

pub fn classifier_param_count(spec: &ClassifierSpec) -> usize {
    let c = spec.base_channels;
    let mut n = spec.input_channels * c * 9 + c;
    n += c * 2 * c * 9 + 2 * c;
    n += 2 * c * 4 * c * 9 + 4 * c;
    let sp = (0..3).fold(spec.input_size, |s, _| (s - 1) / 2 + 1);
    n += 4 * c * sp * sp * spec.num_outputs + spec.num_outputs;
    n
}
