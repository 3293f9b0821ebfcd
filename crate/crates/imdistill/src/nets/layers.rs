//! Building-block layers shared by the generator, discriminator and
//! classifier: plain/spectral-normalized convolutions, linear layers,
//! class embeddings and class-conditional batch normalization.

use candle_core::{Tensor, Var};

use super::params::{Init, ParamStore};
use crate::error::Result;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const WEIGHT_STD: f64 = 0.02;
/// Power iterations run at construction to seed the spectral-norm estimates.
const SN_WARMUP_ITERS: usize = 30;

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub struct Linear {
    w: Var,
    b: Var,
}

impl Linear {
    pub fn new(store: &ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            w: store.param(&format!("{name}.w"), &[out_dim, in_dim], Init::Normal(WEIGHT_STD))?,
            b: store.param(&format!("{name}.b"), &[out_dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w.as_tensor().t()?)?.broadcast_add(self.b.as_tensor())?)
    }
}

pub struct Embedding {
    table: Var,
}

impl Embedding {
    pub fn new(store: &ParamStore, name: &str, num_classes: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: store.param(&format!("{name}.table"), &[num_classes, dim], Init::Normal(WEIGHT_STD))?,
        })
    }

    /// labels: u32 tensor [batch] -> [batch, dim]
    pub fn forward(&self, labels: &Tensor) -> Result<Tensor> {
        Ok(self.table.as_tensor().index_select(labels, 0)?)
    }
}

pub struct Conv2d {
    w: Var,
    b: Var,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.param(
                &format!("{name}.w"),
                &[out_ch, in_ch / groups, kernel, kernel],
                Init::Normal(WEIGHT_STD),
            )?,
            b: store.param(&format!("{name}.b"), &[out_ch], Init::Const(0.0))?,
            stride,
            padding,
            groups,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.w.as_tensor(), self.padding, self.stride, 1, self.groups)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Convolution whose weight is divided by its largest singular value,
/// estimated by persisted power-iteration vectors (one iteration per
/// training-mode forward).
pub struct SpectralConv2d {
    w: Var,
    b: Var,
    u: Var,
    v: Var,
    stride: usize,
    padding: usize,
}

impl SpectralConv2d {
    pub fn new(
        store: &ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let layer = Self {
            w: store.param(
                &format!("{name}.w"),
                &[out_ch, in_ch, kernel, kernel],
                Init::Normal(WEIGHT_STD),
            )?,
            b: store.param(&format!("{name}.b"), &[out_ch], Init::Const(0.0))?,
            u: store.buffer(&format!("{name}.sn_u"), &[out_ch], Init::UnitVector)?,
            v: store.buffer(
                &format!("{name}.sn_v"),
                &[in_ch * kernel * kernel],
                Init::UnitVector,
            )?,
            stride,
            padding,
        };
        // warm-start the singular-vector estimates so early sigma values are
        // already close; training then maintains them one step per forward
        for _ in 0..SN_WARMUP_ITERS {
            layer.power_iterate()?;
        }
        Ok(layer)
    }

    /// One power-iteration update of the persisted (u, v) estimates.
    pub fn power_iterate(&self) -> Result<()> {
        let w = self.w.as_tensor().detach();
        let (out_ch, rest) = (w.dims()[0], w.elem_count() / w.dims()[0]);
        let mat = w.reshape((out_ch, rest))?;
        let u = self.u.as_tensor().reshape((out_ch, 1))?;
        let v = normalize_vec(&mat.t()?.matmul(&u)?.reshape(rest)?)?;
        let u_new = normalize_vec(&mat.matmul(&v.reshape((rest, 1))?)?.reshape(out_ch)?)?;
        self.v.set(&v)?;
        self.u.set(&u_new)?;
        Ok(())
    }

    /// Spectral-norm estimate with gradient flowing through the raw weight.
    fn sigma(&self) -> Result<Tensor> {
        let (out_ch, rest) = (self.w.dims()[0], self.w.elem_count() / self.w.dims()[0]);
        let mat = self.w.as_tensor().reshape((out_ch, rest))?;
        let u = self.u.as_tensor().detach().reshape((1, out_ch))?;
        let v = self.v.as_tensor().detach().reshape((rest, 1))?;
        Ok(u.matmul(&mat.matmul(&v)?)?.reshape(())?)
    }

    pub fn normalized_weight(&self) -> Result<Tensor> {
        let sigma = self.sigma()?;
        Ok(self.w.as_tensor().broadcast_div(&sigma.reshape((1, 1, 1, 1))?)?)
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if train {
            self.power_iterate()?;
        }
        let w = self.normalized_weight()?;
        let y = x.conv2d(&w, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1, 1))?)?)
    }
}

/// Spectral-normalized linear layer for the discriminator head.
pub struct SpectralLinear {
    w: Var,
    b: Var,
    u: Var,
    v: Var,
}

impl SpectralLinear {
    pub fn new(store: &ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let layer = Self {
            w: store.param(&format!("{name}.w"), &[out_dim, in_dim], Init::Normal(WEIGHT_STD))?,
            b: store.param(&format!("{name}.b"), &[out_dim], Init::Const(0.0))?,
            u: store.buffer(&format!("{name}.sn_u"), &[out_dim], Init::UnitVector)?,
            v: store.buffer(&format!("{name}.sn_v"), &[in_dim], Init::UnitVector)?,
        };
        for _ in 0..SN_WARMUP_ITERS {
            layer.power_iterate()?;
        }
        Ok(layer)
    }

    pub fn power_iterate(&self) -> Result<()> {
        let mat = self.w.as_tensor().detach();
        let (out_dim, in_dim) = (mat.dims()[0], mat.dims()[1]);
        let u = self.u.as_tensor().reshape((out_dim, 1))?;
        let v = normalize_vec(&mat.t()?.matmul(&u)?.reshape(in_dim)?)?;
        let u_new = normalize_vec(&mat.matmul(&v.reshape((in_dim, 1))?)?.reshape(out_dim)?)?;
        self.v.set(&v)?;
        self.u.set(&u_new)?;
        Ok(())
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        if train {
            self.power_iterate()?;
        }
        let (out_dim, in_dim) = (self.w.dims()[0], self.w.dims()[1]);
        let u = self.u.as_tensor().detach().reshape((1, out_dim))?;
        let v = self.v.as_tensor().detach().reshape((in_dim, 1))?;
        let sigma = u.matmul(&self.w.as_tensor().matmul(&v)?)?.reshape(())?;
        let w = self.w.as_tensor().broadcast_div(&sigma.reshape((1, 1))?)?;
        Ok(x.matmul(&w.t()?)?.broadcast_add(self.b.as_tensor())?)
    }
}

fn normalize_vec(v: &Tensor) -> Result<Tensor> {
    let norm = v.sqr()?.sum_all()?.sqrt()?;
    Ok(v.broadcast_div(&norm.broadcast_add(&Tensor::new(1e-12f32, v.device())?)?)?)
}

/// Batch normalization whose per-channel scale and shift are produced from a
/// class embedding, with running statistics for inference.
pub struct ClassCondBatchNorm {
    gain_proj: Linear,
    bias_proj: Linear,
    running_mean: Var,
    running_var: Var,
    channels: usize,
}

impl ClassCondBatchNorm {
    pub fn new(store: &ParamStore, name: &str, embed_dim: usize, channels: usize) -> Result<Self> {
        Ok(Self {
            gain_proj: Linear::new(store, &format!("{name}.gain"), embed_dim, channels)?,
            bias_proj: Linear::new(store, &format!("{name}.bias"), embed_dim, channels)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], Init::Const(0.0))?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], Init::Const(1.0))?,
            channels,
        })
    }

    /// x: [b, c, h, w]; class_embed: [b, e]
    pub fn forward(&self, x: &Tensor, class_embed: &Tensor, train: bool) -> Result<Tensor> {
        let c = self.channels;
        let (mean, var) = if train {
            let m = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?; // [1,c,1,1]
            let centered = x.broadcast_sub(&m)?;
            let v = centered.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            // update running stats outside the graph
            let m_flat = m.detach().reshape(c)?;
            let v_flat = v.detach().reshape(c)?;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (m_flat * BN_MOMENTUM)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))?
                + (v_flat * BN_MOMENTUM)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (m, v)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let xhat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        let b = x.dims()[0];
        let gain = (self.gain_proj.forward(class_embed)? + 1.0)?.reshape((b, c, 1, 1))?;
        let bias = self.bias_proj.forward(class_embed)?.reshape((b, c, 1, 1))?;
        Ok(xhat.broadcast_mul(&gain)?.broadcast_add(&bias)?)
    }
}

/// Depthwise 3x3 followed by pointwise 1x1 convolution.
pub struct SepConv2d {
    depthwise: Conv2d,
    pointwise: Conv2d,
}

impl SepConv2d {
    pub fn new(store: &ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            depthwise: Conv2d::new(store, &format!("{name}.dw"), in_ch, in_ch, 3, 1, 1, in_ch)?,
            pointwise: Conv2d::new(store, &format!("{name}.pw"), in_ch, out_ch, 1, 1, 0, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise.forward(&self.depthwise.forward(x)?)
    }
}
