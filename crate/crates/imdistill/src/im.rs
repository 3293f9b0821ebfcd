//! Domain types for independent-mechanism image generation, the deterministic
//! composition mechanism, and the shape-mask transformations used by the
//! ablation study.
//!
//! The composition rule is `x = (w*m) .* f + (1 - w*m) .* b`, a convex
//! combination of foreground and background selected by a shape mask in
//! [0, 1], optionally attenuated by a transparency weight `w`.

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const DEFAULT_LATENT_DIM: usize = 128;
pub const DEFAULT_TRUNCATION: f64 = 2.0;

pub fn device() -> Device {
    Device::Cpu
}

/// Noise vector driving every generator, drawn from a truncated normal.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f32>,
    pub truncation: f32,
}

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Class index in `[0, num_classes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassLabel(pub u32);

impl ClassLabel {
    pub fn check(&self, num_classes: usize) -> Result<()> {
        if (self.0 as usize) < num_classes {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "class label {} out of range for {num_classes} classes",
                self.0
            )))
        }
    }
}

/// Class-conditioned image batch, pixels in [-1, 1], layout [batch, c, h, w].
#[derive(Debug, Clone)]
pub struct LabeledImageBatch {
    pub pixels: Tensor,
    pub labels: Vec<ClassLabel>,
}

impl LabeledImageBatch {
    pub fn new(pixels: Tensor, labels: Vec<ClassLabel>) -> Result<Self> {
        let dims = pixels.dims();
        if dims.len() != 4 {
            return Err(Error::shape(
                "LabeledImageBatch",
                format!("expected 4 dims, got {dims:?}"),
            ));
        }
        if dims[0] != labels.len() {
            return Err(Error::shape(
                "LabeledImageBatch",
                format!("batch {} but {} labels", dims[0], labels.len()),
            ));
        }
        check_range(&pixels, -1.0, 1.0, "LabeledImageBatch")?;
        Ok(Self { pixels, labels })
    }

    pub fn batch_size(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn hw(&self) -> (usize, usize) {
        let d = self.pixels.dims();
        (d[2], d[3])
    }
}

/// Shape-mask batch, values in [0, 1], layout [batch, 1, h, w].
#[derive(Debug, Clone)]
pub struct MaskBatch {
    pub values: Tensor,
}

impl MaskBatch {
    pub fn new(values: Tensor) -> Result<Self> {
        let dims = values.dims();
        if dims.len() != 4 || dims[1] != 1 {
            return Err(Error::shape(
                "MaskBatch",
                format!("expected [b, 1, h, w], got {dims:?}"),
            ));
        }
        check_range(&values, 0.0, 1.0, "MaskBatch")?;
        Ok(Self { values })
    }

    pub fn batch_size(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn hw(&self) -> (usize, usize) {
        let d = self.values.dims();
        (d[2], d[3])
    }
}

/// The (m, f, b) argument list of the composition mechanism.
#[derive(Debug, Clone)]
pub struct ImTriple {
    pub mask: MaskBatch,
    pub foreground: LabeledImageBatch,
    pub background: LabeledImageBatch,
}

impl ImTriple {
    pub fn new(
        mask: MaskBatch,
        foreground: LabeledImageBatch,
        background: LabeledImageBatch,
    ) -> Result<Self> {
        let b = mask.batch_size();
        let hw = mask.hw();
        if foreground.batch_size() != b || background.batch_size() != b {
            return Err(Error::Composition(format!(
                "batch sizes differ: mask {b}, fg {}, bg {}",
                foreground.batch_size(),
                background.batch_size()
            )));
        }
        if foreground.hw() != hw || background.hw() != hw {
            return Err(Error::Composition(format!(
                "spatial sizes differ: mask {hw:?}, fg {:?}, bg {:?}",
                foreground.hw(),
                background.hw()
            )));
        }
        if foreground.pixels.dims() != background.pixels.dims() {
            return Err(Error::Composition(format!(
                "fg {:?} vs bg {:?}",
                foreground.pixels.dims(),
                background.pixels.dims()
            )));
        }
        Ok(Self {
            mask,
            foreground,
            background,
        })
    }
}

fn check_range(t: &Tensor, lo: f32, hi: f32, what: &str) -> Result<()> {
    let min = t.flatten_all()?.min(0)?.to_scalar::<f32>()?;
    let max = t.flatten_all()?.max(0)?.to_scalar::<f32>()?;
    let eps = 1e-5;
    if min < lo - eps || max > hi + eps {
        return Err(Error::Argument(format!(
            "{what} values out of [{lo}, {hi}]: observed [{min}, {max}]"
        )));
    }
    Ok(())
}

/// Draws `count` latent codes of length `latent_dim` from a standard normal
/// truncated to `[-truncation, truncation]` by rejection, deterministically
/// per seed.
pub fn sample_latent(
    count: usize,
    latent_dim: usize,
    truncation: f64,
    rng_seed: u64,
) -> Result<Vec<LatentCode>> {
    if count == 0 {
        return Err(Error::Argument("count must be >= 1".into()));
    }
    if latent_dim == 0 {
        return Err(Error::Argument("latent_dim must be >= 1".into()));
    }
    if !(truncation > 0.0) {
        return Err(Error::Argument("truncation must be > 0".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Vec::with_capacity(latent_dim);
        for _ in 0..latent_dim {
            loop {
                let x: f64 = rng.sample(StandardNormal);
                if x.abs() <= truncation {
                    values.push(x as f32);
                    break;
                }
            }
        }
        out.push(LatentCode {
            values,
            truncation: truncation as f32,
        });
    }
    Ok(out)
}

/// Stacks latent codes into a [batch, dim] tensor.
pub fn latents_to_tensor(latents: &[LatentCode], dev: &Device) -> Result<Tensor> {
    if latents.is_empty() {
        return Err(Error::Argument("empty latent batch".into()));
    }
    let dim = latents[0].dim();
    if latents.iter().any(|l| l.dim() != dim) {
        return Err(Error::Argument("latent codes of differing dims".into()));
    }
    let flat: Vec<f32> = latents.iter().flat_map(|l| l.values.iter().copied()).collect();
    Ok(Tensor::from_vec(flat, (latents.len(), dim), dev)?)
}

pub fn labels_to_tensor(labels: &[ClassLabel], dev: &Device) -> Result<Tensor> {
    let ids: Vec<u32> = labels.iter().map(|l| l.0).collect();
    Ok(Tensor::from_vec(ids.clone(), ids.len(), dev)?)
}

/// The composition mechanism: `(w*m) .* f + (1 - w*m) .* b`.
///
/// `mask_weight` < 1 lowers the opacity of the shape mask, letting background
/// bleed through the foreground region. Labels are copied from the foreground
/// batch. Differentiable in f, b and m.
pub fn compose(triple: &ImTriple, mask_weight: f64) -> Result<LabeledImageBatch> {
    if !(mask_weight > 0.0 && mask_weight <= 1.0) {
        return Err(Error::Argument(format!(
            "mask_weight must lie in (0, 1], got {mask_weight}"
        )));
    }
    let pixels = compose_pixels(
        &triple.mask.values,
        &triple.foreground.pixels,
        &triple.background.pixels,
        mask_weight,
    )?;
    Ok(LabeledImageBatch {
        pixels,
        labels: triple.foreground.labels.clone(),
    })
}

/// Raw-tensor composition shared by `compose` and the training graph.
pub fn compose_pixels(mask: &Tensor, fg: &Tensor, bg: &Tensor, mask_weight: f64) -> Result<Tensor> {
    if fg.dims() != bg.dims() {
        return Err(Error::Composition(format!(
            "fg {:?} vs bg {:?}",
            fg.dims(),
            bg.dims()
        )));
    }
    let m = (mask * mask_weight)?;
    let ones = Tensor::ones_like(&m)?;
    let inv = (ones - &m)?;
    Ok(m.broadcast_mul(fg)?.add(&inv.broadcast_mul(bg)?)?)
}

/// Adds elementwise Gaussian noise of std `sigma` to the mask and clamps the
/// result back into [0, 1].
pub fn mask_add_gaussian_noise(m: &MaskBatch, sigma: f64, rng_seed: u64) -> Result<MaskBatch> {
    if !(sigma > 0.0) {
        return Err(Error::Argument("sigma must be > 0".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let dims = m.values.dims().to_vec();
    let mut data = m.values.flatten_all()?.to_vec1::<f32>()?;
    for v in data.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = (*v + (n * sigma) as f32).clamp(0.0, 1.0);
    }
    let t = Tensor::from_vec(data, dims, m.values.device())?;
    MaskBatch::new(t)
}

/// Rotates each mask about its center by an angle drawn uniformly from
/// `[-max_degrees, +max_degrees]`, bilinear resampling, zero fill.
pub fn mask_rotate(m: &MaskBatch, max_degrees: f64, rng_seed: u64) -> Result<MaskBatch> {
    if !(max_degrees > 0.0 && max_degrees <= 180.0) {
        return Err(Error::Argument(
            "max_degrees must lie in (0, 180]".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let (b, _, h, w) = m.values.dims4()?;
    let data = m.values.flatten_all()?.to_vec1::<f32>()?;
    let mut out = vec![0f32; data.len()];
    for i in 0..b {
        let deg = rng.gen_range(-max_degrees..=max_degrees);
        let src = &data[i * h * w..(i + 1) * h * w];
        let dst = &mut out[i * h * w..(i + 1) * h * w];
        rotate_plane(src, dst, h, w, deg.to_radians());
    }
    let t = Tensor::from_vec(out, (b, 1, h, w), m.values.device())?;
    MaskBatch::new(t)
}

/// Rotates every mask in the batch by the same fixed angle (degrees).
pub fn mask_rotate_by(m: &MaskBatch, degrees: f64) -> Result<MaskBatch> {
    let (b, _, h, w) = m.values.dims4()?;
    let data = m.values.flatten_all()?.to_vec1::<f32>()?;
    let mut out = vec![0f32; data.len()];
    for i in 0..b {
        let src = &data[i * h * w..(i + 1) * h * w];
        let dst = &mut out[i * h * w..(i + 1) * h * w];
        rotate_plane(src, dst, h, w, degrees.to_radians());
    }
    let t = Tensor::from_vec(out, (b, 1, h, w), m.values.device())?;
    MaskBatch::new(t)
}

// Inverse mapping with bilinear interpolation; out-of-frame samples read 0.
fn rotate_plane(src: &[f32], dst: &mut [f32], h: usize, w: usize, theta: f64) {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    let sample = |y: f64, x: f64| -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let dy = y - y0;
        let dx = x - x0;
        let mut acc = 0.0;
        for (oy, wy) in [(0.0, 1.0 - dy), (1.0, dy)] {
            for (ox, wx) in [(0.0, 1.0 - dx), (1.0, dx)] {
                let yy = y0 + oy;
                let xx = x0 + ox;
                if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                    acc += wy * wx * src[yy as usize * w + xx as usize] as f64;
                }
            }
        }
        acc
    };
    for y in 0..h {
        for x in 0..w {
            let ry = y as f64 - cy;
            let rx = x as f64 - cx;
            // rotate the output grid back into the source frame
            let sy = cy + (rx * sin + ry * cos);
            let sx = cx + (rx * cos - ry * sin);
            dst[y * w + x] = (sample(sy, sx) as f32).clamp(0.0, 1.0);
        }
    }
}

/// Scales the mask by a transparency weight in (0, 1].
pub fn mask_scale_opacity(m: &MaskBatch, weight: f64) -> Result<MaskBatch> {
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(Error::Argument(format!(
            "opacity weight must lie in (0, 1], got {weight}"
        )));
    }
    let t = (&m.values * weight)?;
    MaskBatch::new(t)
}

/// Converts a [-1, 1] value to 8-bit, round half up.
pub fn to_u8_sym(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0 + 0.5).floor() as u8
}

/// Converts a [0, 1] value to 8-bit, round half up.
pub fn to_u8_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn from_u8_sym(v: u8) -> f32 {
    v as f32 / 255.0 * 2.0 - 1.0
}

pub fn from_u8_unit(v: u8) -> f32 {
    v as f32 / 255.0
}
