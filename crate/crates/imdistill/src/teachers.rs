//! Black-box teacher boundary: anything that answers (z, y) -> image.
//!
//! Three kinds are supported. `Procedural` teachers render deterministic
//! synthetic images (per-class glyph masks, color fields, two-tone
//! gradients) so the whole pipeline runs without external checkpoints.
//! `Replay` teachers serve a pre-generated dataset of (latent, label, image)
//! triples with exact-key lookup. `Checkpoint` teachers run a stored
//! generator.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im::{
    from_u8_sym, from_u8_unit, labels_to_tensor, latents_to_tensor, sample_latent, to_u8_sym,
    to_u8_unit, ClassLabel, LabeledImageBatch, LatentCode, MaskBatch,
};
use crate::nets::Generator;

/// The three independent mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImKind {
    Shape,
    Texture,
    Background,
}

impl ImKind {
    pub fn is_mask(&self) -> bool {
        matches!(self, ImKind::Shape)
    }

    pub fn channels(&self) -> usize {
        if self.is_mask() {
            1
        } else {
            3
        }
    }
}

impl fmt::Display for ImKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ImKind::Shape => "shape",
            ImKind::Texture => "texture",
            ImKind::Background => "background",
        };
        f.write_str(s)
    }
}

/// Teacher output batch: masks for the shape mechanism, RGB otherwise.
#[derive(Debug, Clone)]
pub enum TeacherImages {
    Mask(MaskBatch),
    Rgb(LabeledImageBatch),
}

impl TeacherImages {
    pub fn pixels(&self) -> &Tensor {
        match self {
            TeacherImages::Mask(m) => &m.values,
            TeacherImages::Rgb(b) => &b.pixels,
        }
    }
}

pub enum TeacherHandle {
    Procedural {
        im: ImKind,
        num_classes: usize,
        image_size: usize,
        seed: u64,
    },
    Replay(ReplayTeacher),
    Checkpoint {
        generator: Generator,
        im: ImKind,
    },
}

impl TeacherHandle {
    pub fn procedural(im: ImKind, num_classes: usize, image_size: usize, seed: u64) -> Self {
        TeacherHandle::Procedural {
            im,
            num_classes,
            image_size,
            seed,
        }
    }

    pub fn replay_from_dir(dir: &Path, dev: &Device) -> Result<Self> {
        Ok(TeacherHandle::Replay(ReplayTeacher::from_dir(dir, dev)?))
    }

    pub fn checkpoint(dir: &Path, im: ImKind, dev: &Device) -> Result<Self> {
        let generator = Generator::load(dir, dev)?;
        if generator.spec.mask_mode() != im.is_mask() {
            return Err(Error::Checkpoint(format!(
                "checkpoint output channels do not match the {im} mechanism"
            )));
        }
        Ok(TeacherHandle::Checkpoint { generator, im })
    }

    pub fn im(&self) -> ImKind {
        match self {
            TeacherHandle::Procedural { im, .. } => *im,
            TeacherHandle::Replay(r) => r.im,
            TeacherHandle::Checkpoint { im, .. } => *im,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            TeacherHandle::Procedural { num_classes, .. } => *num_classes,
            TeacherHandle::Replay(r) => r.num_classes,
            TeacherHandle::Checkpoint { generator, .. } => generator.spec.num_classes,
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            TeacherHandle::Procedural { image_size, .. } => *image_size,
            TeacherHandle::Replay(r) => r.image_size,
            TeacherHandle::Checkpoint { generator, .. } => generator.spec.output_size,
        }
    }
}

/// Answers a batched (z, y) query. Deterministic for every kind.
pub fn teacher_query(
    handle: &TeacherHandle,
    z: &[LatentCode],
    y: &[ClassLabel],
    dev: &Device,
) -> Result<TeacherImages> {
    if z.len() != y.len() {
        return Err(Error::Argument(format!(
            "{} latents but {} labels",
            z.len(),
            y.len()
        )));
    }
    if z.is_empty() {
        return Err(Error::Argument("empty teacher query".into()));
    }
    let num_classes = handle.num_classes();
    for label in y {
        label.check(num_classes)?;
    }
    match handle {
        TeacherHandle::Procedural {
            im,
            image_size,
            seed,
            ..
        } => {
            let s = *image_size;
            let mut planes: Vec<f32> = Vec::with_capacity(z.len() * im.channels() * s * s);
            for (code, label) in z.iter().zip(y.iter()) {
                planes.extend(render_procedural(*im, label.0, &code.values, code.truncation, s, *seed));
            }
            let t = Tensor::from_vec(planes, (z.len(), im.channels(), s, s), dev)?;
            wrap_images(*im, t, y)
        }
        TeacherHandle::Replay(r) => r.query(z, y, dev),
        TeacherHandle::Checkpoint { generator, im } => {
            let zt = latents_to_tensor(z, dev)?;
            let yt = labels_to_tensor(y, dev)?;
            let pixels = generator.forward(&zt, &yt, false)?;
            wrap_images(*im, pixels, y)
        }
    }
}

fn wrap_images(im: ImKind, pixels: Tensor, labels: &[ClassLabel]) -> Result<TeacherImages> {
    if im.is_mask() {
        Ok(TeacherImages::Mask(MaskBatch::new(pixels)?))
    } else {
        Ok(TeacherImages::Rgb(LabeledImageBatch::new(
            pixels,
            labels.to_vec(),
        )?))
    }
}

// ---------------------------------------------------------------------------
// Procedural rendering
// ---------------------------------------------------------------------------

// 5x7 digit bitmaps, upsampled and warped at render time.
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

fn glyph_sample(class: u32, u: f64, v: f64) -> f64 {
    // bilinear lookup into the 5x7 bitmap; (u, v) in glyph pixel coords
    let rows = &GLYPHS[class as usize % 10];
    let at = |r: i64, c: i64| -> f64 {
        if !(0..7).contains(&r) || !(0..5).contains(&c) {
            return 0.0;
        }
        if (rows[r as usize] >> (4 - c)) & 1 == 1 {
            1.0
        } else {
            0.0
        }
    };
    let r0 = v.floor();
    let c0 = u.floor();
    let dr = v - r0;
    let dc = u - c0;
    at(r0 as i64, c0 as i64) * (1.0 - dr) * (1.0 - dc)
        + at(r0 as i64 + 1, c0 as i64) * dr * (1.0 - dc)
        + at(r0 as i64, c0 as i64 + 1) * (1.0 - dr) * dc
        + at(r0 as i64 + 1, c0 as i64 + 1) * dr * dc
}

fn norm_coord(z: &[f32], i: usize, truncation: f32) -> f64 {
    let v = z.get(i).copied().unwrap_or(0.0) / truncation.max(1e-6);
    v.clamp(-1.0, 1.0) as f64
}

/// Renders a warped per-class digit glyph as a [0, 1] mask plane.
pub(crate) fn render_glyph_mask(
    class: u32,
    z: &[f32],
    truncation: f32,
    size: usize,
) -> Vec<f32> {
    // warp amplitudes keep any two draws of one class at mask IoU well
    // above 0.5 despite the thin glyph strokes
    let dx = norm_coord(z, 0, truncation) * 0.02 * size as f64;
    let dy = norm_coord(z, 1, truncation) * 0.02 * size as f64;
    let scale = 1.0 + norm_coord(z, 2, truncation) * 0.05;
    let rot = norm_coord(z, 3, truncation) * 4f64.to_radians();
    let shear = norm_coord(z, 4, truncation) * 0.03;
    let (sin, cos) = rot.sin_cos();
    let cx = (size as f64 - 1.0) / 2.0;
    let cy = (size as f64 - 1.0) / 2.0;
    // glyph box occupies ~72% of the frame
    let box_w = 0.72 * size as f64;
    let box_h = 0.72 * size as f64;
    let mut out = vec![0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            // output pixel -> centered -> inverse warp -> glyph coords
            let px = x as f64 - cx - dx;
            let py = y as f64 - cy - dy;
            let rx = (px * cos + py * sin) / scale;
            let ry = (-px * sin + py * cos) / scale;
            let rx = rx - shear * ry;
            let u = (rx / box_w + 0.5) * 5.0 - 0.5;
            let v = (ry / box_h + 0.5) * 7.0 - 0.5;
            out[y * size + x] = glyph_sample(class, u, v).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Per-class foreground palette in [0, 1], pairwise well separated. The
/// colors sit in the same bright register as the colorization foregrounds so
/// teacher composites land near the colored-digit distribution — the shape
/// study needs the mask transform, not a global color shift, to be the
/// dominant real-vs-generated cue.
pub const TEXTURE_PALETTE: [[f32; 3]; 10] = [
    [1.00, 0.20, 0.20],
    [0.20, 1.00, 0.20],
    [0.30, 0.45, 1.00],
    [1.00, 0.95, 0.25],
    [1.00, 0.35, 0.95],
    [0.25, 1.00, 0.95],
    [1.00, 0.60, 0.20],
    [0.65, 0.35, 1.00],
    [0.55, 1.00, 0.45],
    [1.00, 0.70, 0.75],
];

/// Per-class background gradient endpoints in [0, 1]. Each pair brackets one
/// dark-register colorization color from below and above, keeping the
/// two-tone gradient subtle for the same in-distribution reason as above.
pub const BACKGROUND_PALETTE: [([f32; 3], [f32; 3]); 10] = [
    ([0.04, 0.04, 0.24], [0.06, 0.06, 0.26]),
    ([0.24, 0.04, 0.04], [0.26, 0.06, 0.06]),
    ([0.04, 0.21, 0.04], [0.06, 0.23, 0.06]),
    ([0.21, 0.17, 0.01], [0.23, 0.19, 0.03]),
    ([0.19, 0.04, 0.21], [0.21, 0.06, 0.23]),
    ([0.01, 0.19, 0.21], [0.03, 0.21, 0.23]),
    ([0.24, 0.11, 0.01], [0.26, 0.13, 0.03]),
    ([0.09, 0.09, 0.09], [0.11, 0.11, 0.11]),
    ([0.01, 0.11, 0.29], [0.03, 0.13, 0.31]),
    ([0.24, 0.01, 0.14], [0.26, 0.03, 0.16]),
];

fn render_procedural(
    im: ImKind,
    class: u32,
    z: &[f32],
    truncation: f32,
    size: usize,
    seed: u64,
) -> Vec<f32> {
    match im {
        ImKind::Shape => render_glyph_mask(class, z, truncation, size),
        ImKind::Texture => render_texture(class, z, truncation, size, seed),
        ImKind::Background => render_background(class, z, truncation, size, seed),
    }
}

// Per-class base color plus z-driven low-frequency sinusoidal variation,
// channels planar, values in [-1, 1].
fn render_texture(class: u32, z: &[f32], truncation: f32, size: usize, seed: u64) -> Vec<f32> {
    let base = TEXTURE_PALETTE[class as usize % 10];
    let phase0 = (seed % 97) as f64 * 0.1;
    let fx = 1.0 + norm_coord(z, 0, truncation) * 0.5;
    let fy = 1.0 + norm_coord(z, 1, truncation) * 0.5;
    let p1 = norm_coord(z, 2, truncation) * std::f64::consts::PI + phase0;
    let p2 = norm_coord(z, 3, truncation) * std::f64::consts::PI;
    let amp = 0.01;
    let mut out = vec![0f32; 3 * size * size];
    for c in 0..3 {
        let base_sym = base[c] * 2.0 - 1.0; // [0,1] -> [-1,1]
        let chan_shift = c as f64 * 0.7;
        for y in 0..size {
            for x in 0..size {
                let xf = x as f64 / size as f64;
                let yf = y as f64 / size as f64;
                let wave = (2.0 * std::f64::consts::PI * (fx * xf) + p1 + chan_shift).sin()
                    + (2.0 * std::f64::consts::PI * (fy * yf) + p2).sin();
                let v = base_sym as f64 + amp * wave;
                out[c * size * size + y * size + x] = v.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    out
}

// Per-class two-tone gradient with z-driven direction and offset, [-1, 1].
fn render_background(class: u32, z: &[f32], truncation: f32, size: usize, seed: u64) -> Vec<f32> {
    let (c1, c2) = BACKGROUND_PALETTE[class as usize % 10];
    let angle = norm_coord(z, 0, truncation) * std::f64::consts::FRAC_PI_2
        + (seed % 13) as f64 * 0.05;
    let offset = norm_coord(z, 1, truncation) * 0.3;
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let xf = x as f64 / size as f64 - 0.5;
            let yf = y as f64 / size as f64 - 0.5;
            let t = ((xf * cos + yf * sin) + 0.5 + offset).clamp(0.0, 1.0);
            for c in 0..3 {
                let v = c1[c] as f64 * (1.0 - t) + c2[c] as f64 * t;
                out[c * size * size + y * size + x] = (v * 2.0 - 1.0) as f32;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Teacher datasets
// ---------------------------------------------------------------------------

pub const TEACHER_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherDatasetManifest {
    pub format_version: u32,
    pub im: ImKind,
    pub num_classes: usize,
    pub per_class: usize,
    pub count: usize,
    pub latent_dim: usize,
    pub truncation: f64,
    pub seed: u64,
    pub image_size: usize,
}

/// A pre-generated dataset of (latent, label, image file) records.
pub struct TeacherDataset {
    pub dir: PathBuf,
    pub manifest: TeacherDatasetManifest,
    pub latents: Vec<LatentCode>,
    pub labels: Vec<ClassLabel>,
}

impl TeacherDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest");
        if !mpath.exists() {
            return Err(Error::Dataset(format!(
                "no manifest in {}: dataset missing or incomplete",
                dir.display()
            )));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: TeacherDatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Dataset(format!("manifest parse: {e}")))?;
        let latents = read_latents(
            &dir.join("latents.bin"),
            manifest.count,
            manifest.latent_dim,
            manifest.truncation as f32,
        )?;
        let labels = read_labels(&dir.join("labels.csv"), manifest.count)?;
        for (i, path) in (0..manifest.count).map(|i| (i, image_path(dir, i))) {
            if !path.exists() {
                return Err(Error::Dataset(format!(
                    "missing image file for record {i}: {}",
                    path.display()
                )));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            latents,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Decodes the stored image for one record as a pixel plane vector.
    pub fn load_image(&self, index: usize) -> Result<Vec<f32>> {
        load_teacher_image(&self.dir, index, self.manifest.im, self.manifest.image_size)
    }

    /// Loads a batch of records as ((z, y), pixels) tensors.
    pub fn load_batch(&self, indices: &[usize], dev: &Device) -> Result<(Tensor, Tensor, Tensor)> {
        if indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::Argument("record index out of range".into()));
        }
        let z: Vec<LatentCode> = indices.iter().map(|&i| self.latents[i].clone()).collect();
        let y: Vec<ClassLabel> = indices.iter().map(|&i| self.labels[i]).collect();
        let c = self.manifest.im.channels();
        let s = self.manifest.image_size;
        let mut pixels = Vec::with_capacity(indices.len() * c * s * s);
        for &i in indices {
            pixels.extend(self.load_image(i)?);
        }
        let zt = latents_to_tensor(&z, dev)?;
        let yt = labels_to_tensor(&y, dev)?;
        let pt = Tensor::from_vec(pixels, (indices.len(), c, s, s), dev)?;
        Ok((zt, yt, pt))
    }
}

fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{index:07}.png"))
}

fn load_teacher_image(dir: &Path, index: usize, im: ImKind, size: usize) -> Result<Vec<f32>> {
    let path = image_path(dir, index);
    let img = image::open(&path)?;
    if im.is_mask() {
        let gray = img.into_luma8();
        if gray.dimensions() != (size as u32, size as u32) {
            return Err(Error::Dataset(format!("bad image size in {}", path.display())));
        }
        Ok(gray.pixels().map(|p| from_u8_unit(p.0[0])).collect())
    } else {
        let rgb = img.into_rgb8();
        if rgb.dimensions() != (size as u32, size as u32) {
            return Err(Error::Dataset(format!("bad image size in {}", path.display())));
        }
        // interleaved u8 -> planar f32
        let mut out = vec![0f32; 3 * size * size];
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                out[c * size * size + i] = from_u8_sym(p.0[c]);
            }
        }
        Ok(out)
    }
}

fn write_teacher_image(dir: &Path, index: usize, im: ImKind, size: usize, plane: &[f32]) -> Result<()> {
    let path = image_path(dir, index);
    if im.is_mask() {
        let buf: Vec<u8> = plane.iter().map(|&v| to_u8_unit(v)).collect();
        let img = image::GrayImage::from_vec(size as u32, size as u32, buf)
            .ok_or_else(|| Error::Dataset("mask buffer size mismatch".into()))?;
        img.save(&path)?;
    } else {
        let n = size * size;
        let mut buf = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                buf[i * 3 + c] = to_u8_sym(plane[c * n + i]);
            }
        }
        let img = image::RgbImage::from_vec(size as u32, size as u32, buf)
            .ok_or_else(|| Error::Dataset("rgb buffer size mismatch".into()))?;
        img.save(&path)?;
    }
    Ok(())
}

fn read_latents(path: &Path, count: usize, dim: usize, truncation: f32) -> Result<Vec<LatentCode>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * dim * 4 {
        return Err(Error::Dataset(format!(
            "latents.bin has {} bytes, expected {}",
            bytes.len(),
            count * dim * 4
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let values: Vec<f32> = bytes[i * dim * 4..(i + 1) * dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(LatentCode { values, truncation });
    }
    Ok(out)
}

fn read_labels(path: &Path, count: usize) -> Result<Vec<ClassLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(count);
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("index") {
            continue;
        }
        let mut parts = line.split(',');
        let _idx = parts.next();
        let label: u32 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Dataset(format!("bad labels.csv line {}", lineno + 1)))?;
        out.push(ClassLabel(label));
    }
    if out.len() != count {
        return Err(Error::Dataset(format!(
            "labels.csv has {} rows, expected {count}",
            out.len()
        )));
    }
    Ok(out)
}

/// Pre-generates `per_class * classes` teacher samples for offline
/// distillation. Latents are stored alongside the images so training can
/// replay exact (z, y, T(z, y)) triples. The manifest is written last and
/// marks completion.
#[allow(clippy::too_many_arguments)]
pub fn generate_teacher_dataset(
    handle: &TeacherHandle,
    per_class: usize,
    classes: usize,
    latent_dim: usize,
    truncation: f64,
    seed: u64,
    out_dir: &Path,
    dev: &Device,
) -> Result<TeacherDataset> {
    if per_class == 0 || classes == 0 {
        return Err(Error::Argument("per_class and classes must be >= 1".into()));
    }
    if classes > handle.num_classes() {
        return Err(Error::Argument(format!(
            "requested {classes} classes but teacher has {}",
            handle.num_classes()
        )));
    }
    let count = per_class * classes;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let latents = sample_latent(count, latent_dim, truncation, seed)?;
    let labels: Vec<ClassLabel> = (0..count)
        .map(|i| ClassLabel((i / per_class) as u32))
        .collect();

    // latents.bin: little-endian f32, row-major
    let lat_path = out_dir.join("latents.bin");
    {
        let mut f = fs::File::create(&lat_path).map_err(|e| Error::io(&lat_path, e))?;
        let mut bytes = Vec::with_capacity(count * latent_dim * 4);
        for l in &latents {
            for v in &l.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&bytes).map_err(|e| Error::io(&lat_path, e))?;
    }

    let lab_path = out_dir.join("labels.csv");
    {
        let mut text = String::from("index,label\n");
        for (i, l) in labels.iter().enumerate() {
            text.push_str(&format!("{i},{}\n", l.0));
        }
        fs::write(&lab_path, text).map_err(|e| Error::io(&lab_path, e))?;
    }

    let im = handle.im();
    let size = handle.image_size();
    let chunk = 64;
    for start in (0..count).step_by(chunk) {
        let end = (start + chunk).min(count);
        let imgs = teacher_query(handle, &latents[start..end], &labels[start..end], dev)?;
        let pixels = imgs.pixels().flatten_all()?.to_vec1::<f32>()?;
        let per = im.channels() * size * size;
        for (j, idx) in (start..end).enumerate() {
            write_teacher_image(out_dir, idx, im, size, &pixels[j * per..(j + 1) * per])?;
        }
    }

    let manifest = TeacherDatasetManifest {
        format_version: TEACHER_MANIFEST_VERSION,
        im,
        num_classes: classes,
        per_class,
        count,
        latent_dim,
        truncation,
        seed,
        image_size: size,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Dataset(format!("manifest encode: {e}")))?;
    let mpath = out_dir.join("manifest");
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    TeacherDataset::open(out_dir)
}

/// Serves stored teacher outputs by exact (z, y) key.
pub struct ReplayTeacher {
    dataset: TeacherDataset,
    index: HashMap<(u32, Vec<u8>), usize>,
    pub im: ImKind,
    pub num_classes: usize,
    pub image_size: usize,
}

impl ReplayTeacher {
    pub fn from_dir(dir: &Path, _dev: &Device) -> Result<Self> {
        let dataset = TeacherDataset::open(dir)?;
        let mut index = HashMap::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            index.insert((dataset.labels[i].0, latent_key(&dataset.latents[i])), i);
        }
        let im = dataset.manifest.im;
        let num_classes = dataset.manifest.num_classes;
        let image_size = dataset.manifest.image_size;
        Ok(Self {
            dataset,
            index,
            im,
            num_classes,
            image_size,
        })
    }

    fn query(&self, z: &[LatentCode], y: &[ClassLabel], dev: &Device) -> Result<TeacherImages> {
        let c = self.im.channels();
        let s = self.image_size;
        let mut pixels = Vec::with_capacity(z.len() * c * s * s);
        for (code, label) in z.iter().zip(y.iter()) {
            let idx = self
                .index
                .get(&(label.0, latent_key(code)))
                .copied()
                .ok_or(Error::ReplayMiss)?;
            pixels.extend(self.dataset.load_image(idx)?);
        }
        let t = Tensor::from_vec(pixels, (z.len(), c, s, s), dev)?;
        wrap_images(self.im, t, y)
    }
}

fn latent_key(z: &LatentCode) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(z.values.len() * 4);
    for v in &z.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}
