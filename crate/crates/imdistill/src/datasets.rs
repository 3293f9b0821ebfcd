//! Double-colored MNIST construction and image/manifest IO.
//!
//! Each grayscale source digit becomes a continuous [0, 1] mask; the output
//! image is `mask .* fg_color + (1 - mask) .* bg_color` with foreground and
//! background colors drawn independently per image from two disjoint
//! palettes (bright foregrounds, dark backgrounds), so the digit is always
//! visible and palette indices stay uncorrelated.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im::{from_u8_sym, ClassLabel, LabeledImageBatch};
use crate::teachers::render_glyph_mask;

pub const DATASET_MANIFEST_VERSION: u32 = 1;
pub const IMAGE_SIZE: usize = 28;

/// Foreground colorization palette, bright register, values in [0, 1].
pub const FG_PALETTE: [[f32; 3]; 12] = [
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
    [0.80, 1.00, 0.20],
    [0.40, 0.80, 1.00],
];

/// Background colorization palette, dark register, values in [0, 1].
pub const BG_PALETTE: [[f32; 3]; 12] = [
    [0.05, 0.05, 0.25],
    [0.25, 0.05, 0.05],
    [0.05, 0.22, 0.05],
    [0.22, 0.18, 0.02],
    [0.20, 0.05, 0.22],
    [0.02, 0.20, 0.22],
    [0.25, 0.12, 0.02],
    [0.10, 0.10, 0.10],
    [0.02, 0.12, 0.30],
    [0.25, 0.02, 0.15],
    [0.15, 0.25, 0.02],
    [0.02, 0.02, 0.02],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub scale: f64,
    pub image_size: usize,
    pub num_classes: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train_class_counts: Vec<usize>,
    pub test_class_counts: Vec<usize>,
    pub fg_palette: Vec<[f32; 3]>,
    pub bg_palette: Vec<[f32; 3]>,
}

/// One colorized record as listed in the per-split CSV files.
#[derive(Debug, Clone)]
pub struct ColoredMnistRecord {
    pub index: usize,
    pub digit: ClassLabel,
    pub fg_index: usize,
    pub bg_index: usize,
    pub split: Split,
}

pub struct ColoredMnist {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    train: Vec<ColoredMnistRecord>,
    test: Vec<ColoredMnistRecord>,
}

impl ColoredMnist {
    pub fn open(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest");
        if !mpath.exists() {
            return Err(Error::Dataset(format!(
                "no manifest in {}: dataset missing or incomplete",
                dir.display()
            )));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::Dataset(format!("manifest parse: {e}")))?;
        let train = read_records(dir, Split::Train, manifest.train_count)?;
        let test = read_records(dir, Split::Test, manifest.test_count)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            train,
            test,
        })
    }

    pub fn records(&self, split: Split) -> &[ColoredMnistRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.records(split).len()
    }

    /// Decoded images in [-1, 1] with labels attached, order matching
    /// `indices`.
    pub fn load_batch(&self, split: Split, indices: &[usize], dev: &Device) -> Result<LabeledImageBatch> {
        let records = self.records(split);
        if indices.is_empty() {
            return Err(Error::Argument("empty index list".into()));
        }
        if indices.iter().any(|&i| i >= records.len()) {
            return Err(Error::Argument(format!(
                "index out of range for split of {} records",
                records.len()
            )));
        }
        let s = self.manifest.image_size;
        let mut pixels = Vec::with_capacity(indices.len() * 3 * s * s);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let rec = &records[i];
            let path = self
                .dir
                .join(split.dir_name())
                .join("images")
                .join(format!("{:05}.png", rec.index));
            let img = image::open(&path)?.into_rgb8();
            if img.dimensions() != (s as u32, s as u32) {
                return Err(Error::Dataset(format!("bad image size in {}", path.display())));
            }
            let n = s * s;
            let mut plane = vec![0f32; 3 * n];
            for (j, p) in img.pixels().enumerate() {
                for c in 0..3 {
                    plane[c * n + j] = from_u8_sym(p.0[c]);
                }
            }
            pixels.extend(plane);
            labels.push(rec.digit);
        }
        let t = Tensor::from_vec(pixels, (indices.len(), 3, s, s), dev)?;
        LabeledImageBatch::new(t, labels)
    }
}

fn read_records(dir: &Path, split: Split, expected: usize) -> Result<Vec<ColoredMnistRecord>> {
    let lab_path = dir.join(split.dir_name()).join("labels.csv");
    let col_path = dir.join(split.dir_name()).join("fg_bg.csv");
    let labels = fs::read_to_string(&lab_path).map_err(|e| Error::io(&lab_path, e))?;
    let colors = fs::read_to_string(&col_path).map_err(|e| Error::io(&col_path, e))?;
    let mut out = Vec::with_capacity(expected);
    for (lline, cline) in labels.lines().skip(1).zip(colors.lines().skip(1)) {
        let mut lp = lline.split(',');
        let index: usize = lp
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Dataset("bad labels.csv row".into()))?;
        let digit: u32 = lp
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Dataset("bad labels.csv row".into()))?;
        let mut cp = cline.split(',');
        let _ = cp.next();
        let fg_index: usize = cp
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Dataset("bad fg_bg.csv row".into()))?;
        let bg_index: usize = cp
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Dataset("bad fg_bg.csv row".into()))?;
        out.push(ColoredMnistRecord {
            index,
            digit: ClassLabel(digit),
            fg_index,
            bg_index,
            split,
        });
    }
    if out.len() != expected {
        return Err(Error::Dataset(format!(
            "{} records in {} split, manifest says {expected}",
            out.len(),
            split.dir_name()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// IDX ingestion
// ---------------------------------------------------------------------------

pub struct IdxSource {
    pub images: Vec<Vec<u8>>, // row-major 28x28 grayscale
    pub labels: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

pub fn read_idx_pair(images_path: &Path, labels_path: &Path) -> Result<IdxSource> {
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lab_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let be32 = |b: &[u8], o: usize| -> u32 {
        u32::from_be_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]])
    };
    if img_bytes.len() < 16 || be32(&img_bytes, 0) != 0x0803 {
        return Err(Error::Dataset(format!(
            "{} is not an IDX3 image file",
            images_path.display()
        )));
    }
    if lab_bytes.len() < 8 || be32(&lab_bytes, 0) != 0x0801 {
        return Err(Error::Dataset(format!(
            "{} is not an IDX1 label file",
            labels_path.display()
        )));
    }
    let n = be32(&img_bytes, 4) as usize;
    let rows = be32(&img_bytes, 8) as usize;
    let cols = be32(&img_bytes, 12) as usize;
    if be32(&lab_bytes, 4) as usize != n {
        return Err(Error::Dataset("image/label counts disagree".into()));
    }
    if img_bytes.len() != 16 + n * rows * cols || lab_bytes.len() != 8 + n {
        return Err(Error::Dataset("truncated IDX payload".into()));
    }
    let images = (0..n)
        .map(|i| img_bytes[16 + i * rows * cols..16 + (i + 1) * rows * cols].to_vec())
        .collect();
    let labels = lab_bytes[8..].iter().map(|&b| b as u32).collect();
    Ok(IdxSource {
        images,
        labels,
        rows,
        cols,
    })
}

pub fn write_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u32],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut img_bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    img_bytes.extend_from_slice(&0x0803u32.to_be_bytes());
    img_bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        img_bytes.extend_from_slice(img);
    }
    fs::write(images_path, img_bytes).map_err(|e| Error::io(images_path, e))?;
    let mut lab_bytes = Vec::with_capacity(8 + labels.len());
    lab_bytes.extend_from_slice(&0x0801u32.to_be_bytes());
    lab_bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab_bytes.extend(labels.iter().map(|&l| l as u8));
    fs::write(labels_path, lab_bytes).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Writes a synthetic MNIST-style IDX pair rendered from warped digit
/// glyphs, for environments without the original corpus.
pub fn synthesize_mnist_idx(out_dir: &Path, train: usize, test: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let make = |count: usize, salt: u64| -> (Vec<Vec<u8>>, Vec<u32>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ salt);
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let digit = (i % 10) as u32;
            let z: Vec<f32> = (0..8).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            let mask = render_glyph_mask(digit, &z, 2.0, IMAGE_SIZE);
            images.push(mask.iter().map(|&v| (v * 255.0 + 0.5) as u8).collect());
            labels.push(digit);
        }
        (images, labels)
    };
    let (ti, tl) = make(train, 0x7261696e);
    write_idx_pair(
        &out_dir.join("train-images-idx3-ubyte"),
        &out_dir.join("train-labels-idx1-ubyte"),
        &ti,
        &tl,
        IMAGE_SIZE,
        IMAGE_SIZE,
    )?;
    let (vi, vl) = make(test, 0x74657374);
    write_idx_pair(
        &out_dir.join("t10k-images-idx3-ubyte"),
        &out_dir.join("t10k-labels-idx1-ubyte"),
        &vi,
        &vl,
        IMAGE_SIZE,
        IMAGE_SIZE,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Double-colored MNIST construction
// ---------------------------------------------------------------------------

/// Builds the double-colored MNIST tree from standard IDX sources.
///
/// `scale` subsamples each class (stratified, deterministic per seed) for
/// desk-scale runs. The manifest is written last and marks completion.
pub fn build_double_colored_mnist(
    source_dir: &Path,
    seed: u64,
    out_dir: &Path,
    scale: f64,
) -> Result<DatasetManifest> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Argument(format!("scale must lie in (0, 1], got {scale}")));
    }
    let train_src = read_idx_pair(
        &source_dir.join("train-images-idx3-ubyte"),
        &source_dir.join("train-labels-idx1-ubyte"),
    )?;
    let test_src = read_idx_pair(
        &source_dir.join("t10k-images-idx3-ubyte"),
        &source_dir.join("t10k-labels-idx1-ubyte"),
    )?;
    if train_src.rows != IMAGE_SIZE || train_src.cols != IMAGE_SIZE {
        return Err(Error::Dataset(format!(
            "expected {IMAGE_SIZE}x{IMAGE_SIZE} sources, got {}x{}",
            train_src.rows, train_src.cols
        )));
    }

    let train_counts = colorize_split(&train_src, Split::Train, seed, out_dir, scale)?;
    let test_counts = colorize_split(&test_src, Split::Test, seed ^ 0x5eed, out_dir, scale)?;

    let manifest = DatasetManifest {
        format_version: DATASET_MANIFEST_VERSION,
        seed,
        scale,
        image_size: IMAGE_SIZE,
        num_classes: 10,
        train_count: train_counts.iter().sum(),
        test_count: test_counts.iter().sum(),
        train_class_counts: train_counts,
        test_class_counts: test_counts,
        fg_palette: FG_PALETTE.to_vec(),
        bg_palette: BG_PALETTE.to_vec(),
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Dataset(format!("manifest encode: {e}")))?;
    let mpath = out_dir.join("manifest");
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

fn colorize_split(
    src: &IdxSource,
    split: Split,
    seed: u64,
    out_dir: &Path,
    scale: f64,
) -> Result<Vec<usize>> {
    let split_dir = out_dir.join(split.dir_name());
    let images_dir = split_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    // stratified subsample: per class, shuffle and take round(scale * n_c)
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, &l) in src.labels.iter().enumerate() {
        if l > 9 {
            return Err(Error::Dataset(format!("source label {l} out of range")));
        }
        by_class[l as usize].push(i);
    }
    let mut selected = Vec::new();
    let mut class_counts = vec![0usize; 10];
    for (c, idxs) in by_class.iter().enumerate() {
        let mut idxs = idxs.clone();
        // Fisher-Yates with the split rng
        for i in (1..idxs.len()).rev() {
            let j = rng.gen_range(0..=i);
            idxs.swap(i, j);
        }
        let k = ((scale * idxs.len() as f64).round() as usize).min(idxs.len());
        class_counts[c] = k;
        selected.extend(idxs.into_iter().take(k));
    }
    selected.sort_unstable();

    let n = IMAGE_SIZE * IMAGE_SIZE;
    let mut labels_csv = String::from("index,label\n");
    let mut colors_csv = String::from("index,fg_index,bg_index\n");
    for (out_idx, &src_idx) in selected.iter().enumerate() {
        let fg_index = rng.gen_range(0..FG_PALETTE.len());
        let bg_index = rng.gen_range(0..BG_PALETTE.len());
        let fg = FG_PALETTE[fg_index];
        let bg = BG_PALETTE[bg_index];
        let gray = &src.images[src_idx];
        let mut buf = vec![0u8; 3 * n];
        for (j, &g) in gray.iter().enumerate() {
            let m = g as f32 / 255.0;
            for c in 0..3 {
                let v = m * fg[c] + (1.0 - m) * bg[c];
                buf[j * 3 + c] = (v * 255.0 + 0.5).floor() as u8;
            }
        }
        let img = image::RgbImage::from_vec(IMAGE_SIZE as u32, IMAGE_SIZE as u32, buf)
            .ok_or_else(|| Error::Dataset("buffer size mismatch".into()))?;
        let path = images_dir.join(format!("{out_idx:05}.png"));
        img.save(&path)?;
        labels_csv.push_str(&format!("{out_idx},{}\n", src.labels[src_idx]));
        colors_csv.push_str(&format!("{out_idx},{fg_index},{bg_index}\n"));
    }
    let lab_path = split_dir.join("labels.csv");
    fs::write(&lab_path, labels_csv).map_err(|e| Error::io(&lab_path, e))?;
    let col_path = split_dir.join("fg_bg.csv");
    fs::write(&col_path, colors_csv).map_err(|e| Error::io(&col_path, e))?;
    Ok(class_counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev() -> Device {
        Device::Cpu
    }

    /// Synthesizes a small IDX source and builds the colored tree from it.
    fn build_small(tmp: &Path, train: usize, test: usize, seed: u64) -> (PathBuf, DatasetManifest) {
        let src = tmp.join("src");
        synthesize_mnist_idx(&src, train, test, 11).unwrap();
        let out = tmp.join(format!("out_{seed}"));
        let manifest = build_double_colored_mnist(&src, seed, &out, 1.0).unwrap();
        (out, manifest)
    }

    #[test]
    fn palettes_are_channelwise_separated() {
        // every fg/bg pair must differ by >= 0.3 in some channel, so the
        // digit stays visible for any color draw
        for fg in FG_PALETTE {
            for bg in BG_PALETTE {
                let dist = (0..3).map(|c| (fg[c] - bg[c]).abs()).fold(0f32, f32::max);
                assert!(dist >= 0.3, "fg {fg:?} vs bg {bg:?}: max-dist {dist}");
            }
        }
    }

    #[test]
    fn full_scale_build_preserves_counts_and_class_balance() {
        let tmp = tempfile::tempdir().unwrap();
        let (out, manifest) = build_small(tmp.path(), 200, 50, 3);
        assert_eq!(manifest.train_count, 200);
        assert_eq!(manifest.test_count, 50);
        // synthetic source cycles digits 0..9, so balance is exact
        assert_eq!(manifest.train_class_counts, vec![20; 10]);
        assert_eq!(manifest.test_class_counts, vec![5; 10]);
        let ds = ColoredMnist::open(&out).unwrap();
        for split in [Split::Train, Split::Test] {
            let mut counts = vec![0usize; 10];
            for rec in ds.records(split) {
                counts[rec.digit.0 as usize] += 1;
            }
            let per = if split == Split::Train { 20 } else { 5 };
            assert_eq!(counts, vec![per; 10], "{} split", split.dir_name());
        }
    }

    #[test]
    fn same_seed_builds_byte_identical_trees() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        synthesize_mnist_idx(&src, 60, 20, 4).unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        build_double_colored_mnist(&src, 9, &a, 1.0).unwrap();
        build_double_colored_mnist(&src, 9, &b, 1.0).unwrap();
        let mut rel_paths = Vec::new();
        collect_files(&a, &a, &mut rel_paths);
        rel_paths.sort();
        assert!(rel_paths.len() > 80, "expected full tree, saw {}", rel_paths.len());
        for rel in rel_paths {
            let bytes_a = fs::read(a.join(&rel)).unwrap();
            let bytes_b = fs::read(b.join(&rel)).unwrap();
            assert_eq!(bytes_a, bytes_b, "file {} differs between builds", rel.display());
        }
    }

    fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                collect_files(root, &path, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }

    #[test]
    fn all_zero_digit_yields_uniform_background_color() {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        fs::create_dir_all(&src).unwrap();
        // two blank digits per split, labelled 0 and 1
        let blank = vec![vec![0u8; IMAGE_SIZE * IMAGE_SIZE]; 2];
        let labels = vec![0u32, 1];
        write_idx_pair(
            &src.join("train-images-idx3-ubyte"),
            &src.join("train-labels-idx1-ubyte"),
            &blank,
            &labels,
            IMAGE_SIZE,
            IMAGE_SIZE,
        )
        .unwrap();
        write_idx_pair(
            &src.join("t10k-images-idx3-ubyte"),
            &src.join("t10k-labels-idx1-ubyte"),
            &blank,
            &labels,
            IMAGE_SIZE,
            IMAGE_SIZE,
        )
        .unwrap();
        let out = tmp.path().join("out");
        build_double_colored_mnist(&src, 5, &out, 1.0).unwrap();
        let ds = ColoredMnist::open(&out).unwrap();
        for (i, rec) in ds.records(Split::Train).iter().enumerate() {
            let batch = ds.load_batch(Split::Train, &[i], &dev()).unwrap();
            let vals = batch.pixels.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let bg = BG_PALETTE[rec.bg_index];
            let n = IMAGE_SIZE * IMAGE_SIZE;
            for (j, &v) in vals.iter().enumerate() {
                // back to [0, 1] and compare against the logged bg color,
                // allowing one 8-bit quantization step
                let unit = (v + 1.0) / 2.0;
                let want = bg[j / n];
                assert!(
                    (unit - want).abs() <= 1.0 / 255.0 + 1e-6,
                    "record {i}, value {j}: {unit} vs bg {want}"
                );
            }
        }
    }

    #[test]
    fn colorization_preserves_digit_geometry() {
        let tmp = tempfile::tempdir().unwrap();
        let src_dir = tmp.path().join("src");
        synthesize_mnist_idx(&src_dir, 40, 10, 21).unwrap();
        let src = read_idx_pair(
            &src_dir.join("train-images-idx3-ubyte"),
            &src_dir.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        let out = tmp.path().join("out");
        build_double_colored_mnist(&src_dir, 8, &out, 1.0).unwrap();
        let ds = ColoredMnist::open(&out).unwrap();
        let n = IMAGE_SIZE * IMAGE_SIZE;
        for (i, rec) in ds.records(Split::Train).iter().enumerate() {
            let batch = ds.load_batch(Split::Train, &[i], &dev()).unwrap();
            let vals = batch.pixels.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let fg = FG_PALETTE[rec.fg_index];
            let bg = BG_PALETTE[rec.bg_index];
            // bright channel with the widest fg/bg gap carries the mask
            let c = (0..3)
                .max_by(|&a, &b| {
                    let da = (fg[a] - bg[a]).abs();
                    let db = (fg[b] - bg[b]).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            let (mut inter, mut union) = (0usize, 0usize);
            for j in 0..n {
                let unit = (vals[c * n + j] + 1.0) / 2.0;
                let m_rec = (unit - bg[c]) / (fg[c] - bg[c]);
                let got = m_rec > 0.5;
                let want = src.images[i][j] > 127;
                inter += (got && want) as usize;
                union += (got || want) as usize;
            }
            let iou = inter as f64 / union.max(1) as f64;
            assert!(iou > 0.95, "record {i}: mask recovery IoU {iou}");
        }
    }

    #[test]
    fn fg_and_bg_palette_draws_are_uncorrelated() {
        let tmp = tempfile::tempdir().unwrap();
        let (out, manifest) = build_small(tmp.path(), 10_000, 0, 13);
        assert_eq!(manifest.train_count, 10_000);
        let ds = ColoredMnist::open(&out).unwrap();
        let recs = ds.records(Split::Train);
        let n = recs.len() as f64;
        let mean = |f: &dyn Fn(&ColoredMnistRecord) -> f64| recs.iter().map(|r| f(r)).sum::<f64>() / n;
        let mf = mean(&|r| r.fg_index as f64);
        let mb = mean(&|r| r.bg_index as f64);
        let cov = mean(&|r| (r.fg_index as f64 - mf) * (r.bg_index as f64 - mb));
        let vf = mean(&|r| (r.fg_index as f64 - mf).powi(2));
        let vb = mean(&|r| (r.bg_index as f64 - mb).powi(2));
        let corr = cov / (vf.sqrt() * vb.sqrt());
        assert!(corr.abs() < 0.05, "fg/bg palette correlation {corr}");
    }

    #[test]
    fn load_batch_is_pure_and_order_preserving() {
        let tmp = tempfile::tempdir().unwrap();
        let (out, _) = build_small(tmp.path(), 30, 10, 17);
        let ds = ColoredMnist::open(&out).unwrap();
        let a = ds.load_batch(Split::Train, &[0], &dev()).unwrap();
        let b = ds.load_batch(Split::Train, &[0], &dev()).unwrap();
        let va = a.pixels.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = b.pixels.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
        let fwd = ds.load_batch(Split::Train, &[5, 2], &dev()).unwrap();
        let rev = ds.load_batch(Split::Train, &[2, 5], &dev()).unwrap();
        assert_eq!(fwd.labels[0], rev.labels[1]);
        assert_eq!(fwd.labels[1], rev.labels[0]);
        let f0 = fwd.pixels.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let r1 = rev.pixels.narrow(0, 1, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(f0, r1);
        let f1 = fwd.pixels.narrow(0, 1, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let r0 = rev.pixels.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(f1, r0);
    }

    #[test]
    fn load_batch_round_trip_stays_within_quantization() {
        let tmp = tempfile::tempdir().unwrap();
        let src_dir = tmp.path().join("src");
        synthesize_mnist_idx(&src_dir, 20, 10, 31).unwrap();
        let src = read_idx_pair(
            &src_dir.join("train-images-idx3-ubyte"),
            &src_dir.join("train-labels-idx1-ubyte"),
        )
        .unwrap();
        let out = tmp.path().join("out");
        build_double_colored_mnist(&src_dir, 19, &out, 1.0).unwrap();
        let ds = ColoredMnist::open(&out).unwrap();
        let n = IMAGE_SIZE * IMAGE_SIZE;
        for (i, rec) in ds.records(Split::Train).iter().enumerate() {
            let batch = ds.load_batch(Split::Train, &[i], &dev()).unwrap();
            let vals = batch.pixels.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let fg = FG_PALETTE[rec.fg_index];
            let bg = BG_PALETTE[rec.bg_index];
            for j in 0..n {
                let m = src.images[i][j] as f32 / 255.0;
                for c in 0..3 {
                    let want = m * fg[c] + (1.0 - m) * bg[c];
                    let unit = (vals[c * n + j] + 1.0) / 2.0;
                    assert!(
                        (unit - want).abs() <= 1.0 / 255.0 + 1e-6,
                        "record {i}, pixel {j}, channel {c}: {unit} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn load_batch_rejects_bad_indices() {
        let tmp = tempfile::tempdir().unwrap();
        let (out, _) = build_small(tmp.path(), 20, 10, 23);
        let ds = ColoredMnist::open(&out).unwrap();
        assert!(matches!(
            ds.load_batch(Split::Train, &[20], &dev()),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            ds.load_batch(Split::Test, &[], &dev()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn build_rejects_bad_scale_and_missing_source() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        assert!(matches!(
            build_double_colored_mnist(tmp.path(), 1, &out, 0.0),
            Err(Error::Argument(_))
        ));
        assert!(build_double_colored_mnist(tmp.path(), 1, &out, 0.5).is_err());
    }

    #[test]
    fn open_rejects_missing_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            ColoredMnist::open(tmp.path()),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn idx_round_trip_and_header_validation() {
        let tmp = tempfile::tempdir().unwrap();
        let images: Vec<Vec<u8>> = (0..4).map(|i| vec![i as u8; 9]).collect();
        let labels = vec![0u32, 3, 7, 9];
        let ip = tmp.path().join("imgs");
        let lp = tmp.path().join("labs");
        write_idx_pair(&ip, &lp, &images, &labels, 3, 3).unwrap();
        let back = read_idx_pair(&ip, &lp).unwrap();
        assert_eq!(back.images, images);
        assert_eq!(back.labels, labels);
        assert_eq!((back.rows, back.cols), (3, 3));
        // a label file is not an image file
        assert!(matches!(read_idx_pair(&lp, &lp), Err(Error::Dataset(_))));
    }
}
