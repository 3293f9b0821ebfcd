//! Per-mechanism distillation training, counterfactual inference, the
//! invariant real-vs-generated classifier, and the shape-mask ablation study.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{ColoredMnist, Split};
use crate::error::{Error, Result};
use crate::im::{
    compose_pixels, labels_to_tensor, latents_to_tensor, mask_add_gaussian_noise, mask_rotate,
    mask_scale_opacity, sample_latent, ClassLabel, LabeledImageBatch, MaskBatch,
};
use crate::losses::{
    adv_disc_loss, adv_gen_loss, discriminator_objective, feature_loss, generator_objective,
    kl_loss_t, pixel_loss_t, GeneratorParts, LossWeights,
};
use crate::nets::{Classifier, ClassifierSpec, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::teachers::{ImKind, TeacherDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        // conventional settings for spectral-norm GAN training
        Self {
            name: "adam".into(),
            learning_rate: 2e-4,
            beta1: 0.0,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub im: ImKind,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub disc_steps_per_gen_step: usize,
    pub seed: u64,
    /// Directory of the pre-generated teacher dataset to replay.
    pub dataset_dir: PathBuf,
    /// Checkpoint cadence in epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl DistillConfig {
    /// Desk-scale configuration against a replayed teacher dataset.
    pub fn mnist28(im: ImKind, dataset_dir: PathBuf, seed: u64) -> Self {
        let disc = DiscriminatorSpec::mnist28(im.channels());
        let weights = LossWeights::defaults(disc.num_layers);
        Self {
            im,
            generator: GeneratorSpec::mnist28(im.channels()),
            discriminator: disc,
            weights,
            optimizer: OptimizerConfig::default(),
            batch_size: 64,
            epochs: 20,
            disc_steps_per_gen_step: 2,
            seed,
            dataset_dir,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Argument("batch_size must be >= 2".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be > 0".into()));
        }
        if self.disc_steps_per_gen_step == 0 {
            return Err(Error::Argument("disc_steps_per_gen_step must be >= 1".into()));
        }
        if self.im.is_mask() != self.generator.mask_mode() {
            return Err(Error::Argument(format!(
                "generator output channels do not match the {} mechanism",
                self.im
            )));
        }
        if self.discriminator.input_channels != self.im.channels() {
            return Err(Error::Argument(
                "discriminator input channels do not match the mechanism".into(),
            ));
        }
        self.weights.validate()?;
        Ok(())
    }

    /// Alpha weights resolved to the discriminator layer count.
    fn resolved_alpha(&self) -> Result<Vec<f64>> {
        let n = self.discriminator.num_layers;
        if self.weights.alpha.is_empty() {
            Ok(vec![1.0 / n as f64; n])
        } else if self.weights.alpha.len() == n {
            Ok(self.weights.alpha.clone())
        } else {
            Err(Error::Argument(format!(
                "{} alpha weights for {} discriminator layers",
                self.weights.alpha.len(),
                n
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub pixel: f64,
    pub feature: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub kl: f64,
    pub total_g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRow>,
    pub wall_clock_secs: f64,
    pub final_checkpoint: PathBuf,
}

impl TrainReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("epoch,pixel,feature,adv_g,adv_d,kl,total_g\n");
        for r in &self.epochs {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.pixel, r.feature, r.adv_g, r.adv_d, r.kl, r.total_g
            ));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn finite_or_divergence(v: f64, term: &str, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            term: term.to_string(),
            step,
        })
    }
}

/// Knowledge-distillation training of one mechanism's student against a
/// replayed teacher dataset. Writes `metrics.csv` and checkpoints under
/// `out_dir`; returns the per-epoch loss report.
pub fn distill_im(config: &DistillConfig, out_dir: &Path, dev: &Device) -> Result<TrainReport> {
    config.validate()?;
    let alpha = config.resolved_alpha()?;
    let dataset = TeacherDataset::open(&config.dataset_dir)?;
    if dataset.manifest.im != config.im {
        return Err(Error::Argument(format!(
            "dataset holds {} teacher outputs, config trains {}",
            dataset.manifest.im, config.im
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let start = Instant::now();
    let generator = Generator::new(config.generator.clone(), config.seed, dev)?;
    let discriminator = Discriminator::new(config.discriminator.clone(), config.seed ^ 0xd15c, dev)?;

    let params = ParamsAdamW {
        lr: config.optimizer.learning_rate,
        beta1: config.optimizer.beta1,
        beta2: config.optimizer.beta2,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut opt_g = AdamW::new(generator.store().trainable_vars(), params.clone())?;
    let mut opt_d = AdamW::new(discriminator.store().trainable_vars(), params)?;

    // preload all teacher images; 28x28 datasets fit comfortably in memory
    let cache = preload(&dataset)?;
    let n = dataset.len();
    let bs = config.batch_size;

    let mut rows = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut sums = [0f64; 6]; // pixel, feature, adv_g, adv_d, kl, total_g
        let mut g_steps = 0usize;
        let mut d_steps = 0usize;
        for chunk in order.chunks(bs) {
            if chunk.len() < 2 {
                continue; // batch-norm needs at least two samples
            }
            let (z, y, teacher) = batch_from_cache(&dataset, &cache, chunk, dev)?;

            // discriminator updates
            for _ in 0..config.disc_steps_per_gen_step {
                let student = generator.forward(&z, &y, true)?.detach();
                let (scores_t, _) = discriminator.forward(&teacher, &y, true)?;
                let (scores_s, _) = discriminator.forward(&student, &y, true)?;
                let adv_d = adv_disc_loss(&scores_t, &scores_s, config.weights.gan_loss)?;
                let loss_d = discriminator_objective(&adv_d).map_err(|e| at_step(e, step))?;
                opt_d.backward_step(&loss_d)?;
                sums[3] += finite_or_divergence(
                    loss_d.to_scalar::<f32>()? as f64,
                    "adv_d",
                    step,
                )?;
                d_steps += 1;
                step += 1;
            }

            // generator update
            let student = generator.forward(&z, &y, true)?;
            let (scores_s, feats_s) = discriminator.forward(&student, &y, true)?;
            let (_, feats_t) = discriminator.forward(&teacher, &y, false)?;
            let feats_t = crate::losses::FeatureStack::new(
                feats_t.layers.iter().map(|t| t.detach()).collect(),
            )?;
            let parts = GeneratorParts {
                feature: feature_loss(
                    &feats_t,
                    &feats_s,
                    &alpha,
                    config.weights.feature_distance,
                    config.weights.temperature,
                )?,
                pixel: pixel_loss_t(&teacher, &student, config.weights.pixel_norm)?,
                adv_gen: adv_gen_loss(&scores_s, config.weights.gan_loss)?,
                kl: kl_loss_t(&teacher, &student, config.weights.temperature)?,
            };
            let loss_g = generator_objective(&parts, &config.weights).map_err(|e| at_step(e, step))?;
            opt_g.backward_step(&loss_g)?;

            sums[0] += finite_or_divergence(parts.pixel.to_scalar::<f32>()? as f64, "pixel", step)?;
            sums[1] +=
                finite_or_divergence(parts.feature.to_scalar::<f32>()? as f64, "feature", step)?;
            sums[2] +=
                finite_or_divergence(parts.adv_gen.to_scalar::<f32>()? as f64, "adv_gen", step)?;
            sums[4] += finite_or_divergence(parts.kl.to_scalar::<f32>()? as f64, "kl", step)?;
            sums[5] += finite_or_divergence(loss_g.to_scalar::<f32>()? as f64, "total_g", step)?;
            g_steps += 1;
            step += 1;
        }

        let g = g_steps.max(1) as f64;
        let d = d_steps.max(1) as f64;
        rows.push(EpochRow {
            epoch,
            pixel: sums[0] / g,
            feature: sums[1] / g,
            adv_g: sums[2] / g,
            adv_d: sums[3] / d,
            kl: sums[4] / g,
            total_g: sums[5] / g,
        });

        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            generator.save(&out_dir.join(format!("checkpoints/epoch_{:04}", epoch + 1)))?;
        }
    }

    let final_checkpoint = out_dir.join("checkpoint_final");
    generator.save(&final_checkpoint)?;
    let report = TrainReport {
        epochs: rows,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        final_checkpoint,
    };
    report.write_csv(&out_dir.join("metrics.csv"))?;
    Ok(report)
}

fn at_step(e: Error, step: usize) -> Error {
    if let Error::Divergence { term, .. } = e {
        Error::Divergence { term, step }
    } else {
        e
    }
}

/// Adversarial-only training: the same student and report format, with
/// teacher samples standing in for the data distribution and every
/// distillation term removed from the objective.
pub fn train_baseline(config: &DistillConfig, out_dir: &Path, dev: &Device) -> Result<TrainReport> {
    let mut cfg = config.clone();
    cfg.weights.lambda_pix = 0.0;
    cfg.weights.use_kl = false;
    cfg.weights.alpha = vec![0.0; cfg.discriminator.num_layers];
    distill_im(&cfg, out_dir, dev)
}

fn preload(dataset: &TeacherDataset) -> Result<Vec<Vec<f32>>> {
    (0..dataset.len()).map(|i| dataset.load_image(i)).collect()
}

fn batch_from_cache(
    dataset: &TeacherDataset,
    cache: &[Vec<f32>],
    indices: &[usize],
    dev: &Device,
) -> Result<(Tensor, Tensor, Tensor)> {
    let z: Vec<_> = indices.iter().map(|&i| dataset.latents[i].clone()).collect();
    let y: Vec<_> = indices.iter().map(|&i| dataset.labels[i]).collect();
    let c = dataset.manifest.im.channels();
    let s = dataset.manifest.image_size;
    let mut pixels = Vec::with_capacity(indices.len() * c * s * s);
    for &i in indices {
        pixels.extend_from_slice(&cache[i]);
    }
    Ok((
        latents_to_tensor(&z, dev)?,
        labels_to_tensor(&y, dev)?,
        Tensor::from_vec(pixels, (indices.len(), c, s, s), dev)?,
    ))
}

/// Mean per-pixel L1 between student outputs and stored teacher images over
/// (a prefix of) a dataset. Evaluation-mode forward.
pub fn eval_pixel_l1(
    generator: &Generator,
    dataset: &TeacherDataset,
    max_records: usize,
    dev: &Device,
) -> Result<f64> {
    let n = dataset.len().min(max_records);
    if n == 0 {
        return Err(Error::Argument("empty evaluation dataset".into()));
    }
    let mut total = 0f64;
    let mut count = 0usize;
    for start in (0..n).step_by(100) {
        let end = (start + 100).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (z, y, teacher) = dataset.load_batch(&indices, dev)?;
        let student = generator.forward(&z, &y, false)?.detach();
        let l1 = (teacher - student)?.abs()?.mean_all()?.to_scalar::<f32>()?;
        total += l1 as f64 * indices.len() as f64;
        count += indices.len();
    }
    Ok(total / count as f64)
}

// ---------------------------------------------------------------------------
// Counterfactual inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// One label per mechanism: the counterfactual case.
    Independent,
    /// One label for all mechanisms: the non-counterfactual control.
    Shared,
}

pub struct StudentCheckpoints {
    pub shape: PathBuf,
    pub texture: PathBuf,
    pub background: PathBuf,
}

/// Raw per-mechanism outputs plus the labels that produced them.
pub struct MechanismOutputs {
    pub mask: MaskBatch,
    pub foreground: LabeledImageBatch,
    pub background: LabeledImageBatch,
    pub shape_labels: Vec<ClassLabel>,
    pub texture_labels: Vec<ClassLabel>,
    pub background_labels: Vec<ClassLabel>,
}

pub struct CounterfactualSet {
    pub composite: LabeledImageBatch,
    pub mechanisms: MechanismOutputs,
}

struct LoadedStudents {
    shape: Generator,
    texture: Generator,
    background: Generator,
}

fn load_students(ckpts: &StudentCheckpoints, dev: &Device) -> Result<LoadedStudents> {
    let shape = Generator::load(&ckpts.shape, dev)?;
    let texture = Generator::load(&ckpts.texture, dev)?;
    let background = Generator::load(&ckpts.background, dev)?;
    if !shape.spec.mask_mode() {
        return Err(Error::Composition("shape checkpoint is not in mask mode".into()));
    }
    if texture.spec.mask_mode() || background.spec.mask_mode() {
        return Err(Error::Composition("texture/background checkpoints must be RGB".into()));
    }
    if texture.spec.output_size != shape.spec.output_size
        || background.spec.output_size != shape.spec.output_size
    {
        return Err(Error::Composition(
            "checkpoints disagree on output size".into(),
        ));
    }
    if texture.spec.latent_dim != shape.spec.latent_dim
        || background.spec.latent_dim != shape.spec.latent_dim
    {
        return Err(Error::Composition("checkpoints disagree on latent dim".into()));
    }
    Ok(LoadedStudents {
        shape,
        texture,
        background,
    })
}

/// Runs the three students on one shared noise vector per sample, with
/// labels drawn independently per mechanism or shared across them.
pub fn generate_mechanism_outputs(
    ckpts: &StudentCheckpoints,
    count: usize,
    seed: u64,
    label_mode: LabelMode,
    dev: &Device,
) -> Result<MechanismOutputs> {
    if count == 0 {
        return Err(Error::Argument("count must be >= 1".into()));
    }
    let students = load_students(ckpts, dev)?;
    let latent_dim = students.shape.spec.latent_dim;
    let num_classes = students.shape.spec.num_classes;
    let u = sample_latent(count, latent_dim, crate::im::DEFAULT_TRUNCATION, seed)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x1abe1);
    let draw = |rng: &mut ChaCha12Rng| ClassLabel(rng.gen_range(0..num_classes as u32));
    let mut shape_labels = Vec::with_capacity(count);
    let mut texture_labels = Vec::with_capacity(count);
    let mut background_labels = Vec::with_capacity(count);
    for _ in 0..count {
        match label_mode {
            LabelMode::Shared => {
                let y = draw(&mut rng);
                shape_labels.push(y);
                texture_labels.push(y);
                background_labels.push(y);
            }
            LabelMode::Independent => {
                shape_labels.push(draw(&mut rng));
                texture_labels.push(draw(&mut rng));
                background_labels.push(draw(&mut rng));
            }
        }
    }

    let chunk = 200;
    let mut masks = Vec::new();
    let mut fgs = Vec::new();
    let mut bgs = Vec::new();
    for start in (0..count).step_by(chunk) {
        let end = (start + chunk).min(count);
        let z = latents_to_tensor(&u[start..end], dev)?;
        let ys = labels_to_tensor(&shape_labels[start..end], dev)?;
        let yt = labels_to_tensor(&texture_labels[start..end], dev)?;
        let yb = labels_to_tensor(&background_labels[start..end], dev)?;
        // inference outputs: drop the autograd graph so downstream consumers
        // (composition, classifier training) never backprop into the students
        masks.push(students.shape.forward(&z, &ys, false)?.detach());
        fgs.push(students.texture.forward(&z, &yt, false)?.detach());
        bgs.push(students.background.forward(&z, &yb, false)?.detach());
    }
    let mask = MaskBatch::new(Tensor::cat(&masks, 0)?)?;
    let foreground = LabeledImageBatch::new(Tensor::cat(&fgs, 0)?, texture_labels.clone())?;
    let background = LabeledImageBatch::new(Tensor::cat(&bgs, 0)?, background_labels.clone())?;
    Ok(MechanismOutputs {
        mask,
        foreground,
        background,
        shape_labels,
        texture_labels,
        background_labels,
    })
}

/// Composes counterfactual images from three student checkpoints.
/// The composite carries the texture (foreground) labels.
pub fn generate_counterfactuals(
    ckpts: &StudentCheckpoints,
    count: usize,
    seed: u64,
    mask_weight: f64,
    label_mode: LabelMode,
    dev: &Device,
) -> Result<CounterfactualSet> {
    let mech = generate_mechanism_outputs(ckpts, count, seed, label_mode, dev)?;
    let pixels = compose_pixels(
        &mech.mask.values,
        &mech.foreground.pixels,
        &mech.background.pixels,
        mask_weight,
    )?;
    let composite = LabeledImageBatch::new(pixels, mech.texture_labels.clone())?;
    Ok(CounterfactualSet {
        composite,
        mechanisms: mech,
    })
}

// ---------------------------------------------------------------------------
// Invariant classifier
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub transform: String,
    pub transform_params: String,
    /// Balanced real-vs-generated accuracy on the training arms, percent.
    pub train_accuracy: f64,
    /// Held-out test accuracy, percent (see `run_shape_study` for the
    /// study's held-out protocol).
    pub test_accuracy: f64,
}

pub struct ClassifierData {
    pub train_real: Tensor,
    pub train_generated: Tensor,
    pub test_real: Tensor,
    pub test_generated: Tensor,
}

pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains a binary real-vs-generated classifier. Class 0 is real, class 1 is
/// generated. Train accuracy is measured on the training arms, test accuracy
/// on the held-out arms, both balanced.
pub fn train_invariant_classifier(
    data: &ClassifierData,
    epochs: usize,
    seed: u64,
    dev: &Device,
) -> Result<TrainedClassifier> {
    // incoming tensors are data, never gradient paths
    let data = ClassifierData {
        train_real: data.train_real.detach(),
        train_generated: data.train_generated.detach(),
        test_real: data.test_real.detach(),
        test_generated: data.test_generated.detach(),
    };
    let n_real = data.train_real.dims()[0];
    let n_gen = data.train_generated.dims()[0];
    if n_real == 0 || n_gen == 0 {
        return Err(Error::Argument("both classifier arms must be non-empty".into()));
    }
    let frac = n_real as f64 / (n_real + n_gen) as f64;
    if !(0.4..=0.6).contains(&frac) {
        return Err(Error::Argument(format!(
            "class imbalance beyond 60/40: real fraction {frac:.2}"
        )));
    }
    let size = data.train_real.dims()[2];
    let spec = ClassifierSpec {
        input_size: size,
        input_channels: data.train_real.dims()[1],
        num_outputs: 2,
        base_channels: 16,
    };
    let model = Classifier::new(spec, seed, dev)?;
    let mut opt = AdamW::new(
        model.store().trainable_vars(),
        ParamsAdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;

    // label 0 = real, 1 = generated
    let mut items: Vec<(usize, u32)> = (0..n_real)
        .map(|i| (i, 0))
        .chain((0..n_gen).map(|i| (i, 1)))
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xc1a55);
    let bs = 64;
    for _ in 0..epochs {
        items.shuffle(&mut rng);
        for chunk in items.chunks(bs) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ys = Vec::with_capacity(chunk.len());
            for &(i, lab) in chunk {
                let src = if lab == 0 {
                    &data.train_real
                } else {
                    &data.train_generated
                };
                xs.push(src.narrow(0, i, 1)?);
                ys.push(lab);
            }
            let x = Tensor::cat(&xs, 0)?;
            let y = Tensor::from_vec(ys, chunk.len(), dev)?;
            let logits = model.forward(&x)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            opt.backward_step(&loss)?;
        }
    }

    let train_accuracy = 100.0
        * (binary_accuracy(&model, &data.train_real, 0)? * n_real as f64
            + binary_accuracy(&model, &data.train_generated, 1)? * n_gen as f64)
        / (n_real + n_gen) as f64;
    let t_real = data.test_real.dims()[0];
    let t_gen = data.test_generated.dims()[0];
    let test_accuracy = 100.0
        * (binary_accuracy(&model, &data.test_real, 0)? * t_real as f64
            + binary_accuracy(&model, &data.test_generated, 1)? * t_gen as f64)
        / (t_real + t_gen).max(1) as f64;
    Ok(TrainedClassifier {
        classifier: model,
        train_accuracy,
        test_accuracy,
    })
}

/// Fraction of `images` the classifier assigns to `class`.
pub fn binary_accuracy(model: &Classifier, images: &Tensor, class: u32) -> Result<f64> {
    let n = images.dims()[0];
    if n == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for start in (0..n).step_by(256) {
        let len = 256.min(n - start);
        let x = images.narrow(0, start, len)?;
        let logits = model.forward(&x)?;
        let pred = logits.argmax(1)?.to_vec1::<u32>()?;
        hits += pred.iter().filter(|&&p| p == class).count();
    }
    Ok(hits as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// Shape-mask ablation study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskTransform {
    Noise { sigma: f64 },
    Rotation { max_degrees: f64 },
    Transparency { weight: f64 },
}

impl MaskTransform {
    pub fn name(&self) -> &'static str {
        match self {
            MaskTransform::Noise { .. } => "noise",
            MaskTransform::Rotation { .. } => "rotation",
            MaskTransform::Transparency { .. } => "transparency",
        }
    }

    pub fn params_string(&self) -> String {
        match self {
            MaskTransform::Noise { sigma } => format!("sigma={sigma}"),
            MaskTransform::Rotation { max_degrees } => format!("max_degrees={max_degrees}"),
            MaskTransform::Transparency { weight } => format!("weight={weight}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MaskTransform::Noise { sigma } if *sigma > 0.0 => Ok(()),
            MaskTransform::Rotation { max_degrees }
                if *max_degrees > 0.0 && *max_degrees <= 180.0 =>
            {
                Ok(())
            }
            MaskTransform::Transparency { weight } if *weight > 0.0 && *weight <= 1.0 => Ok(()),
            _ => Err(Error::Argument(format!(
                "invalid {} parameters: {}",
                self.name(),
                self.params_string()
            ))),
        }
    }

    pub fn apply(&self, mask: &MaskBatch, seed: u64) -> Result<MaskBatch> {
        match self {
            MaskTransform::Noise { sigma } => mask_add_gaussian_noise(mask, *sigma, seed),
            MaskTransform::Rotation { max_degrees } => mask_rotate(mask, *max_degrees, seed),
            MaskTransform::Transparency { weight } => mask_scale_opacity(mask, *weight),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub num_train: usize,
    pub num_test: usize,
    pub classifier_epochs: usize,
    pub seed: u64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            num_train: 10_000,
            num_test: 2_000,
            classifier_epochs: 5,
            seed: 0,
        }
    }
}

/// The shape-mechanism ablation: counterfactuals whose masks were tuned with
/// one transformation train an invariant classifier; the held-out test set
/// pairs fresh real images with fresh *untransformed* counterfactuals, so
/// test accuracy measures how well the learned real-vs-generated boundary
/// carries over to the untuned pipeline.
pub fn run_shape_study(
    transform: MaskTransform,
    ckpts: &StudentCheckpoints,
    real: &ColoredMnist,
    opts: &StudyOptions,
    dev: &Device,
) -> Result<StudyResult> {
    transform.validate()?;
    let n_train = opts.num_train;
    let n_test = opts.num_test;

    // training arm: transformed-mask counterfactuals
    let mech = generate_mechanism_outputs(ckpts, n_train, opts.seed, LabelMode::Independent, dev)?;
    let tuned = transform.apply(&mech.mask, opts.seed ^ 0x7f0)?;
    let train_generated = compose_pixels(
        &tuned.values,
        &mech.foreground.pixels,
        &mech.background.pixels,
        1.0,
    )?;

    // held-out arm: fresh untransformed counterfactuals
    let test_mech =
        generate_mechanism_outputs(ckpts, n_test, opts.seed ^ 0x7e57, LabelMode::Independent, dev)?;
    let test_generated = compose_pixels(
        &test_mech.mask.values,
        &test_mech.foreground.pixels,
        &test_mech.background.pixels,
        1.0,
    )?;

    let train_real = sample_real(real, Split::Train, n_train, opts.seed ^ 0x4ea1, dev)?;
    let test_real = sample_real(real, Split::Test, n_test, opts.seed ^ 0x4ea2, dev)?;

    let trained = train_invariant_classifier(
        &ClassifierData {
            train_real,
            train_generated,
            test_real,
            test_generated: test_generated.clone(),
        },
        opts.classifier_epochs,
        opts.seed,
        dev,
    )?;

    // the study's test metric: recognition rate of clean counterfactuals
    let recognition =
        100.0 * binary_accuracy(&trained.classifier, &test_generated, 1)?;
    Ok(StudyResult {
        transform: transform.name().to_string(),
        transform_params: transform.params_string(),
        train_accuracy: trained.train_accuracy,
        test_accuracy: recognition,
    })
}

fn sample_real(
    real: &ColoredMnist,
    split: Split,
    count: usize,
    seed: u64,
    dev: &Device,
) -> Result<Tensor> {
    let n = real.split_len(split);
    if n == 0 {
        return Err(Error::Argument("empty real split".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..count).map(|_| rng.gen_range(0..n)).collect();
    Ok(real.load_batch(split, &indices, dev)?.pixels)
}

// ---------------------------------------------------------------------------
// Contact sheets
// ---------------------------------------------------------------------------

/// Writes a PNG contact sheet: each row is one batch laid out left to right.
pub fn write_contact_sheet(rows: &[&Tensor], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Argument("no rows for contact sheet".into()));
    }
    let (_, _, h, w) = rows[0].dims4()?;
    let cols = rows.iter().map(|t| t.dims()[0]).max().unwrap();
    let sheet_w = cols * (w + 2);
    let sheet_h = rows.len() * (h + 2);
    let mut buf = vec![0u8; sheet_w * sheet_h * 3];
    for (r, t) in rows.iter().enumerate() {
        let (n, c, th, tw) = t.dims4()?;
        if th != h || tw != w {
            return Err(Error::Argument("contact-sheet rows disagree on size".into()));
        }
        let data = t.flatten_all()?.to_vec1::<f32>()?;
        for i in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let px = i * (w + 2) + x;
                    let py = r * (h + 2) + y;
                    for ch in 0..3 {
                        let src_c = if c == 1 { 0 } else { ch };
                        let v = data[i * c * h * w + src_c * h * w + y * w + x];
                        let u = if c == 1 {
                            crate::im::to_u8_unit(v)
                        } else {
                            crate::im::to_u8_sym(v)
                        };
                        buf[(py * sheet_w + px) * 3 + ch] = u;
                    }
                }
            }
        }
    }
    let img = image::RgbImage::from_vec(sheet_w as u32, sheet_h as u32, buf)
        .ok_or_else(|| Error::Dataset("contact sheet buffer mismatch".into()))?;
    img.save(path)?;
    Ok(())
}
