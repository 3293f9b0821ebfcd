//! Command-line surface for the mechanism-distillation toolkit.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or values, no side
//! effects), 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use imdistill::datasets::{build_double_colored_mnist, synthesize_mnist_idx, ColoredMnist};
use imdistill::im::{to_u8_sym, DEFAULT_LATENT_DIM, DEFAULT_TRUNCATION};
use imdistill::losses::{FeatureDistance, GanLoss, PixelNorm};
use imdistill::nets::{
    classifier_param_count, discriminator_param_count, generator_param_count, ClassifierSpec,
    DiscriminatorSpec, Generator, GeneratorSpec,
};
use imdistill::teachers::{generate_teacher_dataset, ImKind, TeacherDataset, TeacherHandle};
use imdistill::train::{
    distill_im, generate_counterfactuals, run_shape_study, train_baseline,
    train_invariant_classifier, write_contact_sheet, ClassifierData, DistillConfig, LabelMode,
    MaskTransform, StudentCheckpoints, StudyOptions,
};
use imdistill::{Error, Result};

#[derive(Parser)]
#[command(
    name = "imdistill",
    about = "Distill shape/texture/background mechanisms into compact students and compose counterfactual images",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the double-colored MNIST dataset (independent digit/background colors).
    MakeMnist(MakeMnistArgs),
    /// Pre-generate a teacher dataset of (latent, label, image) records.
    TeacherSample(TeacherSampleArgs),
    /// Distill one mechanism's teacher into a compact student generator.
    Distill(DistillArgs),
    /// Adversarial-only training of the same student (no distillation terms).
    Baseline(DistillArgs),
    /// Compose counterfactual images from three student checkpoints.
    Compose(ComposeArgs),
    /// Shape-mask ablation: train an invariant classifier on transformed-mask
    /// counterfactuals and report how it scores untransformed ones.
    StudyShape(StudyShapeArgs),
    /// Train a real-vs-generated classifier and report accuracies.
    EvalClassifier(EvalClassifierArgs),
    /// Print parameter counts for a model profile.
    Params(ParamsArgs),
    /// Render a contact sheet: teacher row over student row.
    Grid(GridArgs),
}

#[derive(Args, Serialize)]
struct MakeMnistArgs {
    /// Directory holding standard MNIST IDX files; omitted = synthesize a
    /// glyph-based stand-in source under <out>/idx_source.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Synthesized source: training images (used only without --source).
    #[arg(long, default_value_t = 60_000)]
    synth_train: usize,
    /// Synthesized source: test images (used only without --source).
    #[arg(long, default_value_t = 10_000)]
    synth_test: usize,
    /// Class-stratified subsampling fraction in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a completed run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct TeacherSampleArgs {
    /// Mechanism: shape, texture, or background.
    #[arg(long, value_parser = parse_im)]
    im: ImKind,
    /// Teacher kind: procedural, or checkpoint (requires --checkpoint).
    #[arg(long, default_value = "procedural")]
    teacher: String,
    /// Generator checkpoint directory for --teacher checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 28)]
    image_size: usize,
    #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
    latent_dim: usize,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION)]
    truncation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct DistillArgs {
    /// Mechanism: shape, texture, or background.
    #[arg(long, value_parser = parse_im)]
    im: ImKind,
    /// Model profile: mnist28 or imagenet256.
    #[arg(long, default_value = "mnist28")]
    profile: String,
    /// Existing teacher dataset to replay; omitted = generate one from the
    /// procedural teacher under <out>/teacher_data.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Teacher kind when generating (--dataset absent): procedural only.
    #[arg(long, default_value = "procedural")]
    teacher: String,
    /// Samples per class when generating the teacher dataset.
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    /// Discriminator updates per generator update.
    #[arg(long, default_value_t = 2)]
    disc_steps: usize,
    /// Weight of the pixel term.
    #[arg(long, default_value_t = 1.0)]
    lambda_pix: f64,
    /// Weight of the adversarial generator term.
    #[arg(long, default_value_t = 1.0)]
    lambda_adv: f64,
    /// Add the temperature-softmax KL term to the generator objective.
    #[arg(long)]
    use_kl: bool,
    /// Softmax temperature for the KL term.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Adversarial loss form: hinge, hinge_literal, or bce.
    #[arg(long, default_value = "hinge", value_parser = parse_gan_loss)]
    gan_loss: GanLoss,
    /// Pixel distance: l1 or l2.
    #[arg(long, default_value = "l1", value_parser = parse_pixel_norm)]
    pixel_norm: PixelNorm,
    /// Feature distance: l1 or per_layer_kl.
    #[arg(long, default_value = "l1", value_parser = parse_feature_distance)]
    feature_distance: FeatureDistance,
    /// Checkpoint cadence in epochs (0 = final only).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct ComposeArgs {
    /// Shape (mask) student checkpoint directory.
    #[arg(long)]
    shape: PathBuf,
    /// Texture (foreground) student checkpoint directory.
    #[arg(long)]
    texture: PathBuf,
    /// Background student checkpoint directory.
    #[arg(long)]
    background: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Weight factor in (0,1] applied to the mask before blending;
    /// values below 1 let background bleed through the shape.
    #[arg(long, default_value_t = 1.0)]
    mask_weight: f64,
    /// independent (one label per mechanism, the counterfactual case) or
    /// shared (one label for all, the control).
    #[arg(long, default_value = "independent", value_parser = parse_label_mode)]
    label_mode: LabelMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct StudyShapeArgs {
    /// Mask transformation: noise, rotation, or transparency.
    #[arg(long)]
    transform: String,
    /// Noise standard deviation (transform = noise).
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Rotation bound in degrees (transform = rotation).
    #[arg(long, default_value_t = 30.0)]
    max_degrees: f64,
    /// Mask opacity factor in (0,1] (transform = transparency).
    #[arg(long, default_value_t = 0.75)]
    weight: f64,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long)]
    texture: PathBuf,
    #[arg(long)]
    background: PathBuf,
    /// Double-colored MNIST dataset directory (the real arm).
    #[arg(long)]
    real: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    num_train: usize,
    #[arg(long, default_value_t = 2_000)]
    num_test: usize,
    #[arg(long, default_value_t = 5)]
    classifier_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct EvalClassifierArgs {
    /// Double-colored MNIST dataset directory (the real arm).
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    shape: PathBuf,
    #[arg(long)]
    texture: PathBuf,
    #[arg(long)]
    background: PathBuf,
    /// Images per arm for both the training and held-out sets.
    #[arg(long, default_value_t = 2_000)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    mask_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct ParamsArgs {
    /// Model profile: mnist28 or imagenet256.
    #[arg(long, default_value = "mnist28")]
    profile: String,
}

#[derive(Args, Serialize)]
struct GridArgs {
    /// Teacher dataset to draw (z, y, image) records from.
    #[arg(long)]
    dataset: PathBuf,
    /// Student generator checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn parse_im(s: &str) -> std::result::Result<ImKind, String> {
    match s {
        "shape" => Ok(ImKind::Shape),
        "texture" => Ok(ImKind::Texture),
        "background" => Ok(ImKind::Background),
        _ => Err(format!("--im must be shape, texture, or background (got '{s}')")),
    }
}

fn parse_gan_loss(s: &str) -> std::result::Result<GanLoss, String> {
    match s {
        "hinge" => Ok(GanLoss::Hinge),
        "hinge_literal" => Ok(GanLoss::HingeLiteral),
        "bce" => Ok(GanLoss::Bce),
        _ => Err(format!("--gan-loss must be hinge, hinge_literal, or bce (got '{s}')")),
    }
}

fn parse_pixel_norm(s: &str) -> std::result::Result<PixelNorm, String> {
    match s {
        "l1" => Ok(PixelNorm::L1),
        "l2" => Ok(PixelNorm::L2),
        _ => Err(format!("--pixel-norm must be l1 or l2 (got '{s}')")),
    }
}

fn parse_feature_distance(s: &str) -> std::result::Result<FeatureDistance, String> {
    match s {
        "l1" => Ok(FeatureDistance::L1),
        "per_layer_kl" => Ok(FeatureDistance::PerLayerKl),
        _ => Err(format!("--feature-distance must be l1 or per_layer_kl (got '{s}')")),
    }
}

fn parse_label_mode(s: &str) -> std::result::Result<LabelMode, String> {
    match s {
        "independent" => Ok(LabelMode::Independent),
        "shared" => Ok(LabelMode::Shared),
        _ => Err(format!("--label-mode must be independent or shared (got '{s}')")),
    }
}

const RUN_MARKER: &str = "run_complete";

/// Refuses to reuse a completed run directory unless forced, creates the
/// directory, and writes the resolved config next to the outputs.
fn prepare_run<T: Serialize>(out: &Path, force: bool, config: &T) -> Result<()> {
    if out.join(RUN_MARKER).exists() && !force {
        return Err(Error::Argument(format!(
            "{} holds a completed run; pass --force to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _ = fs::remove_file(out.join(RUN_MARKER));
    let text = toml::to_string_pretty(config)
        .map_err(|e| Error::Dataset(format!("config serialization: {e}")))?;
    let path = out.join("config.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn finish_run(out: &Path) -> Result<()> {
    let path = out.join(RUN_MARKER);
    fs::write(&path, "ok\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Argument(_)) => {
            eprintln!("usage error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::MakeMnist(args) => cmd_make_mnist(args),
        Cmd::TeacherSample(args) => cmd_teacher_sample(args),
        Cmd::Distill(args) => cmd_distill(args, false),
        Cmd::Baseline(args) => cmd_distill(args, true),
        Cmd::Compose(args) => cmd_compose(args),
        Cmd::StudyShape(args) => cmd_study_shape(args),
        Cmd::EvalClassifier(args) => cmd_eval_classifier(args),
        Cmd::Params(args) => cmd_params(args),
        Cmd::Grid(args) => cmd_grid(args),
    }
}

fn cmd_make_mnist(args: MakeMnistArgs) -> Result<()> {
    if !(args.scale > 0.0 && args.scale <= 1.0) {
        return Err(Error::Argument(format!(
            "--scale must lie in (0, 1], got {}",
            args.scale
        )));
    }
    prepare_run(&args.out, args.force, &args)?;
    let source = match &args.source {
        Some(dir) => dir.clone(),
        None => {
            let dir = args.out.join("idx_source");
            synthesize_mnist_idx(&dir, args.synth_train, args.synth_test, args.seed)?;
            dir
        }
    };
    let manifest = build_double_colored_mnist(&source, args.seed, &args.out, args.scale)?;
    println!(
        "wrote double-colored mnist: {} train / {} test records at {}",
        manifest.train_count,
        manifest.test_count,
        args.out.display()
    );
    finish_run(&args.out)
}

fn cmd_teacher_sample(args: TeacherSampleArgs) -> Result<()> {
    let dev = imdistill::im::device();
    let handle = match args.teacher.as_str() {
        "procedural" => {
            TeacherHandle::procedural(args.im, args.classes, args.image_size, args.seed)
        }
        "checkpoint" => {
            let dir = args.checkpoint.as_ref().ok_or_else(|| {
                Error::Argument("--teacher checkpoint requires --checkpoint <dir>".into())
            })?;
            TeacherHandle::checkpoint(dir, args.im, &dev)?
        }
        other => {
            return Err(Error::Argument(format!(
                "--teacher must be procedural or checkpoint (got '{other}')"
            )))
        }
    };
    prepare_run(&args.out, args.force, &args)?;
    let dataset = generate_teacher_dataset(
        &handle,
        args.per_class,
        args.classes,
        args.latent_dim,
        args.truncation,
        args.seed,
        &args.out,
        &dev,
    )?;
    println!(
        "wrote {} teacher records ({}) at {}",
        dataset.len(),
        args.im,
        args.out.display()
    );
    finish_run(&args.out)
}

fn cmd_distill(args: DistillArgs, baseline: bool) -> Result<()> {
    let dev = imdistill::im::device();
    let (generator, discriminator) = match args.profile.as_str() {
        "mnist28" => (
            GeneratorSpec::mnist28(args.im.channels()),
            DiscriminatorSpec::mnist28(args.im.channels()),
        ),
        "imagenet256" => {
            let mut g = GeneratorSpec::imagenet256();
            g.output_channels = args.im.channels();
            let mut d = DiscriminatorSpec::imagenet256();
            d.input_channels = args.im.channels();
            (g, d)
        }
        other => {
            return Err(Error::Argument(format!(
                "--profile must be mnist28 or imagenet256 (got '{other}')"
            )))
        }
    };
    prepare_run(&args.out, args.force, &args)?;

    let dataset_dir = match &args.dataset {
        Some(dir) => dir.clone(),
        None => {
            if args.teacher != "procedural" {
                return Err(Error::Argument(
                    "without --dataset only --teacher procedural is supported".into(),
                ));
            }
            let dir = args.out.join("teacher_data");
            let handle = TeacherHandle::procedural(
                args.im,
                generator.num_classes,
                generator.output_size,
                args.seed,
            );
            generate_teacher_dataset(
                &handle,
                args.per_class,
                generator.num_classes,
                generator.latent_dim,
                DEFAULT_TRUNCATION,
                args.seed,
                &dir,
                &dev,
            )?;
            dir
        }
    };

    let mut weights = imdistill::losses::LossWeights::defaults(discriminator.num_layers);
    weights.lambda_pix = args.lambda_pix;
    weights.lambda_adv = args.lambda_adv;
    weights.use_kl = args.use_kl;
    weights.temperature = args.temperature;
    weights.gan_loss = args.gan_loss;
    weights.pixel_norm = args.pixel_norm;
    weights.feature_distance = args.feature_distance;

    let config = DistillConfig {
        im: args.im,
        generator,
        discriminator,
        weights,
        optimizer: imdistill::train::OptimizerConfig {
            name: "adam".into(),
            learning_rate: args.learning_rate,
            beta1: args.beta1,
            beta2: args.beta2,
        },
        batch_size: args.batch_size,
        epochs: args.epochs,
        disc_steps_per_gen_step: args.disc_steps,
        seed: args.seed,
        dataset_dir,
        checkpoint_every: args.checkpoint_every,
    };
    // the full resolved training config, reproducing the run exactly
    let resolved = toml::to_string_pretty(&config)
        .map_err(|e| Error::Dataset(format!("config serialization: {e}")))?;
    let path = args.out.join("distill_config.toml");
    fs::write(&path, resolved).map_err(|e| Error::io(&path, e))?;

    let report = if baseline {
        train_baseline(&config, &args.out, &dev)?
    } else {
        distill_im(&config, &args.out, &dev)?
    };
    if let Some(last) = report.epochs.last() {
        println!(
            "epoch {}: pixel {:.4} feature {:.4} adv_g {:.4} adv_d {:.4} kl {:.4}",
            last.epoch, last.pixel, last.feature, last.adv_g, last.adv_d, last.kl
        );
    }
    println!(
        "checkpoint at {} ({:.1}s)",
        report.final_checkpoint.display(),
        report.wall_clock_secs
    );
    finish_run(&args.out)
}

fn student_checkpoints(shape: &Path, texture: &Path, background: &Path) -> StudentCheckpoints {
    StudentCheckpoints {
        shape: shape.to_path_buf(),
        texture: texture.to_path_buf(),
        background: background.to_path_buf(),
    }
}

fn cmd_compose(args: ComposeArgs) -> Result<()> {
    if !(args.mask_weight > 0.0 && args.mask_weight <= 1.0) {
        return Err(Error::Argument(format!(
            "--mask-weight must lie in (0, 1], got {}",
            args.mask_weight
        )));
    }
    if args.count == 0 {
        return Err(Error::Argument("--count must be >= 1".into()));
    }
    let dev = imdistill::im::device();
    prepare_run(&args.out, args.force, &args)?;
    let ckpts = student_checkpoints(&args.shape, &args.texture, &args.background);
    let set = generate_counterfactuals(
        &ckpts,
        args.count,
        args.seed,
        args.mask_weight,
        args.label_mode,
        &dev,
    )?;

    let images_dir = args.out.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let (n, c, h, w) = set.composite.pixels.dims4()?;
    let data = set.composite.pixels.flatten_all()?.to_vec1::<f32>()?;
    for i in 0..n {
        let mut buf = vec![0u8; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    buf[(y * w + x) * c + ch] = to_u8_sym(data[i * c * h * w + ch * h * w + y * w + x]);
                }
            }
        }
        let img = image::RgbImage::from_vec(w as u32, h as u32, buf)
            .ok_or_else(|| Error::Dataset("composite buffer mismatch".into()))?;
        img.save(images_dir.join(format!("{i:05}.png")))?;
    }

    let mut labels = String::from("index,shape,texture,background\n");
    for i in 0..n {
        labels.push_str(&format!(
            "{},{},{},{}\n",
            i,
            set.mechanisms.shape_labels[i].0,
            set.mechanisms.texture_labels[i].0,
            set.mechanisms.background_labels[i].0
        ));
    }
    let labels_path = args.out.join("labels.csv");
    fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;

    let sheet_n = n.min(16);
    write_contact_sheet(
        &[
            &set.mechanisms.mask.values.narrow(0, 0, sheet_n)?,
            &set.mechanisms.foreground.pixels.narrow(0, 0, sheet_n)?,
            &set.mechanisms.background.pixels.narrow(0, 0, sheet_n)?,
            &set.composite.pixels.narrow(0, 0, sheet_n)?,
        ],
        &args.out.join("sheet.png"),
    )?;
    println!("wrote {} composites at {}", n, args.out.display());
    finish_run(&args.out)
}

fn cmd_study_shape(args: StudyShapeArgs) -> Result<()> {
    let transform = match args.transform.as_str() {
        "noise" => MaskTransform::Noise { sigma: args.sigma },
        "rotation" => MaskTransform::Rotation {
            max_degrees: args.max_degrees,
        },
        "transparency" => MaskTransform::Transparency {
            weight: args.weight,
        },
        other => {
            return Err(Error::Argument(format!(
                "--transform must be noise, rotation, or transparency (got '{other}')"
            )))
        }
    };
    transform.validate()?;
    let dev = imdistill::im::device();
    prepare_run(&args.out, args.force, &args)?;
    let real = ColoredMnist::open(&args.real)?;
    let ckpts = student_checkpoints(&args.shape, &args.texture, &args.background);
    let opts = StudyOptions {
        num_train: args.num_train,
        num_test: args.num_test,
        classifier_epochs: args.classifier_epochs,
        seed: args.seed,
    };
    let result = run_shape_study(transform, &ckpts, &real, &opts, &dev)?;

    let csv_path = args.out.join("study.csv");
    let mut text = if csv_path.exists() {
        fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?
    } else {
        String::from("transform,params,train_accuracy,test_accuracy,seed\n")
    };
    text.push_str(&format!(
        "{},{},{:.2},{:.2},{}\n",
        result.transform, result.transform_params, result.train_accuracy, result.test_accuracy, args.seed
    ));
    fs::write(&csv_path, text).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "transform={} ({}) train_accuracy={:.2} test_accuracy={:.2}",
        result.transform, result.transform_params, result.train_accuracy, result.test_accuracy
    );
    finish_run(&args.out)
}

fn cmd_eval_classifier(args: EvalClassifierArgs) -> Result<()> {
    if !(args.mask_weight > 0.0 && args.mask_weight <= 1.0) {
        return Err(Error::Argument(format!(
            "--mask-weight must lie in (0, 1], got {}",
            args.mask_weight
        )));
    }
    let dev = imdistill::im::device();
    prepare_run(&args.out, args.force, &args)?;
    let real = ColoredMnist::open(&args.real)?;
    let ckpts = student_checkpoints(&args.shape, &args.texture, &args.background);

    let train_gen = generate_counterfactuals(
        &ckpts,
        args.count,
        args.seed,
        args.mask_weight,
        LabelMode::Independent,
        &dev,
    )?;
    let test_gen = generate_counterfactuals(
        &ckpts,
        args.count,
        args.seed ^ 0x7e57,
        args.mask_weight,
        LabelMode::Independent,
        &dev,
    )?;
    let sample = |split, n: usize, seed: u64| -> Result<candle_core::Tensor> {
        use rand::{Rng, SeedableRng};
        let len = real.split_len(split);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..len)).collect();
        Ok(real.load_batch(split, &idx, &dev)?.pixels)
    };
    let data = ClassifierData {
        train_real: sample(imdistill::datasets::Split::Train, args.count, args.seed ^ 0x4ea1)?,
        train_generated: train_gen.composite.pixels,
        test_real: sample(imdistill::datasets::Split::Test, args.count, args.seed ^ 0x4ea2)?,
        test_generated: test_gen.composite.pixels,
    };
    let trained = train_invariant_classifier(&data, args.epochs, args.seed, &dev)?;
    println!(
        "train_accuracy={:.2} test_accuracy={:.2}",
        trained.train_accuracy, trained.test_accuracy
    );
    let result_path = args.out.join("result.toml");
    fs::write(
        &result_path,
        format!(
            "train_accuracy = {:.4}\ntest_accuracy = {:.4}\n",
            trained.train_accuracy, trained.test_accuracy
        ),
    )
    .map_err(|e| Error::io(&result_path, e))?;
    finish_run(&args.out)
}

fn cmd_params(args: ParamsArgs) -> Result<()> {
    match args.profile.as_str() {
        "mnist28" => {
            println!(
                "mnist28 generator (mask): {}",
                generator_param_count(&GeneratorSpec::mnist28(1))
            );
            println!(
                "mnist28 generator (rgb): {}",
                generator_param_count(&GeneratorSpec::mnist28(3))
            );
            println!(
                "mnist28 discriminator (rgb): {}",
                discriminator_param_count(&DiscriminatorSpec::mnist28(3))
            );
            println!(
                "mnist28 classifier (binary): {}",
                classifier_param_count(&ClassifierSpec::mnist28(2))
            );
        }
        "imagenet256" => {
            println!(
                "imagenet256 generator (rgb): {}",
                generator_param_count(&GeneratorSpec::imagenet256())
            );
            println!(
                "imagenet256 discriminator (rgb): {}",
                discriminator_param_count(&DiscriminatorSpec::imagenet256())
            );
        }
        other => {
            return Err(Error::Argument(format!(
                "--profile must be mnist28 or imagenet256 (got '{other}')"
            )))
        }
    }
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Argument("--count must be >= 1".into()));
    }
    let dev = imdistill::im::device();
    prepare_run(&args.out, args.force, &args)?;
    let dataset = TeacherDataset::open(&args.dataset)?;
    let student = Generator::load(&args.checkpoint, &dev)?;
    let n = args.count.min(dataset.len());
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut rand_chacha::ChaCha12Rng::seed_from_u64(args.seed));
    let indices = &all[..n];
    let (z, y, teacher) = dataset.load_batch(indices, &dev)?;
    let generated = student.forward(&z, &y, false)?;
    let path = args.out.join("grid.png");
    write_contact_sheet(&[&teacher, &generated], &path)?;
    println!("wrote {}", path.display());
    finish_run(&args.out)
}
