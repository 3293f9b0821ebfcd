//! Distillation training objectives: pixel-wise, adversarial, feature-level
//! and KL-divergence terms, plus the combined generator/discriminator
//! objectives. All functions are pure and differentiable through candle.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::im::LabeledImageBatch;

/// Per-layer discriminator activations, one tensor per convolutional layer.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub layers: Vec<Tensor>,
}

impl FeatureStack {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("empty feature stack".into()));
        }
        let b = layers[0].dims()[0];
        if layers.iter().any(|l| l.dims()[0] != b) {
            return Err(Error::shape(
                "FeatureStack",
                "layers disagree on batch size".to_string(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelNorm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanLoss {
    /// Standard hinge: mean[max(0, 1-D(T))] + mean[max(0, 1+D(S))].
    Hinge,
    /// The printed form: -mean[max(0, 1-D(T)) + max(0, 1-D(S))], kept for
    /// fidelity experiments.
    HingeLiteral,
    /// Non-saturating cross entropy.
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDistance {
    L1,
    PerLayerKl,
}

/// Every weight and variant switch of the combined objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the pixel-wise term.
    pub lambda_pix: f64,
    /// Weight of the adversarial generator term.
    pub lambda_adv: f64,
    /// Per-discriminator-layer feature weights.
    pub alpha: Vec<f64>,
    /// Softmax temperature for the KL term.
    pub temperature: f64,
    pub use_kl: bool,
    /// Classic-KD t^2 gradient correction on the KL term, off by default.
    pub kl_temperature_sq: bool,
    pub pixel_norm: PixelNorm,
    pub gan_loss: GanLoss,
    pub feature_distance: FeatureDistance,
}

impl LossWeights {
    pub fn defaults(num_disc_layers: usize) -> Self {
        Self {
            lambda_pix: 1.0,
            lambda_adv: 1.0,
            alpha: vec![1.0 / num_disc_layers.max(1) as f64; num_disc_layers],
            temperature: 1.0,
            use_kl: false,
            kl_temperature_sq: false,
            pixel_norm: PixelNorm::L1,
            gan_loss: GanLoss::Hinge,
            feature_distance: FeatureDistance::L1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be > 0".into()));
        }
        if self.lambda_pix < 0.0 || self.lambda_adv < 0.0 || self.alpha.iter().any(|a| *a < 0.0) {
            return Err(Error::Argument("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Mean over batch and all elements of |T - S| (L1) or (T - S)^2 (L2).
pub fn pixel_loss(
    teacher_out: &LabeledImageBatch,
    student_out: &LabeledImageBatch,
    norm: PixelNorm,
) -> Result<Tensor> {
    pixel_loss_t(&teacher_out.pixels, &student_out.pixels, norm)
}

pub fn pixel_loss_t(teacher: &Tensor, student: &Tensor, norm: PixelNorm) -> Result<Tensor> {
    if teacher.dims() != student.dims() {
        return Err(Error::shape(
            "pixel_loss",
            format!("teacher {:?} vs student {:?}", teacher.dims(), student.dims()),
        ));
    }
    let diff = (teacher - student)?;
    let l = match norm {
        PixelNorm::L1 => diff.abs()?.mean_all()?,
        PixelNorm::L2 => diff.sqr()?.mean_all()?,
    };
    Ok(l)
}

/// Adversarial generator term on raw (pre-sigmoid) discriminator scores.
pub fn adv_gen_loss(disc_scores_student: &Tensor, mode: GanLoss) -> Result<Tensor> {
    if disc_scores_student.elem_count() == 0 {
        return Err(Error::Argument("empty score vector".into()));
    }
    match mode {
        GanLoss::Hinge | GanLoss::HingeLiteral => Ok(disc_scores_student.mean_all()?.neg()?),
        GanLoss::Bce => {
            // non-saturating: mean of -log sigmoid(s) = mean softplus(-s)
            let l = softplus(&disc_scores_student.neg()?)?;
            Ok(l.mean_all()?)
        }
    }
}

/// Adversarial discriminator term; teacher outputs play the "real" side.
pub fn adv_disc_loss(
    disc_scores_teacher: &Tensor,
    disc_scores_student: &Tensor,
    mode: GanLoss,
) -> Result<Tensor> {
    if disc_scores_teacher.elem_count() == 0 || disc_scores_student.elem_count() == 0 {
        return Err(Error::Argument("empty score vector".into()));
    }
    if disc_scores_teacher.dims() != disc_scores_student.dims() {
        return Err(Error::shape(
            "adv_disc_loss",
            format!(
                "teacher {:?} vs student {:?}",
                disc_scores_teacher.dims(),
                disc_scores_student.dims()
            ),
        ));
    }
    match mode {
        GanLoss::Hinge => {
            let t = hinge(&(1.0 - disc_scores_teacher)?)?.mean_all()?;
            let s = hinge(&(disc_scores_student + 1.0)?)?.mean_all()?;
            Ok((t + s)?)
        }
        GanLoss::HingeLiteral => {
            let t = hinge(&(1.0 - disc_scores_teacher)?)?.mean_all()?;
            let s = hinge(&(1.0 - disc_scores_student)?)?.mean_all()?;
            Ok((t + s)?.neg()?)
        }
        GanLoss::Bce => {
            let t = softplus(&disc_scores_teacher.neg()?)?.mean_all()?;
            let s = softplus(disc_scores_student)?.mean_all()?;
            Ok((t + s)?)
        }
    }
}

fn hinge(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

// Numerically stable log(1 + exp(x)) = max(x, 0) + log(1 + exp(-|x|)).
fn softplus(x: &Tensor) -> Result<Tensor> {
    let pos = x.relu()?;
    let nabs = x.abs()?.neg()?;
    let log1p = (nabs.exp()? + 1.0)?.log()?;
    Ok((pos + log1p)?)
}

/// Weighted sum over layers of the per-layer distance between teacher and
/// student discriminator activations.
pub fn feature_loss(
    teacher_feats: &FeatureStack,
    student_feats: &FeatureStack,
    weights: &[f64],
    distance: FeatureDistance,
    temperature: f64,
) -> Result<Tensor> {
    if teacher_feats.len() != student_feats.len() {
        return Err(Error::shape(
            "feature_loss",
            format!(
                "teacher has {} layers, student {}",
                teacher_feats.len(),
                student_feats.len()
            ),
        ));
    }
    if weights.len() != teacher_feats.len() {
        return Err(Error::Argument(format!(
            "{} alpha weights for {} layers",
            weights.len(),
            teacher_feats.len()
        )));
    }
    let first = &teacher_feats.layers[0];
    let mut total = Tensor::zeros((), first.dtype(), first.device())?;
    for ((t, s), alpha) in teacher_feats
        .layers
        .iter()
        .zip(student_feats.layers.iter())
        .zip(weights.iter())
    {
        if t.dims() != s.dims() {
            return Err(Error::shape(
                "feature_loss",
                format!("layer shapes {:?} vs {:?}", t.dims(), s.dims()),
            ));
        }
        let d = match distance {
            FeatureDistance::L1 => (t - s)?.abs()?.mean_all()?,
            FeatureDistance::PerLayerKl => {
                let b = t.dims()[0];
                let tf = t.reshape((b, ()))?;
                let sf = s.reshape((b, ()))?;
                kl_rows(&tf, &sf, temperature)?
            }
        };
        total = (total + (d * *alpha)?)?;
    }
    Ok(total)
}

/// KL divergence between teacher and student outputs, treating each flattened
/// image as a logit vector softmaxed at the given temperature.
pub fn kl_loss(
    teacher_out: &LabeledImageBatch,
    student_out: &LabeledImageBatch,
    temperature: f64,
) -> Result<Tensor> {
    kl_loss_t(&teacher_out.pixels, &student_out.pixels, temperature)
}

pub fn kl_loss_t(teacher: &Tensor, student: &Tensor, temperature: f64) -> Result<Tensor> {
    if teacher.dims() != student.dims() {
        return Err(Error::shape(
            "kl_loss",
            format!("teacher {:?} vs student {:?}", teacher.dims(), student.dims()),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument("temperature must be > 0".into()));
    }
    let b = teacher.dims()[0];
    let t = teacher.reshape((b, ()))?;
    let s = student.reshape((b, ()))?;
    kl_rows(&t, &s, temperature)
}

// Batch-mean KL(softmax(t/T) || softmax(s/T)) over rows of 2-D tensors.
fn kl_rows(t_logits: &Tensor, s_logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let t = (t_logits / temperature)?;
    let s = (s_logits / temperature)?;
    let log_pt = log_softmax(&t)?;
    let log_ps = log_softmax(&s)?;
    let pt = log_pt.exp()?;
    let per_row = (pt.mul(&(log_pt - log_ps)?)?).sum(1)?;
    Ok(per_row.mean_all()?)
}

fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(1)?;
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Individual generator-loss components, kept separate for logging.
#[derive(Debug, Clone)]
pub struct GeneratorParts {
    pub feature: Tensor,
    pub pixel: Tensor,
    pub adv_gen: Tensor,
    pub kl: Tensor,
}

/// Combined generator objective:
/// `feature + lambda_pix * pixel + lambda_adv * adv_gen (+ kl)`.
pub fn generator_objective(parts: &GeneratorParts, weights: &LossWeights) -> Result<Tensor> {
    for (name, t) in [
        ("feature", &parts.feature),
        ("pixel", &parts.pixel),
        ("adv_gen", &parts.adv_gen),
        ("kl", &parts.kl),
    ] {
        ensure_finite(t, name)?;
    }
    let mut total = (&parts.feature + (&parts.pixel * weights.lambda_pix)?)?;
    total = (total + (&parts.adv_gen * weights.lambda_adv)?)?;
    if weights.use_kl {
        let kl = if weights.kl_temperature_sq {
            (&parts.kl * (weights.temperature * weights.temperature))?
        } else {
            parts.kl.clone()
        };
        total = (total + kl)?;
    }
    Ok(total)
}

/// The discriminator objective is the adversarial term alone.
pub fn discriminator_objective(adv_disc: &Tensor) -> Result<Tensor> {
    ensure_finite(adv_disc, "adv_disc")?;
    Ok(adv_disc.clone())
}

fn ensure_finite(t: &Tensor, term: &str) -> Result<()> {
    let v = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            term: term.to_string(),
            step: 0,
        });
    }
    Ok(())
}
