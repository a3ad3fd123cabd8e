//! Dice coefficient and loss, the per-class multi-class Dice sum with an
//! optional class-agnostic auxiliary term, and the degenerate-predictor
//! analysis for batches without foreground.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Shape4, Tensor4};
use crate::error::{ensure_dim, Error, Result};

/// Which pixels enter one Dice sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DicePooling {
    /// All pixels of the mini-batch form one sum per class.
    #[default]
    Batch,
    /// One Dice loss per image, averaged over the batch.
    PerImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub pooling: DicePooling,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            pooling: DicePooling::Batch,
        }
    }
}

impl DiceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("dice epsilon must be > 0, got {}", self.epsilon)))
        }
    }
}

/// Output activation of the main head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `C + 1` channels, channel 0 is background and carries no loss.
    SoftmaxWithBackground,
    /// `C` channels, channel `c - 1` scores class `c`.
    SigmoidNoBackground,
}

impl HeadKind {
    pub fn channels(self, classes: usize) -> usize {
        match self {
            HeadKind::SoftmaxWithBackground => classes + 1,
            HeadKind::SigmoidNoBackground => classes,
        }
    }

    /// Channel holding foreground class `class` (1-based).
    pub fn channel_of(self, class: usize) -> usize {
        match self {
            HeadKind::SoftmaxWithBackground => class,
            HeadKind::SigmoidNoBackground => class - 1,
        }
    }

    pub fn classes(self, channels: usize) -> usize {
        match self {
            HeadKind::SoftmaxWithBackground => channels.saturating_sub(1),
            HeadKind::SigmoidNoBackground => channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Dice loss of each foreground class `1..=C`.
    pub per_class: Vec<f64>,
    /// Unweighted auxiliary Dice loss.
    pub auxiliary: Option<f64>,
    /// `sum(per_class) + C * auxiliary`.
    pub total: f64,
}

impl LossBreakdown {
    fn new(per_class: Vec<f64>, auxiliary: Option<f64>) -> Self {
        let classes = per_class.len() as f64;
        let main: f64 = per_class.iter().sum();
        let total = main + auxiliary.map_or(0.0, |a| classes * a);
        Self {
            per_class,
            auxiliary,
            total,
        }
    }

    /// Total without the auxiliary term.
    pub fn main(&self) -> f64 {
        self.per_class.iter().sum()
    }
}

/// Gradients of [`LossBreakdown::total`] with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct LossGradients<T> {
    pub main: Tensor4<T>,
    pub aux: Option<Tensor4<T>>,
}

/// Running sums `(sum y*p, sum y + sum p)` of one Dice term.
#[derive(Clone, Copy, Default)]
struct DiceSums {
    overlap: f64,
    total: f64,
}

impl DiceSums {
    fn coefficient(self, eps: f64) -> f64 {
        (2.0 * self.overlap + eps) / (self.total + eps)
    }

    /// `d(1 - DC)/d p_i = -(2 y_i (S + eps) - (2I + eps)) / (S + eps)^2`
    /// split into the part for `y_i = 1` and `y_i = 0`.
    fn loss_grad(self, eps: f64) -> (f64, f64) {
        let denom = self.total + eps;
        let num = 2.0 * self.overlap + eps;
        let d2 = denom * denom;
        (-(2.0 * denom - num) / d2, num / d2)
    }
}

fn check_prob(op: &'static str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(op, format!("prediction {p} outside [0, 1]")))
    }
}

fn check_truth(op: &'static str, t: f64) -> Result<()> {
    if t == 0.0 || t == 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(op, format!("truth value {t} is not binary")))
    }
}

fn sums(op: &'static str, pred: &[f64], truth: &[f64]) -> Result<DiceSums> {
    ensure_dim(op, "element count", pred.len(), truth.len())?;
    let mut s = DiceSums::default();
    for (&p, &t) in pred.iter().zip(truth) {
        check_prob(op, p)?;
        check_truth(op, t)?;
        s.overlap += p * t;
        s.total += p + t;
    }
    Ok(s)
}

/// `DC = (2 sum(y p) + eps) / (sum(y + p) + eps)` over all elements.
pub fn dice_coefficient(pred: &[f64], truth: &[f64], config: &DiceConfig) -> Result<f64> {
    config.validate()?;
    Ok(sums("dice_coefficient", pred, truth)?.coefficient(config.epsilon))
}

/// `DL = 1 - DC` and its gradient with respect to `pred`.
pub fn dice_loss(pred: &[f64], truth: &[f64], config: &DiceConfig) -> Result<(f64, Vec<f64>)> {
    config.validate()?;
    let s = sums("dice_loss", pred, truth)?;
    let eps = config.epsilon;
    let (g_pos, g_neg) = s.loss_grad(eps);
    let grad = truth
        .iter()
        .map(|&t| if t == 1.0 { g_pos } else { g_neg })
        .collect();
    Ok((1.0 - s.coefficient(eps), grad))
}

/// Dice term over channel `channel` of `probs` against the binary mask
/// `truth` (one entry per pixel). Returns the loss and, when `grad` is given,
/// writes `weight * dL/dp` into that channel of `grad`.
fn channel_dice<T: Real>(
    probs: &Tensor4<T>,
    channel: usize,
    truth: &[bool],
    config: &DiceConfig,
    weight: f64,
    mut grad: Option<&mut Tensor4<T>>,
) -> Result<f64> {
    let s = probs.shape();
    let c = s.channels;
    let data = probs.data();
    let groups: Vec<std::ops::Range<usize>> = match config.pooling {
        DicePooling::Batch => vec![0..s.pixels()],
        DicePooling::PerImage => {
            let per = s.height * s.width;
            (0..s.batch).map(|n| n * per..(n + 1) * per).collect()
        }
    };
    let scale = 1.0 / groups.len().max(1) as f64;
    let mut loss = 0.0;
    for range in groups {
        let mut sum = DiceSums::default();
        for px in range.clone() {
            let p = data[px * c + channel].to_f64().unwrap_or(f64::NAN);
            check_prob("multiclass_dice_loss", p)?;
            let y = if truth[px] { 1.0 } else { 0.0 };
            sum.overlap += p * y;
            sum.total += p + y;
        }
        loss += scale * (1.0 - sum.coefficient(config.epsilon));
        if let Some(g) = grad.as_deref_mut() {
            let (g_pos, g_neg) = sum.loss_grad(config.epsilon);
            let (g_pos, g_neg) = (T::lit(weight * scale * g_pos), T::lit(weight * scale * g_neg));
            let gd = g.data_mut();
            for px in range {
                gd[px * c + channel] = if truth[px] { g_pos } else { g_neg };
            }
        }
    }
    Ok(loss)
}

fn validate_inputs<T: Real>(
    probs: &Tensor4<T>,
    labels: &[u8],
    head: HeadKind,
    aux: Option<(&Tensor4<T>, &[bool])>,
) -> Result<usize> {
    let s = probs.shape();
    ensure_dim("multiclass_dice_loss", "label count", s.pixels(), labels.len())?;
    let classes = head.classes(s.channels);
    if classes == 0 {
        return Err(Error::invalid(
            "multiclass_dice_loss",
            format!("{} channels leave no foreground class for {head:?}", s.channels),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize > classes) {
        return Err(Error::invalid(
            "multiclass_dice_loss",
            format!("label {bad} exceeds {classes} classes implied by {head:?}"),
        ));
    }
    if let Some((scores, truth)) = aux {
        let a = scores.shape();
        ensure_dim("multiclass_dice_loss", "aux channels", 1, a.channels)?;
        ensure_dim("multiclass_dice_loss", "aux pixels", s.pixels(), a.pixels())?;
        ensure_dim("multiclass_dice_loss", "aux truth count", s.pixels(), truth.len())?;
    }
    Ok(classes)
}

/// Foreground mask: union of all classes `1..=C`.
pub fn foreground_mask(labels: &[u8]) -> Vec<bool> {
    labels.iter().map(|&l| l > 0).collect()
}

fn multiclass_impl<T: Real>(
    probs: &Tensor4<T>,
    labels: &[u8],
    head: HeadKind,
    aux: Option<(&Tensor4<T>, &[bool])>,
    config: &DiceConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<LossGradients<T>>)> {
    config.validate()?;
    let classes = validate_inputs(probs, labels, head, aux)?;
    let mut grad_main = want_grad.then(|| Tensor4::zeros(probs.shape()));
    let mut per_class = Vec::with_capacity(classes);
    for class in 1..=classes {
        let truth: Vec<bool> = labels.iter().map(|&l| l as usize == class).collect();
        per_class.push(channel_dice(
            probs,
            head.channel_of(class),
            &truth,
            config,
            1.0,
            grad_main.as_mut(),
        )?);
    }
    let mut grad_aux = None;
    let auxiliary = match aux {
        Some((scores, truth)) => {
            let mut g = want_grad.then(|| Tensor4::zeros(scores.shape()));
            let l = channel_dice(scores, 0, truth, config, classes as f64, g.as_mut())?;
            grad_aux = g;
            Some(l)
        }
        None => None,
    };
    let breakdown = LossBreakdown::new(per_class, auxiliary);
    let grads = grad_main.map(|main| LossGradients { main, aux: grad_aux });
    Ok((breakdown, grads))
}

/// Sum of per-class Dice losses over foreground classes, plus `C` times the
/// auxiliary Dice loss against the union-of-foreground mask when `aux_scores`
/// is given.
///
/// `probs` is `B x H x W x K` with `K = C + 1` (softmax) or `K = C`
/// (sigmoid); `labels` holds one class index per pixel in `0..=C`.
pub fn multiclass_dice_loss<T: Real>(
    probs: &Tensor4<T>,
    labels: &[u8],
    head: HeadKind,
    aux_scores: Option<&Tensor4<T>>,
    config: &DiceConfig,
) -> Result<LossBreakdown> {
    let mask = aux_scores.map(|_| foreground_mask(labels));
    let aux = aux_scores.zip(mask.as_deref());
    Ok(multiclass_impl(probs, labels, head, aux, config, false)?.0)
}

/// [`multiclass_dice_loss`] plus gradients with respect to `probs` and
/// `aux_scores`.
pub fn multiclass_dice_loss_with_grad<T: Real>(
    probs: &Tensor4<T>,
    labels: &[u8],
    head: HeadKind,
    aux_scores: Option<&Tensor4<T>>,
    config: &DiceConfig,
) -> Result<(LossBreakdown, LossGradients<T>)> {
    let mask = aux_scores.map(|_| foreground_mask(labels));
    let aux = aux_scores.zip(mask.as_deref());
    let (b, g) = multiclass_impl(probs, labels, head, aux, config, true)?;
    Ok((b, g.expect("gradients requested")))
}

/// Variant with an explicit auxiliary target, used when the main labels do
/// not carry every foreground class (single-class training).
pub fn multiclass_dice_loss_with_aux_target<T: Real>(
    probs: &Tensor4<T>,
    labels: &[u8],
    head: HeadKind,
    aux: Option<(&Tensor4<T>, &[bool])>,
    config: &DiceConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<LossGradients<T>>)> {
    multiclass_impl(probs, labels, head, aux, config, want_grad)
}

/// Result of [`degenerate_bound_analysis`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegenerateReport {
    pub k: usize,
    pub batch_pixels: usize,
    /// `1 / k`.
    pub bound: f64,
    /// Average Dice loss of the all-zeros predictor.
    pub degenerate_avg_loss: f64,
    /// Average Dice loss of a predictor outputting 0.5 everywhere.
    pub honest_model_avg_loss: f64,
}

/// Simulates `k` batches of `batch_pixels` pixels where only the first batch
/// holds foreground (its first half), and measures the average Dice loss of
/// an all-zeros predictor and of a uniform 0.5 predictor.
pub fn degenerate_bound_analysis(
    k: usize,
    batch_pixels: usize,
    config: &DiceConfig,
) -> Result<DegenerateReport> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if batch_pixels < 2 {
        return Err(Error::Config(format!(
            "batches need at least 2 pixels, got {batch_pixels}"
        )));
    }
    config.validate()?;
    let shape = Shape4::new(1, 1, batch_pixels, 1);
    let fg_pixels = batch_pixels.div_ceil(2);
    let with_fg: Vec<u8> = (0..batch_pixels).map(|i| u8::from(i < fg_pixels)).collect();
    let empty = vec![0u8; batch_pixels];

    let average = |value: f64| -> Result<f64> {
        let pred = Tensor4::<f64>::full(shape, value);
        let mut sum = 0.0;
        for b in 0..k {
            let labels = if b == 0 { &with_fg } else { &empty };
            let single = HeadKind::SigmoidNoBackground;
            sum += multiclass_dice_loss(&pred, labels, single, None, config)?.total;
        }
        Ok(sum / k as f64)
    };

    Ok(DegenerateReport {
        k,
        batch_pixels,
        bound: 1.0 / k as f64,
        degenerate_avg_loss: average(0.0)?,
        honest_model_avg_loss: average(0.5)?,
    })
}
