//! Training loop with step-decay learning rate and validation-based model
//! selection, plus the ablation grid and single-class experiments.

mod ablation;
mod data;

pub use ablation::{
    ablation_csv, ablation_runs_csv, order_rows, run_ablation, run_ablation_with_progress, run_single_class, single_class_csv, AblationGrid, AblationResult,
    AblationRow, SeedOutcome, SingleClassOutcome,
};
pub use data::{BatchStream, LabeledSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Checkpoint, Mode, Module, Tensor4};
use crate::dataset::{d4_permutation, permute_pixels, stack_batch, D4_ORDER};
use crate::error::{Error, Result};
use crate::losses::{multiclass_dice_loss_with_aux_target, DiceConfig};
use crate::metrics::{merge, ConfusionMatrix, EvalReport, MergeConfig};
use crate::network::{NetworkConfig, SegNet};

/// How long one epoch is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochMode {
    /// Exactly `iterations_per_epoch` optimizer steps.
    #[default]
    FixedIterations,
    /// One pass: the scheduler plan when oversampling, otherwise every
    /// sample once.
    DataPass,
}

fn default_true() -> bool {
    true
}

fn default_eval_batch() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations_per_epoch: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    /// Epochs between learning-rate halvings.
    pub lr_halving_period: usize,
    pub oversampling: bool,
    pub network: NetworkConfig,
    pub seed: u64,
    #[serde(default)]
    pub epoch_mode: EpochMode,
    #[serde(default = "default_true")]
    pub augment: bool,
    #[serde(default)]
    pub dice: DiceConfig,
    #[serde(default)]
    pub merge: MergeConfig,
    /// Patches per validation batch; the Dice loss is pooled per batch.
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(NetworkConfig::desk(4))
    }
}

impl TrainConfig {
    /// Desk-scale schedule: 40 epochs of 100 iterations from lr 1e-3, halving
    /// every 10.
    pub fn desk(network: NetworkConfig) -> Self {
        Self {
            batch_size: 8,
            iterations_per_epoch: 100,
            epochs: 40,
            initial_lr: 1e-3,
            lr_halving_period: 10,
            oversampling: false,
            network,
            seed: 0,
            epoch_mode: EpochMode::FixedIterations,
            augment: true,
            dice: DiceConfig::default(),
            merge: MergeConfig::default(),
            eval_batch_size: default_eval_batch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations_per_epoch == 0 || self.epochs == 0 || self.lr_halving_period == 0
        {
            return Err(Error::Config(
                "batch_size, iterations_per_epoch, epochs and lr_halving_period must be >= 1".into(),
            ));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be >= 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if self.oversampling && self.batch_size <= self.network.classes {
            return Err(Error::Config(format!(
                "oversampling needs batch size {} > class count {}",
                self.batch_size, self.network.classes
            )));
        }
        self.network.validate()?;
        self.dice.validate()?;
        self.merge.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self.initial_lr, self.lr_halving_period, epoch)
    }
}

/// `initial * 2^-(epoch / period)` with integer division.
pub fn lr_at(initial: f64, period: usize, epoch: usize) -> f64 {
    let halvings = (epoch / period.max(1)).min(i32::MAX as usize) as i32;
    initial * 0.5f64.powi(halvings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation loss without the auxiliary term (used for selection).
    pub val_loss: f64,
    /// Validation loss including the weighted auxiliary term, if present.
    pub val_loss_with_aux: Option<f64>,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights minimize the validation loss.
    pub best_epoch: usize,
    /// Validation report of the selected weights.
    pub report: EvalReport,
    pub checkpoint: Checkpoint,
}

impl RunRecord {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    /// `epoch,lr,train_loss,val_loss,val_loss_with_aux,val_macro_f1` rows.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_loss,val_loss_with_aux,val_macro_f1,selected\n");
        for e in &self.epochs {
            let aux = e.val_loss_with_aux.map_or(String::new(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{},{:e},{:.6},{:.6},{aux},{:.4},{}\n",
                e.epoch,
                e.lr,
                e.train_loss,
                e.val_loss,
                e.val_macro_f1,
                u8::from(e.epoch == self.best_epoch)
            ));
        }
        out
    }
}

/// Validation loss (with and without the auxiliary term) and the confusion
/// matrix of `net` over `data`.
pub struct Validation {
    pub loss: f64,
    pub loss_with_aux: Option<f64>,
    pub report: EvalReport,
}

pub fn validate(net: &SegNet<f32>, data: &LabeledSet, config: &TrainConfig) -> Result<Validation> {
    let head = net.config().head_kind();
    let mut confusion = ConfusionMatrix::new(data.classes);
    let (mut main_sum, mut aux_sum, mut batches) = (0.0, 0.0, 0usize);
    let ids: Vec<usize> = (0..data.len()).collect();
    for chunk in ids.chunks(config.eval_batch_size) {
        let refs: Vec<_> = chunk.iter().map(|&i| &data.patches[i]).collect();
        let (x, labels) = stack_batch(&refs)?;
        let out = net.infer_with_aux(&x)?;
        let mask: Vec<bool> = chunk.iter().flat_map(|&i| data.aux_mask(i)).collect();
        let aux = out.aux.as_ref().map(|a| (a, mask.as_slice()));
        let (loss, _) = multiclass_dice_loss_with_aux_target(&out.main, &labels, head, aux, &config.dice, false)?;
        main_sum += loss.main();
        aux_sum += loss.total;
        batches += 1;
        let pred = merge(&out.main, head, &config.merge)?;
        confusion.add(&pred, &labels)?;
    }
    let n = batches.max(1) as f64;
    Ok(Validation {
        loss: main_sum / n,
        loss_with_aux: net.config().use_aux_head.then_some(aux_sum / n),
        report: EvalReport::from_confusion(confusion),
    })
}

/// Trains one network and keeps the weights with the lowest validation
/// loss.
pub fn train(config: &TrainConfig, train_data: &LabeledSet, val_data: &LabeledSet) -> Result<RunRecord> {
    train_with_progress(config, train_data, val_data, &mut |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    train_data: &LabeledSet,
    val_data: &LabeledSet,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    config.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if train_data.classes != config.network.classes || val_data.classes != config.network.classes {
        return Err(Error::Config(format!(
            "network has {} classes but data has {} (train) / {} (val)",
            config.network.classes, train_data.classes, val_data.classes
        )));
    }
    let size = train_data.patches[0].size;
    config.network.validate_input(size, size)?;

    let mut net = SegNet::<f32>::new(config.network.clone(), config.seed)?;
    let mut adam = Adam::<f32>::default();
    let mut stream = BatchStream::new(train_data, config)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(1);
    let head = config.network.head_kind();
    let iterations = match config.epoch_mode {
        EpochMode::FixedIterations => config.iterations_per_epoch,
        EpochMode::DataPass => stream.pass_length(),
    };

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Checkpoint, EvalReport)> = None;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        for it in 0..iterations {
            let batch = stream.next_batch()?;
            let (x, labels, mask) = assemble(train_data, &batch, config.augment, &mut aug_rng)?;
            let diverged = |what: &str, best: &Option<(usize, f64, Checkpoint, EvalReport)>| Error::Diverged {
                epoch,
                iteration: it,
                what: what.to_string(),
                last_good: best.as_ref().map(|b| Box::new(b.2.clone())),
            };
            let out = net.forward(&x, Mode::Train)?;
            let aux = out.aux.as_ref().map(|a| (a, mask.as_slice()));
            let (loss, grads) =
                multiclass_dice_loss_with_aux_target(&out.main, &labels, head, aux, &config.dice, true)?;
            if !loss.total.is_finite() {
                return Err(diverged("loss", &best));
            }
            net.zero_grad();
            net.backward(&grads.expect("gradients requested"))?;
            match adam.step_module(&mut net, lr) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { name }) => {
                    return Err(diverged(&format!("gradient in `{name}`"), &best))
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss.total;
        }
        let v = validate(&net, val_data, config)?;
        if !v.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                iteration: iterations,
                what: "validation loss".into(),
                last_good: best.map(|b| Box::new(b.2)),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / iterations as f64,
            val_loss: v.loss,
            val_loss_with_aux: v.loss_with_aux,
            val_macro_f1: v.report.macro_f1(),
        });
        progress(epochs.last().expect("just pushed"));
        if best.as_ref().map_or(true, |b| v.loss < b.1) {
            best = Some((epoch, v.loss, Checkpoint::capture(&mut net), v.report));
        }
    }
    let (best_epoch, _, checkpoint, report) = best.expect("at least one epoch");
    Ok(RunRecord {
        config: config.clone(),
        epochs,
        best_epoch,
        report,
        checkpoint,
    })
}

/// Rebuilds the network stored in a run's checkpoint.
pub fn restore_network(config: &NetworkConfig, checkpoint: &Checkpoint) -> Result<SegNet<f32>> {
    let mut net = SegNet::<f32>::new(config.clone(), 0)?;
    checkpoint.restore(&mut net)?;
    Ok(net)
}

/// Stacks one batch, applying a random dihedral element per sample when
/// `augment` is set. Returns input, labels and the auxiliary target.
fn assemble(
    data: &LabeledSet,
    batch: &[usize],
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor4<f32>, Vec<u8>, Vec<bool>)> {
    let mut patches = Vec::with_capacity(batch.len());
    let mut mask = Vec::new();
    for &i in batch {
        let p = &data.patches[i];
        let m = data.aux_mask(i);
        if augment {
            let e = rng.gen_range(0..D4_ORDER);
            let perm = d4_permutation(p.size, e)?;
            let mut q = p.clone();
            q.image = permute_pixels(&p.image, 3, &perm);
            q.labels = permute_pixels(&p.labels, 1, &perm);
            mask.extend(permute_pixels(&m, 1, &perm));
            patches.push(q);
        } else {
            mask.extend(m);
            patches.push(p.clone());
        }
    }
    let refs: Vec<_> = patches.iter().collect();
    let (x, labels) = stack_batch(&refs)?;
    Ok((x, labels, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_closed_form() {
        assert_eq!(lr_at(2e-4, 50, 100), 5e-5);
        assert_eq!(lr_at(2e-4, 50, 49), 2e-4);
        assert_eq!(lr_at(2e-4, 50, 50), 1e-4);
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(39), 1e-3 / 8.0);
    }

    #[test]
    fn config_json_roundtrip() {
        let c = TrainConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn oversampling_needs_room_for_fillers() {
        let mut c = TrainConfig::default();
        c.oversampling = true;
        c.batch_size = 4;
        assert!(c.validate().is_err());
        c.batch_size = 5;
        assert!(c.validate().is_ok());
    }
}
