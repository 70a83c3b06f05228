//! Training loop for the multi-task detector: ADAM with a triangular
//! cyclical learning rate, subject-aware batching, early stopping on
//! validation mean F1, and subject-disjoint k-fold cross-validation scored
//! over pooled predictions.
//!
//! Every random choice (parameter init, shuffles, dropout masks, identity
//! covariates, splits) flows from one seed through labeled streams, so a
//! single-threaded run is reproducible bit for bit.

mod adam;
mod metrics;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use metrics::{AuMetrics, MetricsReport, PredictionSet};
pub use schedule::lr_at;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::betagraph::{bgc_loss, ScreeningConfig};
use crate::datapipe::{kfold_subject_split, Dataset, Sample};
use crate::diffcomp::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{wcce, wmce, LabelWeights};
use crate::network::{BeCoMENetParams, NetworkConfig};
use crate::rngstream;
use crate::scalar::Real;

/// Smallest batch the correlation screening accepts: the beta shape
/// (b - 1) / 2 must stay positive with room for a meaningful null.
pub const MIN_BATCH: usize = 3;

/// Samples evaluated per tape during prediction; bounds activation memory
/// while amortizing the cost of registering parameters.
const EVAL_CHUNK: usize = 32;

/// Hyperparameters of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Floor of the cyclical learning rate.
    pub lr_base: f64,
    /// Peak of the cyclical learning rate.
    pub lr_max: f64,
    /// Half-cycle length in iterations; `None` means 4x the batches per epoch.
    pub clr_stepsize: Option<usize>,
    /// Steepness of the soft edge-screening gate.
    pub sharpness: f64,
    /// Family-wise significance level for edge screening.
    pub alpha: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// When false, the expression branch is not trained at all.
    pub enable_multitask: bool,
    /// When false, the correlation regularizer is dropped from the loss.
    pub enable_bgc: bool,
    /// Decision threshold on AU probabilities during evaluation.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_base: 1e-5,
            lr_max: 1e-3,
            clr_stepsize: None,
            sharpness: 100.0,
            alpha: 0.05,
            max_epochs: 30,
            patience: 10,
            seed: 0,
            enable_multitask: true,
            enable_bgc: true,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < MIN_BATCH {
            return Err(Error::invalid(format!(
                "batch_size must be at least {MIN_BATCH}, got {}",
                self.batch_size
            )));
        }
        if !(self.lr_base > 0.0 && self.lr_max > self.lr_base) {
            return Err(Error::invalid(format!(
                "need 0 < lr_base < lr_max, got base {} max {}",
                self.lr_base, self.lr_max
            )));
        }
        if self.clr_stepsize == Some(0) {
            return Err(Error::invalid("clr_stepsize must be positive when given"));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::invalid("sharpness must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    fn screening(&self) -> ScreeningConfig {
        ScreeningConfig { alpha: self.alpha, sharpness: self.sharpness }
    }
}

/// The loss terms of one step (or their epoch means). `total` is the value
/// the optimizer descends; it equals the sum of the four parts up to
/// floating-point roundoff.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub wmce: f64,
    pub wcce: f64,
    pub bgc_au: f64,
    pub bgc_expr: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, other: &LossBreakdown) {
        self.wmce += other.wmce;
        self.wcce += other.wcce;
        self.bgc_au += other.bgc_au;
        self.bgc_expr += other.bgc_expr;
        self.total += other.total;
    }

    fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            wmce: self.wmce * f,
            wcce: self.wcce * f,
            bgc_au: self.bgc_au * f,
            bgc_expr: self.bgc_expr * f,
            total: self.total * f,
        }
    }
}

/// What one optimizer step did.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    /// Regularizer was requested but skipped because the batch had a single
    /// subject (a one-subject batch makes the identity column constant).
    pub bgc_au_skipped: bool,
    pub bgc_expr_skipped: bool,
}

/// One standard-normal identity covariate per subject. Each subject draws
/// from its own labeled stream, so its value is stable across folds and
/// subsets.
pub fn identity_table<R: Real>(subjects: &[String], seed: u64) -> BTreeMap<String, R> {
    subjects
        .iter()
        .map(|s| {
            let mut rng = rngstream::stream(seed, &format!("identity/{s}"));
            (s.clone(), rngstream::std_normal::<R, _>(&mut rng))
        })
        .collect()
}

/// Mutable training state: parameters, optimizer moments, and the
/// data-derived constants (label weights, identity covariates).
pub struct Trainer<R: Real> {
    cfg: TrainConfig,
    params: BeCoMENetParams<R>,
    adam: AdamState<R>,
    weights: LabelWeights<R>,
    identities: BTreeMap<String, R>,
}

impl<R: Real> Trainer<R> {
    /// Initialize parameters from the config seed and derive label weights
    /// and identity covariates from the given training data.
    pub fn new(net: &NetworkConfig, train_data: &Dataset<R>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        ensure_compatible(net, train_data)?;
        let weights = derive_weights(train_data, cfg.enable_multitask)?;
        let identities = identity_table(&train_data.subjects(), cfg.seed);
        let params = BeCoMENetParams::build(net.clone(), cfg.seed)?;
        let adam = AdamState::new(params.tensors());
        Ok(Self { cfg: cfg.clone(), params, adam, weights, identities })
    }

    pub fn params(&self) -> &BeCoMENetParams<R> {
        &self.params
    }

    pub fn into_params(self) -> BeCoMENetParams<R> {
        self.params
    }

    /// One optimizer step: a forward pass per task batch through the shared
    /// backbone, the combined loss, one backward pass, one ADAM update.
    ///
    /// `expr_batch` must be empty exactly when multitask training is
    /// disabled. Both batches need at least [`MIN_BATCH`] samples and, for
    /// the correlation term, at least two distinct subjects; a single-subject
    /// batch logs a warning and trains without that term.
    pub fn train_step<G: Rng>(
        &mut self,
        au_batch: &[&Sample<R>],
        expr_batch: &[&Sample<R>],
        lr: f64,
        rng: &mut G,
    ) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        if au_batch.len() < MIN_BATCH {
            return Err(Error::invalid(format!(
                "AU batch has {} samples; need at least {MIN_BATCH}",
                au_batch.len()
            )));
        }
        if cfg.enable_multitask && expr_batch.len() < MIN_BATCH {
            return Err(Error::invalid(format!(
                "expression batch has {} samples; need at least {MIN_BATCH}",
                expr_batch.len()
            )));
        }
        if !cfg.enable_multitask && !expr_batch.is_empty() {
            return Err(Error::invalid(
                "expression batch supplied while multitask training is disabled",
            ));
        }

        let net = self.params.config().clone();
        let screening = cfg.screening();
        let mut tape: Tape<R> = Tape::new();
        let pv = self.params.register(&mut tape);

        // AU task.
        let z_au = batch_features(&mut tape, &pv, au_batch, rng)?;
        let au_probs = pv.forward_au(&mut tape, z_au)?;
        let au_targets = au_target_matrix(au_batch, net.au_count)?;
        let wmce_var = wmce(&mut tape, au_probs, &au_targets, &self.weights)?;
        let (bgc_au_var, bgc_au_skipped) = self.maybe_bgc(
            &mut tape,
            z_au,
            &au_targets,
            au_batch,
            &screening,
            "AU",
        )?;
        let au_term = match bgc_au_var {
            Some(b) => tape.add(wmce_var, b)?,
            None => wmce_var,
        };

        // Expression task.
        let mut wcce_var = None;
        let mut bgc_expr_var = None;
        let mut bgc_expr_skipped = false;
        let total = if cfg.enable_multitask {
            let z_expr = batch_features(&mut tape, &pv, expr_batch, rng)?;
            let expr_probs = pv.forward_expr(&mut tape, z_expr)?;
            let expr_onehot = expr_onehot_matrix(expr_batch, net.expr_count)?;
            let w = wcce(&mut tape, expr_probs, &expr_onehot, &self.weights)?;
            wcce_var = Some(w);
            let (b, skipped) = self.maybe_bgc(
                &mut tape,
                z_expr,
                &expr_onehot,
                expr_batch,
                &screening,
                "expression",
            )?;
            bgc_expr_var = b;
            bgc_expr_skipped = skipped;
            let expr_term = match bgc_expr_var {
                Some(bv) => tape.add(w, bv)?,
                None => w,
            };
            tape.add(au_term, expr_term)?
        } else {
            au_term
        };

        let read = |tape: &Tape<R>, v: Option<Var>| -> Result<f64> {
            Ok(match v {
                Some(v) => tape.value(v).item()?.as_f64(),
                None => 0.0,
            })
        };
        let losses = LossBreakdown {
            wmce: read(&tape, Some(wmce_var))?,
            wcce: read(&tape, wcce_var)?,
            bgc_au: read(&tape, bgc_au_var)?,
            bgc_expr: read(&tape, bgc_expr_var)?,
            total: read(&tape, Some(total))?,
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }

        tape.backward(total)?;
        let grads: Vec<Tensor<R>> = pv
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        drop(tape);
        adam_step(self.params.tensors_mut(), &grads, &mut self.adam, lr)?;

        Ok(StepOutcome { losses, bgc_au_skipped, bgc_expr_skipped })
    }

    /// Correlation term for one task batch, unless disabled or the batch
    /// cannot support it.
    fn maybe_bgc(
        &self,
        tape: &mut Tape<R>,
        features: Var,
        labels: &Tensor<R>,
        batch: &[&Sample<R>],
        screening: &ScreeningConfig,
        task: &str,
    ) -> Result<(Option<Var>, bool)> {
        if !self.cfg.enable_bgc {
            return Ok((None, false));
        }
        let distinct: BTreeSet<&str> =
            batch.iter().map(|s| s.subject_id.as_str()).collect();
        if distinct.len() < 2 {
            log::warn!(
                "{task} batch holds a single subject; skipping the correlation term this step"
            );
            return Ok((None, true));
        }
        let identity = batch_identities(batch, &self.identities)?;
        let var = bgc_loss(tape, features, labels, &identity, screening)?;
        Ok((Some(var), false))
    }
}

/// Forward the backbone over each sample of a batch (in training mode) and
/// stack the fused feature vectors into [b, p].
fn batch_features<R: Real, G: Rng>(
    tape: &mut Tape<R>,
    pv: &crate::network::ParamVars,
    batch: &[&Sample<R>],
    rng: &mut G,
) -> Result<Var> {
    let rows = batch
        .iter()
        .map(|s| pv.forward_features(tape, &s.image, &s.landmarks, true, rng))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&rows)
}

fn au_target_matrix<R: Real>(batch: &[&Sample<R>], c: usize) -> Result<Tensor<R>> {
    let mut data = Vec::with_capacity(batch.len() * c);
    for s in batch {
        let labels = s.au_labels.as_ref().ok_or_else(|| {
            Error::invalid(format!("sample of subject {} has no AU labels", s.subject_id))
        })?;
        if labels.len() != c {
            return Err(Error::shape("AU labels", c, labels.len()));
        }
        data.extend(labels.iter().map(|&v| R::of(v as f64)));
    }
    Tensor::new(vec![batch.len(), c], data)
}

fn expr_onehot_matrix<R: Real>(batch: &[&Sample<R>], k: usize) -> Result<Tensor<R>> {
    let mut data = vec![R::zero(); batch.len() * k];
    for (i, s) in batch.iter().enumerate() {
        let label = s.expr_label.ok_or_else(|| {
            Error::invalid(format!(
                "sample of subject {} has no expression label",
                s.subject_id
            ))
        })?;
        if label >= k {
            return Err(Error::invalid(format!("expression label {label} out of range {k}")));
        }
        data[i * k + label] = R::one();
    }
    Tensor::new(vec![batch.len(), k], data)
}

fn batch_identities<R: Real>(
    batch: &[&Sample<R>],
    table: &BTreeMap<String, R>,
) -> Result<Vec<R>> {
    batch
        .iter()
        .map(|s| {
            table.get(&s.subject_id).copied().ok_or_else(|| {
                Error::invalid(format!("no identity covariate for subject {}", s.subject_id))
            })
        })
        .collect()
}

/// Inverse-frequency label weights from the training labels. Without the
/// expression task the class weights are uniform placeholders.
fn derive_weights<R: Real>(train: &Dataset<R>, multitask: bool) -> Result<LabelWeights<R>> {
    let au_samples = train.au_samples();
    if au_samples.is_empty() {
        return Err(Error::Dataset("training data has no AU-labeled samples".into()));
    }
    let au = au_target_matrix(&au_samples, train.au_count())?;
    let k = train.expr_count;
    let expr = if multitask {
        let expr_samples = train.expr_samples();
        if expr_samples.is_empty() {
            return Err(Error::Dataset(
                "multitask training needs expression-labeled samples".into(),
            ));
        }
        expr_onehot_matrix(&expr_samples, k)?
    } else {
        // One synthetic sample per class: perfectly balanced, so the derived
        // class weights are exactly uniform.
        Tensor::from_fn(&[k, k], |i| if i / k == i % k { R::one() } else { R::zero() })
    };
    LabelWeights::from_labels(&au, &expr)
}

fn ensure_compatible<R: Real>(net: &NetworkConfig, data: &Dataset<R>) -> Result<()> {
    net.validate()?;
    data.validate()?;
    if data.samples.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if data.au_count() != net.au_count || data.expr_count != net.expr_count {
        return Err(Error::Dataset(format!(
            "label spaces disagree: dataset has {} AUs / {} classes, network {} / {}",
            data.au_count(),
            data.expr_count,
            net.au_count,
            net.expr_count
        )));
    }
    for s in &data.samples {
        if s.image.shape() != [net.image_h, net.image_w] {
            return Err(Error::shape(
                "sample image vs network input",
                format!("[{}, {}]", net.image_h, net.image_w),
                format!("{:?}", s.image.shape()),
            ));
        }
        if s.landmarks.shape() != [net.landmarks, 2] {
            return Err(Error::shape(
                "sample landmarks vs network input",
                format!("[{}, 2]", net.landmarks),
                format!("{:?}", s.landmarks.shape()),
            ));
        }
    }
    Ok(())
}

/// Number of batches an epoch yields under the drop rule: a trailing partial
/// batch survives only with at least [`MIN_BATCH`] samples.
fn batch_count(n: usize, batch_size: usize) -> usize {
    n / batch_size + usize::from(n % batch_size >= MIN_BATCH)
}

/// Shuffled index batches for one epoch.
fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size)
        .filter(|c| c.len() >= MIN_BATCH)
        .map(|c| c.to_vec())
        .collect()
}

/// One epoch's summary in the training history.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Loss terms averaged over the epoch's steps.
    pub mean_loss: LossBreakdown,
    pub val_mean_f1: f64,
    /// Learning rate of the epoch's last step.
    pub lr_last: f64,
}

/// A fitted model with its training history.
pub struct FitResult<R: Real> {
    /// Parameters of the best validation epoch, not the last one.
    pub params: BeCoMENetParams<R>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

/// Train with early stopping: hold out roughly a tenth of the subjects for
/// validation, stop once validation mean F1 has not improved for more than
/// `patience` epochs, and return the best-validation parameters.
pub fn fit<R: Real>(
    net: &NetworkConfig,
    data: &Dataset<R>,
    cfg: &TrainConfig,
) -> Result<FitResult<R>> {
    cfg.validate()?;
    ensure_compatible(net, data)?;

    let subjects = data.subjects();
    if subjects.len() < 2 {
        return Err(Error::Dataset(
            "training needs at least two subjects so one can be held out for validation".into(),
        ));
    }
    let mut order = subjects.clone();
    order.shuffle(&mut rngstream::stream(cfg.seed, "val-split"));
    let n_val = (subjects.len() / 10).max(1);
    let val_set: BTreeSet<String> = order[..n_val].iter().cloned().collect();
    let train_set: BTreeSet<String> = order[n_val..].iter().cloned().collect();
    let train = data.subset_by_subjects(&train_set);
    let val = data.subset_by_subjects(&val_set);
    if val.au_samples().is_empty() {
        return Err(Error::Dataset(
            "validation subjects have no AU-labeled samples to score".into(),
        ));
    }

    let au_samples = train.au_samples();
    let expr_samples = train.expr_samples();
    let n_au = au_samples.len();
    let n_expr = expr_samples.len();
    if n_au < MIN_BATCH {
        return Err(Error::Dataset(format!(
            "training split has {n_au} AU-labeled samples; need at least {MIN_BATCH}"
        )));
    }
    if cfg.enable_multitask && n_expr < MIN_BATCH {
        return Err(Error::Dataset(format!(
            "training split has {n_expr} expression-labeled samples; need at least {MIN_BATCH}"
        )));
    }

    let au_bpe = batch_count(n_au, cfg.batch_size);
    let expr_bpe = if cfg.enable_multitask { batch_count(n_expr, cfg.batch_size) } else { 0 };
    let steps_per_epoch = au_bpe.max(expr_bpe).max(1);
    let clr_step = cfg.clr_stepsize.unwrap_or(4 * steps_per_epoch).max(1);

    let mut trainer = Trainer::new(net, &train, cfg)?;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(BeCoMENetParams<R>, usize, f64)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let au_batches = epoch_batches(
            n_au,
            cfg.batch_size,
            &mut rngstream::stream(cfg.seed, &format!("shuffle/{epoch}/au")),
        );
        let expr_batches = if cfg.enable_multitask {
            epoch_batches(
                n_expr,
                cfg.batch_size,
                &mut rngstream::stream(cfg.seed, &format!("shuffle/{epoch}/expr")),
            )
        } else {
            Vec::new()
        };

        let mut sums = LossBreakdown::default();
        let mut lr_last = cfg.lr_base;
        for step in 0..steps_per_epoch {
            let iteration = epoch * steps_per_epoch + step;
            let lr = lr_at(iteration, cfg.lr_base, cfg.lr_max, clr_step);
            let au_batch: Vec<&Sample<R>> = au_batches[step % au_batches.len()]
                .iter()
                .map(|&i| au_samples[i])
                .collect();
            let expr_batch: Vec<&Sample<R>> = if cfg.enable_multitask {
                expr_batches[step % expr_batches.len()]
                    .iter()
                    .map(|&i| expr_samples[i])
                    .collect()
            } else {
                Vec::new()
            };
            let mut dropout_rng =
                rngstream::stream(cfg.seed, &format!("dropout/{iteration}"));
            let outcome =
                trainer.train_step(&au_batch, &expr_batch, lr, &mut dropout_rng)?;
            sums.accumulate(&outcome.losses);
            lr_last = lr;
        }

        let report = evaluate(trainer.params(), &val, cfg.threshold)?;
        let val_mean_f1 = report.mean_f1;
        history.push(EpochRecord {
            epoch,
            steps: steps_per_epoch,
            mean_loss: sums.scaled(1.0 / steps_per_epoch as f64),
            val_mean_f1,
            lr_last,
        });
        log::info!(
            "epoch {epoch}: mean total loss {:.6}, validation mean F1 {val_mean_f1:.4}",
            history.last().unwrap().mean_loss.total
        );

        let improved = best.as_ref().map_or(true, |&(_, _, b)| val_mean_f1 > b);
        if improved {
            best = Some((trainer.params().clone(), epoch, val_mean_f1));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best > cfg.patience {
                log::info!(
                    "stopping after epoch {epoch}: no improvement for {epochs_since_best} epochs"
                );
                break;
            }
        }
    }

    let (params, best_epoch, best_val_f1) =
        best.expect("at least one epoch ran, so a best checkpoint exists");
    Ok(FitResult { params, history, best_epoch, best_val_f1 })
}

/// Run the model over a dataset in inference mode and collect thresholded
/// AU decisions plus expression argmax picks.
pub fn predict<R: Real>(
    params: &BeCoMENetParams<R>,
    data: &Dataset<R>,
    threshold: f64,
) -> Result<PredictionSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must be in (0, 1), got {threshold}")));
    }
    ensure_compatible(params.config(), data)?;
    let thr = R::of(threshold);
    let mut set = PredictionSet::new(&data.au_names);
    // Inference consumes no randomness; the stream is a signature placeholder.
    let mut rng = rngstream::stream(0, "inference");
    for chunk in data.samples.chunks(EVAL_CHUNK) {
        let mut tape: Tape<R> = Tape::new();
        let pv = params.register(&mut tape);
        for s in chunk {
            let z = pv.forward_features(&mut tape, &s.image, &s.landmarks, false, &mut rng)?;
            if let Some(truth) = &s.au_labels {
                let probs = pv.forward_au(&mut tape, z)?;
                let pred: Vec<u8> =
                    tape.value(probs).data().iter().map(|&p| u8::from(p >= thr)).collect();
                set.push_au(truth.clone(), pred)?;
            }
            if let Some(label) = s.expr_label {
                let probs = pv.forward_expr(&mut tape, z)?;
                let data = tape.value(probs).data();
                let argmax = data
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("softmax output is finite"))
                    .map(|(i, _)| i)
                    .expect("expression head is non-empty");
                set.push_expr(label, argmax);
            }
        }
    }
    Ok(set)
}

/// Score a model on a dataset: per-AU precision/recall/F1 at the given
/// threshold, plus expression accuracy when expression labels are present.
pub fn evaluate<R: Real>(
    params: &BeCoMENetParams<R>,
    data: &Dataset<R>,
    threshold: f64,
) -> Result<MetricsReport> {
    Ok(predict(params, data, threshold)?.score())
}

/// One fold's outcome within a cross-validation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test_subjects: Vec<String>,
    pub report: MetricsReport,
    pub history: Vec<EpochRecord>,
}

/// Cross-validation results: the pooled report scores every held-out
/// prediction at once rather than averaging per-fold scores.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossvalResult {
    pub pooled: MetricsReport,
    pub folds: Vec<FoldOutcome>,
}

/// Subject-disjoint k-fold cross-validation. Each fold trains a fresh model
/// on the other folds' subjects and predicts its own; all held-out
/// predictions are pooled before scoring.
pub fn crossval<R: Real>(
    net: &NetworkConfig,
    data: &Dataset<R>,
    k: usize,
    cfg: &TrainConfig,
) -> Result<CrossvalResult> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    cfg.validate()?;
    ensure_compatible(net, data)?;
    let all: BTreeSet<String> = data.subjects().into_iter().collect();
    let split = kfold_subject_split(data, k, cfg.seed)?;
    split.assert_partition(&all)?;

    let outcomes: Vec<Result<(FoldOutcome, PredictionSet)>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let test_subjects = split.folds[fold].clone();
            let test_set: BTreeSet<String> = test_subjects.iter().cloned().collect();
            let train_set: BTreeSet<String> = all.difference(&test_set).cloned().collect();
            if !train_set.is_disjoint(&test_set) {
                return Err(Error::Dataset("train and test subjects overlap".into()));
            }
            let train = data.subset_by_subjects(&train_set);
            let test = data.subset_by_subjects(&test_set);
            for s in &test.samples {
                if train_set.contains(&s.subject_id) {
                    return Err(Error::Dataset(format!(
                        "subject {} leaked into the training split",
                        s.subject_id
                    )));
                }
            }
            let fitted = fit(net, &train, cfg)?;
            let preds = predict(&fitted.params, &test, cfg.threshold)?;
            let report = preds.score();
            log::info!(
                "fold {fold}: test subjects {test_subjects:?}, mean F1 {:.4}",
                report.mean_f1
            );
            Ok((
                FoldOutcome { fold, test_subjects, report, history: fitted.history },
                preds,
            ))
        })
        .collect();

    let mut pooled = PredictionSet::new(&data.au_names);
    let mut folds = Vec::with_capacity(k);
    for outcome in outcomes {
        let (fold_outcome, preds) = outcome?;
        pooled.absorb(preds)?;
        folds.push(fold_outcome);
    }
    Ok(CrossvalResult { pooled: pooled.score(), folds })
}
