//! Experiment protocol: stratified splitting, repeated-shuffle cross
//! validation, early-stopping and fixed-epoch training loops, and
//! test-time augmentation.
//!
//! Everything here is deterministic given the fold seed. Random choices
//! come from labeled substreams of the fold stream (split, init, epoch
//! shuffles, per-sample augmentation), and every parallel reduction is
//! re-ordered by sample index before accumulation, so worker count never
//! changes a result.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_drawn, draw, AugmentSpec};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, bce_loss, AdamHyper, AdamState, Gradients, Model, ModelConfig, Scalar, Tensor4,
};
use crate::rng::{ctx, RngStream};

/// How to carve a dataset into train/validation/test sets.
///
/// `seed` names the stream for standalone splitting; the cross-validation
/// protocol instead passes fold-derived streams to [`stratified_split`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: (0.70, 0.15, 0.15),
            seed: 0,
            stratify: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "split ratios {:?} must all be positive",
                self.ratios
            )));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "split ratios {:?} sum to {}, not 1",
                self.ratios,
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Disjoint, exhaustive index sets over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder rounding of `total * shares` to integers summing to
/// `total`. Ties go to the earlier index.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let ideals: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = ideals.iter().map(|&x| x.floor() as usize).collect();
    let mut rem = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = ideals[i] - ideals[i].floor();
        let fj = ideals[j] - ideals[j].floor();
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    for &i in &order {
        if rem == 0 {
            break;
        }
        counts[i] += 1;
        rem -= 1;
    }
    counts
}

/// Per-class set counts: positives get floor-or-floor+1 of their ideal
/// share per set, chosen so that positive counts sum to the class size,
/// the column totals hit `sizes`, and every (class, set) cell stays
/// within one sample of its exact proportional share. Such a rounding
/// always exists (integral matrix rounding); among the valid choices the
/// one minimizing total deviation wins, ties to the lowest bitmask.
fn stratified_counts(sizes: &[usize; 3], n_pos: usize, n_neg: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let r = [ratios.0, ratios.1, ratios.2];
    let ideal_pos: Vec<f64> = r.iter().map(|x| x * n_pos as f64).collect();
    let ideal_neg: Vec<f64> = r.iter().map(|x| x * n_neg as f64).collect();
    let mut best: Option<([usize; 3], f64)> = None;
    for mask in 0..8u32 {
        let mut pos = [0usize; 3];
        let mut ok = true;
        let mut dev = 0.0;
        for s in 0..3 {
            pos[s] = ideal_pos[s].floor() as usize + ((mask >> s) & 1) as usize;
            if pos[s] > sizes[s] {
                ok = false;
                break;
            }
            let neg = sizes[s] - pos[s];
            let dp = (pos[s] as f64 - ideal_pos[s]).abs();
            let dn = (neg as f64 - ideal_neg[s]).abs();
            if dp > 1.0 + 1e-9 || dn > 1.0 + 1e-9 {
                ok = false;
                break;
            }
            dev += dp + dn;
        }
        if !ok || pos.iter().sum::<usize>() != n_pos {
            continue;
        }
        if best.map_or(true, |(_, d)| dev < d) {
            best = Some((pos, dev));
        }
    }
    best.expect("a within-one stratified rounding always exists").0
}

/// Split sample indices by label-stratified largest-remainder rounding.
///
/// Global set sizes come from largest-remainder rounding of the ratios
/// over the whole dataset; within each class the shuffled indices are
/// dealt out so every set's class mix stays within one sample of the
/// overall proportion. Sets are disjoint and exhaustive by construction.
pub fn stratified_split(labels: &[Label], spec: &SplitSpec, rng: &mut RngStream) -> Result<Split> {
    spec.validate()?;
    let n = labels.len();
    let sizes_v = apportion(n, &[spec.ratios.0, spec.ratios.1, spec.ratios.2]);
    let sizes = [sizes_v[0], sizes_v[1], sizes_v[2]];

    if !spec.stratify {
        let mut all: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut all);
        let val_end = sizes[0] + sizes[1];
        return Ok(Split {
            train: all[..sizes[0]].to_vec(),
            val: all[sizes[0]..val_end].to_vec(),
            test: all[val_end..].to_vec(),
        });
    }

    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == Label::Positive).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] == Label::Negative).collect();
    if pos.is_empty() {
        return Err(Error::EmptyClass(Label::Positive));
    }
    if neg.is_empty() {
        return Err(Error::EmptyClass(Label::Negative));
    }
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);

    let pos_counts = stratified_counts(&sizes, pos.len(), neg.len(), spec.ratios);
    let mut split = Split {
        train: Vec::with_capacity(sizes[0]),
        val: Vec::with_capacity(sizes[1]),
        test: Vec::with_capacity(sizes[2]),
    };
    let mut pos_cursor = 0;
    let mut neg_cursor = 0;
    for (s, set) in [&mut split.train, &mut split.val, &mut split.test]
        .into_iter()
        .enumerate()
    {
        let take_pos = pos_counts[s];
        let take_neg = sizes[s] - take_pos;
        set.extend_from_slice(&pos[pos_cursor..pos_cursor + take_pos]);
        set.extend_from_slice(&neg[neg_cursor..neg_cursor + take_neg]);
        pos_cursor += take_pos;
        neg_cursor += take_neg;
    }
    Ok(split)
}

/// Stopping policy for one fold's training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainMode {
    /// Stop once `patience` consecutive epochs pass without a strict
    /// validation-accuracy improvement; restore the best epoch's weights.
    EarlyStop {
        #[serde(default = "default_patience")]
        patience: usize,
        /// Hard ceiling so a never-improving run still terminates.
        #[serde(default = "default_max_epochs")]
        max_epochs: usize,
    },
    /// Run exactly `epochs` epochs and keep the final weights.
    Fixed {
        #[serde(default = "default_fixed_epochs")]
        epochs: usize,
    },
}

fn default_patience() -> usize {
    50
}

fn default_max_epochs() -> usize {
    1000
}

fn default_fixed_epochs() -> usize {
    150
}

impl TrainMode {
    pub fn early_stop() -> Self {
        TrainMode::EarlyStop {
            patience: default_patience(),
            max_epochs: default_max_epochs(),
        }
    }

    pub fn fixed() -> Self {
        TrainMode::Fixed {
            epochs: default_fixed_epochs(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrainMode::EarlyStop { .. } => "early-stop",
            TrainMode::Fixed { .. } => "fixed",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("{what} must be at least 1")));
        match *self {
            TrainMode::EarlyStop { patience, max_epochs } => {
                if patience == 0 {
                    return bad("patience");
                }
                if max_epochs == 0 {
                    return bad("max_epochs");
                }
            }
            TrainMode::Fixed { epochs } => {
                if epochs == 0 {
                    return bad("epochs");
                }
            }
        }
        Ok(())
    }
}

/// Optimizer hyperparameters and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub adam: AdamHyper,
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            adam: AdamHyper::default(),
            batch_size: 16,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything one experiment arm needs besides the dataset and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSetup {
    pub model: ModelConfig,
    pub augment: AugmentSpec,
    pub mode: TrainMode,
    #[serde(default)]
    pub params: TrainParams,
    #[serde(default)]
    pub split: SplitSpec,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        self.mode.validate()?;
        self.params.validate()?;
        self.split.validate()
    }
}

/// One epoch's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Outcome of one fold: test accuracy, the epoch whose weights were
/// used, the full per-epoch history, and wall-clock seconds (the only
/// field not reproducible across runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub seconds: f64,
}

impl FoldResult {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Early-stopping state machine: strict improvement resets patience,
/// ties do not; the best epoch is the earliest with the best accuracy.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best_acc: f64,
    best_epoch: usize,
    since_best: usize,
}

/// What the loop should do after reporting an epoch's accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    /// This epoch strictly improved on the best so far — snapshot weights.
    pub improved: bool,
    /// Patience is exhausted or the epoch cap is reached — stop now.
    pub stop: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopper {
            patience,
            max_epochs,
            epoch: 0,
            best_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Record the validation accuracy of the next epoch (1-based).
    pub fn observe(&mut self, val_acc: f64) -> StopDecision {
        self.epoch += 1;
        let improved = val_acc > self.best_acc;
        if improved {
            self.best_acc = val_acc;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience || self.epoch >= self.max_epochs,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_acc(&self) -> f64 {
        self.best_acc
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }
}

/// Mean loss and accuracy of `model` on the given samples, un-augmented.
/// Forward passes run in parallel; the reduction is in index order and
/// the accuracy is a single exact correct/total division.
fn evaluate<S: Scalar + Send + Sync>(
    model: &Model<S>,
    ds: &Dataset,
    indices: &[usize],
) -> Result<(f64, f64)> {
    let probs: Vec<f64> = indices
        .par_iter()
        .map(|&i| model.forward_volume(&ds.volumes[i]))
        .collect::<Result<_>>()?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (&i, &p) in indices.iter().zip(&probs) {
        let y = ds.labels[i].y();
        loss_sum += bce_loss(p, y);
        if (p >= 0.5) == (y > 0.5) {
            correct += 1;
        }
    }
    Ok((
        loss_sum / indices.len() as f64,
        correct as f64 / indices.len() as f64,
    ))
}

/// Train and evaluate one fold.
///
/// The fold stream fans out into fixed substreams: split, weight init,
/// one shuffle stream per epoch, and one augmentation stream per
/// (epoch, dataset index) pair — so the drawn transforms depend only on
/// the seed, never on batch boundaries or worker scheduling. Training
/// samples are augmented freshly every epoch; validation and test
/// volumes are never augmented here.
pub fn run_fold(ds: &Dataset, setup: &TrainSetup, fold: usize, fold_seed: u64) -> Result<FoldResult> {
    run_fold_full(ds, setup, fold, fold_seed).map(|(result, _)| result)
}

/// [`run_fold`], but also hand back the weights the fold's test accuracy
/// was measured with (the restored best under early stopping, the final
/// epoch's otherwise) so callers can checkpoint them.
pub fn run_fold_full(
    ds: &Dataset,
    setup: &TrainSetup,
    fold: usize,
    fold_seed: u64,
) -> Result<(FoldResult, Model<f32>)> {
    setup.validate()?;
    if setup.model.input_shape != ds.shape() {
        return Err(Error::ShapeMismatch(format!(
            "model expects input {:?} but dataset volumes are {:?}",
            setup.model.input_shape,
            ds.shape()
        )));
    }
    let started = Instant::now();
    let root = RngStream::new(fold_seed);
    let split = stratified_split(&ds.labels, &setup.split, &mut root.child(ctx::SPLIT))?;
    for (set, name) in [(&split.train, "training"), (&split.val, "validation"), (&split.test, "test")] {
        if set.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "the {name} set is empty: {} samples cannot fill ratios {:?}",
                ds.len(),
                setup.split.ratios
            )));
        }
    }

    let mut model: Model<f32> = Model::init(&setup.model, &mut root.child(ctx::INIT))?;
    let mut adam = AdamState::new(&model, setup.params.adam);
    let mut stopper = match setup.mode {
        TrainMode::EarlyStop { patience, max_epochs } => Some(EarlyStopper::new(patience, max_epochs)),
        TrainMode::Fixed { .. } => None,
    };
    let max_epochs = match setup.mode {
        TrainMode::EarlyStop { max_epochs, .. } => max_epochs,
        TrainMode::Fixed { epochs } => epochs,
    };

    let mut best_weights: Option<Model<f32>> = None;
    let mut history = Vec::new();
    for epoch in 1..=max_epochs {
        let mut order = split.train.clone();
        root.descend(&[ctx::SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(setup.params.batch_size) {
            // each sample: fresh augmentation draw -> forward -> backward
            let per: Vec<(f64, f64, f64, Gradients)> = batch
                .par_iter()
                .map(|&i| {
                    let mut aug_rng = root.descend(&[ctx::AUGMENT, epoch as u64, i as u64]);
                    let drawn = draw(&setup.augment, &mut aug_rng)?;
                    let vol = apply_drawn(&ds.volumes[i], &drawn)?;
                    let input = Tensor4::from_volume(&vol);
                    let cache = model.forward_cached(&input)?;
                    let y = ds.labels[i].y();
                    let loss = bce_loss(cache.prob, y);
                    let grads = model.backward(&cache, y);
                    Ok((loss, cache.prob, y, grads))
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::zeros_like(&model);
            for (loss, prob, y, g) in &per {
                loss_sum += loss;
                if (*prob >= 0.5) == (*y > 0.5) {
                    correct += 1;
                }
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam_step(&mut model, &grads, &mut adam)?;
        }

        let train_loss = loss_sum / split.train.len() as f64;
        let train_acc = correct as f64 / split.train.len() as f64;
        let (val_loss, val_acc) = evaluate(&model, ds, &split.val)?;
        history.push(EpochStats {
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        if let Some(st) = &mut stopper {
            let decision = st.observe(val_acc);
            if decision.improved {
                best_weights = Some(model.clone());
            }
            if decision.stop {
                break;
            }
        }
    }

    let (best_epoch, final_model) = match &stopper {
        Some(st) => (
            st.best_epoch(),
            best_weights.expect("first epoch always improves"),
        ),
        None => (history.len(), model),
    };
    let (_, test_acc) = evaluate(&final_model, ds, &split.test)?;

    Ok((
        FoldResult {
            fold,
            test_acc,
            best_epoch,
            history,
            seconds: started.elapsed().as_secs_f64(),
        },
        final_model,
    ))
}

/// Aggregate of one experiment arm across its folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec_label: String,
    pub mode: TrainMode,
    pub folds: Vec<FoldResult>,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Percentage-unit gain over a baseline arm; filled in by reporting.
    #[serde(default)]
    pub delta_pp_vs_baseline: Option<f64>,
}

impl ExperimentReport {
    /// Recompute mean/std from the stored folds (identity check hook).
    pub fn recomputed_mean_std(&self) -> (f64, f64) {
        let accs: Vec<f64> = self.folds.iter().map(|f| f.test_acc).collect();
        mean_std(&accs)
    }
}

/// Mean and sample (n-1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run `n_folds` independently seeded repetitions (fold seed =
/// `base_seed` + fold index), each with its own stratified 70/15/15
/// shuffle and weight init, and aggregate the test accuracies.
pub fn cross_validate(
    ds: &Dataset,
    setup: &TrainSetup,
    base_seed: u64,
    n_folds: usize,
) -> Result<ExperimentReport> {
    if n_folds < 2 {
        return Err(Error::InvalidSpec(format!(
            "cross validation needs at least 2 folds, got {n_folds}"
        )));
    }
    let mut folds = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        folds.push(run_fold(ds, setup, fold, base_seed + fold as u64)?);
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.test_acc).collect();
    let (mean_acc, std_acc) = mean_std(&accs);
    Ok(ExperimentReport {
        spec_label: setup.augment.label(),
        mode: setup.mode.clone(),
        folds,
        mean_acc,
        std_acc,
        delta_pp_vs_baseline: None,
    })
}

/// Mean predicted probability over `k` independently augmented copies.
/// When every copy yields the bit-same probability (e.g. NoAugment) the
/// result is that probability exactly, not a rounded re-average.
pub fn tta_evaluate<S: Scalar + Send + Sync>(
    model: &Model<S>,
    vol: &crate::volume::Volume3,
    spec: &AugmentSpec,
    k: usize,
    rng: &RngStream,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidSpec("TTA needs at least 1 copy".into()));
    }
    let probs: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng.descend(&[ctx::TTA, i as u64]);
            let drawn = draw(spec, &mut stream)?;
            let copy = apply_drawn(vol, &drawn)?;
            model.forward_volume(&copy)
        })
        .collect::<Result<_>>()?;
    if probs.iter().all(|p| p.to_bits() == probs[0].to_bits()) {
        return Ok(probs[0]);
    }
    Ok(probs.iter().sum::<f64>() / k as f64)
}

/// Difference in mean test accuracy, in percentage units. Arms are only
/// comparable when trained under the same mode on the same fold count.
pub fn compare_to_baseline(report: &ExperimentReport, baseline: &ExperimentReport) -> Result<f64> {
    if report.mode != baseline.mode {
        return Err(Error::ModeMismatch(format!(
            "cannot compare {} arm against {} baseline",
            report.mode.label(),
            baseline.mode.label()
        )));
    }
    if report.folds.len() != baseline.folds.len() {
        return Err(Error::ModeMismatch(format!(
            "fold counts differ: {} vs baseline {}",
            report.folds.len(),
            baseline.folds.len()
        )));
    }
    Ok((report.mean_acc - baseline.mean_acc) * 100.0)
}
