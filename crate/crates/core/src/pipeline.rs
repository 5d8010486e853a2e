//! Minibatch training with RMSProp, evaluation, stratified k-fold
//! cross-validation and grid search over memory-layer configurations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, loss_sparse_ce, CellKind, Model, ModelConfig, NnError, OptimizerState, RmsProp};
use crate::preprocess::{self, fit_standardizer, ModelInput, PreprocessError, Standardizer};
use crate::seqdata::{self, Dataset, DatasetError, Label};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty evaluation set")]
    EmptyEvaluationSet,
    #[error("need k >= 2 folds and at least k examples (k = {k}, examples = {n})")]
    InvalidFolds { k: usize, n: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// One preprocessed, labelled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: ModelInput,
    pub label: Label,
}

/// Drops any third channel, standardizes, pads and flattens every sequence.
pub fn prepare_examples(d: &Dataset, s: &Standardizer, time_steps: usize) -> Result<Vec<Example>, PipelineError> {
    d.sequences
        .par_iter()
        .map(|seq| Ok(Example { input: preprocess::prepare(seq, s, time_steps)?, label: seq.label }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Share of the training data held out for validation by [`fit`].
    pub validation_frac: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub optimizer: RmsProp,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 80, validation_frac: 0.1, seed: 0, shuffle: true, optimizer: RmsProp::default() }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 {
            return Err(PipelineError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_frac) {
            return Err(PipelineError::InvalidConfig("validation_frac must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Accuracy and confusion counts; rows are the actual class, columns the
/// predicted class, both in nod, shake, other order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub total: usize,
    pub confusion: [[usize; 3]; 3],
}

impl EvalReport {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut confusion = [[0; 3]; 3];
        for (actual, predicted) in pairs {
            confusion[actual.index()][predicted.index()] += 1;
        }
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..3).map(|i| confusion[i][i]).sum();
        let accuracy = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        Self { accuracy, mean_loss: f64::NAN, total, confusion }
    }

    pub fn row_sums(&self) -> [usize; 3] {
        self.confusion.map(|row| row.iter().sum())
    }
}

pub fn evaluate(model: &Model, data: &[Example]) -> Result<EvalReport, PipelineError> {
    if data.is_empty() {
        return Err(PipelineError::EmptyEvaluationSet);
    }
    let preds = data
        .par_iter()
        .map(|ex| model.predict(&ex.input).map(|p| (p, ex.label)))
        .collect::<Result<Vec<_>, NnError>>()?;
    let loss = preds.iter().map(|(p, l)| loss_sparse_ce(p, l.index())).sum::<f64>() / data.len() as f64;
    let mut report = EvalReport::from_pairs(preds.iter().map(|(p, l)| (*l, p.label)));
    report.mean_loss = loss;
    Ok(report)
}

/// Trains a fresh model (initialized from `cfg.seed`) on already prepared
/// examples, calling `observe` after each epoch.
pub fn train_with(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    standardizer: Standardizer,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, PipelineError> {
    tcfg.validate()?;
    if train.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    let mut model = Model::init(*cfg, standardizer)?;
    let mut opt = OptimizerState::new(cfg, tcfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);

    for epoch in 1..=tcfg.epochs {
        if tcfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&train[i].input, train[i].label.index())).collect();
            let g = nn::backward(&model.config, &model.weights, &batch)?;
            opt.update(&mut model.weights, &g.grads);
            if !model.weights.all_finite() {
                return Err(NnError::NonFinite("weights after update").into());
            }
            loss_sum += g.mean_loss * batch.len() as f64;
            correct += g.correct;
        }
        let (val_loss, val_acc) = if val.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&model, val)?;
            (Some(r.mean_loss), Some(r.accuracy))
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        observe(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { model, history })
}

pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    standardizer: Standardizer,
) -> Result<TrainOutcome, PipelineError> {
    train_with(cfg, tcfg, train, val, standardizer, |_| {})
}

/// Raw dataset to trained model: drops the third channel, holds out
/// `validation_frac` (stratified), fits the standardizer on the remaining
/// training part unless one is given, then trains.
pub fn fit(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &Dataset,
    standardizer: Option<Standardizer>,
    observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome, PipelineError> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    let data = preprocess::to_planar_dataset(data);
    let (train_part, val_part) = if tcfg.validation_frac > 0.0 {
        seqdata::split(&data, tcfg.validation_frac, tcfg.seed)?
    } else {
        (data, Dataset::default())
    };
    let standardizer = match standardizer {
        Some(s) => s,
        None => fit_standardizer(&train_part)?,
    };
    let train_ex = prepare_examples(&train_part, &standardizer, cfg.time_steps)?;
    let val_ex = prepare_examples(&val_part, &standardizer, cfg.time_steps)?;
    train_with(cfg, tcfg, &train_ex, &val_ex, standardizer, observe)
}

/// Stratified folds: each class is shuffled and dealt into `k` contiguous
/// chunks. Returns the validation indices of each fold, sorted.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, PipelineError> {
    if k < 2 || labels.len() < k {
        return Err(PipelineError::InvalidFolds { k, n: labels.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        for (f, fold) in folds.iter_mut().enumerate() {
            fold.extend_from_slice(&idx[f * n / k..(f + 1) * n / k]);
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

/// k-fold cross-validation; each fold fits its own standardizer on its
/// training part and trains a model from the same initialization seed.
pub fn kfold_cv(cfg: &ModelConfig, data: &Dataset, k: usize, tcfg: &TrainConfig) -> Result<CvResult, PipelineError> {
    let data = preprocess::to_planar_dataset(data);
    let labels: Vec<Label> = data.sequences.iter().map(|s| s.label).collect();
    let folds = stratified_folds(&labels, k, tcfg.seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    for fold in &folds {
        let mut in_val = vec![false; data.len()];
        fold.iter().for_each(|&i| in_val[i] = true);
        let (val, train): (Vec<_>, Vec<_>) = data.sequences.iter().cloned().zip(in_val).partition(|(_, v)| *v);
        let train = Dataset::new(train.into_iter().map(|(s, _)| s).collect());
        let val = Dataset::new(val.into_iter().map(|(s, _)| s).collect());
        let s = fit_standardizer(&train)?;
        let train_ex = prepare_examples(&train, &s, cfg.time_steps)?;
        let val_ex = prepare_examples(&val, &s, cfg.time_steps)?;
        let outcome = self::train(cfg, tcfg, &train_ex, &[], s)?;
        fold_accuracies.push(evaluate(&outcome.model, &val_ex)?.accuracy);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(CvResult { mean_accuracy, fold_accuracies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: CellKind,
    pub hidden: usize,
    pub params: usize,
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
}

/// Cross-validates every (cell, hidden) pair and ranks them by mean
/// accuracy, ties going to the smaller model.
pub fn grid_search(
    cells: &[CellKind],
    hidden_sizes: &[usize],
    data: &Dataset,
    k: usize,
    tcfg: &TrainConfig,
    model_seed: u64,
    mut observe: impl FnMut(&GridRow),
) -> Result<Vec<GridRow>, PipelineError> {
    let mut rows = Vec::with_capacity(cells.len() * hidden_sizes.len());
    for &cell in cells {
        for &hidden in hidden_sizes {
            let cfg = ModelConfig::new(cell, hidden).with_seed(model_seed);
            let cv = kfold_cv(&cfg, data, k, tcfg)?;
            let row = GridRow {
                cell,
                hidden,
                params: cfg.param_count(),
                mean_accuracy: cv.mean_accuracy,
                fold_accuracies: cv.fold_accuracies,
            };
            observe(&row);
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| b.mean_accuracy.total_cmp(&a.mean_accuracy).then(a.params.cmp(&b.params)));
    Ok(rows)
}
