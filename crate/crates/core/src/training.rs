//! Losses and the training loop.
//!
//! Each block goes through one stochastic forward pass. Its probabilities
//! carry the loss, and the same probabilities, gathered over each point's
//! neighbors, give the aleatoric uncertainty that down-weights the point in
//! the uncertainty-guided loss. The uncertainty is treated as a constant.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::backbone::{Backbone, Masking};
use crate::dataio::{split_blocks, BlockSpec, Scene};
use crate::distribution::establish_nsa;
use crate::error::{Error, Result};
use crate::metrics::{confusion, segmentation_scores, SegmentationScores};
use crate::nn::{adam_step, AdamState, GradientSet, ModelParams};
use crate::report::CsvTable;
use crate::rng::{derive_rng_stream, purpose, RngStreamKey};
use crate::spatial::{build_index, knn, NeighborIndex};
use crate::stats::median;
use crate::types::{ClassProbabilities, PointCloud, RunConfig};
use crate::uncertainty::{entropy_decomposition, std_decomposition, Acquisition, UncertaintyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    /// Plain cross-entropy.
    Ce,
    /// Cross-entropy weighted per point by `1 / (1 + alpha * Ua)`.
    #[default]
    Ugce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "CE",
            LossKind::Ugce => "UGCE",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE" => Ok(LossKind::Ce),
            "UGCE" => Ok(LossKind::Ugce),
            _ => Err(Error::InvalidConfig(format!("unknown loss {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub acquisition: Acquisition,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Ugce,
            alpha: 0.5,
            acquisition: Acquisition::Std,
        }
    }
}

impl LossConfig {
    pub fn ce() -> Self {
        LossConfig {
            kind: LossKind::Ce,
            ..Self::default()
        }
    }

    pub fn ugce(alpha: f64) -> Self {
        LossConfig {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Scalar loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub logit_grad: Array2<f64>,
}

fn check_labels(probs: &ClassProbabilities, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.num_points() {
        return Err(Error::LengthMismatch {
            left: probs.num_points(),
            right: labels.len(),
        });
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= probs.num_classes()) {
        return Err(Error::LabelOutOfRange {
            row,
            label,
            num_classes: probs.num_classes(),
        });
    }
    Ok(())
}

fn weighted_ce(probs: &ClassProbabilities, labels: &[usize], weights: Option<&[f64]>) -> LossOutput {
    let n = probs.num_points() as f64;
    let mut grad = probs.0.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        loss += w * -probs.0[[i, y]].max(f64::MIN_POSITIVE).ln();
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w / n);
    }
    LossOutput {
        loss: loss / n,
        logit_grad: grad,
    }
}

/// Mean negative log-likelihood of the labels.
pub fn ce_loss(probs: &ClassProbabilities, labels: Option<&[usize]>) -> Result<LossOutput> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    check_labels(probs, labels)?;
    Ok(weighted_ce(probs, labels, None))
}

/// Per-point weights `1 / (1 + alpha * Ua)`.
pub fn ugce_weights(aleatoric: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if let Some((index, &value)) = aleatoric.iter().enumerate().find(|(_, &u)| u < 0.0 || u.is_nan()) {
        return Err(Error::NegativeUncertainty { index, value });
    }
    Ok(aleatoric.iter().map(|&u| 1.0 / (1.0 + alpha * u)).collect())
}

/// Cross-entropy with each point scaled by `1 / (1 + alpha * Ua)`.
pub fn ugce_loss(probs: &ClassProbabilities, labels: Option<&[usize]>, aleatoric: &[f64], alpha: f64) -> Result<LossOutput> {
    let labels = labels.ok_or(Error::MissingLabels)?;
    check_labels(probs, labels)?;
    if aleatoric.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: aleatoric.len(),
        });
    }
    let weights = ugce_weights(aleatoric, alpha)?;
    Ok(weighted_ce(probs, labels, Some(&weights)))
}

/// Uncertainty of one stochastic pass aggregated over neighbors.
pub fn nsa_uncertainty(probs: &ClassProbabilities, neighbors: &NeighborIndex, acquisition: Acquisition) -> Result<UncertaintyMap> {
    let dist = establish_nsa(probs, neighbors)?;
    Ok(match acquisition {
        Acquisition::Pe => entropy_decomposition(&dist),
        Acquisition::Std => std_decomposition(&dist),
    })
}

/// A training block with its cached neighbor lists.
#[derive(Debug, Clone)]
pub struct TrainBlock {
    pub cloud: PointCloud,
    pub neighbors: NeighborIndex,
}

impl TrainBlock {
    pub fn new(cloud: PointCloud, neighbor_count: usize) -> Result<Self> {
        cloud.labels()?;
        let index = build_index(&cloud)?;
        let neighbors = knn(&index, &cloud, neighbor_count.min(cloud.len()))?;
        Ok(TrainBlock { cloud, neighbors })
    }
}

/// A held-out block and the labels it is scored against.
#[derive(Debug, Clone)]
pub struct EvalBlock {
    pub cloud: PointCloud,
    pub labels: Vec<usize>,
}

/// Training blocks of a scene, carrying its (possibly noisy) labels.
pub fn scene_train_blocks(scene: &Scene, spec: &BlockSpec, seed: u64, neighbor_count: usize) -> Result<Vec<TrainBlock>> {
    split_blocks(&scene.cloud, spec, seed)?
        .into_iter()
        .map(|b| TrainBlock::new(b.cloud, neighbor_count))
        .collect()
}

/// Held-out blocks of a scene scored against its clean labels.
pub fn scene_eval_blocks(scene: &Scene, spec: &BlockSpec, seed: u64) -> Result<Vec<EvalBlock>> {
    Ok(split_blocks(&scene.cloud, spec, seed)?
        .into_iter()
        .map(|b| EvalBlock {
            labels: b.source.iter().map(|&i| scene.clean_labels[i]).collect(),
            cloud: b.cloud,
        })
        .collect())
}

/// Optimizer state carried across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Number of block forward passes so far; keys the dropout masks.
    pub block_counter: u64,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(params: ModelParams) -> Self {
        Trainer {
            adam: AdamState::new(&params),
            params,
            block_counter: 0,
            epochs_done: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// One pass over all blocks.
pub fn train_epoch(
    backbone: &Backbone,
    trainer: &mut Trainer,
    blocks: &[TrainBlock],
    run: &RunConfig,
    loss_cfg: &LossConfig,
) -> Result<EpochStats> {
    if blocks.is_empty() {
        return Err(Error::InvalidConfig("no training blocks".into()));
    }
    run.validate()?;
    loss_cfg.validate()?;
    let start = Instant::now();
    let epoch = trainer.epochs_done;
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    let mut rng = derive_rng_stream(RngStreamKey::new(run.seed, epoch as u64, purpose::SHUFFLE, 0));
    order.shuffle(&mut rng);

    let stochastic = backbone.config.dropout_spec().any_enabled();
    let warmup = epoch == 0;
    let mut total_loss = 0.0;
    for batch in order.chunks(run.batch_size) {
        let mut grads = GradientSet::zeros_like(&trainer.params);
        for &b in batch {
            let block = &blocks[b];
            trainer.block_counter += 1;
            let masking = if stochastic {
                Masking::Keyed {
                    seed: run.seed,
                    sample_index: trainer.block_counter,
                    ids: None,
                }
            } else {
                Masking::Off
            };
            let (probs, tape) = backbone.forward(&trainer.params, &block.cloud, masking, true)?;
            let labels = block.cloud.labels.as_deref();
            let out = match loss_cfg.kind {
                LossKind::Ugce if !warmup => {
                    let u = nsa_uncertainty(&probs, &block.neighbors, loss_cfg.acquisition)?;
                    ugce_loss(&probs, labels, &u.aleatoric, loss_cfg.alpha)?
                }
                _ => ce_loss(&probs, labels)?,
            };
            total_loss += out.loss;
            grads.accumulate(&backbone.backward(&trainer.params, &tape, out.logit_grad.view())?);
        }
        grads.scale(1.0 / batch.len() as f64);
        adam_step(&mut trainer.params, &grads, &mut trainer.adam, run.learning_rate)?;
    }
    trainer.epochs_done += 1;
    Ok(EpochStats {
        epoch: epoch + 1,
        loss: total_loss / blocks.len() as f64,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Deterministic-pass predictions scored against each block's labels.
pub fn evaluate(backbone: &Backbone, params: &ModelParams, blocks: &[EvalBlock]) -> Result<SegmentationScores> {
    let m = backbone.config.num_classes();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for b in blocks {
        preds.extend(backbone.forward_deterministic(params, &b.cloud)?.argmax());
        labels.extend_from_slice(&b.labels);
    }
    segmentation_scores(&confusion(&preds, &labels, m)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub scores: Option<SegmentationScores>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub params: ModelParams,
}

impl TrainReport {
    pub fn final_scores(&self) -> Option<&SegmentationScores> {
        self.epochs.last().and_then(|e| e.scores.as_ref())
    }

    /// `epoch,loss,miou,macc,oacc,seconds`; scores in percent.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            ("epoch", "int"),
            ("loss", "f64"),
            ("miou", "f64"),
            ("macc", "f64"),
            ("oacc", "f64"),
            ("seconds", "f64"),
        ]);
        for e in &self.epochs {
            let s = |f: fn(&SegmentationScores) -> f64| e.scores.as_ref().map_or("nan".to_string(), |s| (100.0 * f(s)).to_string());
            t.push(vec![
                e.epoch.to_string(),
                e.loss.to_string(),
                s(|s| s.miou),
                s(|s| s.macc),
                s(|s| s.oacc),
                e.seconds.to_string(),
            ]);
        }
        t
    }
}

/// Trains for `run.epochs` epochs from `params`, scoring on `val` after
/// every epoch when it is non-empty.
pub fn train(
    backbone: &Backbone,
    params: ModelParams,
    blocks: &[TrainBlock],
    val: &[EvalBlock],
    run: &RunConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(params);
    let mut epochs = Vec::with_capacity(run.epochs);
    for _ in 0..run.epochs {
        let stats = train_epoch(backbone, &mut trainer, blocks, run, loss_cfg)?;
        if !stats.loss.is_finite() {
            return Err(Error::InvalidConfig(format!("loss diverged at epoch {}", stats.epoch)));
        }
        let scores = if val.is_empty() {
            None
        } else {
            Some(evaluate(backbone, &trainer.params, val)?)
        };
        epochs.push(EpochRecord {
            epoch: stats.epoch,
            loss: stats.loss,
            scores,
            seconds: stats.seconds,
        });
    }
    Ok(TrainReport {
        epochs,
        params: trainer.params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Final mIoU per seed, in seed order.
    pub mious: Vec<f64>,
    pub median_miou: f64,
}

pub fn alpha_table_csv(rows: &[AlphaRow], seeds: &[u64]) -> CsvTable {
    let mut t = CsvTable::new(&[("alpha", "f64"), ("seed", "int"), ("miou_percent", "f64")]);
    for r in rows {
        for (s, m) in seeds.iter().zip(&r.mious) {
            t.push(vec![r.alpha.to_string(), s.to_string(), (100.0 * m).to_string()]);
        }
        t.push(vec![r.alpha.to_string(), "median".into(), (100.0 * r.median_miou).to_string()]);
    }
    t
}

/// Trains one model per (alpha, seed) with the uncertainty-guided loss and
/// reports the median final mIoU per alpha. Alpha 0 is the CE control.
pub fn alpha_sweep(
    backbone: &Backbone,
    blocks: &[TrainBlock],
    val: &[EvalBlock],
    alphas: &[f64],
    seeds: &[u64],
    run: &RunConfig,
    acquisition: Acquisition,
) -> Result<Vec<AlphaRow>> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("alpha sweep needs alphas and seeds".into()));
    }
    if val.is_empty() {
        return Err(Error::InvalidConfig("alpha sweep needs evaluation blocks".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let loss = LossConfig {
            kind: LossKind::Ugce,
            alpha,
            acquisition,
        };
        let mut mious = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = RunConfig { seed, ..run.clone() };
            let report = train(backbone, backbone.init_params(seed), blocks, &[], &cfg, &loss)?;
            mious.push(evaluate(backbone, &report.params, val)?.miou);
        }
        rows.push(AlphaRow {
            alpha,
            median_miou: median(&mious),
            mious,
        });
    }
    Ok(rows)
}
