//! Uncertainty estimation over blocks and the evaluation artifacts built on
//! it: per-point maps, precision-recall curves and ranking IoU.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};

use crate::backbone::Backbone;
use crate::distribution::{establish_mc, establish_nsa, predictive_mean, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::metrics::{default_recall_grid, pr_curve, ranking_sequences, ranking_iou_from_sequences};
use crate::nn::ModelParams;
use crate::report::CsvTable;
use crate::spatial::{build_index, knn, voxelize};
use crate::training::EvalBlock;
use crate::types::PointCloud;
use crate::uncertainty::{entropy_decomposition, std_decomposition, Acquisition, UncertaintyMap};

/// Ranking IoU thresholds, percent of voxels.
pub const RANKING_PERCENTS: [f64; 4] = [10.0, 30.0, 50.0, 70.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// One stochastic pass, samples gathered from neighbors.
    #[default]
    Nsa,
    /// `T` stochastic passes.
    Mc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nsa => "NSA",
            Method::Mc => "MC",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NSA" => Ok(Method::Nsa),
            "MC" => Ok(Method::Mc),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

/// `T` samples per point. NSA uses the pass keyed by sample index 1, the same
/// pass MC starts with.
pub fn sample_distribution(
    backbone: &Backbone,
    params: &ModelParams,
    cloud: &PointCloud,
    method: Method,
    t: usize,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    match method {
        Method::Nsa => {
            let probs = backbone.forward_stochastic(params, cloud, seed, 1)?;
            let index = build_index(cloud)?;
            let neighbors = knn(&index, cloud, t)?;
            establish_nsa(&probs, &neighbors)
        }
        Method::Mc => establish_mc(backbone, params, cloud, t, seed),
    }
}

pub fn decompose(dist: &EmpiricalDistribution, acquisition: Acquisition) -> UncertaintyMap {
    match acquisition {
        Acquisition::Pe => entropy_decomposition(dist),
        Acquisition::Std => std_decomposition(dist),
    }
}

/// Per-point results over a set of blocks, concatenated in block order.
#[derive(Debug, Clone)]
pub struct BlockUncertainty {
    pub map: UncertaintyMap,
    /// Argmax of each point's predictive mean.
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Absolute coordinates of every point.
    pub coords: Array2<f64>,
}

impl BlockUncertainty {
    pub fn correct(&self) -> Vec<bool> {
        self.predictions.iter().zip(&self.labels).map(|(p, l)| p == l).collect()
    }

    /// 1 for a wrong prediction, 0 otherwise.
    pub fn errors(&self) -> Vec<f64> {
        self.correct().iter().map(|&c| if c { 0.0 } else { 1.0 }).collect()
    }

    pub fn pr_curve(&self) -> Result<Vec<(f64, f64)>> {
        pr_curve(&self.correct(), &self.map.total, &default_recall_grid())
    }

    /// Ranking IoU between voxel error and voxel total uncertainty at each
    /// percent.
    pub fn ranking_iou(&self, voxel_size: f64, percents: &[f64]) -> Result<Vec<f64>> {
        let n = self.coords.nrows();
        let cloud = PointCloud::new(self.coords.clone(), Array2::zeros((n, 0)), None, 1)?;
        let voxels = voxelize(&cloud, voxel_size)?;
        let seq = ranking_sequences(&voxels, &self.errors(), &self.map.total)?;
        percents.iter().map(|&p| ranking_iou_from_sequences(&seq, p)).collect()
    }
}

/// Block clouds carry coordinates relative to the block center as their last
/// three features; absolute coordinates are the cloud coordinates.
pub fn block_uncertainty(
    backbone: &Backbone,
    params: &ModelParams,
    blocks: &[EvalBlock],
    method: Method,
    t: usize,
    acquisition: Acquisition,
    seed: u64,
) -> Result<BlockUncertainty> {
    if blocks.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut maps = Vec::with_capacity(blocks.len());
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for b in blocks {
        let dist = sample_distribution(backbone, params, &b.cloud, method, t, seed)?;
        predictions.extend(predictive_mean(&dist).argmax());
        labels.extend_from_slice(&b.labels);
        maps.push(decompose(&dist, acquisition));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.cloud.coords.view()).collect();
    let coords = concatenate(Axis(0), &views).expect("three columns each");
    let cat = |f: fn(&UncertaintyMap) -> &Vec<f64>| maps.iter().flat_map(|m| f(m).iter().copied()).collect();
    Ok(BlockUncertainty {
        map: UncertaintyMap {
            total: cat(|m| &m.total),
            aleatoric: cat(|m| &m.aleatoric),
            epistemic: cat(|m| &m.epistemic),
            acquisition,
        },
        predictions,
        labels,
        coords,
    })
}

pub fn ranking_csv(rows: &[(String, usize, Vec<f64>)], percents: &[f64]) -> CsvTable {
    let mut t = CsvTable::new(&[("setting", "str"), ("samples", "int"), ("percent", "f64"), ("ranking_iou", "f64")]);
    for (setting, samples, ious) in rows {
        for (p, v) in percents.iter().zip(ious) {
            t.push(vec![setting.clone(), samples.to_string(), p.to_string(), v.to_string()]);
        }
    }
    t
}
