//! Segmentation quality and uncertainty-quality metrics.
//!
//! Scores are fractions in [0, 1]; CSV exports convert to percent where the
//! column name says so.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::report::CsvTable;
use crate::spatial::VoxelAssignment;

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    /// Row-stochastic view; rows without true points stay zero.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.counts.mapv(|c| c as f64);
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        out
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[("true_class", "int"), ("predicted_class", "int"), ("count", "int")]);
        for ((a, b), &c) in self.counts.indexed_iter() {
            t.push(vec![a.to_string(), b.to_string(), c.to_string()]);
        }
        t
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut counts = Array2::zeros((num_classes, num_classes));
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::LabelOutOfRange {
                row: 0,
                label: p.max(l),
                num_classes,
            });
        }
        counts[[l, p]] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationScores {
    pub oacc: f64,
    pub macc: f64,
    pub miou: f64,
    /// 0 for classes absent from both truth and prediction.
    pub per_class_iou: Vec<f64>,
    pub per_class_acc: Vec<f64>,
    /// Classes with any true or predicted point; only these enter the means.
    pub present: Vec<bool>,
}

impl SegmentationScores {
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[("metric", "str"), ("class", "str"), ("value_percent", "f64")]);
        for (name, v) in [("oacc", self.oacc), ("macc", self.macc), ("miou", self.miou)] {
            t.push(vec![name.into(), "all".into(), (100.0 * v).to_string()]);
        }
        for (c, v) in self.per_class_iou.iter().enumerate() {
            t.push(vec!["iou".into(), c.to_string(), (100.0 * v).to_string()]);
        }
        for (c, v) in self.per_class_acc.iter().enumerate() {
            t.push(vec!["acc".into(), c.to_string(), (100.0 * v).to_string()]);
        }
        t
    }
}

pub fn segmentation_scores(conf: &ConfusionMatrix) -> Result<SegmentationScores> {
    let total = conf.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let m = conf.num_classes();
    let diag: Vec<f64> = (0..m).map(|c| conf.counts[[c, c]] as f64).collect();
    let rows: Vec<f64> = (0..m).map(|c| conf.counts.row(c).sum() as f64).collect();
    let cols: Vec<f64> = (0..m).map(|c| conf.counts.column(c).sum() as f64).collect();
    let present: Vec<bool> = (0..m).map(|c| rows[c] > 0.0 || cols[c] > 0.0).collect();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let per_class_acc: Vec<f64> = (0..m).map(|c| ratio(diag[c], rows[c])).collect();
    let per_class_iou: Vec<f64> = (0..m)
        .map(|c| ratio(diag[c], rows[c] + cols[c] - diag[c]))
        .collect();
    let count = present.iter().filter(|&&p| p).count() as f64;
    let mean_present = |v: &[f64]| {
        v.iter()
            .zip(&present)
            .filter(|(_, &p)| p)
            .map(|(x, _)| x)
            .sum::<f64>()
            / count
    };
    Ok(SegmentationScores {
        oacc: diag.iter().sum::<f64>() / total as f64,
        macc: mean_present(&per_class_acc),
        miou: mean_present(&per_class_iou),
        per_class_iou,
        per_class_acc,
        present,
    })
}

/// Recall grid 1%, 2%, ..., 100%.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=100).map(f64::from).collect()
}

/// Number of leading items covering `percent` of `n`, rounded up.
pub fn prefix_len(percent: f64, n: usize) -> usize {
    let raw = percent * n as f64 / 100.0;
    ((raw - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Indices ordered by ascending key, ties by ascending index.
pub fn ascending_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
    order
}

/// Precision over the least-uncertain `r`% of points for each recall `r`.
pub fn pr_curve(correct: &[bool], uncertainty: &[f64], recall_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if correct.len() != uncertainty.len() {
        return Err(Error::LengthMismatch {
            left: correct.len(),
            right: uncertainty.len(),
        });
    }
    if correct.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&r) = recall_grid.iter().find(|&&r| !(r > 0.0 && r <= 100.0)) {
        return Err(Error::InvalidConfig(format!("recall {r} outside (0, 100]")));
    }
    let order = ascending_order(uncertainty);
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0usize);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + usize::from(correct[i]));
    }
    Ok(recall_grid
        .iter()
        .map(|&r| {
            let k = prefix_len(r, correct.len());
            (r, prefix[k] as f64 / k as f64)
        })
        .collect())
}

pub fn pr_curve_csv(curve: &[(f64, f64)]) -> CsvTable {
    let mut t = CsvTable::new(&[("recall_percent", "f64"), ("precision", "f64")]);
    for (r, p) in curve {
        t.push(vec![r.to_string(), p.to_string()]);
    }
    t
}

/// Voxels ordered by ascending mean error and by ascending mean uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingSequences {
    pub error: Vec<usize>,
    pub uncertainty: Vec<usize>,
}

fn voxel_means(voxels: &VoxelAssignment, values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; voxels.num_voxels()];
    let mut count = vec![0usize; voxels.num_voxels()];
    for (&v, &x) in voxels.voxel_of.iter().zip(values) {
        sum[v] += x;
        count[v] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

pub fn ranking_sequences(voxels: &VoxelAssignment, errors: &[f64], uncertainty: &[f64]) -> Result<RankingSequences> {
    let n = voxels.voxel_of.len();
    for len in [errors.len(), uncertainty.len()] {
        if len != n {
            return Err(Error::LengthMismatch { left: n, right: len });
        }
    }
    if voxels.num_voxels() == 0 {
        return Err(Error::NoVoxels);
    }
    Ok(RankingSequences {
        error: ascending_order(&voxel_means(voxels, errors)),
        uncertainty: ascending_order(&voxel_means(voxels, uncertainty)),
    })
}

/// Intersection over union of the first `P_t`% of both rankings.
pub fn ranking_iou_from_sequences(seq: &RankingSequences, percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidConfig(format!("P_t {percent} outside (0, 100]")));
    }
    let v = seq.error.len();
    if v == 0 {
        return Err(Error::NoVoxels);
    }
    let k = prefix_len(percent, v);
    let mut in_e = vec![false; v];
    for &i in &seq.error[..k] {
        in_e[i] = true;
    }
    let inter = seq.uncertainty[..k].iter().filter(|&&i| in_e[i]).count();
    Ok(inter as f64 / (2 * k - inter) as f64)
}

pub fn ranking_iou(voxels: &VoxelAssignment, errors: &[f64], uncertainty: &[f64], percent: f64) -> Result<f64> {
    ranking_iou_from_sequences(&ranking_sequences(voxels, errors, uncertainty)?, percent)
}
