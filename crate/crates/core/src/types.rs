//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// A set of points with coordinates (meters), per-point features and
/// optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// N×3 coordinates.
    pub coords: Array2<f64>,
    /// N×F features; F may be zero.
    pub features: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl PointCloud {
    /// Builds a cloud and checks every invariant.
    pub fn new(
        coords: Array2<f64>,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        validate_cloud(PointCloud {
            coords,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [
            self.coords[[i, 0]],
            self.coords[[i, 1]],
            self.coords[[i, 2]],
        ]
    }

    /// Per-point network input: coordinates followed by features.
    pub fn input_matrix(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.coords.view(), self.features.view()])
            .expect("row counts checked at construction")
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }

    /// Rows `indices` (in order, repeats allowed) as a new cloud.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            coords: self.coords.select(Axis(0), indices),
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
        }
    }
}

/// Returns the cloud unchanged iff every invariant holds.
pub fn validate_cloud(cloud: PointCloud) -> Result<PointCloud> {
    let n = cloud.coords.nrows();
    if cloud.num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be positive".into()));
    }
    if cloud.coords.ncols() != 3 {
        return Err(Error::DimensionMismatch {
            row: 0,
            what: format!("coords have {} columns, expected 3", cloud.coords.ncols()),
        });
    }
    if cloud.features.nrows() != n {
        return Err(Error::DimensionMismatch {
            row: n.min(cloud.features.nrows()),
            what: format!(
                "{} coordinate rows but {} feature rows",
                n,
                cloud.features.nrows()
            ),
        });
    }
    if let Some(labels) = &cloud.labels {
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                row: n.min(labels.len()),
                what: format!("{} coordinate rows but {} labels", n, labels.len()),
            });
        }
    }
    for row in 0..n {
        let finite = |r: ArrayView1<f64>| r.iter().all(|v| v.is_finite());
        if !finite(cloud.coords.row(row)) || !finite(cloud.features.row(row)) {
            return Err(Error::NonFiniteValue { row });
        }
        if let Some(labels) = &cloud.labels {
            if labels[row] >= cloud.num_classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: labels[row],
                    num_classes: cloud.num_classes,
                });
            }
        }
    }
    Ok(cloud)
}

/// N×M matrix whose rows lie on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(pub Array2<f64>);

impl ClassProbabilities {
    pub fn num_points(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    /// Predicted label per row; ties resolve to the smaller class id.
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Largest deviation of any row sum from one.
    pub fn max_simplex_error(&self) -> f64 {
        self.0
            .rows()
            .into_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Where dropout layers sit in the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutConfig {
    /// After every hidden decoder layer.
    #[default]
    Con1,
    /// After the first and third hidden decoder layers.
    Con2,
    /// After the second hidden decoder layer only.
    Con3,
}

impl DropoutConfig {
    pub const ALL: [DropoutConfig; 3] = [DropoutConfig::Con1, DropoutConfig::Con2, DropoutConfig::Con3];

    /// Per hidden decoder layer, whether dropout follows it.
    pub fn flags(self, hidden_layers: usize) -> Vec<bool> {
        (0..hidden_layers)
            .map(|l| match self {
                DropoutConfig::Con1 => true,
                DropoutConfig::Con2 => l == 0 || l == 2,
                DropoutConfig::Con3 => l == 1,
            })
            .collect()
    }
}

impl fmt::Display for DropoutConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DropoutConfig::Con1 => "Con_1",
            DropoutConfig::Con2 => "Con_2",
            DropoutConfig::Con3 => "Con_3",
        };
        f.write_str(s)
    }
}

impl FromStr for DropoutConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "").as_str() {
            "con1" | "1" => Ok(DropoutConfig::Con1),
            "con2" | "2" => Ok(DropoutConfig::Con2),
            "con3" | "3" => Ok(DropoutConfig::Con3),
            _ => Err(Error::InvalidConfig(format!("unknown dropout config {s:?}"))),
        }
    }
}

/// Run-level settings shared by training, inference and benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Neighbors per point for aggregation, self included.
    pub neighbor_count: usize,
    pub dropout_rate: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    /// Blocks per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_config: DropoutConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            neighbor_count: 10,
            dropout_rate: 0.5,
            alpha: 0.5,
            learning_rate: 0.001,
            batch_size: 16,
            epochs: 20,
            dropout_config: DropoutConfig::Con1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbor_count == 0 {
            return Err(Error::InvalidConfig("neighbor_count must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}
