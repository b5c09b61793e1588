//! Per-point empirical predictive distributions.
//!
//! Two routes produce the same shape of result: neighborhood aggregation of a
//! single stochastic pass, and classic MC dropout with one pass per sample.

use std::io::{Read, Write};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::nn::ModelParams;
use crate::spatial::NeighborIndex;
use crate::types::{ClassProbabilities, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Nsa,
    Mc,
}

/// `samples[[i, t, c]]` is the `t`-th probability of class `c` for point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub samples: Array3<f64>,
    pub provenance: Provenance,
}

impl EmpiricalDistribution {
    pub fn new(samples: Array3<f64>, provenance: Provenance) -> Result<Self> {
        if samples.dim().1 == 0 || samples.dim().2 == 0 {
            return Err(Error::ShapeMismatch("distribution needs T >= 1 and M >= 1".into()));
        }
        Ok(EmpiricalDistribution { samples, provenance })
    }

    pub fn num_points(&self) -> usize {
        self.samples.dim().0
    }

    pub fn num_samples(&self) -> usize {
        self.samples.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.samples.dim().2
    }

    /// T×M sample matrix of point `i`.
    pub fn point(&self, i: usize) -> ArrayView2<'_, f64> {
        self.samples.index_axis(Axis(0), i)
    }

    pub fn max_simplex_error(&self) -> f64 {
        self.samples
            .lanes(Axis(2))
            .into_iter()
            .map(|l| (l.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `EDST`, u32 version, u64 N, T, M, u8 provenance, then N·T·M
    /// little-endian f64 values in row-major order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"EDST")?;
        w.write_all(&1u32.to_le_bytes())?;
        let (n, t, m) = self.samples.dim();
        for d in [n, t, m] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&[match self.provenance {
            Provenance::Nsa => 0u8,
            Provenance::Mc => 1u8,
        }])?;
        for v in self.samples.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8 + 24 + 1];
        r.read_exact(&mut head)?;
        if &head[..4] != b"EDST" || u32::from_le_bytes(head[4..8].try_into().unwrap()) != 1 {
            return Err(Error::Format("not a distribution file".into()));
        }
        let dim = |k: usize| u64::from_le_bytes(head[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (n, t, m) = (dim(0), dim(1), dim(2));
        let provenance = match head[32] {
            0 => Provenance::Nsa,
            1 => Provenance::Mc,
            b => return Err(Error::Format(format!("unknown provenance tag {b}"))),
        };
        let mut buf = vec![0u8; n * t * m * 8];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let samples = Array3::from_shape_vec((n, t, m), values).map_err(|e| Error::Format(e.to_string()))?;
        EmpiricalDistribution::new(samples, provenance)
    }
}

/// Neighborhood aggregation: the samples of point `i` are the stochastic
/// outputs of its neighbors, `samples[i][t] = probs[neighbors[i][t]]`.
pub fn establish_nsa(probs: &ClassProbabilities, neighbors: &NeighborIndex) -> Result<EmpiricalDistribution> {
    let n = probs.num_points();
    if neighbors.num_points() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows but {} neighbor rows",
            n,
            neighbors.num_points()
        )));
    }
    let (t, m) = (neighbors.width(), probs.num_classes());
    let mut samples = Array3::zeros((n, t, m));
    samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut point)| {
            for (k, &j) in neighbors.row(i).iter().enumerate() {
                point.row_mut(k).assign(&probs.row(j));
            }
        });
    EmpiricalDistribution::new(samples, Provenance::Nsa)
}

/// Classic MC dropout: `t` full stochastic passes, pass `k` (1-based) keyed
/// by sample index `k`.
pub fn establish_mc(
    backbone: &Backbone,
    params: &ModelParams,
    cloud: &PointCloud,
    t: usize,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    if t == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let m = backbone.config.num_classes();
    let mut samples = Array3::zeros((cloud.len(), t, m));
    for k in 0..t {
        let probs = backbone.forward_mc_style(params, cloud, seed, k as u64 + 1)?;
        samples.index_axis_mut(Axis(1), k).assign(&probs.0);
    }
    EmpiricalDistribution::new(samples, Provenance::Mc)
}

/// Mean over samples of every point.
pub fn predictive_mean(dist: &EmpiricalDistribution) -> ClassProbabilities {
    let mean: Array2<f64> = dist
        .samples
        .mean_axis(Axis(1))
        .expect("T >= 1");
    ClassProbabilities(mean)
}
