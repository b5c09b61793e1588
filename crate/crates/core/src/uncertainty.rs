//! Acquisition functions over empirical predictive distributions.
//!
//! Both decompositions split the total uncertainty of a point into an
//! aleatoric part (expected within-sample uncertainty) and an epistemic part
//! (spread between samples), with `total = aleatoric + epistemic`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::distribution::EmpiricalDistribution;
use crate::error::{Error, Result};
use crate::report::CsvTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Acquisition {
    /// Predictive entropy, in nats.
    Pe,
    /// Mean of the class-variance diagonal.
    #[default]
    Std,
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Acquisition::Pe => "PE",
            Acquisition::Std => "STD",
        })
    }
}

impl FromStr for Acquisition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PE" => Ok(Acquisition::Pe),
            "STD" => Ok(Acquisition::Std),
            _ => Err(Error::InvalidConfig(format!("unknown acquisition {s:?}"))),
        }
    }
}

/// Per-point total, aleatoric and epistemic uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub total: Vec<f64>,
    pub aleatoric: Vec<f64>,
    pub epistemic: Vec<f64>,
    pub acquisition: Acquisition,
}

impl UncertaintyMap {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Largest `|total - (aleatoric + epistemic)|` over points.
    pub fn additivity_residual(&self) -> f64 {
        self.total
            .iter()
            .zip(&self.aleatoric)
            .zip(&self.epistemic)
            .map(|((u, a), e)| (u - (a + e)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            ("point_index", "int"),
            ("total", "f64"),
            ("aleatoric", "f64"),
            ("epistemic", "f64"),
            ("acquisition", "str"),
        ]);
        for i in 0..self.len() {
            t.push(vec![
                i.to_string(),
                self.total[i].to_string(),
                self.aleatoric[i].to_string(),
                self.epistemic[i].to_string(),
                self.acquisition.to_string(),
            ]);
        }
        t
    }
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

fn entropy(p: ArrayView1<f64>) -> f64 {
    -p.iter().map(|&v| plogp(v)).sum::<f64>()
}

fn mean_sample(samples: ArrayView2<f64>) -> Array1<f64> {
    samples.mean_axis(ndarray::Axis(0)).expect("T >= 1")
}

/// Entropy of the mean (total), mean entropy (aleatoric) and their gap
/// (epistemic).
pub fn entropy_decomposition(dist: &EmpiricalDistribution) -> UncertaintyMap {
    let per_point: Vec<(f64, f64)> = (0..dist.num_points())
        .into_par_iter()
        .map(|i| {
            let s = dist.point(i);
            let total = entropy(mean_sample(s).view());
            let aleatoric = s.rows().into_iter().map(entropy).sum::<f64>() / s.nrows() as f64;
            (total, aleatoric)
        })
        .collect();
    UncertaintyMap {
        total: per_point.iter().map(|p| p.0).collect(),
        aleatoric: per_point.iter().map(|p| p.1).collect(),
        epistemic: per_point.iter().map(|p| p.0 - p.1).collect(),
        acquisition: Acquisition::Pe,
    }
}

/// Variance decomposition. Per class `c`:
/// epistemic `mean_t (p_tc - pbar_c)^2`, aleatoric `mean_t p_tc (1 - p_tc)`,
/// total `pbar_c (1 - pbar_c)`; each scalar is the mean over classes.
pub fn std_decomposition(dist: &EmpiricalDistribution) -> UncertaintyMap {
    let per_point: Vec<(f64, f64, f64)> = (0..dist.num_points())
        .into_par_iter()
        .map(|i| {
            let s = dist.point(i);
            let (t, m) = s.dim();
            let mean = mean_sample(s);
            let mut epi = 0.0;
            let mut ale = 0.0;
            let mut tot = 0.0;
            for c in 0..m {
                let col = s.column(c);
                epi += col.iter().map(|&p| (p - mean[c]).powi(2)).sum::<f64>() / t as f64;
                ale += col.iter().map(|&p| p * (1.0 - p)).sum::<f64>() / t as f64;
                tot += mean[c] * (1.0 - mean[c]);
            }
            let m = m as f64;
            (tot / m, ale / m, epi / m)
        })
        .collect();
    UncertaintyMap {
        total: per_point.iter().map(|p| p.0).collect(),
        aleatoric: per_point.iter().map(|p| p.1).collect(),
        epistemic: per_point.iter().map(|p| p.2).collect(),
        acquisition: Acquisition::Std,
    }
}

/// Full-covariance check of `mean_t diag(p_t) - pbar pbarᵀ = Var_e + Var_a`,
/// where `Var_e = mean_t (p_t - pbar)(p_t - pbar)ᵀ` and
/// `Var_a = mean_t [diag(p_t) - p_t p_tᵀ]`. Returns the largest absolute
/// residual over points and matrix entries.
pub fn total_variance_identity_check(dist: &EmpiricalDistribution) -> f64 {
    (0..dist.num_points())
        .into_par_iter()
        .map(|i| {
            let s = dist.point(i);
            let (t, m) = s.dim();
            let tf = t as f64;
            let mean = mean_sample(s);
            let mut total = Array2::<f64>::zeros((m, m));
            let mut epi = Array2::<f64>::zeros((m, m));
            let mut ale = Array2::<f64>::zeros((m, m));
            for row in s.rows() {
                for a in 0..m {
                    total[[a, a]] += row[a] / tf;
                    ale[[a, a]] += row[a] / tf;
                    for b in 0..m {
                        epi[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]) / tf;
                        ale[[a, b]] -= row[a] * row[b] / tf;
                    }
                }
            }
            for a in 0..m {
                for b in 0..m {
                    total[[a, b]] -= mean[a] * mean[b];
                }
            }
            (&total - &epi - &ale).iter().fold(0.0f64, |w, v| w.max(v.abs()))
        })
        .reduce(|| 0.0, f64::max)
}
