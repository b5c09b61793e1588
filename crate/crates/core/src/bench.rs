//! Wall-clock comparison of NSA and MC uncertainty estimation.

use std::time::Instant;

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::inference::{decompose, sample_distribution, Method};
use crate::nn::ModelParams;
use crate::report::CsvTable;
use crate::stats::median;
use crate::types::PointCloud;
use crate::uncertainty::Acquisition;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub samples: usize,
    pub points: usize,
    /// Median seconds over the timed repeats.
    pub seconds: f64,
    /// Forward passes of one run.
    pub passes: u64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn get(&self, method: Method, samples: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.samples == samples)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&[
            ("method", "str"),
            ("samples", "int"),
            ("points", "int"),
            ("median_seconds", "f64"),
            ("passes", "int"),
            ("repeats", "int"),
        ]);
        for r in &self.rows {
            t.push(vec![
                r.method.to_string(),
                r.samples.to_string(),
                r.points.to_string(),
                r.seconds.to_string(),
                r.passes.to_string(),
                r.repeats.to_string(),
            ]);
        }
        t
    }
}

/// Times the full estimate (passes, neighbor search for NSA, aggregation and
/// decomposition) for each method and sample count. One untimed warmup run
/// precedes `repeats` timed runs.
pub fn bench_uncertainty(
    backbone: &Backbone,
    params: &ModelParams,
    cloud: &PointCloud,
    sample_counts: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repeats == 0 || sample_counts.is_empty() {
        return Err(Error::InvalidConfig("bench needs sample counts and at least one repeat".into()));
    }
    let mut report = BenchReport::default();
    for method in [Method::Mc, Method::Nsa] {
        for &t in sample_counts {
            let run = || -> Result<u64> {
                let before = backbone.passes();
                let dist = sample_distribution(backbone, params, cloud, method, t, seed)?;
                std::hint::black_box(decompose(&dist, Acquisition::Std));
                Ok(backbone.passes() - before)
            };
            let passes = run()?;
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                run()?;
                times.push(start.elapsed().as_secs_f64());
            }
            report.rows.push(BenchRow {
                method,
                samples: t,
                points: cloud.len(),
                seconds: median(&times),
                passes,
                repeats,
            });
        }
    }
    Ok(report)
}
