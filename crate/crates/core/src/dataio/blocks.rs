use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::{derive_rng_stream, purpose, RngStreamKey};
use crate::types::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    /// Edge length of the XY grid cells, meters.
    pub edge: f64,
    pub samples: usize,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            edge: 1.0,
            samples: 4096,
        }
    }
}

/// A fixed-size training block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Features are the source features followed by the coordinates relative
    /// to the cell center `(cx, cy, 0)`.
    pub cloud: PointCloud,
    /// Row in the source cloud of every block point.
    pub source: Vec<usize>,
    /// Grid cell counted from the minimum corner of the cloud.
    pub cell: [i64; 2],
}

/// Splits a cloud into XY cells of `spec.edge` meters, resampling each
/// occupied cell to exactly `spec.samples` points (with replacement only when
/// the cell holds fewer). Cells are returned in ascending (x, y) order.
///
/// The grid starts at the minimum corner of the cloud and has
/// `round(extent / edge)` cells per axis (at least one); points past the
/// last cell boundary join the last cell, so a few millimeters of scan noise
/// beyond a wall do not open a sliver block.
pub fn split_blocks(cloud: &PointCloud, spec: &BlockSpec, seed: u64) -> Result<Vec<Block>> {
    if !(spec.edge > 0.0) || spec.samples == 0 {
        return Err(Error::InvalidConfig("block edge and sample count must be positive".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut origin = [0.0; 2];
    let mut count = [0i64; 2];
    for a in 0..2 {
        let col = cloud.coords.column(a);
        let lo = col.fold(f64::INFINITY, |m, &v| m.min(v));
        let hi = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        origin[a] = lo;
        count[a] = (((hi - lo) / spec.edge).round() as i64).max(1);
    }
    let mut cells: BTreeMap<[i64; 2], Vec<usize>> = BTreeMap::new();
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        let cell: [i64; 2] = std::array::from_fn(|a| (((p[a] - origin[a]) / spec.edge).floor() as i64).min(count[a] - 1));
        cells.entry(cell).or_default().push(i);
    }
    let mut blocks = Vec::with_capacity(cells.len());
    for (k, (cell, members)) in cells.into_iter().enumerate() {
        let mut rng = derive_rng_stream(RngStreamKey::new(seed, k as u64, purpose::BLOCKS, 0));
        let source: Vec<usize> = if members.len() >= spec.samples {
            sample(&mut rng, members.len(), spec.samples)
                .into_iter()
                .map(|j| members[j])
                .collect()
        } else {
            (0..spec.samples)
                .map(|_| members[rng.random_range(0..members.len())])
                .collect()
        };
        let mut sub = cloud.select(&source);
        let center = [
            origin[0] + (cell[0] as f64 + 0.5) * spec.edge,
            origin[1] + (cell[1] as f64 + 0.5) * spec.edge,
            0.0,
        ];
        let rel = Array2::from_shape_fn((source.len(), 3), |(i, j)| sub.coords[[i, j]] - center[j]);
        sub.features = concatenate(Axis(1), &[sub.features.view(), rel.view()]).expect("row counts agree");
        blocks.push(Block {
            cloud: sub,
            source,
            cell,
        });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cloud(points: &[[f64; 3]]) -> PointCloud {
        let coords = Array2::from_shape_fn((points.len(), 3), |(i, j)| points[i][j]);
        PointCloud::new(coords, Array2::zeros((points.len(), 1)), Some(vec![0; points.len()]), 1).unwrap()
    }

    #[test]
    fn underfull_cell_is_resampled() {
        let pts: Vec<[f64; 3]> = (0..10).map(|i| [0.05 * i as f64, 0.5, 0.2]).collect();
        let blocks = split_blocks(&grid_cloud(&pts), &BlockSpec::default(), 1).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].cloud.len(), 4096);
        assert_eq!(blocks[0].cloud.num_features(), 4);
        // relative coords: x - 0.5, y - 0.5, z
        let b = &blocks[0];
        for i in 0..5 {
            let src = b.source[i];
            assert_eq!(b.cloud.features[[i, 1]], pts[src][0] - 0.5);
            assert_eq!(b.cloud.features[[i, 3]], pts[src][2]);
        }
    }

    #[test]
    fn separated_clusters() {
        let mut pts = vec![[0.2, 0.2, 0.0]; 5];
        pts.extend(vec![[5.2, 0.2, 0.0]; 5]);
        let blocks = split_blocks(&grid_cloud(&pts), &BlockSpec { edge: 1.0, samples: 8 }, 0).unwrap();
        assert_eq!(blocks.len(), 2);
    }

    #[test]
    fn full_cell_sampled_without_replacement() {
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [0.01 * i as f64, 0.3, 0.0]).collect();
        let blocks = split_blocks(&grid_cloud(&pts), &BlockSpec { edge: 1.0, samples: 20 }, 0).unwrap();
        let mut src = blocks[0].source.clone();
        src.sort();
        src.dedup();
        assert_eq!(src.len(), 20);
    }
}
