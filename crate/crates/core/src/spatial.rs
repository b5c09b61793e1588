//! Exact nearest-neighbor search and voxel assignment on point coordinates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::PointCloud;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// KD-tree over the coordinates of one cloud.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Candidate ordered by squared distance, then by point index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Builds a KD-tree over the cloud coordinates.
pub fn build_index(cloud: &PointCloud) -> Result<KdTree> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let points: Vec<[f64; 3]> = (0..cloud.len()).map(|i| cloud.point(i)).collect();
    Ok(KdTree::new(points))
}

impl KdTree {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[axis] == lo[axis] {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// The `k` nearest points to `query` ordered by (distance, index),
    /// skipping `exclude` if given.
    pub fn nearest(&self, query: &[f64; 3], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        found
            .into_iter()
            .map(|c| (c.index, c.dist2.sqrt()))
            .collect()
    }

    fn search(
        &self,
        node: usize,
        query: &[f64; 3],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate {
                        dist2: dist2(query, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, exclude, heap);
                // `<=` keeps equal-distance candidates with smaller indices reachable
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

/// Per-point neighbor lists; row `i` starts with `i` itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    width: usize,
}

impl NeighborIndex {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::ShapeMismatch("ragged neighbor rows".into()));
        }
        Ok(NeighborIndex {
            indices: rows.into_iter().flatten().collect(),
            width,
        })
    }

    pub fn num_points(&self) -> usize {
        self.indices.len().checked_div(self.width).unwrap_or(0)
    }

    /// Neighbors per row (T).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.width.max(1))
    }
}

/// Exact `t`-nearest neighbors of every point (self first).
pub fn knn(index: &KdTree, cloud: &PointCloud, t: usize) -> Result<NeighborIndex> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if t > n {
        return Err(Error::TooFewPoints {
            requested: t,
            available: n,
        });
    }
    if t == 0 {
        return Err(Error::InvalidConfig("neighbor count must be >= 1".into()));
    }
    if index.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "index built over {} points, cloud has {}",
            index.len(),
            n
        )));
    }
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(t);
            row.push(i);
            row.extend(
                index
                    .nearest(&cloud.point(i), t - 1, Some(i))
                    .into_iter()
                    .map(|(j, _)| j),
            );
            row
        })
        .collect();
    NeighborIndex::from_rows(rows)
}

/// Integer lattice cell of a voxel.
pub type VoxelCell = [i64; 3];

/// Assignment of points to occupied voxels of an origin-anchored grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelAssignment {
    pub voxel_size: f64,
    /// Voxel id of every point.
    pub voxel_of: Vec<usize>,
    /// Lattice cell of every voxel id, in ascending cell order.
    pub cells: Vec<VoxelCell>,
}

impl VoxelAssignment {
    pub fn num_voxels(&self) -> usize {
        self.cells.len()
    }

    /// Member point indices of each voxel.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells.len()];
        for (i, &v) in self.voxel_of.iter().enumerate() {
            out[v].push(i);
        }
        out
    }
}

pub fn cell_of(p: [f64; 3], voxel_size: f64) -> VoxelCell {
    [
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    ]
}

pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelAssignment> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::NonPositiveVoxelSize(voxel_size));
    }
    let point_cells: Vec<VoxelCell> = (0..cloud.len())
        .map(|i| cell_of(cloud.point(i), voxel_size))
        .collect();
    let mut ids: BTreeMap<VoxelCell, usize> = point_cells.iter().map(|&c| (c, 0)).collect();
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    Ok(VoxelAssignment {
        voxel_size,
        voxel_of: point_cells.iter().map(|c| ids[c]).collect(),
        cells: ids.into_keys().collect(),
    })
}
