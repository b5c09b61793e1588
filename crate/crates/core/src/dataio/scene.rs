//! Seeded synthetic indoor rooms.
//!
//! A room is a floor, four walls, door and window openings cut into the
//! walls, and clutter boxes standing on the floor. Points are sampled on the
//! surfaces by area. Labels near an edge between two classes flip to the
//! other class with probability `boundary_noise_rate`; the unflipped labels
//! are kept alongside.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{derive_rng_stream, purpose, RngStreamKey};
use crate::types::PointCloud;

pub const FLOOR: usize = 0;
pub const WALL: usize = 1;
pub const DOOR: usize = 2;
pub const WINDOW: usize = 3;
pub const CLUTTER: usize = 4;
pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["floor", "wall", "door", "window", "clutter"];

/// Mean reflectance per class; per-point values add N(0, REFLECTANCE_SIGMA).
const REFLECTANCE: [f64; NUM_CLASSES] = [0.30, 0.55, 0.65, 0.80, 0.40];
const REFLECTANCE_SIGMA: f64 = 0.03;
const JITTER_SIGMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Room size along x, y and height, meters.
    pub extent: [f64; 3],
    pub doors: usize,
    /// Width and height of each door.
    pub door_size: [f64; 2],
    pub windows: usize,
    /// Width and height of each window.
    pub window_size: [f64; 2],
    pub window_sill: f64,
    pub clutter_boxes: usize,
    /// Footprint edge range and height range of clutter boxes.
    pub clutter_footprint: [f64; 2],
    pub clutter_height: [f64; 2],
    pub points: usize,
    pub boundary_noise_rate: f64,
    /// Half-width of the noisy band around class edges, meters.
    pub boundary_band: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            extent: [4.0, 4.0, 2.5],
            doors: 1,
            door_size: [0.9, 2.0],
            windows: 2,
            window_size: [1.2, 1.0],
            window_sill: 0.9,
            clutter_boxes: 2,
            clutter_footprint: [0.5, 1.0],
            clutter_height: [0.4, 0.9],
            points: 20_000,
            boundary_noise_rate: 0.0,
            boundary_band: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.extent.iter().any(|&e| !(e > 0.0)) {
            return bad("room extent must be positive");
        }
        if !(0.0..1.0).contains(&self.boundary_noise_rate) {
            return bad("boundary noise rate must be in [0, 1)");
        }
        if !(self.boundary_band >= 0.0) {
            return bad("boundary band must be non-negative");
        }
        if self.door_size.iter().chain(&self.window_size).any(|&e| !(e > 0.0))
            || self.clutter_footprint[0] <= 0.0
            || self.clutter_height[0] <= 0.0
        {
            return bad("opening and clutter extents must be positive");
        }
        if self.door_size[1] >= self.extent[2] || self.window_sill + self.window_size[1] >= self.extent[2] {
            return bad("openings must fit below the ceiling");
        }
        Ok(())
    }
}

/// A generated room.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Cloud carrying the (possibly flipped) training labels.
    pub cloud: PointCloud,
    pub clean_labels: Vec<usize>,
    /// Whether each point lies inside the boundary band.
    pub in_band: Vec<bool>,
}

impl Scene {
    pub fn flipped(&self) -> Vec<bool> {
        self.cloud
            .labels
            .as_ref()
            .expect("scenes are labeled")
            .iter()
            .zip(&self.clean_labels)
            .map(|(a, b)| a != b)
            .collect()
    }
}

/// Axis-aligned rectangle lying in the plane `axis = offset`.
#[derive(Debug, Clone, Copy)]
struct Rect {
    axis: usize,
    offset: f64,
    /// Bounds along the two remaining axes, in ascending axis order.
    lo: [f64; 2],
    hi: [f64; 2],
    class: usize,
    /// Wall index for wall surfaces.
    wall: Option<usize>,
}

impl Rect {
    fn axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    fn point(&self, u: f64, v: f64) -> [f64; 3] {
        let mut p = [0.0; 3];
        let [a, b] = self.axes();
        p[self.axis] = self.offset;
        p[a] = self.lo[0] + u * (self.hi[0] - self.lo[0]);
        p[b] = self.lo[1] + v * (self.hi[1] - self.lo[1]);
        p
    }
}

/// An opening cut into a wall: span along the wall and height range.
#[derive(Debug, Clone, Copy)]
struct Opening {
    wall: usize,
    along: [f64; 2],
    height: [f64; 2],
    class: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    classes: [usize; 2],
}

impl Segment {
    fn distance(&self, p: &[f64; 3]) -> f64 {
        let d: Vec<f64> = (0..3).map(|k| self.b[k] - self.a[k]).collect();
        let len2: f64 = d.iter().map(|x| x * x).sum();
        let t = if len2 > 0.0 {
            ((0..3).map(|k| (p[k] - self.a[k]) * d[k]).sum::<f64>() / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (0..3)
            .map(|k| (p[k] - (self.a[k] + t * d[k])).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn other(&self, class: usize) -> Option<usize> {
        if self.classes[0] == class {
            Some(self.classes[1])
        } else if self.classes[1] == class {
            Some(self.classes[0])
        } else {
            None
        }
    }
}

/// Walls: 0 at y=0 (along x), 1 at x=Lx (along y), 2 at y=Ly (along x),
/// 3 at x=0 (along y).
fn wall_rect(wall: usize, ext: [f64; 3]) -> Rect {
    let (axis, offset, along) = match wall {
        0 => (1, 0.0, ext[0]),
        1 => (0, ext[0], ext[1]),
        2 => (1, ext[1], ext[0]),
        _ => (0, 0.0, ext[1]),
    };
    Rect {
        axis,
        offset,
        lo: [0.0, 0.0],
        hi: [along, ext[2]],
        class: WALL,
        wall: Some(wall),
    }
}

fn wall_point(wall: usize, ext: [f64; 3], along: f64, z: f64) -> [f64; 3] {
    match wall {
        0 => [along, 0.0, z],
        1 => [ext[0], along, z],
        2 => [along, ext[1], z],
        _ => [0.0, along, z],
    }
}

fn wall_length(wall: usize, ext: [f64; 3]) -> f64 {
    if wall.is_multiple_of(2) {
        ext[0]
    } else {
        ext[1]
    }
}

struct Layout {
    surfaces: Vec<Rect>,
    openings: Vec<Opening>,
    /// Box footprints `[x0, x1, y0, y1]`.
    footprints: Vec<[f64; 4]>,
    edges: Vec<Segment>,
}

fn place_layout<R: Rng>(spec: &SceneSpec, rng: &mut R) -> Layout {
    let ext = spec.extent;
    let mut surfaces = vec![Rect {
        axis: 2,
        offset: 0.0,
        lo: [0.0, 0.0],
        hi: [ext[0], ext[1]],
        class: FLOOR,
        wall: None,
    }];
    surfaces.extend((0..4).map(|w| wall_rect(w, ext)));

    let mut openings: Vec<Opening> = Vec::new();
    let margin = 0.2;
    let requests = std::iter::repeat_n((DOOR, spec.door_size, 0.0), spec.doors)
        .chain(std::iter::repeat_n((WINDOW, spec.window_size, spec.window_sill), spec.windows));
    for (class, size, base) in requests {
        for _attempt in 0..100 {
            let wall = rng.random_range(0..4);
            let len = wall_length(wall, ext);
            if size[0] + 2.0 * margin > len {
                continue;
            }
            let start = rng.random_range(margin..len - margin - size[0]);
            let cand = Opening {
                wall,
                along: [start, start + size[0]],
                height: [base, base + size[1]],
                class,
            };
            let clash = openings.iter().any(|o| {
                o.wall == wall && cand.along[0] < o.along[1] + margin && o.along[0] < cand.along[1] + margin
            });
            if !clash {
                openings.push(cand);
                break;
            }
        }
    }

    let mut footprints: Vec<[f64; 4]> = Vec::new();
    let wall_gap = 0.3;
    for _ in 0..spec.clutter_boxes {
        for _attempt in 0..100 {
            let fw = rng.random_range(spec.clutter_footprint[0]..=spec.clutter_footprint[1]);
            let fd = rng.random_range(spec.clutter_footprint[0]..=spec.clutter_footprint[1]);
            if fw + 2.0 * wall_gap >= ext[0] || fd + 2.0 * wall_gap >= ext[1] {
                break;
            }
            let x0 = rng.random_range(wall_gap..ext[0] - wall_gap - fw);
            let y0 = rng.random_range(wall_gap..ext[1] - wall_gap - fd);
            let cand = [x0, x0 + fw, y0, y0 + fd];
            let clash = footprints.iter().any(|f| {
                cand[0] < f[1] + wall_gap && f[0] < cand[1] + wall_gap && cand[2] < f[3] + wall_gap && f[2] < cand[3] + wall_gap
            });
            if !clash {
                footprints.push(cand);
                break;
            }
        }
    }
    let mut edges = Vec::new();
    for f in &footprints {
        let h = rng.random_range(spec.clutter_height[0]..=spec.clutter_height[1]);
        let [x0, x1, y0, y1] = *f;
        let side = |axis, offset, lo, hi| Rect {
            axis,
            offset,
            lo,
            hi,
            class: CLUTTER,
            wall: None,
        };
        surfaces.push(side(2, h, [x0, y0], [x1, y1]));
        surfaces.push(side(1, y0, [x0, 0.0], [x1, h]));
        surfaces.push(side(1, y1, [x0, 0.0], [x1, h]));
        surfaces.push(side(0, x0, [y0, 0.0], [y1, h]));
        surfaces.push(side(0, x1, [y0, 0.0], [y1, h]));
        let corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
        for k in 0..4 {
            let a = corners[k];
            let b = corners[(k + 1) % 4];
            edges.push(Segment {
                a: [a[0], a[1], 0.0],
                b: [b[0], b[1], 0.0],
                classes: [FLOOR, CLUTTER],
            });
        }
    }

    for wall in 0..4 {
        let len = wall_length(wall, ext);
        // floor edge, split where doors reach the floor
        let mut cuts: Vec<[f64; 2]> = openings
            .iter()
            .filter(|o| o.wall == wall && o.height[0] == 0.0)
            .map(|o| o.along)
            .collect();
        cuts.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut pos = 0.0;
        for c in &cuts {
            edges.push(Segment {
                a: wall_point(wall, ext, pos, 0.0),
                b: wall_point(wall, ext, c[0], 0.0),
                classes: [FLOOR, WALL],
            });
            edges.push(Segment {
                a: wall_point(wall, ext, c[0], 0.0),
                b: wall_point(wall, ext, c[1], 0.0),
                classes: [FLOOR, DOOR],
            });
            pos = c[1];
        }
        edges.push(Segment {
            a: wall_point(wall, ext, pos, 0.0),
            b: wall_point(wall, ext, len, 0.0),
            classes: [FLOOR, WALL],
        });
    }
    for o in &openings {
        let p = |a, z| wall_point(o.wall, ext, a, z);
        let [a0, a1] = o.along;
        let [z0, z1] = o.height;
        let mut sides = vec![(p(a0, z0), p(a0, z1)), (p(a1, z0), p(a1, z1)), (p(a0, z1), p(a1, z1))];
        if z0 > 0.0 {
            sides.push((p(a0, z0), p(a1, z0)));
        }
        for (a, b) in sides {
            edges.push(Segment {
                a,
                b,
                classes: [WALL, o.class],
            });
        }
    }
    Layout {
        surfaces,
        openings,
        footprints,
        edges,
    }
}

fn wall_class(layout: &Layout, wall: usize, along: f64, z: f64) -> usize {
    layout
        .openings
        .iter()
        .find(|o| o.wall == wall && (o.along[0]..o.along[1]).contains(&along) && (o.height[0]..o.height[1]).contains(&z))
        .map_or(WALL, |o| o.class)
}

/// Generates a labeled room with boundary label noise.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = derive_rng_stream(RngStreamKey::new(spec.seed, 0, purpose::SCENE, 0));
    let layout = place_layout(spec, &mut rng);
    let areas: Vec<f64> = layout.surfaces.iter().map(Rect::area).collect();
    let total_area: f64 = areas.iter().sum();

    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
    let refl_noise = Normal::new(0.0, REFLECTANCE_SIGMA).expect("valid sigma");
    let n = spec.points;
    let mut coords = Array2::zeros((n, 3));
    let mut features = Array2::zeros((n, 1));
    let mut clean = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut in_band = Vec::with_capacity(n);

    for i in 0..n {
        let (surface, p) = loop {
            let mut pick = rng.random::<f64>() * total_area;
            let mut s = layout.surfaces.len() - 1;
            for (k, a) in areas.iter().enumerate() {
                if pick < *a {
                    s = k;
                    break;
                }
                pick -= a;
            }
            let rect = &layout.surfaces[s];
            let p = rect.point(rng.random(), rng.random());
            let under_box = rect.class == FLOOR
                && layout
                    .footprints
                    .iter()
                    .any(|f| p[0] > f[0] && p[0] < f[1] && p[1] > f[2] && p[1] < f[3]);
            if !under_box {
                break (rect, p);
            }
        };
        let class = match surface.wall {
            Some(w) => {
                let along = p[surface.axes()[0]];
                wall_class(&layout, w, along, p[2])
            }
            None => surface.class,
        };

        let nearest = layout
            .edges
            .iter()
            .filter_map(|e| e.other(class).map(|o| (e.distance(&p), o)))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let band = matches!(nearest, Some((d, _)) if d < spec.boundary_band);
        let mut label = class;
        let mut flip_rng = derive_rng_stream(RngStreamKey::new(spec.seed, i as u64, purpose::SCENE, 1));
        if band && flip_rng.random::<f64>() < spec.boundary_noise_rate {
            label = nearest.expect("band implies an edge").1;
        }

        for k in 0..3 {
            coords[[i, k]] = p[k] + jitter.sample(&mut rng);
        }
        features[[i, 0]] = REFLECTANCE[class] + refl_noise.sample(&mut rng);
        clean.push(class);
        labels.push(label);
        in_band.push(band);
    }
    Ok(Scene {
        cloud: PointCloud::new(coords, features, Some(labels), NUM_CLASSES)?,
        clean_labels: clean,
        in_band,
    })
}
