use ndarray::{Array2, Array3};
use proptest::prelude::*;

use nsamc::backbone::{Backbone, BackboneConfig, Masking};
use nsamc::dataio::{format_cloud, parse_cloud};
use nsamc::distribution::{establish_nsa, EmpiricalDistribution, Provenance};
use nsamc::metrics::{confusion, default_recall_grid, pr_curve, ranking_iou, segmentation_scores};
use nsamc::rng::{fill_dropout_mask, RngStreamKey};
use nsamc::spatial::{build_index, knn, voxelize};
use nsamc::training::ugce_weights;
use nsamc::types::{ClassProbabilities, DropoutConfig, PointCloud};
use nsamc::uncertainty::{entropy_decomposition, std_decomposition, total_variance_identity_check};

fn cloud_of(points: &[[f64; 3]]) -> PointCloud {
    let coords = Array2::from_shape_fn((points.len(), 3), |(i, j)| points[i][j]);
    PointCloud::new(coords, Array2::zeros((points.len(), 0)), None, 1).unwrap()
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    // A coarse lattice makes exact distance ties common.
    prop_oneof![
        prop::array::uniform3(-10.0f64..10.0),
        prop::array::uniform3(-3i32..3).prop_map(|a| a.map(|v| v as f64)),
    ]
}

fn brute_force(points: &[[f64; 3]], t: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            std::iter::once(i).chain(others.into_iter().take(t - 1).map(|p| p.1)).collect()
        })
        .collect()
}

fn samples() -> impl Strategy<Value = EmpiricalDistribution> {
    (1usize..8, 1usize..12, 1usize..7).prop_flat_map(|(n, t, m)| {
        prop::collection::vec(prop::collection::vec(-8.0f64..8.0, m), n * t).prop_map(move |logits| {
            let mut a = Array3::zeros((n, t, m));
            for (k, row) in logits.iter().enumerate() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for c in 0..m {
                    a[[k / t, k % t, c]] = (row[c] - max).exp() / z;
                }
            }
            EmpiricalDistribution::new(a, Provenance::Mc).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_brute_force(points in prop::collection::vec(point(), 1..300), t in 1usize..12) {
        let t = t.min(points.len());
        let cloud = cloud_of(&points);
        let got = knn(&build_index(&cloud).unwrap(), &cloud, t).unwrap();
        let want = brute_force(&points, t);
        for (i, w) in want.iter().enumerate() {
            prop_assert_eq!(got.row(i), &w[..]);
        }
    }

    #[test]
    fn voxel_grouping_survives_lattice_translation(
        points in prop::collection::vec(prop::array::uniform3(0.0f64..5.0), 1..100),
        shift in prop::array::uniform3(-4i32..4),
    ) {
        let size = 0.5;
        let moved: Vec<[f64; 3]> = points
            .iter()
            .map(|p| std::array::from_fn(|a| p[a] + shift[a] as f64 * 2.0))
            .collect();
        let a = voxelize(&cloud_of(&points), size).unwrap();
        let b = voxelize(&cloud_of(&moved), size).unwrap();
        prop_assert_eq!(a.num_voxels(), b.num_voxels());
        prop_assert_eq!(a.voxel_of, b.voxel_of);
    }

    #[test]
    fn decompositions_are_consistent(dist in samples()) {
        let pe = entropy_decomposition(&dist);
        let sd = std_decomposition(&dist);
        prop_assert!(pe.additivity_residual() < 1e-12);
        prop_assert!(sd.additivity_residual() < 1e-12);
        prop_assert!(total_variance_identity_check(&dist) < 1e-12);
        let m = dist.num_classes() as f64;
        for i in 0..dist.num_points() {
            prop_assert!(pe.epistemic[i] >= -1e-12);
            prop_assert!(pe.total[i] <= m.ln() + 1e-12);
            prop_assert!(sd.total[i] <= 0.25 + 1e-12);
            for v in [pe.aleatoric[i], sd.aleatoric[i], sd.epistemic[i]] {
                prop_assert!(v >= -1e-12);
            }
        }
    }

    #[test]
    fn decomposition_ignores_sample_order(dist in samples(), rot in 0usize..20) {
        let (n, t, m) = dist.samples.dim();
        let shifted = Array3::from_shape_fn((n, t, m), |(i, s, c)| dist.samples[[i, (s + rot) % t, c]]);
        let other = EmpiricalDistribution::new(shifted, Provenance::Mc).unwrap();
        let (a, b) = (std_decomposition(&dist), std_decomposition(&other));
        for i in 0..n {
            prop_assert!((a.total[i] - b.total[i]).abs() < 1e-12);
            prop_assert!((a.aleatoric[i] - b.aleatoric[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn ugce_weights_fall_with_uncertainty(u in prop::collection::vec(0.0f64..3.0, 2..20), alpha in 0.0f64..4.0) {
        let w = ugce_weights(&u, alpha).unwrap();
        for i in 0..u.len() {
            prop_assert!(w[i] > 0.0 && w[i] <= 1.0);
            for j in 0..u.len() {
                if u[i] < u[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn nsa_rows_come_from_neighbors(points in prop::collection::vec(point(), 2..60), t in 1usize..6) {
        let t = t.min(points.len());
        let cloud = cloud_of(&points);
        let n = points.len();
        let probs = ClassProbabilities(Array2::from_shape_fn((n, 3), |(i, c)| if c == i % 3 { 1.0 } else { 0.0 }));
        let neighbors = knn(&build_index(&cloud).unwrap(), &cloud, t).unwrap();
        let dist = establish_nsa(&probs, &neighbors).unwrap();
        for i in 0..n {
            for (s, &j) in neighbors.row(i).iter().enumerate() {
                let row = dist.point(i).row(s).to_owned();
                prop_assert_eq!(row, probs.row(j).to_owned());
            }
        }
    }

    #[test]
    fn pr_curve_ends_at_accuracy(correct in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let unc: Vec<f64> = (0..correct.len()).map(|i| ((i as u64 ^ seed) % 17) as f64).collect();
        let curve = pr_curve(&correct, &unc, &default_recall_grid()).unwrap();
        let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        prop_assert!((curve.last().unwrap().1 - acc).abs() < 1e-12);
    }

    #[test]
    fn full_prefix_ranking_iou_is_one(
        points in prop::collection::vec(prop::array::uniform3(0.0f64..3.0), 1..80),
        seed in any::<u64>(),
    ) {
        let n = points.len();
        let errors: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed) % 2) as f64).collect();
        let unc: Vec<f64> = (0..n).map(|i| ((i as u64 ^ seed) % 7) as f64).collect();
        let v = voxelize(&cloud_of(&points), 0.5).unwrap();
        prop_assert_eq!(ranking_iou(&v, &errors, &unc, 100.0).unwrap(), 1.0);
    }

    #[test]
    fn scores_stay_in_unit_interval(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let s = segmentation_scores(&confusion(&pred, &labels, 4).unwrap()).unwrap();
        for v in [s.oacc, s.macc, s.miou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(s.miou <= s.macc + 1e-12);
    }

    #[test]
    fn pcs_round_trip(points in prop::collection::vec(point(), 1..40), labelled in any::<bool>()) {
        let n = points.len();
        let coords = Array2::from_shape_fn((n, 3), |(i, j)| points[i][j]);
        let feats = Array2::from_shape_fn((n, 2), |(i, j)| (i * 3 + j) as f64 * 0.125 - 1.0);
        let labels = labelled.then(|| (0..n).map(|i| i % 4).collect());
        let cloud = PointCloud::new(coords, feats, labels, 4).unwrap();
        let back = parse_cloud(&format_cloud(&cloud), std::path::Path::new("mem.pcs")).unwrap();
        prop_assert_eq!(back, cloud);
    }

    #[test]
    fn backbone_is_permutation_equivariant(n in 2usize..24, seed in any::<u64>(), rot in 1usize..23) {
        let coords = Array2::from_shape_fn((n, 3), |(i, j)| (((i * 31 + j * 7) as u64 ^ seed) % 97) as f64 / 97.0);
        let cloud = PointCloud::new(coords, Array2::zeros((n, 1)), None, 3).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = cloud.select(&perm);
        let config = BackboneConfig {
            encoder: vec![8, 12],
            decoder: vec![16, 10, 8, 6, 3],
            dropout_config: DropoutConfig::Con1,
            dropout_rate: 0.5,
        };
        let bb = Backbone::for_cloud(config, &cloud).unwrap();
        let params = bb.init_params(seed);
        let ids: Vec<u64> = (0..n as u64).collect();
        let pids: Vec<u64> = perm.iter().map(|&i| i as u64).collect();
        let a = bb.forward(&params, &cloud, Masking::Keyed { seed, sample_index: 1, ids: Some(&ids) }, false).unwrap().0;
        let b = bb.forward(&params, &permuted, Masking::Keyed { seed, sample_index: 1, ids: Some(&pids) }, false).unwrap().0;
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((a.0[[i, c]] - b.0[[k, c]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dropout_masks_keep_expectation_and_independence() {
    let p = 0.3;
    let width = 64;
    let rows = 4000;
    let mut sum = 0.0;
    let mut both = 0usize;
    let mut first = 0usize;
    let mut second = 0usize;
    for i in 0..rows {
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        fill_dropout_mask(RngStreamKey::new(5, i as u64, 0, 1), p, &mut a);
        fill_dropout_mask(RngStreamKey::new(5, i as u64, 1, 1), p, &mut b);
        sum += a.iter().sum::<f64>();
        for k in 0..width {
            let (x, y) = (a[k] > 0.0, b[k] > 0.0);
            first += x as usize;
            second += y as usize;
            both += (x && y) as usize;
        }
    }
    let total = (rows * width) as f64;
    // Inverted dropout keeps the mean multiplier at 1.
    assert!((sum / total - 1.0).abs() < 0.01);
    // Masks of different layers are independent: P(both) = P(a) P(b).
    let (pa, pb, pab) = (first as f64 / total, second as f64 / total, both as f64 / total);
    assert!((pab - pa * pb).abs() < 0.005);
}
