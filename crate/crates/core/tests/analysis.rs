mod support;

use melodia::analysis::*;
use melodia::model::{LatentCode, ModelKind, MusicVae};
use melodia::notes::IndexedSequence;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn seq(rows: &[[usize; 3]]) -> IndexedSequence {
    let mut s = IndexedSequence::with_capacity(rows.len());
    rows.iter().for_each(|r| s.push(*r));
    s
}

#[test]
fn hamming_examples() {
    let a = seq(&[[0, 1, 2], [1, 1, 1]]);
    assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
    assert_eq!(hamming_distance(&a, &seq(&[[0, 1, 2], [1, 1, 3]])).unwrap(), 1);
    assert_eq!(hamming_distance(&a, &seq(&[[1, 2, 3], [0, 0, 0]])).unwrap(), 6);
    assert!(hamming_distance(&a, &seq(&[[0, 1, 2]])).is_err());
}

fn arb_seq(len: usize) -> impl Strategy<Value = IndexedSequence> {
    proptest::collection::vec((0usize..3, 0usize..3, 0usize..3), len).prop_map(|v| {
        let rows: Vec<[usize; 3]> = v.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        seq(&rows)
    })
}

proptest! {
    #[test]
    fn hamming_is_a_metric(a in arb_seq(8), b in arb_seq(8), c in arb_seq(8)) {
        let d = |x: &IndexedSequence, y: &IndexedSequence| hamming_distance(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= 24);
        prop_assert_eq!(d(&a, &b) == 0, a == b);
    }

    #[test]
    fn interpolation_path_is_affine(
        a in proptest::collection::vec(-5.0f64..5.0, 4),
        b in proptest::collection::vec(-5.0f64..5.0, 4),
        steps in 2usize..12,
    ) {
        let path = interpolate(&LatentCode::new(a.clone()), &LatentCode::new(b.clone()), steps).unwrap();
        prop_assert_eq!(path.len(), steps);
        prop_assert_eq!(&path[0].z, &a);
        prop_assert_eq!(&path[steps - 1].z, &b);
        for w in path.windows(3) {
            for i in 0..4 {
                prop_assert!((w[2].z[i] - 2.0 * w[1].z[i] + w[0].z[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_ignores_translation(shift in proptest::collection::vec(-100.0f64..100.0, 5), seed in 0u64..100) {
        let pts = gaussian_cloud(30, 5, seed);
        let moved: Vec<(Vec<f64>, String)> =
            pts.iter().map(|(p, l)| (p.iter().zip(&shift).map(|(x, s)| x + s).collect(), l.clone())).collect();
        let (c1, c2) = (pca_project(&pts, 2).unwrap(), pca_project(&moved, 2).unwrap());
        for (p, q) in c1.points.iter().zip(&c2.points) {
            for (x, y) in p.iter().zip(q) {
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn interpolation_examples() {
    let a = LatentCode::new(vec![1.0f64, -2.0, 3.5]);
    let neg = LatentCode::new(vec![-1.0f64, 2.0, -3.5]);
    let path = interpolate(&a, &neg, 3).unwrap();
    assert_eq!(path[1].z, vec![0.0; 3]);
    let b = LatentCode::new(vec![0.25f64, 7.0, -1.0]);
    let mid = &interpolate(&a, &b, 5).unwrap()[2];
    for i in 0..3 {
        assert!((mid.z[i] - (a.z[i] + b.z[i]) / 2.0).abs() < 1e-15);
    }
    assert!(interpolate(&a, &b, 1).is_err());
    assert!(interpolate(&a, &LatentCode::new(vec![0.0]), 3).is_err());
}

fn gaussian_cloud(n: usize, k: usize, seed: u64) -> Vec<(Vec<f64>, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..k).map(|i| 3.0 / (i + 1) as f64).collect();
    (0..n)
        .map(|i| {
            let p = scales.iter().map(|s| { let x: f64 = StandardNormal.sample(&mut rng); s * x }).collect::<Vec<f64>>();
            (p, format!("{}", i % 2))
        })
        .collect()
}

#[test]
fn eigensolver_agrees_with_a_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 3, 7, 16] {
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let (values, vectors) = symmetric_eigen(&a, n).unwrap();
        let mut oracle: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a)).eigenvalues.iter().cloned().collect();
        oracle.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (v, o) in values.iter().zip(&oracle) {
            assert!((v - o).abs() < 1e-10, "n={n}: {v} vs {o}");
        }
        for (lambda, u) in values.iter().zip(&vectors) {
            for i in 0..n {
                let au: f64 = (0..n).map(|j| a[i * n + j] * u[j]).sum();
                assert!((au - lambda * u[i]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn pca_matches_full_decomposition() {
    let pts = gaussian_cloud(50, 6, 2);
    let cloud = pca_project(&pts, 2).unwrap();
    for (i, u) in cloud.components.iter().enumerate() {
        for (j, v) in cloud.components.iter().enumerate() {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-9);
        }
        let lead = u.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
    }
    let r = &cloud.explained_variance_ratio;
    assert!(r[0] >= r[1] && r[0] + r[1] <= 1.0 + 1e-12);

    // Oracle: residual after projecting onto the top two directions of a
    // dense decomposition of the same covariance.
    let n = pts.len();
    let k = 6;
    let mean: Vec<f64> = (0..k).map(|d| pts.iter().map(|(p, _)| p[d]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, k, |i, d| pts[i].0[d] - mean[d]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let basis = DMatrix::from_fn(k, 2, |d, c| eig.eigenvectors[(d, order[c])]);
    let oracle_residual = (&centered - &centered * &basis * basis.transpose()).norm_squared();
    let ours = DMatrix::from_fn(k, 2, |d, c| cloud.components[c][d]);
    let residual = (&centered - &centered * &ours * ours.transpose()).norm_squared();
    assert!((residual - oracle_residual).abs() < 1e-8, "{residual} vs {oracle_residual}");
    let total_var: f64 = eig.eigenvalues.iter().sum();
    assert!((r[0] - eig.eigenvalues[order[0]] / total_var).abs() < 1e-10);
}

#[test]
fn planar_points_keep_their_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (u, v) = ([0.6, 0.0, 0.8, 0.0], [0.0, 1.0, 0.0, 0.0]);
    let pts: Vec<(Vec<f64>, String)> = (0..20)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            ((0..4).map(|d| 1.0 + a * u[d] + b * v[d]).collect(), "x".into())
        })
        .collect();
    let cloud = pca_project(&pts, 2).unwrap();
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            assert!((dist(&pts[i].0, &pts[j].0) - dist(&cloud.points[i], &cloud.points[j])).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_rejects_degenerate_input() {
    let same = vec![(vec![1.0f64, 2.0], "a".to_string()); 5];
    assert!(matches!(pca_project(&same, 2), Err(melodia::Error::Degenerate(_))));
    assert!(pca_project(&same[..2], 2).is_err());
    assert!(pca_project(&[(vec![1.0f64], "a".to_string()), (vec![2.0], "a".into()), (vec![3.0], "b".into())], 2).is_err());
}

#[test]
fn silhouette_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut jitter = || rng.random_range(-0.1..0.1);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..20 {
            pts.push(vec![100.0 * c as f64 + jitter(), jitter()]);
            labels.push(c);
        }
    }
    assert!(silhouette(&pts, &labels).unwrap() > 0.9);

    let half = pts[..20].to_vec();
    let doubled: Vec<Vec<f64>> = half.iter().chain(&half).cloned().collect();
    let dup_labels: Vec<usize> = (0..40).map(|i| i / 20).collect();
    // Every point has a twin at distance zero in the other cluster, so
    // b = S/20 and a = S/19 for the same sum S, giving exactly -1/20.
    assert!((silhouette(&doubled, &dup_labels).unwrap() + 0.05).abs() < 1e-12);
    assert!(silhouette(&pts, &[0; 40]).is_err());
}

#[test]
fn random_labels_do_not_separate() {
    for trial in 0..10 {
        let pts = gaussian_cloud(200, 2, 100 + trial);
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let s = silhouette(&pts.into_iter().map(|p| p.0).collect::<Vec<_>>(), &labels).unwrap();
        assert!(s.abs() < 0.1, "trial {trial}: {s}");
    }
}

#[test]
fn spearman_handles_ties() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    // Ranks of y: 1, 2.5, 2.5, 4.
    let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 5.0, 9.0]).unwrap();
    let expected = 4.5 / (5.0f64 * 4.5).sqrt();
    assert!((r - expected).abs() < 1e-12);
    assert!(spearman(&[1.0, 2.0], &[3.0, 3.0]).is_err());
}

#[test]
fn curve_starts_at_zero_distance_from_a() {
    let sizes = [4, 5, 6];
    let m = MusicVae::<f64>::new(support::tiny_config(8, 4, sizes), ModelKind::Proposed, 5).unwrap();
    let data = support::random_sequences(6, 10, sizes, 5);
    let curve = interpolation_curve(&m, &data[0], &data[1], 6, 12).unwrap();
    assert_eq!(curve.alphas.first(), Some(&0.0));
    assert_eq!(curve.alphas.last(), Some(&1.0));
    assert_eq!(curve.distances_to_a[0], 0);
    assert_eq!(curve.distances_to_b[5], 0);
    assert!(curve.distances_to_a.iter().all(|&d| d <= 36));
    assert_eq!(curve.generations.len(), 6);

    let agg = aggregate_curve(&m, &data, 10, 6, 12, 1, 2).unwrap();
    assert_eq!(agg, aggregate_curve(&m, &data, 10, 6, 12, 1, 1).unwrap());
    assert_eq!(agg.mean_to_a[0], 0.0);
    let csv = agg.to_csv();
    assert!(csv.starts_with("alpha,to_a,to_b,to_a_norm,to_b_norm\n"));
    assert_eq!(csv.lines().count(), 7);
    let svg = svg::curve_svg(&agg);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn scatter_output_lists_every_point() {
    let cloud = pca_project(&gaussian_cloud(12, 3, 6), 2).unwrap();
    assert_eq!(cloud.to_csv().lines().count(), 13);
    assert_eq!(svg::scatter_svg(&cloud).matches("<circle").count(), 12);
    assert!(cluster_separation(&cloud).unwrap().abs() <= 1.0);
}
