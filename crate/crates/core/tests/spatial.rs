mod common;

use aad_core::spatial::{
    cluster_filters, cosine_similarity, hier_cluster, kmeans_subject, sign_invariant_distance,
    write_clusters_csv, GLOBAL_CLUSTERS, SUBJECT_CLUSTERS,
};
use aad_core::AadError;
use common::{randn, rng};
use proptest::prelude::*;
use rand::Rng;

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// `per` noisy copies of each basis vector, signs and scales randomized.
fn groups(dim: usize, k: usize, per: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(seed);
    let (mut xs, mut labels) = (Vec::new(), Vec::new());
    for g in 0..k {
        for _ in 0..per {
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            let scale = r.random_range(0.5..3.0);
            let n = randn(&mut r, dim);
            xs.push(basis(dim, g).iter().zip(n).map(|(b, e)| sign * scale * (b + noise * e)).collect());
            labels.push(g);
        }
    }
    (xs, labels)
}

fn pure(assignment: &[usize], labels: &[usize]) -> bool {
    // same label ⇔ same cluster
    (0..labels.len()).all(|i| (0..labels.len()).all(|j| (labels[i] == labels[j]) == (assignment[i] == assignment[j])))
}

#[test]
fn cosine_examples() {
    let u = [1.0, 2.0, 3.0];
    assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
    assert!(matches!(cosine_similarity(&[0.0, 0.0], &u[..2]), Err(AadError::Degenerate(_))));
    assert!(matches!(cosine_similarity(&u, &u[..2]), Err(AadError::Contract(_))));
    assert!((sign_invariant_distance(&u, &[-1.0, -2.0, -3.0]).unwrap()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(
        u in prop::collection::vec(-10.0f64..10.0, 8),
        v in prop::collection::vec(-10.0f64..10.0, 8),
        alpha in 1e-3f64..1e3,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        let d = cosine_similarity(&scaled, &v).unwrap() - cosine_similarity(&u, &v).unwrap();
        prop_assert!(d.abs() <= 1e-12);
    }

    #[test]
    fn lloyd_inertia_never_increases(seed in 0u64..1000) {
        let (xs, _) = groups(6, 4, 6, 0.8, seed);
        let r = kmeans_subject(&xs, 4, seed).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
        prop_assert!((r.history.last().unwrap() - r.inertia).abs() < 1e-12);
    }
}

#[test]
fn kmeans_recovers_orthogonal_groups_regardless_of_sign() {
    let (xs, labels) = groups(8, 4, 8, 0.05, 1);
    let r = kmeans_subject(&xs, SUBJECT_CLUSTERS, 2).unwrap();
    assert!(pure(&r.assignment, &labels));
    // each filter is flipped towards its centroid
    for (i, x) in xs.iter().enumerate() {
        let c = &r.centroids[r.assignment[i]];
        assert!(r.signs[i] * cosine_similarity(x, c).unwrap() > 0.9);
    }
    assert_eq!(kmeans_subject(&xs, 4, 2).unwrap(), r);
}

#[test]
fn duplicated_filter_converges_with_reseeded_clusters() {
    let xs = vec![vec![0.3, -0.4, 0.5]; 8];
    let r = kmeans_subject(&xs, 4, 0).unwrap();
    assert!(r.inertia.abs() < 1e-24);
    assert_eq!(r.centroids.len(), 4);
    assert!(r.centroids.iter().all(|c| c.iter().all(|v| v.is_finite())));
    assert_eq!(kmeans_subject(&xs, 4, 0).unwrap(), r);
}

#[test]
fn kmeans_rejects_too_few_or_zero_filters() {
    let xs = vec![vec![1.0, 0.0]; 3];
    assert!(kmeans_subject(&xs, 4, 0).unwrap_err().is_config());
    let zero = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    assert!(matches!(kmeans_subject(&zero, 4, 0), Err(AadError::Degenerate(_))));
}

#[test]
fn agglomeration_recovers_three_bundles_in_size_order() {
    // bundle sizes 5, 3, 2 so the order is fixed by membership
    let mut r = rng(5);
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (g, n) in [(0, 5), (1, 3), (2, 2)] {
        for _ in 0..n {
            let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
            let e = randn(&mut r, 6);
            xs.push(basis(6, g).iter().zip(e).map(|(b, e)| sign * (b + 0.05 * e)).collect::<Vec<f64>>());
            labels.push(g);
        }
    }
    let clusters = hier_cluster(&xs, GLOBAL_CLUSTERS).unwrap();
    let sizes: Vec<usize> = clusters.iter().map(|c| c.members.len()).collect();
    assert_eq!(sizes, [5, 3, 2]);
    for (ci, c) in clusters.iter().enumerate() {
        assert!(c.members.iter().all(|&m| labels[m] == ci));
        assert!(cosine_similarity(&c.centroid, &basis(6, ci)).unwrap().abs() > 0.99);
    }

    // same partition under a permutation of the input
    let perm: Vec<usize> = (0..xs.len()).rev().collect();
    let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
    let again = hier_cluster(&shuffled, 3).unwrap();
    for (a, b) in clusters.iter().zip(&again) {
        let mut mapped: Vec<usize> = b.members.iter().map(|&m| perm[m]).collect();
        mapped.sort_unstable();
        assert_eq!(mapped, a.members);
    }
}

#[test]
fn identical_centroids_collapse_deterministically() {
    let xs = vec![vec![1.0, 2.0]; 5];
    let clusters = hier_cluster(&xs, 3).unwrap();
    let members: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
    // ties merge the lowest indices first
    assert_eq!(members, [vec![0, 1, 2], vec![3], vec![4]]);
    assert!(hier_cluster(&xs[..2], 3).unwrap_err().is_config());
}

#[test]
fn pipeline_is_deterministic_and_writes_csv() {
    let by_subject: Vec<(String, Vec<Vec<f64>>)> =
        (0..3).map(|s| (format!("S{s}"), groups(5, 4, 8, 0.2, s).0)).collect();
    let (centroids, clusters) = cluster_filters(&by_subject, 9).unwrap();
    assert_eq!(centroids.len(), 12);
    assert_eq!(clusters.len(), 3);
    assert_eq!(cluster_filters(&by_subject, 9).unwrap(), (centroids, clusters.clone()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clusters.csv");
    write_clusters_csv(&path, &clusters).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cluster,channel,weight"));
    assert_eq!(lines.count(), 15);
}
