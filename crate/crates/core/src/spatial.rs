//! Clustering of learned spatial filters: sign-invariant k-means within a
//! subject, then average-linkage agglomeration of the subject centroids.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{config, AadError, Result};

pub const SUBJECT_CLUSTERS: usize = 4;
pub const GLOBAL_CLUSTERS: usize = 3;
pub const KMEANS_RESTARTS: usize = 20;
const MAX_LLOYD_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFilter {
    pub weights: Vec<f64>,
    pub subject_id: String,
    pub fold_id: usize,
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(AadError::Contract(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu > 0.0 && nv > 0.0) {
        return Err(AadError::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok(dot(u, v) / (nu * nv))
}

fn unit(u: &[f64]) -> Result<Vec<f64>> {
    let n = norm(u);
    if !(n > 0.0 && n.is_finite()) {
        return Err(AadError::Degenerate("spatial filter with zero or non-finite norm".into()));
    }
    Ok(u.iter().map(|x| x / n).collect())
}

/// Squared distance to the nearer of c and −c, and the sign achieving it.
fn signed_dist(x: &[f64], c: &[f64]) -> (f64, f64) {
    let (mut plus, mut minus) = (0.0, 0.0);
    for (a, b) in x.iter().zip(c) {
        plus += (a - b) * (a - b);
        minus += (a + b) * (a + b);
    }
    if minus < plus {
        (minus, -1.0)
    } else {
        (plus, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// ±1 per filter: the orientation that matches its centroid.
    pub signs: Vec<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

/// k-means on unit-normalized filters where x and −x are the same point.
/// Best of 20 k-means++ restarts; an empty cluster is re-seeded at the
/// filter farthest from its centroid.
pub fn kmeans_subject(filters: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || filters.len() < k {
        return config(format!("k-means with k = {k} needs at least {k} filters, got {}", filters.len()));
    }
    let xs: Vec<Vec<f64>> = filters.iter().map(|f| unit(f)).collect::<Result<_>>()?;
    let dim = xs[0].len();
    if xs.iter().any(|x| x.len() != dim) {
        return Err(AadError::Contract("filters differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let r = lloyd(&xs, plus_plus(&xs, k, &mut rng));
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn plus_plus(xs: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cs = vec![xs[rng.random_range(0..xs.len())].clone()];
    while cs.len() < k {
        let d: Vec<f64> = xs
            .iter()
            .map(|x| cs.iter().map(|c| signed_dist(x, c).0).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d.iter()
                .position(|&di| {
                    u -= di;
                    u < 0.0
                })
                .unwrap_or(xs.len() - 1)
        } else {
            rng.random_range(0..xs.len())
        };
        cs.push(xs[pick].clone());
    }
    cs
}

fn assign(xs: &[Vec<f64>], cs: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(xs.len());
    let mut s = Vec::with_capacity(xs.len());
    let mut d = Vec::with_capacity(xs.len());
    for x in xs {
        let (mut bi, mut bd, mut bs) = (0, f64::INFINITY, 1.0);
        for (i, c) in cs.iter().enumerate() {
            let (di, si) = signed_dist(x, c);
            if di < bd {
                (bi, bd, bs) = (i, di, si);
            }
        }
        a.push(bi);
        s.push(bs);
        d.push(bd);
    }
    (a, s, d)
}

fn lloyd(xs: &[Vec<f64>], mut cs: Vec<Vec<f64>>) -> KMeansResult {
    let (k, dim) = (cs.len(), xs[0].len());
    let mut history = Vec::new();
    let (mut a, mut s, mut d) = assign(xs, &cs);
    for _ in 0..MAX_LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for ((x, &ai), &si) in xs.iter().zip(&a).zip(&s) {
            counts[ai] += 1;
            for (acc, v) in sums[ai].iter_mut().zip(x) {
                *acc += si * v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                cs[j] = sums[j].iter().map(|v| v / counts[j] as f64).collect();
            } else {
                // farthest filter from its own centroid; first index on ties
                let far = (0..xs.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
                cs[j] = xs[far].clone();
                d[far] = 0.0;
            }
        }
        let (na, ns, nd) = assign(xs, &cs);
        history.push(nd.iter().sum());
        let done = na == a;
        (a, s, d) = (na, ns, nd);
        if done {
            break;
        }
    }
    KMeansResult {
        inertia: d.iter().sum(),
        centroids: cs,
        assignment: a,
        signs: s,
        history,
    }
}

/// 1 − |cos|, so opposite filters are identical.
pub fn sign_invariant_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(u, v)?.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    /// Indices into the clustered vectors.
    pub members: Vec<usize>,
    /// Mean of the unit members, each oriented to agree with the first.
    pub centroid: Vec<f64>,
}

/// Average-linkage agglomeration on 1 − |cos| cut at `n` clusters, largest
/// cluster first. Equal distances merge the pair with the smallest indices;
/// equal sizes order by smallest member.
pub fn hier_cluster(vectors: &[Vec<f64>], n: usize) -> Result<Vec<Cluster>> {
    if n == 0 || vectors.len() < n {
        return config(format!(
            "{} vectors cannot form {n} clusters",
            vectors.len()
        ));
    }
    let units: Vec<Vec<f64>> = vectors.iter().map(|v| unit(v)).collect::<Result<_>>()?;
    let m = units.len();
    let mut dist = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = 1.0 - dot(&units[i], &units[j]).clamp(-1.0, 1.0).abs();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut groups: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    while groups.len() > n {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let mut sum = 0.0;
                for &i in &groups[a] {
                    for &j in &groups[b] {
                        sum += dist[i][j];
                    }
                }
                let avg = sum / (groups[a].len() * groups[b].len()) as f64;
                if avg < best.2 {
                    best = (a, b, avg);
                }
            }
        }
        let merged = groups.remove(best.1);
        groups[best.0].extend(merged);
        groups[best.0].sort_unstable();
    }
    groups.sort_by(|x, y| y.len().cmp(&x.len()).then(x[0].cmp(&y[0])));
    Ok(groups
        .into_iter()
        .map(|members| {
            let anchor = &units[members[0]];
            let mut c = vec![0.0; anchor.len()];
            for &i in &members {
                let s = if dot(&units[i], anchor) < 0.0 { -1.0 } else { 1.0 };
                for (acc, v) in c.iter_mut().zip(&units[i]) {
                    *acc += s * v / members.len() as f64;
                }
            }
            Cluster {
                members,
                centroid: c,
            }
        })
        .collect())
}

/// Subject-level k-means followed by global agglomeration of all subject
/// centroids. Subjects are processed in the order given.
pub fn cluster_filters(
    by_subject: &[(String, Vec<Vec<f64>>)],
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Cluster>)> {
    let mut centroids = Vec::new();
    for (i, (subject, filters)) in by_subject.iter().enumerate() {
        let r = kmeans_subject(filters, SUBJECT_CLUSTERS, seed.wrapping_add(i as u64))
            .map_err(|e| AadError::Config(format!("subject {subject}: {e}")))?;
        centroids.extend(r.centroids);
    }
    let clusters = hier_cluster(&centroids, GLOBAL_CLUSTERS)?;
    Ok((centroids, clusters))
}

#[derive(Serialize)]
struct CsvRow {
    cluster: usize,
    channel: usize,
    weight: f64,
}

/// `cluster,channel,weight`, one row per electrode per cluster.
pub fn write_clusters_csv(path: &Path, clusters: &[Cluster]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (ci, c) in clusters.iter().enumerate() {
        for (channel, &weight) in c.centroid.iter().enumerate() {
            w.serialize(CsvRow {
                cluster: ci,
                channel,
                weight,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
