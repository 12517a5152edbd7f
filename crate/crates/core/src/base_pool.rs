//! Base clusterings: partitions, ensembles, K-means and the candidate pool.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Cluster label per item; ids are `0..n_clusters` with every id used.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Validate already-compact labels.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("partition over zero items".into()));
        }
        let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; n_clusters];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("cluster id {missing} is unused")));
        }
        Ok(Self { labels, n_clusters })
    }

    /// Relabel arbitrary ids to `0..l` in order of first appearance.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Result<Self> {
        let mut ids: HashMap<T, usize> = HashMap::new();
        let labels = raw
            .iter()
            .map(|v| {
                let next = ids.len();
                *ids.entry(v.clone()).or_insert(next)
            })
            .collect();
        Self::new(labels)
    }

    pub fn from_raw_labels(raw: &[String]) -> Result<Self> {
        Self::from_labels(raw)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Member indices of every cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Ordered list of partitions over the same items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ensemble {
    partitions: Vec<Partition>,
}

impl Ensemble {
    pub fn new(partitions: Vec<Partition>) -> Result<Self> {
        let first = partitions
            .first()
            .ok_or_else(|| Error::Validation("ensemble needs at least one partition".into()))?;
        let n = first.n();
        if let Some((k, p)) = partitions.iter().enumerate().find(|(_, p)| p.n() != n) {
            return Err(Error::Validation(format!(
                "partition {k} covers {} items, expected {n}",
                p.n()
            )));
        }
        Ok(Self { partitions })
    }

    pub fn n(&self) -> usize {
        self.partitions[0].n()
    }

    pub fn m(&self) -> usize {
        self.partitions.len()
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Partition> {
        self.partitions.iter()
    }

    /// Sub-ensemble of the given member indices, in the given order.
    pub fn select(&self, members: &[usize]) -> Result<Ensemble> {
        let parts = members
            .iter()
            .map(|&i| {
                self.partitions
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Argument(format!("member {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(parts)
    }
}

/// One K-means run with its objective trace.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub partition: Partition,
    /// Within-cluster sum of squares after every iteration.
    pub wcss: Vec<f64>,
    pub iterations: usize,
}

pub const DEFAULT_KMEANS_ITERS: usize = 100;

/// K-means with k-means++ seeding, seeded by `seed`.
pub fn run_kmeans(data: &Dataset, k: usize, seed: u64, max_iters: usize) -> Result<Partition> {
    let mut rng = rng::stream(seed, Domain::KMeans, 0);
    Ok(kmeans(data.features().view(), k, max_iters, &mut rng)?.partition)
}

/// K-means on raw features with an explicit generator.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> Result<KMeansRun> {
    let (n, d) = x.dim();
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if k > n {
        return Err(Error::Argument(format!("k={k} exceeds sample count {n}")));
    }
    if max_iters == 0 {
        return Err(Error::Argument("max_iters must be positive".into()));
    }
    let x = x.as_standard_layout();
    let pts = x.as_slice().expect("standard layout");
    let row = |i: usize| &pts[i * d..(i + 1) * d];

    let mut centroids = seed_centroids(pts, n, d, k, rng);
    let mut labels = vec![usize::MAX; n];
    let mut wcss = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let previous = labels.clone();
        for (i, label) in labels.iter_mut().enumerate() {
            *label = nearest(row(i), &centroids, d).0;
        }
        update_centroids(pts, d, &labels, &mut centroids, k);
        repair_empty(pts, d, &mut labels, &mut centroids, k);
        wcss.push(
            (0..n)
                .map(|i| sq_dist(row(i), &centroids[labels[i] * d..(labels[i] + 1) * d]))
                .sum(),
        );
        if labels == previous {
            break;
        }
    }

    Ok(KMeansRun {
        partition: Partition::from_labels(&labels)?,
        wcss,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Index and squared distance of the closest centroid; ties go to the lower index.
fn nearest(p: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    centroids
        .chunks_exact(d)
        .map(|c| sq_dist(p, c))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, dist)| if dist < best.1 { (j, dist) } else { best })
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` D²-weighted candidates.
fn seed_centroids(pts: &[f64], n: usize, d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let row = |i: usize| &pts[i * d..(i + 1) * d];
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                closest
                    .iter()
                    .position(|&c| {
                        acc += c;
                        acc > target
                    })
                    .unwrap_or_else(|| closest.iter().rposition(|&c| c > 0.0).unwrap_or(n - 1))
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = closest
                .iter()
                .enumerate()
                .map(|(i, &c)| c.min(sq_dist(row(i), row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, updated));
            }
        }
        let (cand, _, updated) = best.expect("at least two trials");
        centroids.extend_from_slice(row(cand));
        closest = updated;
    }
    centroids
}

fn update_centroids(pts: &[f64], d: usize, labels: &[usize], centroids: &mut [f64], k: usize) {
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(&pts[i * d..(i + 1) * d]) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for t in 0..d {
                centroids[j * d + t] = sums[j * d + t] / counts[j] as f64;
            }
        }
    }
}

/// Move the point farthest from its centroid (taken from a cluster with more
/// than one member) into each empty cluster.
fn repair_empty(pts: &[f64], d: usize, labels: &mut [usize], centroids: &mut [f64], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| {
                let l = labels[i];
                (i, sq_dist(&pts[i * d..(i + 1) * d], &centroids[l * d..(l + 1) * d]))
            })
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((p, _)) = donor else {
            return;
        };
        labels[p] = empty;
        centroids[empty * d..(empty + 1) * d].copy_from_slice(&pts[p * d..(p + 1) * d]);
        update_centroids(pts, d, labels, centroids, k);
    }
}

/// Smallest integer `r` with `r * r >= n`.
pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

/// Inclusive range of requested cluster counts for `n` samples.
pub fn k_range(n: usize) -> Result<(usize, usize)> {
    if n < 4 {
        return Err(Error::Domain(format!(
            "cluster-count range [2, ceil(sqrt({n}))] is empty; need at least 4 samples"
        )));
    }
    Ok((2, ceil_sqrt(n)))
}

/// Requested cluster count of pool member `index`.
pub fn draw_requested_k(n: usize, seed: u64, index: u64) -> Result<usize> {
    let (lo, hi) = k_range(n)?;
    Ok(rng::stream(seed, Domain::PoolK, index).random_range(lo..=hi))
}

/// Candidate pool with the cluster count requested for each member.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub members: Ensemble,
    pub requested_k: Vec<usize>,
    pub seed: u64,
}

/// Serializable description of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMetadata {
    pub seed: u64,
    pub pool_size: usize,
    pub n: usize,
    pub requested_k: Vec<usize>,
    pub realized_k: Vec<usize>,
}

impl Pool {
    pub fn metadata(&self) -> PoolMetadata {
        PoolMetadata {
            seed: self.seed,
            pool_size: self.members.m(),
            n: self.members.n(),
            requested_k: self.requested_k.clone(),
            realized_k: self.members.iter().map(Partition::n_clusters).collect(),
        }
    }
}

/// Generate `pool_size` K-means partitions with random cluster counts.
pub fn generate_pool(data: &Dataset, pool_size: usize, seed: u64) -> Result<Pool> {
    let n = data.n_samples();
    k_range(n)?;
    if pool_size == 0 {
        return Err(Error::Argument("pool_size must be positive".into()));
    }
    let x = data.features().view();
    let runs = (0..pool_size as u64)
        .into_par_iter()
        .map(|i| {
            let k = draw_requested_k(n, seed, i)?;
            let mut rng = rng::stream(seed, Domain::KMeans, i);
            Ok((k, kmeans(x, k, DEFAULT_KMEANS_ITERS, &mut rng)?.partition))
        })
        .collect::<Result<Vec<_>>>()?;
    let (requested_k, parts): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(Pool {
        members: Ensemble::new(parts)?,
        requested_k,
        seed,
    })
}

/// Indices of `m` distinct members out of `pool_m`, ascending.
pub fn sample_indices(pool_m: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Argument("ensemble size must be positive".into()));
    }
    if m > pool_m {
        return Err(Error::Argument(format!("ensemble size {m} exceeds pool size {pool_m}")));
    }
    let mut rng = rng::stream(seed, Domain::EnsembleSample, 0);
    let mut idx = index::sample(&mut rng, pool_m, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Draw `m` pool members uniformly without replacement, keeping pool order.
pub fn sample_ensemble(pool: &Ensemble, m: usize, seed: u64) -> Result<Ensemble> {
    pool.select(&sample_indices(pool.m(), m, seed)?)
}

/// One row of labels per partition.
pub fn write_pool_csv(path: impl AsRef<Path>, ensemble: &Ensemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in ensemble.iter() {
        let cells: Vec<String> = p.labels().iter().map(usize::to_string).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pool_csv(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let parts = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let labels = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::parse(&source, i + 1, format!("'{c}' is not a label")))
                })
                .collect::<Result<Vec<_>>>()?;
            Partition::from_labels(&labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn blobs() -> Dataset {
        let x = array![
            [0.0, 0.0],
            [0.3, 0.1],
            [0.1, 0.4],
            [0.2, 0.2],
            [0.4, 0.3],
            [5.0, 5.0],
            [5.3, 5.1],
            [5.1, 5.4],
            [5.2, 5.2],
            [5.4, 5.3]
        ];
        Dataset::new("blobs", x, None).unwrap()
    }

    fn wcss_of(x: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
        (0..k)
            .map(|c| {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    return 0.0;
                }
                let mean: Vec<f64> = (0..x.ncols())
                    .map(|t| members.iter().map(|&i| x[[i, t]]).sum::<f64>() / members.len() as f64)
                    .collect();
                members
                    .iter()
                    .map(|&i| (0..x.ncols()).map(|t| (x[[i, t]] - mean[t]).powi(2)).sum::<f64>())
                    .sum()
            })
            .sum()
    }

    #[test]
    fn partition_rejects_gaps() {
        assert!(Partition::new(vec![0, 2]).is_err());
        assert!(Partition::new(vec![]).is_err());
        let p = Partition::from_labels(&[7, 3, 7, 9]).unwrap();
        assert_eq!(p.labels(), &[0, 1, 0, 2]);
        assert_eq!(p.cluster_sizes(), vec![2, 1, 1]);
    }

    #[test]
    fn ensemble_rejects_mixed_lengths() {
        let a = Partition::new(vec![0, 1]).unwrap();
        let b = Partition::new(vec![0, 1, 0]).unwrap();
        assert!(matches!(Ensemble::new(vec![a, b]), Err(Error::Validation(_))));
        assert!(Ensemble::new(vec![]).is_err());
    }

    #[test]
    fn kmeans_single_cluster() {
        let p = run_kmeans(&blobs(), 1, 3, 100).unwrap();
        assert!(p.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn kmeans_k_equals_n_gives_singletons() {
        let p = run_kmeans(&blobs(), 10, 3, 100).unwrap();
        assert_eq!(p.n_clusters(), 10);
    }

    #[test]
    fn kmeans_argument_errors() {
        assert!(matches!(run_kmeans(&blobs(), 0, 1, 10), Err(Error::Argument(_))));
        assert!(matches!(run_kmeans(&blobs(), 11, 1, 10), Err(Error::Argument(_))));
    }

    #[test]
    fn kmeans_two_blobs_matches_enumerated_optimum() {
        let ds = blobs();
        let x = ds.features();
        // exhaustive search over every 2-way split
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 10) - 1 {
            let labels: Vec<usize> = (0..10).map(|i| ((mask >> i) & 1) as usize).collect();
            let cost = wcss_of(x, &labels, 2);
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        let optimum: Vec<usize> = (0..10).map(|i| ((best.1 >> i) & 1) as usize).collect();
        let optimum = Partition::from_labels(&optimum).unwrap();
        assert_eq!(optimum.labels(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        for seed in 0..20 {
            assert_eq!(run_kmeans(&ds, 2, seed, 100).unwrap(), optimum, "seed {seed}");
        }
    }

    #[test]
    fn kmeans_duplicate_points_still_fill_all_clusters() {
        let x = array![[1.0], [1.0], [1.0], [2.0]];
        let ds = Dataset::new("dup", x, None).unwrap();
        let p = run_kmeans(&ds, 3, 0, 50).unwrap();
        assert_eq!(p.n_clusters(), 3);
    }

    #[test]
    fn ceil_sqrt_values() {
        assert_eq!(ceil_sqrt(4), 2);
        assert_eq!(ceil_sqrt(9), 3);
        assert_eq!(ceil_sqrt(10), 4);
        assert_eq!(ceil_sqrt(336), 19);
        assert_eq!(ceil_sqrt(788), 29);
    }

    #[test]
    fn pool_k_bounds_and_small_n() {
        assert!(matches!(k_range(3), Err(Error::Domain(_))));
        assert_eq!(k_range(9).unwrap(), (2, 3));
        for i in 0..50 {
            let k = draw_requested_k(9, 11, i).unwrap();
            assert!((2..=3).contains(&k));
        }
    }

    #[test]
    fn pool_is_deterministic() {
        let ds = blobs();
        let a = generate_pool(&ds, 12, 5).unwrap();
        let b = generate_pool(&ds, 12, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members.m(), 12);
        assert!(a.requested_k.iter().all(|k| (2..=4).contains(k)));
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.csv");
        let pb = dir.path().join("b.csv");
        write_pool_csv(&pa, &a.members).unwrap();
        write_pool_csv(&pb, &b.members).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(read_pool_csv(&pa).unwrap(), a.members);
    }

    #[test]
    fn requested_k_is_uniform() {
        let n = 336;
        let (lo, hi) = k_range(n).unwrap();
        let bins = hi - lo + 1;
        let draws = 10_000;
        let mut counts = vec![0usize; bins];
        for i in 0..draws {
            counts[draw_requested_k(n, 2024, i).unwrap() - lo] += 1;
        }
        let expected = draws as f64 / bins as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn sampling_contract() {
        let idx = sample_indices(100, 20, 9).unwrap();
        assert_eq!(idx.len(), 20);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 100));
        assert_eq!(sample_indices(7, 7, 1).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(matches!(sample_indices(5, 6, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn different_seeds_give_different_samples() {
        // identical draws happen with probability 1 / C(100, 20) per pair
        let distinct = (0..100u64)
            .filter(|&s| sample_indices(100, 20, 2 * s).unwrap() != sample_indices(100, 20, 2 * s + 1).unwrap())
            .count();
        assert_eq!(distinct, 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn wcss_never_increases(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 6..40),
            k in 1usize..6,
            seed in any::<u64>(),
        ) {
            let n = pts.len();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { pts[i].0 } else { pts[i].1 });
            let mut rng = rng::stream(seed, Domain::Auxiliary, 0);
            let run = kmeans(x.view(), k.min(n), 100, &mut rng).unwrap();
            for w in run.wcss.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", run.wcss);
            }
            prop_assert_eq!(run.partition.n_clusters(), k.min(n));
        }
    }
}
