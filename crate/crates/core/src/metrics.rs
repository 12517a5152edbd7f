//! External clustering quality and the reliability profile of a co-association matrix.
//!
//! All partition scores derive from the contingency table `n_ij` (pred cluster
//! `i`, true class `j`) with row sums `a_i` and column sums `b_j`:
//!
//! ```text
//! ARI    = (sum C(n_ij,2) - E) / ((sum C(a_i,2) + sum C(b_j,2)) / 2 - E),
//!          E = sum C(a_i,2) * sum C(b_j,2) / C(n,2)
//! NMI    = I(pred; truth) / sqrt(H(pred) H(truth))
//! F      = 2 TP / (pred pairs + true pairs),  TP = sum C(n_ij,2)
//! Purity = sum_i max_j n_ij / n
//! ```
//!
//! Accuracy is the matched fraction under the best one-to-one assignment of
//! clusters to classes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base_pool::Partition;
use crate::coassoc::CoassocMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ari: f64,
    pub nmi: f64,
    pub fscore: f64,
    pub accuracy: f64,
    pub purity: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 5] = ["ari", "nmi", "fscore", "accuracy", "purity"];

    pub fn values(&self) -> [f64; 5] {
        [self.ari, self.nmi, self.fscore, self.accuracy, self.purity]
    }
}

/// Cluster-by-class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub table: Vec<Vec<usize>>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub n: usize,
}

impl Contingency {
    pub fn new(pred: &Partition, truth: &Partition) -> Result<Self> {
        if pred.n() != truth.n() {
            return Err(Error::Validation(format!(
                "partitions cover {} and {} items",
                pred.n(),
                truth.n()
            )));
        }
        let mut table = vec![vec![0usize; truth.n_clusters()]; pred.n_clusters()];
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            table[p][t] += 1;
        }
        let rows = table.iter().map(|r| r.iter().sum()).collect();
        let cols = (0..truth.n_clusters()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            table,
            rows,
            cols,
            n: pred.n(),
        })
    }

    /// Same partition up to renaming of labels.
    pub fn identical(&self) -> bool {
        let nonzero = self.table.iter().flatten().filter(|&&c| c > 0).count();
        nonzero == self.rows.len() && nonzero == self.cols.len()
    }
}

fn pairs(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

pub fn ari(ct: &Contingency) -> f64 {
    let index: f64 = ct.table.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = ct.rows.iter().map(|&c| pairs(c)).sum();
    let b: f64 = ct.cols.iter().map(|&c| pairs(c)).sum();
    let expected = a * b / pairs(ct.n);
    let denom = 0.5 * (a + b) - expected;
    if denom == 0.0 {
        return if ct.identical() { 1.0 } else { 0.0 };
    }
    (index - expected) / denom
}

pub fn nmi(ct: &Contingency) -> f64 {
    let (hp, ht) = (entropy(&ct.rows, ct.n), entropy(&ct.cols, ct.n));
    if hp == 0.0 || ht == 0.0 {
        return if ct.identical() { 1.0 } else { 0.0 };
    }
    let n = ct.n as f64;
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate().filter(|(_, &c)| c > 0) {
            let c = c as f64;
            mi += c / n * (c * n / (ct.rows[i] as f64 * ct.cols[j] as f64)).ln();
        }
    }
    (mi / (hp * ht).sqrt()).clamp(0.0, 1.0)
}

pub fn fscore(ct: &Contingency) -> f64 {
    let tp: f64 = ct.table.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = ct.rows.iter().map(|&c| pairs(c)).sum();
    let b: f64 = ct.cols.iter().map(|&c| pairs(c)).sum();
    if a + b == 0.0 {
        return if ct.identical() { 1.0 } else { 0.0 };
    }
    2.0 * tp / (a + b)
}

pub fn purity(ct: &Contingency) -> f64 {
    let hits: usize = ct.table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    hits as f64 / ct.n as f64
}

pub fn accuracy(ct: &Contingency) -> f64 {
    let matched: usize = max_weight_assignment(&ct.table).into_iter().sum();
    matched as f64 / ct.n as f64
}

/// Weights picked by a maximum-weight one-to-one assignment of rows to columns.
pub fn max_weight_assignment(weights: &[Vec<usize>]) -> Vec<usize> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    let size = rows.max(cols);
    if size == 0 {
        return Vec::new();
    }
    let top = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            top - weights[i][j] as i64
        } else {
            top
        }
    };
    // Hungarian method with potentials, 1-based with a virtual column 0
    let mut u = vec![0i64; size + 1];
    let mut v = vec![0i64; size + 1];
    let mut owner = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        owner[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![i64::MAX; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=size {
                if !used[j] {
                    let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=size)
        .filter(|&j| owner[j] >= 1 && owner[j] <= rows && j <= cols)
        .map(|j| weights[owner[j] - 1][j - 1])
        .collect()
}

/// All five scores of `pred` against `truth`.
pub fn compute_metrics(pred: &Partition, truth: &Partition) -> Result<MetricsReport> {
    let ct = Contingency::new(pred, truth)?;
    if ct.n < 2 {
        return Err(Error::Domain("pairwise scores need at least two items".into()));
    }
    Ok(MetricsReport {
        ari: ari(&ct),
        nmi: nmi(&ct),
        fscore: fscore(&ct),
        accuracy: accuracy(&ct),
        purity: purity(&ct),
    })
}

/// Pairs sharing one co-association value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub value: f64,
    pub count: usize,
    pub same_class: usize,
    /// Fraction of pairs at this value that share a true class.
    pub precision: f64,
    /// Fraction of all same-class pairs whose value is at least this one.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityProfile {
    pub bins: Vec<ReliabilityBin>,
    pub same_class_pairs: usize,
}

/// Precision per distinct value and cumulative recall over `i < j` pairs.
pub fn reliability_profile(ca_tilde: &CoassocMatrix, truth: Option<&Partition>) -> Result<ReliabilityProfile> {
    let truth = truth.ok_or_else(|| Error::Argument("reliability profile needs ground truth".into()))?;
    let n = ca_tilde.n();
    if truth.n() != n {
        return Err(Error::Validation(format!("matrix is {n}x{n}, truth covers {} items", truth.n())));
    }
    let a = ca_tilde.values();
    let t = truth.labels();
    // non-negative floats order like their bit patterns
    let mut tally: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let e = tally.entry(a[[i, j]].to_bits()).or_default();
            e.0 += 1;
            e.1 += usize::from(t[i] == t[j]);
        }
    }
    let positives: usize = tally.values().map(|&(_, s)| s).sum();
    let mut remaining = positives;
    let bins = tally
        .into_iter()
        .map(|(bits, (count, same))| {
            let recall = if positives > 0 { remaining as f64 / positives as f64 } else { 0.0 };
            remaining -= same;
            ReliabilityBin {
                value: f64::from_bits(bits),
                count,
                same_class: same,
                precision: same as f64 / count as f64,
                recall,
            }
        })
        .collect();
    Ok(ReliabilityProfile {
        bins,
        same_class_pairs: positives,
    })
}

/// `value,count,precision,recall` rows.
pub fn write_reliability_csv(path: impl AsRef<Path>, profile: &ReliabilityProfile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "value,count,precision,recall")?;
    for b in &profile.bins {
        writeln!(w, "{},{},{},{}", b.value, b.count, b.precision, b.recall)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_pool::Ensemble;
    use crate::coassoc::build_ca;
    use proptest::prelude::*;

    fn p(labels: &[usize]) -> Partition {
        Partition::from_labels(labels).unwrap()
    }

    fn arb_pair(max_n: usize) -> impl Strategy<Value = (Partition, Partition)> {
        (2..=max_n, 1usize..7, 1usize..7).prop_flat_map(|(n, ka, kb)| {
            (prop::collection::vec(0..ka, n), prop::collection::vec(0..kb, n))
                .prop_map(|(a, b)| (p(&a), p(&b)))
        })
    }

    #[test]
    fn identity_scores_one() {
        let t = p(&[0, 0, 1, 1, 2, 2, 2]);
        let r = compute_metrics(&t, &t).unwrap();
        assert_eq!(r.values(), [1.0; 5]);
        let relabeled = p(&[5, 5, 3, 3, 9, 9, 9]);
        assert_eq!(compute_metrics(&relabeled, &t).unwrap().values(), [1.0; 5]);
    }

    #[test]
    fn one_cluster_against_two_classes() {
        let r = compute_metrics(&p(&[0, 0, 0, 0]), &p(&[0, 0, 1, 1])).unwrap();
        assert_eq!(r.ari, 0.0);
        assert_eq!(r.nmi, 0.0);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.purity, 0.5);
        assert_eq!(r.fscore, 0.5);
    }

    #[test]
    fn degenerate_conventions() {
        let one = p(&[0, 0, 0]);
        assert_eq!(compute_metrics(&one, &one).unwrap().nmi, 1.0);
        let singletons = p(&[0, 1, 2]);
        let r = compute_metrics(&singletons, &singletons).unwrap();
        assert_eq!((r.ari, r.fscore, r.nmi), (1.0, 1.0, 1.0));
        let r = compute_metrics(&singletons, &one).unwrap();
        assert_eq!((r.ari, r.fscore, r.nmi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&p(&[0, 1]), &p(&[0, 1, 1])), Err(Error::Validation(_))));
        assert!(matches!(compute_metrics(&p(&[0]), &p(&[0])), Err(Error::Domain(_))));
    }

    #[test]
    fn rectangular_assignment() {
        assert_eq!(max_weight_assignment(&[vec![3, 1], vec![2, 0], vec![0, 4]]).iter().sum::<usize>(), 7);
        assert_eq!(max_weight_assignment(&[vec![5, 1, 9]]).iter().sum::<usize>(), 9);
    }

    #[test]
    fn profile_of_perfect_ensemble() {
        let truth = p(&[0, 0, 1, 1, 1]);
        let e = Ensemble::new(vec![truth.clone(), truth.clone()]).unwrap();
        let prof = reliability_profile(&build_ca(&e), Some(&truth)).unwrap();
        let top = prof.bins.last().unwrap();
        assert_eq!((top.value, top.count, top.precision), (1.0, 4, 1.0));
        assert_eq!(prof.bins[0].recall, 1.0);
        assert!(reliability_profile(&build_ca(&e), None).is_err());
    }

    #[test]
    fn profile_matches_pair_enumeration() {
        use rand::Rng;
        let mut rng = crate::rng::stream(4, crate::rng::Domain::Auxiliary, 0);
        for _ in 0..50 {
            let parts = (0..4).map(|_| p(&(0..6).map(|_| rng.random_range(0..3)).collect::<Vec<_>>())).collect();
            let e = Ensemble::new(parts).unwrap();
            let truth = p(&(0..6).map(|_| rng.random_range(0..2)).collect::<Vec<_>>());
            let ca = build_ca(&e);
            let prof = reliability_profile(&ca, Some(&truth)).unwrap();
            let mut all = Vec::new();
            for i in 0..6 {
                for j in i + 1..6 {
                    all.push((ca.values()[[i, j]], truth.labels()[i] == truth.labels()[j]));
                }
            }
            let pos = all.iter().filter(|x| x.1).count();
            assert_eq!(prof.bins.iter().map(|b| b.count).sum::<usize>(), 15);
            for b in &prof.bins {
                let at: Vec<_> = all.iter().filter(|x| x.0 == b.value).collect();
                assert_eq!(b.count, at.len());
                assert_eq!(b.precision, at.iter().filter(|x| x.1).count() as f64 / at.len() as f64);
                let above = all.iter().filter(|x| x.1 && x.0 >= b.value).count();
                let want = if pos == 0 { 0.0 } else { above as f64 / pos as f64 };
                assert_eq!(b.recall, want);
            }
            assert!(prof.bins.windows(2).all(|w| w[0].recall >= w[1].recall));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn scores_are_bounded_and_symmetric((a, b) in arb_pair(30)) {
            let ab = compute_metrics(&a, &b).unwrap();
            let ba = compute_metrics(&b, &a).unwrap();
            prop_assert!((ab.ari - ba.ari).abs() < 1e-12);
            prop_assert!((ab.nmi - ba.nmi).abs() < 1e-12);
            prop_assert!((ab.fscore - ba.fscore).abs() < 1e-12);
            prop_assert!(ab.ari <= 1.0 && ab.ari >= -0.5);
            for v in [ab.nmi, ab.fscore, ab.accuracy, ab.purity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
