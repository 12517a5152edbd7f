//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use ca_enhance::base_pool::{Ensemble, Partition};
use ca_enhance::coassoc::{build_ca, extract_hc};
use ca_enhance::data_io::{load_dataset, LabelMode};
use ca_enhance::{CoassocMatrix, Dataset, HighConfidence};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `CA_ENHANCE_DATA_DIR`, else the workspace `data/` directory.
pub fn data_dir() -> PathBuf {
    std::env::var_os("CA_ENHANCE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn load(name: &str) -> Option<Dataset> {
    let path = data_dir().join(format!("{name}.csv"));
    path.exists()
        .then(|| load_dataset(&path, &LabelMode::EmbeddedLastColumn).expect("dataset parses"))
}

pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, max_k: usize) -> Partition {
    let k = rng.random_range(1..=max_k);
    Partition::from_labels(&(0..n).map(|_| rng.random_range(0..k)).collect::<Vec<_>>()).unwrap()
}

/// Plain co-association matrix of `m` random 2- or 3-cluster labelings.
pub fn random_instance(seed: u64, n: usize, m: usize, alpha: f64) -> (CoassocMatrix, HighConfidence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = (0..m)
        .map(|_| {
            let k = rng.random_range(2..=3);
            Partition::from_labels(&(0..n).map(|_| rng.random_range(0..k)).collect::<Vec<_>>()).unwrap()
        })
        .collect();
    let a = build_ca(&Ensemble::new(parts).unwrap());
    let hc = extract_hc(&a, alpha).unwrap();
    (a, hc)
}

/// Objective written as a graph smoothness sum over rows:
/// `(1/2) sum_{i != j} H_ij ||C_i - C_j||^2 + (lambda/2) sum_{(i,j) not in Omega} (A_ij - C_ij)^2`.
pub fn objective(a: &Array2<f64>, c: &Array2<f64>, hc: &HighConfidence, lambda: f64) -> f64 {
    let n = a.nrows();
    let h = hc.h();
    let mut smooth = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && h[[i, j]] != 0.0 {
                let d: f64 = (0..n).map(|k| (c[[i, k]] - c[[j, k]]).powi(2)).sum();
                smooth += h[[i, j]] * d;
            }
        }
    }
    let mut fit = 0.0;
    for i in 0..n {
        for j in 0..n {
            if !hc.contains(i, j) {
                fit += (a[[i, j]] - c[[i, j]]).powi(2);
            }
        }
    }
    0.5 * smooth + 0.5 * lambda * fit
}

/// Minimizer by projected gradient descent over symmetric matrices with
/// entries in `[0, 1]` that equal `A` on Omega.
pub fn projected_gradient(a: &Array2<f64>, hc: &HighConfidence, lambda: f64) -> Array2<f64> {
    let n = a.nrows();
    let h = hc.h();
    let mut w = Array2::<f64>::zeros((n, n));
    let mut degree = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                w[[i, j]] = h[[i, j]];
                degree[i] += h[[i, j]];
            }
        }
    }
    // Lipschitz bound of the gradient: 2 * (2 * max degree) + lambda
    let step = 1.0 / (4.0 * degree.iter().cloned().fold(0.0, f64::max) + lambda);
    let project = |c: &mut Array2<f64>| {
        for i in 0..n {
            for j in 0..n {
                c[[i, j]] = if hc.contains(i, j) { a[[i, j]] } else { c[[i, j]].clamp(0.0, 1.0) };
            }
        }
    };
    let mut c = a.clone();
    project(&mut c);
    for _ in 0..1_000_000 {
        // d/dC of sum_ij w_ij ||C_i - C_j||^2 / 2 is 2 (D - W) C
        let mut grad = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for k in 0..n {
                let mut lc = degree[i] * c[[i, k]];
                for j in 0..n {
                    lc -= w[[i, j]] * c[[j, k]];
                }
                grad[[i, k]] = 2.0 * lc;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !hc.contains(i, j) {
                    grad[[i, j]] -= lambda * (a[[i, j]] - c[[i, j]]);
                }
            }
        }
        let sym = (&grad + &grad.t()) * 0.5;
        let mut next = &c - &(sym * step);
        project(&mut next);
        let change = (&next - &c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c = next;
        if change < 1e-14 {
            break;
        }
    }
    c
}

fn pair_counts(pred: &[usize], truth: &[usize]) -> (f64, f64, f64, f64) {
    let (mut both, mut pred_only, mut truth_only, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => both += 1.0,
                (true, false) => pred_only += 1.0,
                (false, true) => truth_only += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    (both, pred_only, truth_only, neither)
}

/// Same grouping up to renaming of labels.
pub fn same_grouping(pred: &[usize], truth: &[usize]) -> bool {
    let (_, b, c, _) = pair_counts(pred, truth);
    b == 0.0 && c == 0.0
}

fn degenerate(pred: &[usize], truth: &[usize]) -> f64 {
    if same_grouping(pred, truth) {
        1.0
    } else {
        0.0
    }
}

/// Hubert-Arabie pair-counting form.
pub fn ari(pred: &[usize], truth: &[usize]) -> f64 {
    let (a, b, c, d) = pair_counts(pred, truth);
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return degenerate(pred, truth);
    }
    2.0 * (a * d - b * c) / denom
}

fn distribution(labels: &[usize]) -> HashMap<usize, f64> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(l, c)| (l, c as f64 / labels.len() as f64))
        .collect()
}

fn entropy(labels: &[usize]) -> f64 {
    distribution(labels).values().map(|p| -p * p.ln()).sum()
}

/// Mutual information over the geometric mean of the entropies (natural log).
pub fn nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let (hp, ht) = (entropy(pred), entropy(truth));
    if hp == 0.0 || ht == 0.0 {
        return degenerate(pred, truth);
    }
    let (pp, pt) = (distribution(pred), distribution(truth));
    let joint: Vec<(usize, usize)> = pred.iter().copied().zip(truth.iter().copied()).collect();
    let mut mi = 0.0;
    for (&u, &pu) in &pp {
        for (&v, &pv) in &pt {
            let puv = joint.iter().filter(|&&(x, y)| x == u && y == v).count() as f64 / pred.len() as f64;
            if puv > 0.0 {
                mi += puv * (puv / (pu * pv)).ln();
            }
        }
    }
    (mi / (hp * ht).sqrt()).clamp(0.0, 1.0)
}

/// Harmonic mean of pair precision and pair recall.
pub fn fscore(pred: &[usize], truth: &[usize]) -> f64 {
    let (a, b, c, _) = pair_counts(pred, truth);
    if a + b == 0.0 && a + c == 0.0 {
        return degenerate(pred, truth);
    }
    if a == 0.0 {
        return 0.0;
    }
    let (p, r) = (a / (a + b), a / (a + c));
    2.0 * p * r / (p + r)
}

pub fn purity(pred: &[usize], truth: &[usize]) -> f64 {
    let mut best: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *best.entry(p).or_default().entry(t).or_default() += 1;
    }
    best.values().map(|m| *m.values().max().unwrap()).sum::<usize>() as f64 / pred.len() as f64
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut tail in permutations(rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Best one-to-one relabeling found by trying every permutation.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let size = kp.max(kt);
    permutations((0..size).collect())
        .into_iter()
        .map(|perm| pred.iter().zip(truth).filter(|&(&p, &t)| perm[p] == t).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}
