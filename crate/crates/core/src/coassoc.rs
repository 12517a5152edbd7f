//! Co-association matrices, high-confidence extraction and the graph Laplacian.
//!
//! For an ensemble of `m` partitions the plain co-association matrix counts
//! how often two samples share a cluster:
//!
//! ```text
//! A[i][j] = (1/m) * sum_k [c_k(i) == c_k(j)]
//! ```
//!
//! The locally weighted variant scales each co-occurrence by the reliability
//! of the cluster it came from:
//!
//! ```text
//! U(c)   = -sum_{partitions p} sum_{c' in p} (|c ∩ c'| / |c|) log2(|c ∩ c'| / |c|)
//! ECI(c) = exp(-U(c) / (theta * m))
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::base_pool::Ensemble;
use crate::error::{Error, Result};

/// Which construction produced a similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    PlainCa,
    Lwca,
    Pts,
    Enhanced,
}

/// Symmetric similarity matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoassocMatrix {
    values: Array2<f64>,
    kind: MatrixKind,
}

impl CoassocMatrix {
    /// Validate exact symmetry and the unit box.
    pub fn new(values: Array2<f64>, kind: MatrixKind) -> Result<Self> {
        check_similarity(&values)?;
        Ok(Self { values, kind })
    }

    pub(crate) fn from_trusted(values: Array2<f64>, kind: MatrixKind) -> Self {
        debug_assert!(check_similarity(&values).is_ok());
        Self { values, kind }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// Square, finite, exactly symmetric, entries in `[0, 1]`.
pub fn check_similarity(values: &Array2<f64>) -> Result<()> {
    let (r, c) = values.dim();
    if r != c {
        return Err(Error::Validation(format!("similarity matrix is {r}x{c}, expected square")));
    }
    for ((i, j), &v) in values.indexed_iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Validation(format!("entry ({i},{j}) = {v} outside [0, 1]")));
        }
        if j > i && v != values[[j, i]] {
            return Err(Error::Validation(format!(
                "matrix is not symmetric at ({i},{j}): {v} vs {}",
                values[[j, i]]
            )));
        }
    }
    Ok(())
}

/// Plain co-association matrix; entries are exact multiples of `1/m`.
pub fn build_ca(ensemble: &Ensemble) -> CoassocMatrix {
    let n = ensemble.n();
    let mut counts = vec![0u32; n * n];
    for p in ensemble.iter() {
        for members in p.clusters() {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a..] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let m = ensemble.m() as f64;
    let values = Array2::from_shape_fn((n, n), |(i, j)| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        f64::from(counts[lo * n + hi]) / m
    });
    CoassocMatrix::from_trusted(values, MatrixKind::PlainCa)
}

/// Temperature of the cluster reliability weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwcaParams {
    pub theta: f64,
}

impl Default for LwcaParams {
    fn default() -> Self {
        Self { theta: 0.4 }
    }
}

impl LwcaParams {
    pub fn new(theta: f64) -> Result<Self> {
        if theta.is_nan() || theta <= 0.0 {
            return Err(Error::Argument(format!("theta must be positive, got {theta}")));
        }
        Ok(Self { theta })
    }
}

/// Entropy of cluster `cluster` of partition `partition` with respect to the whole ensemble.
pub fn cluster_uncertainty(ensemble: &Ensemble, partition: usize, cluster: usize) -> Result<f64> {
    let p = ensemble
        .partitions()
        .get(partition)
        .ok_or_else(|| Error::Argument(format!("partition {partition} out of range")))?;
    let members: Vec<usize> = (0..p.n()).filter(|&i| p.labels()[i] == cluster).collect();
    if members.is_empty() {
        return Err(Error::Domain(format!("cluster {cluster} of partition {partition} is empty")));
    }
    Ok(uncertainty_of(ensemble, &members))
}

fn uncertainty_of(ensemble: &Ensemble, members: &[usize]) -> f64 {
    let size = members.len() as f64;
    let mut total = 0.0;
    for other in ensemble.iter() {
        let mut overlap = vec![0usize; other.n_clusters()];
        for &i in members {
            overlap[other.labels()[i]] += 1;
        }
        for &c in overlap.iter().filter(|&&c| c > 0) {
            let p = c as f64 / size;
            total -= p * p.log2();
        }
    }
    // a cluster kept whole by every partition has -1*log2(1) = -0 terms
    total.max(0.0)
}

/// Reliability weight of every cluster, indexed `[partition][cluster]`.
pub fn ensemble_cluster_index(ensemble: &Ensemble, params: LwcaParams) -> Vec<Vec<f64>> {
    let m = ensemble.m() as f64;
    ensemble
        .iter()
        .map(|p| {
            p.clusters()
                .iter()
                .map(|members| (-uncertainty_of(ensemble, members) / (params.theta * m)).exp())
                .collect()
        })
        .collect()
}

/// Locally weighted co-association matrix.
pub fn build_lwca(ensemble: &Ensemble, params: LwcaParams) -> Result<CoassocMatrix> {
    LwcaParams::new(params.theta)?;
    let n = ensemble.n();
    let m = ensemble.m() as f64;
    let eci = ensemble_cluster_index(ensemble, params);
    let mut acc = Array2::<f64>::zeros((n, n));
    for (p, weights) in ensemble.iter().zip(&eci) {
        for (members, &w) in p.clusters().iter().zip(weights) {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a..] {
                    acc[[i, j]] += w;
                    if i != j {
                        acc[[j, i]] += w;
                    }
                }
            }
        }
    }
    let sym = Array2::from_shape_fn((n, n), |(i, j)| {
        (0.5 * (acc[[i, j]] + acc[[j, i]]) / m).clamp(0.0, 1.0)
    });
    Ok(CoassocMatrix::from_trusted(sym, MatrixKind::Lwca))
}

/// Entries of a co-association matrix at or above a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct HighConfidence {
    alpha: f64,
    /// Upper-triangle pairs `(i, j)`, `i <= j`, sorted.
    pairs: Vec<(usize, usize)>,
    mask: Array2<bool>,
    h: Array2<f64>,
}

impl HighConfidence {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    /// Number of ordered pairs in the set.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `omega = {(i,j) : A[i][j] >= alpha}` and `h` = A restricted to omega.
pub fn extract_hc(ca_tilde: &CoassocMatrix, alpha: f64) -> Result<HighConfidence> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if ca_tilde.kind() != MatrixKind::PlainCa {
        return Err(Error::Validation(format!(
            "high-confidence entries come from a plain co-association matrix, got {:?}",
            ca_tilde.kind()
        )));
    }
    let a = ca_tilde.values();
    let mask = a.mapv(|v| v >= alpha);
    let h = Array2::from_shape_fn(a.dim(), |(i, j)| if mask[[i, j]] { a[[i, j]] } else { 0.0 });
    let n = a.nrows();
    let pairs = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .filter(|&(i, j)| mask[[i, j]])
        .collect();
    Ok(HighConfidence { alpha, pairs, mask, h })
}

/// Write omega as `i,j,value` rows over the upper triangle.
pub fn write_omega_csv(path: impl AsRef<Path>, hc: &HighConfidence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "i,j,value")?;
    for &(i, j) in &hc.pairs {
        writeln!(w, "{i},{j},{}", hc.h[[i, j]])?;
    }
    w.flush()?;
    Ok(())
}

/// Graph Laplacian `diag(H 1) - H` of the high-confidence graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    phi: Array2<f64>,
}

impl Laplacian {
    pub fn phi(&self) -> &Array2<f64> {
        &self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// `tr(C^T Phi C)`.
    pub fn quadratic_form(&self, c: &Array2<f64>) -> f64 {
        (self.phi.dot(c) * c).sum()
    }
}

pub fn build_laplacian(hc: &HighConfidence) -> Laplacian {
    let h = hc.h();
    let n = h.nrows();
    let mut phi = h.mapv(|v| -v);
    for i in 0..n {
        // the self-loop cancels: degree minus h_ii counts only other nodes
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| h[[i, j]]).sum();
        phi[[i, i]] = off;
    }
    Laplacian { phi }
}
