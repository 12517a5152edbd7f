//! Microclusters and probability-trajectory similarity.
//!
//! Samples that every base clustering keeps together form a microcluster.
//! The microcluster co-association matrix is pruned to a sparse elite-neighbor
//! graph `W`; a size-weighted random walk on `W` gives transition matrix `Q`,
//! and the similarity of two microclusters is the cosine of their stacked
//! walk distributions:
//!
//! ```text
//! q[i][j]  = r_j w[i][j] / sum_{k != i} r_k w[i][k]
//! R_i      = (row i of Q^1, row i of Q^2, ..., row i of Q^T)
//! PTS[i][j] = <R_i, R_j> / (|R_i| |R_j|)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::base_pool::{Ensemble, Partition};
use crate::coassoc::{build_ca, CoassocMatrix, MatrixKind};
use crate::error::{Error, Result};

/// Sample to microcluster assignment; ids ordered by smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroclusterMap {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl MicroclusterMap {
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_prime(&self) -> usize {
        self.sizes.len()
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Smallest member of every microcluster.
    pub fn representatives(&self) -> Vec<usize> {
        let mut reps = vec![usize::MAX; self.n_prime()];
        for (i, &y) in self.assignment.iter().enumerate() {
            reps[y] = reps[y].min(i);
        }
        reps
    }
}

/// Group samples by their label signature across all partitions.
pub fn form_microclusters(ensemble: &Ensemble) -> MicroclusterMap {
    let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut sizes = Vec::new();
    let assignment = (0..ensemble.n())
        .map(|i| {
            let signature: Vec<usize> = ensemble.iter().map(|p| p.labels()[i]).collect();
            let next = ids.len();
            let id = *ids.entry(signature).or_insert(next);
            if id == sizes.len() {
                sizes.push(0);
            }
            sizes[id] += 1;
            id
        })
        .collect();
    MicroclusterMap { assignment, sizes }
}

/// The ensemble restricted to one representative per microcluster.
pub fn project_ensemble(ensemble: &Ensemble, map: &MicroclusterMap) -> Result<Ensemble> {
    if map.n() != ensemble.n() {
        return Err(Error::Validation(format!(
            "map covers {} samples, ensemble {}",
            map.n(),
            ensemble.n()
        )));
    }
    let reps = map.representatives();
    let parts = ensemble
        .iter()
        .enumerate()
        .map(|(k, p)| {
            for (i, &y) in map.assignment.iter().enumerate() {
                if p.labels()[i] != p.labels()[reps[y]] {
                    return Err(Error::Validation(format!(
                        "microcluster {y} spans two clusters of partition {k}"
                    )));
                }
            }
            Partition::from_labels(&reps.iter().map(|&r| p.labels()[r]).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(parts)
}

/// Co-association matrix between microclusters (`n' x n'`).
pub fn build_mca(ensemble: &Ensemble, map: &MicroclusterMap) -> Result<CoassocMatrix> {
    Ok(build_ca(&project_ensemble(ensemble, map)?))
}

/// Elite-neighbor count and walk length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtsParams {
    pub v: usize,
    pub t: usize,
}

impl PtsParams {
    pub const DEFAULT_T: usize = 20;

    /// `v = 5 ceil(log2 n')` capped at `n' - 1`, `t = 20`.
    pub fn default_for(n_prime: usize) -> Self {
        let log = if n_prime <= 1 {
            0
        } else {
            (usize::BITS - (n_prime - 1).leading_zeros()) as usize
        };
        Self {
            v: (5 * log).min(n_prime.saturating_sub(1)).max(1),
            t: Self::DEFAULT_T,
        }
    }
}

/// Top-`v` off-diagonal entries per row, ties toward the smaller column,
/// then symmetrized by elementwise max.
pub fn elite_neighbor_graph(mca: &Array2<f64>, v: usize) -> Array2<f64> {
    let n = mca.nrows();
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut cols: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cols.sort_by(|&a, &b| mca[[i, b]].total_cmp(&mca[[i, a]]).then(a.cmp(&b)));
        for &j in cols.iter().take(v) {
            w[[i, j]] = mca[[i, j]];
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = w[[i, j]].max(w[[j, i]]);
            w[[i, j]] = m;
            w[[j, i]] = m;
        }
    }
    w
}

/// Size-weighted random-walk transition matrix on `w`.
pub fn transition_matrix(w: &Array2<f64>, sizes: &[usize]) -> Array2<f64> {
    let n = w.nrows();
    let mut q = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mass: f64 = (0..n).filter(|&k| k != i).map(|k| sizes[k] as f64 * w[[i, k]]).sum();
        for j in (0..n).filter(|&j| j != i) {
            q[[i, j]] = if mass > 0.0 {
                sizes[j] as f64 * w[[i, j]] / mass
            } else {
                1.0 / (n - 1) as f64
            };
        }
    }
    q
}

/// Probability-trajectory similarity between microclusters.
pub fn build_pts(mca: &CoassocMatrix, sizes: &[usize], params: PtsParams) -> Result<CoassocMatrix> {
    let n = mca.n();
    if sizes.len() != n {
        return Err(Error::Validation(format!("{} sizes for {n} microclusters", sizes.len())));
    }
    if params.v == 0 || params.v >= n {
        return Err(Error::Argument(format!(
            "elite neighbor count must lie in [1, {}], got {}",
            n.saturating_sub(1),
            params.v
        )));
    }
    if params.t == 0 {
        return Err(Error::Argument("walk length must be positive".into()));
    }
    let w = elite_neighbor_graph(mca.values(), params.v);
    let q = transition_matrix(&w, sizes);

    // Gram matrix of the trajectories: sum_t Q^t (Q^t)^T
    let mut power = q.clone();
    let mut gram = power.dot(&power.t());
    for _ in 1..params.t {
        power = power.dot(&q);
        gram += &power.dot(&power.t());
    }
    let norms: Vec<f64> = (0..n).map(|i| gram[[i, i]].sqrt()).collect();
    let mut pts = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let s = (gram[[i, j]] / (norms[i] * norms[j])).clamp(0.0, 1.0);
            pts[[i, j]] = s;
            pts[[j, i]] = s;
        }
    }
    Ok(CoassocMatrix::from_trusted(pts, MatrixKind::Pts))
}

/// Every sample inherits the label of its microcluster.
pub fn lift_partition(micro: &Partition, map: &MicroclusterMap) -> Result<Partition> {
    if micro.n() != map.n_prime() {
        return Err(Error::Validation(format!(
            "partition covers {} items, map has {} microclusters",
            micro.n(),
            map.n_prime()
        )));
    }
    Partition::from_labels(&map.assignment.iter().map(|&y| micro.labels()[y]).collect::<Vec<_>>())
}

/// Expand an `n' x n'` matrix to samples: `out[i][j] = m[y(i)][y(j)]`.
pub fn lift_matrix(m: &CoassocMatrix, map: &MicroclusterMap) -> Result<CoassocMatrix> {
    if m.n() != map.n_prime() {
        return Err(Error::Validation(format!(
            "matrix is {0}x{0}, map has {1} microclusters",
            m.n(),
            map.n_prime()
        )));
    }
    let y = &map.assignment;
    let values = Array2::from_shape_fn((map.n(), map.n()), |(i, j)| m.values()[[y[i], y[j]]]);
    Ok(CoassocMatrix::from_trusted(values, m.kind()))
}

/// `sample_index,microcluster_id` rows.
pub fn write_map_csv(path: impl AsRef<Path>, map: &MicroclusterMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample_index,microcluster_id")?;
    for (i, y) in map.assignment.iter().enumerate() {
        writeln!(w, "{i},{y}")?;
    }
    w.flush()?;
    Ok(())
}
