//! Agglomerative clustering on a similarity matrix.
//!
//! Clusters are identified by their smallest member. Each step merges the
//! pair with the highest linkage similarity; ties go to the lexicographically
//! smallest `(min member of a, min member of b)`. Linkage rows are updated in
//! place by the Lance-Williams recurrences
//!
//! ```text
//! average:  s(a+b, k) = (|a| s(a,k) + |b| s(b,k)) / (|a| + |b|)
//! complete: s(a+b, k) = min(s(a,k), s(b,k))
//! ```
//!
//! and every active cluster caches its best partner among clusters with a
//! larger representative, so a step costs O(n) unless a cache is invalidated.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::base_pool::Partition;
use crate::coassoc::CoassocMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
}

/// One merge; ids follow the convention leaves `0..n`, merge `t` creates `n + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub similarity: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Partition after applying the first `n - k` merges.
    pub fn cut(&self, k: usize) -> Result<Partition> {
        if k == 0 || k > self.n {
            return Err(Error::Argument(format!("cannot cut {} leaves into {k} clusters", self.n)));
        }
        let steps = self.n - k;
        if steps > self.merges.len() {
            return Err(Error::Argument(format!(
                "dendrogram holds {} merges, {steps} needed for k={k}",
                self.merges.len()
            )));
        }
        // node id -> representative leaf
        let mut leaf_of: Vec<usize> = (0..self.n).collect();
        let mut parent: Vec<usize> = (0..self.n).collect();
        for m in &self.merges[..steps] {
            let (ra, rb) = (leaf_of[m.cluster_a], leaf_of[m.cluster_b]);
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
            leaf_of.push(lo);
        }
        let root = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        Partition::from_labels(&(0..self.n).map(root).collect::<Vec<_>>())
    }

    /// `step,cluster_a,cluster_b,similarity` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "step,cluster_a,cluster_b,similarity")?;
        for (t, m) in self.merges.iter().enumerate() {
            writeln!(w, "{t},{},{},{}", m.cluster_a, m.cluster_b, m.similarity)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Best {
    sim: f64,
    partner: usize,
}

/// Cut the linkage tree of `similarity` at `k` clusters.
pub fn hac(similarity: &CoassocMatrix, k: usize, linkage: Linkage) -> Result<(Partition, Dendrogram)> {
    let n = similarity.n();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("k={k} must lie in [1, {n}]")));
    }
    let tree = agglomerate(similarity, k, linkage);
    Ok((tree.cut(k)?, tree))
}

/// Full linkage tree (`n - 1` merges).
pub fn linkage_tree(similarity: &CoassocMatrix, linkage: Linkage) -> Dendrogram {
    agglomerate(similarity, 1, linkage)
}

fn agglomerate(similarity: &CoassocMatrix, k: usize, linkage: Linkage) -> Dendrogram {
    let n = similarity.n();
    let mut s: Vec<f64> = similarity.values().iter().cloned().collect();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut merges = Vec::with_capacity(n.saturating_sub(k));

    let scan = |s: &[f64], active: &[bool], i: usize| -> Option<Best> {
        let row = &s[i * n..(i + 1) * n];
        let mut best: Option<Best> = None;
        for j in (i + 1..n).filter(|&j| active[j]) {
            if best.is_none_or(|b| row[j] > b.sim) {
                best = Some(Best { sim: row[j], partner: j });
            }
        }
        best
    };
    let mut cache: Vec<Option<Best>> = (0..n).map(|i| scan(&s, &active, i)).collect();

    for t in 0..n.saturating_sub(k) {
        // highest similarity; ties keep the smallest representative pair
        let mut pick: Option<(usize, Best)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            if let Some(b) = cache[i] {
                if pick.is_none_or(|(_, p)| b.sim > p.sim) {
                    pick = Some((i, b));
                }
            }
        }
        let (a, best) = pick.expect("at least two active clusters");
        let b = best.partner;

        merges.push(Merge {
            cluster_a: node[a],
            cluster_b: node[b],
            similarity: best.sim,
            size: size[a] + size[b],
        });
        let (wa, wb) = (size[a] as f64, size[b] as f64);
        for j in (0..n).filter(|&j| active[j] && j != a && j != b) {
            let (sa, sb) = (s[a * n + j], s[b * n + j]);
            let merged = match linkage {
                Linkage::Average => (wa * sa + wb * sb) / (wa + wb),
                Linkage::Complete => sa.min(sb),
            };
            s[a * n + j] = merged;
            s[j * n + a] = merged;
        }
        active[b] = false;
        cache[b] = None;
        size[a] += size[b];
        node[a] = n + t;

        cache[a] = scan(&s, &active, a);
        for i in (0..a).filter(|&i| active[i]) {
            let stale = cache[i].is_some_and(|c| c.partner == a || c.partner == b);
            if stale {
                cache[i] = scan(&s, &active, i);
            } else {
                let v = s[i * n + a];
                match cache[i] {
                    Some(c) if v > c.sim || (v == c.sim && a < c.partner) => {
                        cache[i] = Some(Best { sim: v, partner: a });
                    }
                    None => cache[i] = Some(Best { sim: v, partner: a }),
                    _ => {}
                }
            }
        }
        for i in (a + 1..b).filter(|&i| active[i]) {
            if cache[i].is_some_and(|c| c.partner == b) {
                cache[i] = scan(&s, &active, i);
            }
        }
    }
    Dendrogram { n, merges }
}
