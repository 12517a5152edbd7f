//! Laplacian-regularized completion of a co-association matrix by ADMM.
//!
//! Given an input matrix `A`, the high-confidence set `Omega` and the
//! Laplacian `Phi` of the high-confidence graph, the solver minimizes
//!
//! ```text
//! tr(C^T Phi C) + (lambda/2) ||E||_F^2
//! s.t. A = C + E,  E = 0 on Omega,  C = F,  F = F^T,  0 <= F <= 1
//! ```
//!
//! Each iteration performs four closed-form steps:
//!
//! ```text
//! C <- M^{-1} (g1 (A - E + Y1/g1) + g2 (F - Y2/g2)),  M = 2 Phi + (g1 + g2) I
//! E <- zero-on-Omega( (g1 (A - C) + Y1) / (lambda + g1) )
//! F <- clamp( sym(C + Y2/g2), 0, 1 )
//! Y1 <- Y1 + g1 (A - C - E),   Y2 <- Y2 + g2 (C - F)
//! ```
//!
//! `M` does not change between iterations, so it is factorized once per
//! solve. `Phi` is block diagonal over the connected components of the
//! high-confidence graph and so is `M`; each block gets its own Cholesky
//! factor and isolated nodes reduce to a scalar division. Dense kernels run
//! sequentially so results do not depend on the thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::llt;
use faer::{Mat, MatMut, Par};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::coassoc::{build_laplacian, CoassocMatrix, HighConfidence, Laplacian, MatrixKind};
use crate::error::{Error, Result};

/// Penalty weights and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            gamma1: 1.0,
            gamma2: 1.0,
            epsilon: 1e-2,
            max_iters: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Init {
    /// `C = E = F = 0`, `Y1 = A`, `Y2 = 0`.
    #[default]
    Zeros,
    /// `C = F = A`, `E = Y1 = Y2 = 0`.
    Input,
}

/// Model variants used by ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveOptions {
    pub init: Init,
    /// Keep the Laplacian term; without it the program returns the box-projected input.
    pub laplacian: bool,
    /// Force `E = 0` on Omega (and restore `A` there in the output).
    pub lock_omega: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            init: Init::Zeros,
            laplacian: true,
            lock_omega: true,
        }
    }
}

/// ADMM iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub c: Array2<f64>,
    pub e: Array2<f64>,
    pub f: Array2<f64>,
    pub y1: Array2<f64>,
    pub y2: Array2<f64>,
    pub iter: usize,
}

impl SolverState {
    pub fn new(a: &Array2<f64>, init: Init) -> Self {
        let zeros = Array2::<f64>::zeros(a.dim());
        match init {
            Init::Zeros => Self {
                c: zeros.clone(),
                e: zeros.clone(),
                f: zeros.clone(),
                y1: a.clone(),
                y2: zeros,
                iter: 0,
            },
            Init::Input => Self {
                c: a.clone(),
                e: zeros.clone(),
                f: a.clone(),
                y1: zeros.clone(),
                y2: zeros,
                iter: 0,
            },
        }
    }
}

/// Diagnostics of one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub sigma_c: f64,
    pub sigma_e: f64,
    pub sigma_f: f64,
    pub sigma_y1: f64,
    pub sigma_y2: f64,
    /// `||A - C - E||_F`
    pub residual_ace: f64,
    /// `||C - F||_F`
    pub residual_cf: f64,
    /// Objective of `F` with `A` restored on Omega (the matrix a stop here would return).
    pub objective: f64,
}

impl IterationRecord {
    pub fn max_sigma(&self) -> f64 {
        [self.sigma_c, self.sigma_e, self.sigma_f, self.sigma_y1, self.sigma_y2]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct EnhancedResult {
    pub c: CoassocMatrix,
    pub converged: bool,
    pub iters: usize,
    /// Objective of the returned matrix.
    pub final_objective: f64,
    /// `[sigma_C, sigma_E, sigma_F, sigma_Y1, sigma_Y2]` of the last iteration.
    pub residuals: [f64; 5],
    pub history: Vec<IterationRecord>,
    /// Number of times `M` was factorized.
    pub factorizations: usize,
    pub state: SolverState,
}

impl EnhancedResult {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.history.last()
    }
}

/// Connected components of the off-diagonal support of `phi`, each sorted,
/// ordered by smallest member.
pub fn components(phi: &Array2<f64>) -> Vec<Vec<usize>> {
    let n = phi.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if phi[[i, j]] != 0.0 || phi[[j, i]] != 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

enum Block {
    Scalar { index: usize, pivot: f64 },
    Dense { indices: Vec<usize>, phi: Array2<f64>, factor: Mat<f64> },
}

/// Factorization of `M = 2 Phi + shift I`, one Cholesky factor per component.
pub struct FactoredSystem {
    n: usize,
    blocks: Vec<Block>,
}

impl FactoredSystem {
    pub fn new(lap: &Laplacian, shift: f64) -> Result<Self> {
        let phi = lap.phi();
        let n = phi.nrows();
        let blocks = components(phi)
            .into_iter()
            .map(|indices| {
                if let [index] = indices[..] {
                    return Ok(Block::Scalar {
                        index,
                        pivot: 2.0 * phi[[index, index]] + shift,
                    });
                }
                let k = indices.len();
                let sub = Array2::from_shape_fn((k, k), |(a, b)| phi[[indices[a], indices[b]]]);
                let mut factor = Mat::<f64>::from_fn(k, k, |a, b| 2.0 * sub[[a, b]] + if a == b { shift } else { 0.0 });
                let mut mem = MemBuffer::new(llt::factor::cholesky_in_place_scratch::<f64>(k, Par::Seq, Default::default()));
                llt::factor::cholesky_in_place(
                    factor.as_mut(),
                    Default::default(),
                    Par::Seq,
                    MemStack::new(&mut mem),
                    Default::default(),
                )
                .map_err(|e| Error::Numerical {
                    iter: 0,
                    msg: format!("Cholesky factorization failed: {e:?}"),
                })?;
                Ok(Block::Dense { indices, phi: sub, factor })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Size of the largest diagonal block.
    pub fn largest_block(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Scalar { .. } => 1,
                Block::Dense { indices, .. } => indices.len(),
            })
            .max()
            .unwrap_or(0)
    }

    /// `M^{-1} rhs` for an `n x k` right-hand side.
    pub fn solve(&self, rhs: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(rhs.dim());
        self.solve_into(rhs, &mut out, &mut Vec::new());
        out
    }

    /// [`Self::solve`] into `out`, reusing `scratch` for block right-hand sides.
    pub fn solve_into(&self, rhs: &Array2<f64>, out: &mut Array2<f64>, scratch: &mut Vec<f64>) {
        let cols = rhs.ncols();
        for block in &self.blocks {
            match block {
                Block::Scalar { index, pivot } => {
                    Zip::from(out.row_mut(*index))
                        .and(rhs.row(*index))
                        .for_each(|o, &r| *o = r / pivot);
                }
                Block::Dense { indices, factor, .. } => {
                    let k = indices.len();
                    scratch.clear();
                    scratch.resize(k * cols, 0.0);
                    for (a, &i) in indices.iter().enumerate() {
                        for (col, &v) in rhs.row(i).iter().enumerate() {
                            scratch[col * k + a] = v;
                        }
                    }
                    let mut mem = MemBuffer::new(StackReq::EMPTY);
                    llt::solve::solve_in_place(
                        factor.as_ref(),
                        MatMut::from_column_major_slice_mut(scratch, k, cols),
                        Par::Seq,
                        MemStack::new(&mut mem),
                    );
                    for (a, &i) in indices.iter().enumerate() {
                        for (col, o) in out.row_mut(i).iter_mut().enumerate() {
                            *o = scratch[col * k + a];
                        }
                    }
                }
            }
        }
    }

    /// `tr(C^T Phi C)` using the block structure.
    pub fn quadratic_form(&self, c: &Array2<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Scalar { .. } => 0.0,
                Block::Dense { indices, phi, .. } => {
                    let rows = c.select(ndarray::Axis(0), indices);
                    (phi.dot(&rows) * &rows).sum()
                }
            })
            .sum()
    }
}

fn diff_sq(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
}

/// Relative change `||new - old||^2 / max(||old||^2, 1e-12)`.
pub fn sigma(new: &Array2<f64>, old: &Array2<f64>) -> f64 {
    let mut ch = Change::default();
    Zip::from(new).and(old).for_each(|&x, &y| ch.track(x, y));
    ch.sigma()
}

/// Squared norms gathered while a step overwrites its output.
#[derive(Debug, Clone, Copy, Default)]
struct Change {
    diff: f64,
    old: f64,
}

impl Change {
    #[inline]
    fn track(&mut self, new: f64, old: f64) {
        self.diff += (new - old) * (new - old);
        self.old += old * old;
    }

    fn sigma(&self) -> f64 {
        self.diff / self.old.max(1e-12)
    }
}

/// C step: `M^{-1}(g1 (A - E) + Y1 + g2 F - Y2)`.
pub fn update_c(state: &SolverState, a: &Array2<f64>, system: &FactoredSystem, cfg: &SolverConfig) -> Array2<f64> {
    let mut c = Array2::<f64>::zeros(a.dim());
    c_step(state, a, system, cfg, &mut Array2::zeros(a.dim()), &mut Vec::new(), &mut c);
    c
}

fn c_step(
    old: &SolverState,
    a: &Array2<f64>,
    system: &FactoredSystem,
    cfg: &SolverConfig,
    rhs: &mut Array2<f64>,
    scratch: &mut Vec<f64>,
    out: &mut Array2<f64>,
) {
    Zip::from(&mut *rhs)
        .and(a)
        .and(&old.e)
        .and(&old.y1)
        .and(&old.f)
        .and(&old.y2)
        .for_each(|r, &a, &e, &y1, &f, &y2| {
            *r = cfg.gamma1 * (a - e) + y1 + cfg.gamma2 * f - y2;
        });
    system.solve_into(rhs, out, scratch);
}

/// E step with the current `state.c` taken as the fresh C iterate.
pub fn update_e(state: &SolverState, a: &Array2<f64>, omega: Option<&Array2<bool>>, cfg: &SolverConfig) -> Array2<f64> {
    let mut e = Array2::zeros(a.dim());
    let unlocked = Array2::from_elem(a.dim(), false);
    e_step(&state.c, &state.y1, a, omega.unwrap_or(&unlocked), cfg, &state.e, &mut e);
    e
}

/// Writes the new E into `out` and reports its change from `old`.
fn e_step(
    c: &Array2<f64>,
    y1: &Array2<f64>,
    a: &Array2<f64>,
    locked: &Array2<bool>,
    cfg: &SolverConfig,
    old: &Array2<f64>,
    out: &mut Array2<f64>,
) -> Change {
    let scale = 1.0 / (cfg.lambda + cfg.gamma1);
    let mut ch = Change::default();
    Zip::from(out).and(old).and(a).and(c).and(y1).and(locked).for_each(|e, &old, &a, &c, &y1, &l| {
        *e = if l { 0.0 } else { (cfg.gamma1 * (a - c) + y1) * scale };
        ch.track(*e, old);
    });
    ch
}

/// F step: symmetrize `C + Y2/g2` and clamp to `[0, 1]`.
pub fn update_f(state: &SolverState, cfg: &SolverConfig) -> Array2<f64> {
    let mut f = Array2::zeros(state.f.dim());
    f_step(&state.c, &state.y2, cfg, &state.f, &mut f);
    f
}

/// Writes the new F into `f` and reports its change from `old`.
fn f_step(c: &Array2<f64>, y2: &Array2<f64>, cfg: &SolverConfig, old: &Array2<f64>, f: &mut Array2<f64>) -> Change {
    let n = c.nrows();
    let p3 = |i: usize, j: usize| c[[i, j]] + y2[[i, j]] / cfg.gamma2;
    let mut ch = Change::default();
    for i in 0..n {
        for j in i..n {
            let v = (0.5 * (p3(i, j) + p3(j, i))).clamp(0.0, 1.0);
            ch.track(v, old[[i, j]]);
            f[[i, j]] = v;
            if j != i {
                ch.track(v, old[[j, i]]);
                f[[j, i]] = v;
            }
        }
    }
    ch
}

/// Dual ascent on both multipliers.
pub fn update_multipliers(state: &SolverState, a: &Array2<f64>, cfg: &SolverConfig) -> (Array2<f64>, Array2<f64>) {
    let (mut y1, mut y2) = (Array2::zeros(a.dim()), Array2::zeros(a.dim()));
    y1_step(&state.c, &state.e, a, cfg, &state.y1, &mut y1);
    y2_step(&state.c, &state.f, cfg, &state.y2, &mut y2);
    (y1, y2)
}

/// `Y1 += g1 (A - C - E)`; returns the change and `||A - C - E||^2`.
fn y1_step(
    c: &Array2<f64>,
    e: &Array2<f64>,
    a: &Array2<f64>,
    cfg: &SolverConfig,
    old: &Array2<f64>,
    y1: &mut Array2<f64>,
) -> (Change, f64) {
    let mut ch = Change::default();
    let mut residual = 0.0;
    Zip::from(y1).and(old).and(a).and(c).and(e).for_each(|y, &old, &a, &c, &e| {
        let r = a - c - e;
        *y = old + cfg.gamma1 * r;
        residual += r * r;
        ch.track(*y, old);
    });
    (ch, residual)
}

/// `Y2 += g2 (C - F)`; returns the change and `||C - F||^2`.
fn y2_step(c: &Array2<f64>, f: &Array2<f64>, cfg: &SolverConfig, old: &Array2<f64>, y2: &mut Array2<f64>) -> (Change, f64) {
    let mut ch = Change::default();
    let mut residual = 0.0;
    Zip::from(y2).and(old).and(c).and(f).for_each(|y, &old, &c, &f| {
        let r = c - f;
        *y = old + cfg.gamma2 * r;
        residual += r * r;
        ch.track(*y, old);
    });
    (ch, residual)
}

/// `tr(C^T Phi C) + (lambda/2) ||A - C||^2` over the unlocked entries.
pub fn objective(a: &Array2<f64>, c: &Array2<f64>, lap: &Laplacian, omega: Option<&Array2<bool>>, lambda: f64) -> f64 {
    lap.quadratic_form(c) + 0.5 * lambda * free_error_sq(a, c, omega)
}

fn free_error_sq(a: &Array2<f64>, c: &Array2<f64>, omega: Option<&Array2<bool>>) -> f64 {
    match omega {
        Some(mask) => Zip::from(a)
            .and(c)
            .and(mask)
            .fold(0.0, |acc, &a, &c, &m| if m { acc } else { acc + (a - c) * (a - c) }),
        None => diff_sq(a, c),
    }
}

/// Copy of `f` with the entries of `a` written back on Omega.
fn restore_omega(f: &Array2<f64>, a: &Array2<f64>, omega: Option<&Array2<bool>>) -> Array2<f64> {
    let mut c = f.clone();
    if let Some(mask) = omega {
        restore_into(&mut c, f, a, mask);
    }
    c
}

/// `out = f` with `a` on the locked entries; returns the unlocked `||A - out||^2`.
fn restore_into(out: &mut Array2<f64>, f: &Array2<f64>, a: &Array2<f64>, locked: &Array2<bool>) -> f64 {
    let mut err = 0.0;
    Zip::from(out).and(f).and(a).and(locked).for_each(|o, &f, &a, &l| {
        if l {
            *o = a;
        } else {
            *o = f;
            err += (a - f) * (a - f);
        }
    });
    err
}

/// Enhance `a` with the default model.
pub fn solve(a: &CoassocMatrix, hc: &HighConfidence, cfg: &SolverConfig) -> Result<EnhancedResult> {
    solve_with(a, hc, cfg, &SolveOptions::default())
}

/// Enhance `a` with an explicit starting point and model variant.
pub fn solve_with(a: &CoassocMatrix, hc: &HighConfidence, cfg: &SolverConfig, opts: &SolveOptions) -> Result<EnhancedResult> {
    cfg.validate()?;
    let n = a.n();
    if hc.n() != n {
        return Err(Error::Validation(format!(
            "input is {n}x{n} but the high-confidence set covers {} items",
            hc.n()
        )));
    }
    let av = a.values();
    let lap = build_laplacian(hc);
    let mask = hc.mask();
    let omega = opts.lock_omega.then_some(mask);

    if !opts.laplacian {
        // without the smoothness term the optimum is the projected input
        let c = restore_omega(&av.mapv(|v| v.clamp(0.0, 1.0)), av, omega);
        let state = SolverState::new(av, Init::Input);
        return Ok(EnhancedResult {
            final_objective: 0.5 * cfg.lambda * free_error_sq(av, &c, omega),
            c: CoassocMatrix::from_trusted(c, MatrixKind::Enhanced),
            converged: true,
            iters: 0,
            residuals: [0.0; 5],
            history: Vec::new(),
            factorizations: 0,
            state,
        });
    }

    let system = FactoredSystem::new(&lap, cfg.gamma1 + cfg.gamma2)?;
    let factorizations = 1;
    let unlocked;
    let locked = match omega {
        Some(m) => m,
        None => {
            unlocked = Array2::from_elem((n, n), false);
            &unlocked
        }
    };
    // `state` holds iterate k; `next` is overwritten with iterate k + 1
    let mut state = SolverState::new(av, opts.init);
    let mut next = state.clone();
    let mut rhs = Array2::<f64>::zeros((n, n));
    let mut candidate = Array2::<f64>::zeros((n, n));
    let mut scratch = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;

    while state.iter < cfg.max_iters {
        let iter = state.iter + 1;
        c_step(&state, av, &system, cfg, &mut rhs, &mut scratch, &mut next.c);
        let ch_e = e_step(&next.c, &state.y1, av, locked, cfg, &state.e, &mut next.e);
        let ch_f = f_step(&next.c, &state.y2, cfg, &state.f, &mut next.f);
        let (ch_y1, res_ace) = y1_step(&next.c, &next.e, av, cfg, &state.y1, &mut next.y1);
        let (ch_y2, res_cf) = y2_step(&next.c, &next.f, cfg, &state.y2, &mut next.y2);
        next.iter = iter;

        let free_err = restore_into(&mut candidate, &next.f, av, locked);
        let record = IterationRecord {
            iter,
            sigma_c: sigma(&next.c, &state.c),
            sigma_e: ch_e.sigma(),
            sigma_f: ch_f.sigma(),
            sigma_y1: ch_y1.sigma(),
            sigma_y2: ch_y2.sigma(),
            residual_ace: res_ace.sqrt(),
            residual_cf: res_cf.sqrt(),
            objective: system.quadratic_form(&candidate) + 0.5 * cfg.lambda * free_err,
        };
        // every iterate enters one of the tracked sums, so NaN or inf shows up here
        if !(record.max_sigma().is_finite() && res_ace.is_finite() && res_cf.is_finite()) {
            return Err(Error::Numerical {
                iter,
                msg: "non-finite value in an iterate".into(),
            });
        }
        history.push(record);
        std::mem::swap(&mut state, &mut next);
        if record.max_sigma() <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    let c = restore_omega(&state.f, av, omega);
    let last = history.last().expect("max_iters >= 1");
    log::debug!(
        "enhance: n={n} iters={} converged={converged} largest block={}",
        state.iter,
        system.largest_block()
    );
    Ok(EnhancedResult {
        final_objective: system.quadratic_form(&c) + 0.5 * cfg.lambda * free_error_sq(av, &c, omega),
        residuals: [last.sigma_c, last.sigma_e, last.sigma_f, last.sigma_y1, last.sigma_y2],
        c: CoassocMatrix::from_trusted(c, MatrixKind::Enhanced),
        converged,
        iters: state.iter,
        history,
        factorizations,
        state,
    })
}

/// Per-iteration diagnostics as CSV.
pub fn write_diagnostics_csv(path: impl AsRef<Path>, history: &[IterationRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "iter,sigma_c,sigma_e,sigma_f,sigma_y1,sigma_y2,residual_ace,residual_cf,objective"
    )?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.iter, r.sigma_c, r.sigma_e, r.sigma_f, r.sigma_y1, r.sigma_y2, r.residual_ace, r.residual_cf, r.objective
        )?;
    }
    w.flush()?;
    Ok(())
}
