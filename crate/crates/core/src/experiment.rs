//! Seeded end-to-end protocol: pool, ensembles, enhancement, consensus, scores.
//!
//! One pool of base clusterings is generated from the master seed. For
//! repetition `r` the ensemble is drawn with seed `derive(master, r)`, so every
//! sweep point sees the same ensembles and differences between points are
//! paired. Runs execute on a worker pool and are reported in
//! `(sweep point, repetition)` order; nothing in the report depends on timing
//! or scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_pool::{generate_pool, sample_ensemble, Ensemble, Partition, Pool};
use crate::coassoc::{build_ca, build_lwca, extract_hc, CoassocMatrix, HighConfidence, LwcaParams, MatrixKind};
use crate::consensus::{hac, Linkage};
use crate::data_io::{self, Dataset, LabelMode};
use crate::enhance::{solve_with, EnhancedResult, SolveOptions, SolverConfig};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::microcluster::{build_mca, build_pts, form_microclusters, lift_matrix, lift_partition, MicroclusterMap, PtsParams};
use crate::rng::{self, Domain};

/// Similarity matrix fed to the solver and to the baseline consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaKind {
    PlainCa,
    #[default]
    Lwca,
    Pts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    #[default]
    Embedded,
    File,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub labels: LabelSource,
    pub label_file: Option<PathBuf>,
    /// Rescale every feature column to `[0, 1]`.
    pub scale: bool,
    /// Keep a seeded random subset of this many samples.
    pub subsample: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            labels: LabelSource::Embedded,
            label_file: None,
            scale: false,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtsConfig {
    /// Elite neighbors per node; derived from the microcluster count when absent.
    pub v: Option<usize>,
    pub t: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    /// Target cluster count; the number of true classes when absent.
    pub k: Option<usize>,
    pub linkage: Linkage,
}

/// Lists of values to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ensemble_size: Vec<usize>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl SweepConfig {
    pub fn is_active(&self) -> bool {
        !(self.alpha.is_empty()
            && self.lambda.is_empty()
            && self.ensemble_size.is_empty()
            && self.gamma1.is_empty()
            && self.gamma2.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub drop_laplacian: bool,
    pub drop_omega_lock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub pool_size: usize,
    pub ensemble_size: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub ca_kind: CaKind,
    pub alpha: f64,
    pub theta: f64,
    pub solver: SolverConfig,
    pub pts: PtsConfig,
    pub consensus: ConsensusConfig,
    pub sweep: SweepConfig,
    pub ablation: AblationConfig,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            pool_size: 100,
            ensemble_size: 20,
            repetitions: 20,
            seed: 0,
            ca_kind: CaKind::Lwca,
            alpha: 0.8,
            theta: 0.4,
            solver: SolverConfig::default(),
            pts: PtsConfig::default(),
            consensus: ConsensusConfig::default(),
            sweep: SweepConfig::default(),
            ablation: AblationConfig::default(),
            workers: 0,
            output_dir: None,
        }
    }
}

/// One combination of swept parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub ensemble_size: usize,
    pub gamma1: f64,
    pub gamma2: f64,
}

fn or_base<T: Copy>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

impl ExperimentConfig {
    /// Parse TOML; relative dataset paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = base_dir {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() && !p.as_os_str().is_empty() {
                    *p = dir.join(&*p);
                }
            };
            resolve(&mut cfg.dataset.path);
            if let Some(lf) = cfg.dataset.label_file.as_mut() {
                resolve(lf);
            }
            if let Some(out) = cfg.output_dir.as_mut() {
                resolve(out);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    /// Cartesian product of the sweep lists, alpha outermost.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let mut points = Vec::new();
        for &alpha in &or_base(&self.sweep.alpha, self.alpha) {
            for &lambda in &or_base(&self.sweep.lambda, self.solver.lambda) {
                for &ensemble_size in &or_base(&self.sweep.ensemble_size, self.ensemble_size) {
                    for &gamma1 in &or_base(&self.sweep.gamma1, self.solver.gamma1) {
                        for &gamma2 in &or_base(&self.sweep.gamma2, self.solver.gamma2) {
                            points.push(SweepPoint {
                                alpha,
                                lambda,
                                ensemble_size,
                                gamma1,
                                gamma2,
                            });
                        }
                    }
                }
            }
        }
        points
    }

    fn solver_at(&self, p: &SweepPoint) -> SolverConfig {
        SolverConfig {
            lambda: p.lambda,
            gamma1: p.gamma1,
            gamma2: p.gamma2,
            ..self.solver
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        if self.pool_size == 0 {
            return fail("pool_size must be at least 1".into());
        }
        if self.theta.is_nan() || self.theta <= 0.0 {
            return fail(format!("theta must be positive, got {}", self.theta));
        }
        if self.pts.t == Some(0) || self.pts.v == Some(0) {
            return fail("pts.v and pts.t must be positive".into());
        }
        if self.consensus.k == Some(0) {
            return fail("consensus.k must be positive".into());
        }
        if self.dataset.labels == LabelSource::File && self.dataset.label_file.is_none() {
            return fail("dataset.labels = \"file\" needs dataset.label_file".into());
        }
        if self.ablation.drop_laplacian && self.ablation.drop_omega_lock {
            return fail("choose at most one ablation".into());
        }
        for p in self.sweep_points() {
            if !(0.0..=1.0).contains(&p.alpha) {
                return fail(format!("alpha must lie in [0, 1], got {}", p.alpha));
            }
            if p.ensemble_size == 0 || p.ensemble_size > self.pool_size {
                return fail(format!(
                    "ensemble size {} must lie in [1, pool_size = {}]",
                    p.ensemble_size, self.pool_size
                ));
            }
            self.solver_at(&p).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Load the configured dataset, applying subsampling and scaling.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let mode = match self.dataset.labels {
            LabelSource::Embedded => LabelMode::EmbeddedLastColumn,
            LabelSource::None => LabelMode::None,
            LabelSource::File => LabelMode::SeparateFile(self.dataset.label_file.clone().unwrap_or_default()),
        };
        let mut data = data_io::load_dataset(&self.dataset.path, &mode)?;
        if let Some(size) = self.dataset.subsample {
            if size < data.n_samples() {
                let mut rng = rng::stream(self.seed, Domain::Auxiliary, 0);
                let mut rows = rand::seq::index::sample(&mut rng, data.n_samples(), size).into_vec();
                rows.sort_unstable();
                data = data.select_rows(&rows)?;
            }
        }
        if self.dataset.scale {
            data = data.min_max_scaled();
        }
        Ok(data)
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub ari: Stat,
    pub nmi: Stat,
    pub fscore: Stat,
    pub accuracy: Stat,
    pub purity: Stat,
}

impl MetricStats {
    pub fn of(reports: &[MetricsReport]) -> Self {
        let pick = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            ari: pick(|r| r.ari),
            nmi: pick(|r| r.nmi),
            fscore: pick(|r| r.fscore),
            accuracy: pick(|r| r.accuracy),
            purity: pick(|r| r.purity),
        }
    }

    fn all(&self) -> [Stat; 5] {
        [self.ari, self.nmi, self.fscore, self.accuracy, self.purity]
    }
}

/// Outcome of one repetition at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: usize,
    pub repetition: usize,
    pub seed: u64,
    /// Items the solver worked on (microclusters for PTS input).
    pub solved_items: usize,
    /// Ordered pairs in the high-confidence set.
    pub omega_pairs: usize,
    pub iters: usize,
    pub converged: bool,
    pub objective: f64,
    pub baseline: MetricsReport,
    pub enhanced: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub params: SweepPoint,
    pub baseline: MetricStats,
    pub enhanced: MetricStats,
    pub converged_runs: usize,
    pub mean_iters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: DatasetSummary,
    pub k: usize,
    pub config: ExperimentConfig,
    pub points: Vec<PointSummary>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    /// Summary of the first (or only) sweep point.
    pub fn headline(&self) -> &PointSummary {
        &self.points[0]
    }
}

/// Input matrix and high-confidence set for one ensemble.
pub struct Prepared {
    pub input: CoassocMatrix,
    pub hc: HighConfidence,
    /// Present when the matrices live on microclusters.
    pub map: Option<MicroclusterMap>,
}

/// Build the configured input matrix and its high-confidence set.
pub fn prepare(cfg: &ExperimentConfig, ensemble: &Ensemble, alpha: f64) -> Result<Prepared> {
    match cfg.ca_kind {
        CaKind::PlainCa => {
            let ca = build_ca(ensemble);
            let hc = extract_hc(&ca, alpha)?;
            Ok(Prepared { input: ca, hc, map: None })
        }
        CaKind::Lwca => {
            let hc = extract_hc(&build_ca(ensemble), alpha)?;
            let input = build_lwca(ensemble, LwcaParams::new(cfg.theta)?)?;
            Ok(Prepared { input, hc, map: None })
        }
        CaKind::Pts => {
            let map = form_microclusters(ensemble);
            if map.n_prime() < 2 {
                return Err(Error::Config(
                    "PTS needs at least two microclusters but every base clustering agrees".into(),
                ));
            }
            let mca = build_mca(ensemble, &map)?;
            let hc = extract_hc(&mca, alpha)?;
            let defaults = PtsParams::default_for(map.n_prime());
            let params = PtsParams {
                v: cfg.pts.v.map_or(defaults.v, |v| v.min(map.n_prime() - 1)),
                t: cfg.pts.t.unwrap_or(defaults.t),
            };
            let input = build_pts(&mca, map.sizes(), params)?;
            Ok(Prepared { input, hc, map: Some(map) })
        }
    }
}

fn solve_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        laplacian: !cfg.ablation.drop_laplacian,
        lock_omega: !cfg.ablation.drop_omega_lock,
        ..SolveOptions::default()
    }
}

fn cluster(m: &CoassocMatrix, k: usize, linkage: Linkage, map: Option<&MicroclusterMap>) -> Result<Partition> {
    if k > m.n() {
        return Err(Error::Config(format!("cannot form {k} clusters from {} items", m.n())));
    }
    let (p, _) = hac(m, k, linkage)?;
    match map {
        Some(map) => lift_partition(&p, map),
        None => Ok(p),
    }
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    pool: &'a Pool,
    truth: Partition,
    k: usize,
}

fn run_once(ctx: &Context<'_>, point_index: usize, point: &SweepPoint, repetition: usize) -> Result<RunRecord> {
    let cfg = ctx.cfg;
    let seed = rng::derive_seed(cfg.seed, Domain::Repetition, repetition as u64);
    let ensemble = sample_ensemble(&ctx.pool.members, point.ensemble_size, seed)?;
    let prep = prepare(cfg, &ensemble, point.alpha)?;
    let result = solve_with(&prep.input, &prep.hc, &cfg.solver_at(point), &solve_options(cfg))?;
    let linkage = cfg.consensus.linkage;
    let base = cluster(&prep.input, ctx.k, linkage, prep.map.as_ref())?;
    let enh = cluster(&result.c, ctx.k, linkage, prep.map.as_ref())?;
    Ok(RunRecord {
        point: point_index,
        repetition,
        seed,
        solved_items: prep.input.n(),
        omega_pairs: prep.hc.len(),
        iters: result.iters,
        converged: result.converged,
        objective: result.final_objective,
        baseline: compute_metrics(&base, &ctx.truth)?,
        enhanced: compute_metrics(&enh, &ctx.truth)?,
    })
}

fn target_k(cfg: &ExperimentConfig, data: &Dataset) -> Result<usize> {
    let k = cfg.consensus.k.unwrap_or(data.n_classes());
    if k == 0 || k > data.n_samples() {
        return Err(Error::Config(format!(
            "consensus k = {k} must lie in [1, n = {}]",
            data.n_samples()
        )));
    }
    Ok(k)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Load the dataset and run the full protocol.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    run_on_dataset(cfg, &data)
}

/// Run the protocol on an already loaded dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentReport> {
    cfg.validate()?;
    let truth = data
        .truth()
        .ok_or_else(|| Error::Config("evaluation needs ground-truth labels".into()))?;
    let k = target_k(cfg, data)?;
    let points = cfg.sweep_points();
    let workers = worker_pool(cfg.workers)?;

    workers.install(|| {
        let pool = generate_pool(data, cfg.pool_size, cfg.seed)?;
        let ctx = Context { cfg, pool: &pool, truth, k };
        let jobs: Vec<(usize, usize)> = (0..points.len())
            .flat_map(|p| (0..cfg.repetitions).map(move |r| (p, r)))
            .collect();
        let runs = jobs
            .par_iter()
            .map(|&(p, r)| run_once(&ctx, p, &points[p], r))
            .collect::<Result<Vec<_>>>()?;

        let summaries = points
            .iter()
            .enumerate()
            .map(|(i, &params)| {
                let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.point == i).collect();
                PointSummary {
                    params,
                    baseline: MetricStats::of(&mine.iter().map(|r| r.baseline).collect::<Vec<_>>()),
                    enhanced: MetricStats::of(&mine.iter().map(|r| r.enhanced).collect::<Vec<_>>()),
                    converged_runs: mine.iter().filter(|r| r.converged).count(),
                    mean_iters: mine.iter().map(|r| r.iters as f64).sum::<f64>() / mine.len() as f64,
                }
            })
            .collect();

        Ok(ExperimentReport {
            dataset: DatasetSummary {
                name: data.name.clone(),
                n: data.n_samples(),
                d: data.n_features(),
                classes: data.n_classes(),
            },
            k,
            config: cfg.clone(),
            points: summaries,
            runs,
        })
    })
}

/// `report.json`, `summary.csv` (one row per sweep point) and `grid.csv`
/// (one row per sweep point and repetition).
pub fn write_report(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let json = out.join("report.json");
    data_io::write_json(&json, report)?;

    let summary = out.join("summary.csv");
    let mut w = BufWriter::new(File::create(&summary)?);
    let mut header = vec!["alpha", "lambda", "ensemble_size", "gamma1", "gamma2"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for side in ["baseline", "enhanced"] {
        for name in MetricsReport::NAMES {
            header.push(format!("{side}_{name}_mean"));
            header.push(format!("{side}_{name}_std"));
        }
    }
    header.extend(["converged_runs".into(), "mean_iters".into()]);
    writeln!(w, "{}", header.join(","))?;
    for p in &report.points {
        let q = p.params;
        let mut cells = vec![
            q.alpha.to_string(),
            q.lambda.to_string(),
            q.ensemble_size.to_string(),
            q.gamma1.to_string(),
            q.gamma2.to_string(),
        ];
        for stats in [&p.baseline, &p.enhanced] {
            for s in stats.all() {
                cells.push(s.mean.to_string());
                cells.push(s.std.to_string());
            }
        }
        cells.push(p.converged_runs.to_string());
        cells.push(p.mean_iters.to_string());
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;

    let grid = out.join("grid.csv");
    let mut w = BufWriter::new(File::create(&grid)?);
    let mut header = vec!["alpha", "lambda", "ensemble_size", "gamma1", "gamma2", "repetition", "iters", "converged"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for side in ["baseline", "enhanced"] {
        for name in MetricsReport::NAMES {
            header.push(format!("{side}_{name}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for r in &report.runs {
        let q = report.points[r.point].params;
        let mut cells = vec![
            q.alpha.to_string(),
            q.lambda.to_string(),
            q.ensemble_size.to_string(),
            q.gamma1.to_string(),
            q.gamma2.to_string(),
            r.repetition.to_string(),
            r.iters.to_string(),
            r.converged.to_string(),
        ];
        for m in [&r.baseline, &r.enhanced] {
            cells.extend(m.values().iter().map(f64::to_string));
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(vec![json, summary, grid])
}

/// Input, enhanced matrix and solver output of one repetition at the base point.
pub struct SingleRun {
    pub input: CoassocMatrix,
    pub enhanced: EnhancedResult,
    pub prepared_hc: HighConfidence,
    pub map: Option<MicroclusterMap>,
}

/// Reproduce repetition `repetition` at the base parameters.
pub fn single_run(cfg: &ExperimentConfig, data: &Dataset, repetition: usize) -> Result<SingleRun> {
    cfg.validate()?;
    let pool = worker_pool(cfg.workers)?.install(|| generate_pool(data, cfg.pool_size, cfg.seed))?;
    let seed = rng::derive_seed(cfg.seed, Domain::Repetition, repetition as u64);
    let ensemble = sample_ensemble(&pool.members, cfg.ensemble_size, seed)?;
    let prep = prepare(cfg, &ensemble, cfg.alpha)?;
    let enhanced = solve_with(&prep.input, &prep.hc, &cfg.solver, &solve_options(cfg))?;
    Ok(SingleRun {
        input: prep.input,
        enhanced,
        prepared_hc: prep.hc,
        map: prep.map,
    })
}

/// Class-indicator matrix: 1 iff two samples share a true class.
pub fn ideal_matrix(truth: &Partition) -> CoassocMatrix {
    let t = truth.labels();
    let n = t.len();
    let values = Array2::from_shape_fn((n, n), |(i, j)| if t[i] == t[j] { 1.0 } else { 0.0 });
    CoassocMatrix::from_trusted(values, MatrixKind::PlainCa)
}

/// Gray level of a value in `[0, 1]`, rounding half up.
pub fn gray_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary 8-bit PGM of a square matrix with entries in `[0, 1]`.
pub fn encode_pgm(values: &Array2<f64>) -> Vec<u8> {
    let (r, c) = values.dim();
    let mut out = format!("P5\n{c} {r}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| gray_level(v)));
    out
}

fn permute(values: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(values.dim(), |(i, j)| values[[order[i], order[j]]])
}

/// Write input, enhanced, difference (enhanced - input) and ideal matrices,
/// rows and columns sorted by true class, as CSV and PGM.
///
/// The difference image maps `d` in `[-1, 1]` to gray `(d + 1) / 2`.
pub fn emit_matrix_views(
    input: &CoassocMatrix,
    enhanced: &CoassocMatrix,
    truth: &Partition,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let n = truth.n();
    if input.n() != n || enhanced.n() != n {
        return Err(Error::Validation(format!(
            "views need matching sizes: input {}, enhanced {}, truth {n}",
            input.n(),
            enhanced.n()
        )));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (truth.labels()[i], i));

    let difference = enhanced.values() - input.values();
    let views = [
        ("input", permute(input.values(), &order), None),
        ("enhanced", permute(enhanced.values(), &order), None),
        ("difference", permute(&difference, &order), Some(())),
        ("ideal", permute(ideal_matrix(truth).values(), &order), None),
    ];
    let mut written = Vec::new();
    for (name, m, signed) in views {
        let csv = out.join(format!("{name}.csv"));
        data_io::write_matrix_csv(&csv, &m)?;
        let gray = if signed.is_some() { m.mapv(|d| (d + 1.0) / 2.0) } else { m };
        let pgm = out.join(format!("{name}.pgm"));
        std::fs::write(&pgm, encode_pgm(&gray))?;
        written.push(csv);
        written.push(pgm);
    }
    Ok(written)
}

/// Sample-level view of a matrix that may live on microclusters.
pub fn sample_level(m: &CoassocMatrix, map: Option<&MicroclusterMap>) -> Result<CoassocMatrix> {
    match map {
        Some(map) => lift_matrix(m, map),
        None => Ok(m.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blobs() -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [(0.0, 0.0), (6.0, 0.0), (0.0, 6.0)];
        for (c, &(x, y)) in centers.iter().enumerate() {
            for i in 0..12 {
                let t = i as f64;
                rows.push([x + (t * 0.37).sin(), y + (t * 0.91).cos()]);
                labels.push(c.to_string());
            }
        }
        let x = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        Dataset::new("blobs", x, Some(labels)).unwrap()
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            pool_size: 10,
            ensemble_size: 5,
            repetitions: 3,
            seed: 7,
            workers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn parses_toml_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 3\nca_kind = \"plain-ca\"\n[dataset]\npath = \"x.csv\"\n[solver]\nlambda = 0.1\n[sweep]\nalpha = [0.6, 0.7]\n",
            Some(Path::new("/tmp/base")),
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.ca_kind, CaKind::PlainCa);
        assert_eq!(cfg.dataset.path, PathBuf::from("/tmp/base/x.csv"));
        assert_eq!(cfg.solver.lambda, 0.1);
        assert_eq!(cfg.solver.gamma1, 1.0);
        assert_eq!(cfg.pool_size, 100);
        assert_eq!(cfg.sweep_points().len(), 2);
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1", None), Err(Error::Config(_))));
    }

    #[test]
    fn contradictions_are_config_errors() {
        let mut cfg = small_config();
        cfg.ensemble_size = 11;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.repetitions = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = small_config();
        cfg.sweep.lambda = vec![0.1, -1.0];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_is_cartesian() {
        let mut cfg = small_config();
        cfg.sweep.alpha = vec![0.6, 0.7, 0.8];
        cfg.sweep.gamma1 = vec![0.1, 1.0];
        let pts = cfg.sweep_points();
        assert_eq!(pts.len(), 6);
        assert_eq!((pts[1].alpha, pts[1].gamma1), (0.6, 1.0));
        assert_eq!((pts[2].alpha, pts[2].gamma1), (0.7, 0.1));
    }

    #[test]
    fn runs_are_reproducible_and_paired() {
        let data = blobs();
        let mut cfg = small_config();
        cfg.sweep.alpha = vec![0.6, 0.8];
        let a = run_on_dataset(&cfg, &data).unwrap();
        cfg.workers = 1;
        let b = run_on_dataset(&cfg, &data).unwrap();
        assert_eq!(a.runs, b.runs);
        assert_eq!(a.runs.len(), 6);
        assert_eq!(a.runs[0].seed, a.runs[3].seed);
        cfg.ca_kind = CaKind::PlainCa;
        let r = run_on_dataset(&cfg, &data).unwrap();
        assert!(r.headline().enhanced.ari.mean > 0.5);
        cfg.ca_kind = CaKind::Pts;
        let r = run_on_dataset(&cfg, &data).unwrap();
        assert!(r.runs.iter().all(|x| x.solved_items < data.n_samples()));
    }

    #[test]
    fn missing_labels_is_config_error() {
        let data = Dataset::new("x", blobs().features().clone(), None).unwrap();
        assert!(matches!(run_on_dataset(&small_config(), &data), Err(Error::Config(_))));
    }

    #[test]
    fn ideal_matrix_and_pgm() {
        let truth = Partition::new(vec![0, 0, 1, 1]).unwrap();
        assert_eq!(
            ideal_matrix(&truth).values(),
            &array![[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0]]
        );
        let pgm = encode_pgm(&Array2::from_elem((4, 4), 0.5));
        assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(pgm.len(), 11 + 16);
        assert_eq!(gray_level(0.5), 128);
        assert_eq!(gray_level(1.0), 255);
        assert_eq!(gray_level(0.0), 0);
    }

    #[test]
    fn views_of_identical_matrices() {
        let truth = Partition::new(vec![1, 0, 1, 0]).unwrap();
        let m = CoassocMatrix::new(Array2::from_elem((4, 4), 0.25), MatrixKind::Lwca).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_matrix_views(&m, &m, &truth, dir.path()).unwrap();
        let diff = data_io::read_matrix_csv(dir.path().join("difference.csv")).unwrap();
        assert!(diff.iter().all(|&v| v == 0.0));
        let ideal = data_io::read_matrix_csv(dir.path().join("ideal.csv")).unwrap();
        assert_eq!(ideal, ideal_matrix(&Partition::new(vec![0, 0, 1, 1]).unwrap()).into_values());
        let short = Partition::new(vec![0, 1, 0]).unwrap();
        assert!(matches!(emit_matrix_views(&m, &m, &short, dir.path()), Err(Error::Validation(_))));
    }
}
