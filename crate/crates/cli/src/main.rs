use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ca_enhance::base_pool::{generate_pool, read_pool_csv, sample_ensemble, write_pool_csv};
use ca_enhance::coassoc::extract_hc;
use ca_enhance::consensus::{hac, linkage_tree, Linkage};
use ca_enhance::data_io::{read_matrix, read_partition, write_json, write_matrix, write_partition};
use ca_enhance::enhance::{solve_with, write_diagnostics_csv, SolveOptions};
use ca_enhance::experiment::{
    emit_matrix_views, prepare, run_on_dataset, sample_level, single_run, write_report, CaKind, ExperimentConfig,
    LabelSource,
};
use ca_enhance::metrics::compute_metrics;
use ca_enhance::microcluster::write_map_csv;
use ca_enhance::{CoassocMatrix, Error, MatrixKind, Result, SolverConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ca-enhance", version, about = "Co-association matrix self-enhancement for ensemble clustering")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pool of K-means base clusterings.
    Pool(PoolArgs),
    /// Enhance a co-association matrix.
    Enhance(EnhanceArgs),
    /// Cut a similarity matrix into k clusters.
    Cluster(ClusterArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Run the full seeded protocol from a config file.
    Experiment(ExperimentArgs),
    /// Dump input, enhanced, difference and ideal matrices for one repetition.
    Views(ViewsArgs),
}

/// Dataset and seed, from a config file and/or flags.
#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV; overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column handling.
    #[arg(long, value_enum)]
    labels: Option<LabelArg>,
    /// Label file, one label per line (implies --labels file).
    #[arg(long)]
    label_file: Option<PathBuf>,
    /// Rescale features to [0, 1].
    #[arg(long)]
    scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Embedded,
    File,
    None,
}

#[derive(Args)]
struct PoolArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Number of base clusterings.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    PlainCa,
    Lwca,
    Pts,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Base clusterings, one column per member (as written by `pool`).
    #[arg(long, conflicts_with = "matrix", required_unless_present = "matrix")]
    ensemble: Option<PathBuf>,
    /// Draw this many members from the ensemble file (seeded).
    #[arg(long, requires = "ensemble")]
    sample: Option<usize>,
    /// Seed for --sample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Matrix built from --ensemble.
    #[arg(long, value_enum, default_value = "lwca")]
    kind: KindArg,
    /// Input matrix (.csv or binary).
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Plain co-association matrix defining the high-confidence set; defaults to --matrix.
    #[arg(long, requires = "matrix")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0.4)]
    theta: f64,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Solve without the Laplacian term.
    #[arg(long)]
    drop_laplacian: bool,
    /// Let high-confidence entries move.
    #[arg(long)]
    drop_omega_lock: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Similarity matrix (.csv or binary).
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "average")]
    linkage: LinkageArg,
    /// Label file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full merge sequence.
    #[arg(long)]
    dendrogram: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkageArg {
    Average,
    Complete,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Complete => Linkage::Complete,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted labels, one per line.
    #[arg(long)]
    labels: PathBuf,
    /// True labels, one per line.
    #[arg(long)]
    truth: PathBuf,
    /// Write the scores as JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct ViewsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Repetition whose ensemble is shown.
    #[arg(long, default_value_t = 0)]
    repetition: usize,
}

fn load_config(common: &Common, data: &DataArgs, workers: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(path) = &data.data {
        cfg.dataset.path = path.clone();
    }
    if let Some(lf) = &data.label_file {
        cfg.dataset.label_file = Some(lf.clone());
        cfg.dataset.labels = LabelSource::File;
    }
    if let Some(l) = data.labels {
        cfg.dataset.labels = match l {
            LabelArg::Embedded => LabelSource::Embedded,
            LabelArg::File => LabelSource::File,
            LabelArg::None => LabelSource::None,
        };
    }
    cfg.dataset.scale |= data.scale;
    if cfg.dataset.path.as_os_str().is_empty() {
        return Err(Error::Config("no dataset given; use --data or a config file".into()));
    }
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.output_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory; use --out or output_dir".into()))
}

fn cmd_pool(args: PoolArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = load_config(&args.common, &args.data, workers)?;
    if let Some(size) = args.size {
        cfg.pool_size = size;
    }
    if cfg.pool_size == 0 {
        return Err(Error::Config("pool size must be at least 1".into()));
    }
    let out = output_dir(&cfg)?;
    let data = cfg.load_dataset()?;
    let pool = rayon_pool(cfg.workers)?.install(|| generate_pool(&data, cfg.pool_size, cfg.seed))?;
    std::fs::create_dir_all(out)?;
    write_pool_csv(out.join("pool.csv"), &pool.members)?;
    write_json(out.join("pool.json"), &pool.metadata())?;
    println!("{} base clusterings of {} samples -> {}", pool.members.m(), pool.members.n(), out.display());
    Ok(())
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

fn cmd_enhance(args: EnhanceArgs) -> Result<()> {
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        lambda: args.lambda.unwrap_or(defaults.lambda),
        gamma1: args.gamma1.unwrap_or(defaults.gamma1),
        gamma2: args.gamma2.unwrap_or(defaults.gamma2),
        epsilon: args.epsilon.unwrap_or(defaults.epsilon),
        max_iters: args.max_iters.unwrap_or(defaults.max_iters),
    };
    solver.validate().map_err(|e| Error::Config(e.to_string()))?;
    let opts = SolveOptions {
        laplacian: !args.drop_laplacian,
        lock_omega: !args.drop_omega_lock,
        ..SolveOptions::default()
    };
    std::fs::create_dir_all(&args.out)?;

    let (input, hc, map) = if let Some(path) = &args.ensemble {
        let mut ensemble = read_pool_csv(path)?;
        if let Some(m) = args.sample {
            ensemble = sample_ensemble(&ensemble, m, args.seed)?;
        }
        let cfg = ExperimentConfig {
            ca_kind: match args.kind {
                KindArg::PlainCa => CaKind::PlainCa,
                KindArg::Lwca => CaKind::Lwca,
                KindArg::Pts => CaKind::Pts,
            },
            theta: args.theta,
            ..ExperimentConfig::default()
        };
        let prep = prepare(&cfg, &ensemble, args.alpha)?;
        if let Some(map) = &prep.map {
            write_map_csv(args.out.join("microclusters.csv"), map)?;
        }
        (prep.input, prep.hc, prep.map)
    } else {
        let path = args.matrix.as_ref().expect("clap requires --matrix without --ensemble");
        let values = read_matrix(path)?;
        let reference = match &args.reference {
            Some(r) => CoassocMatrix::new(read_matrix(r)?, MatrixKind::PlainCa)?,
            None => CoassocMatrix::new(values.clone(), MatrixKind::PlainCa)?,
        };
        let input = CoassocMatrix::new(values, MatrixKind::Lwca)?;
        (input, extract_hc(&reference, args.alpha)?, None)
    };

    let result = solve_with(&input, &hc, &solver, &opts)?;
    let enhanced = sample_level(&result.c, map.as_ref())?;
    write_matrix(args.out.join("enhanced.csv"), enhanced.values())?;
    write_diagnostics_csv(args.out.join("diagnostics.csv"), &result.history)?;
    println!(
        "n={} converged={} iters={} objective={}",
        enhanced.n(),
        result.converged,
        result.iters,
        result.final_objective
    );
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let m = CoassocMatrix::new(read_matrix(&args.matrix)?, MatrixKind::Enhanced)?;
    let partition = match &args.dendrogram {
        Some(path) => {
            if args.k == 0 || args.k > m.n() {
                return Err(Error::Argument(format!("k={} must lie in [1, {}]", args.k, m.n())));
            }
            let tree = linkage_tree(&m, args.linkage.into());
            tree.write_csv(path)?;
            tree.cut(args.k)?
        }
        None => hac(&m, args.k, args.linkage.into())?.0,
    };
    write_partition(&args.out, &partition)?;
    println!("{} samples -> {} clusters", partition.n(), partition.n_clusters());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = read_partition(&args.labels)?;
    let truth = read_partition(&args.truth)?;
    let report = compute_metrics(&pred, &truth)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = load_config(&args.common, &args.data, workers)?;
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    cfg.validate()?;
    let out = output_dir(&cfg)?.to_path_buf();
    let data = cfg.load_dataset()?;
    let report = run_on_dataset(&cfg, &data)?;
    write_report(&report, &out)?;
    for p in &report.points {
        let q = p.params;
        println!(
            "alpha={} lambda={} m={} gamma1={} gamma2={}: ARI baseline {:.4}±{:.4} enhanced {:.4}±{:.4}",
            q.alpha,
            q.lambda,
            q.ensemble_size,
            q.gamma1,
            q.gamma2,
            p.baseline.ari.mean,
            p.baseline.ari.std,
            p.enhanced.ari.mean,
            p.enhanced.ari.std
        );
    }
    Ok(())
}

fn cmd_views(args: ViewsArgs, workers: Option<usize>) -> Result<()> {
    let cfg = load_config(&args.common, &args.data, workers)?;
    cfg.validate()?;
    let out = output_dir(&cfg)?.to_path_buf();
    let data = cfg.load_dataset()?;
    let truth = data
        .truth()
        .ok_or_else(|| Error::Config("views need ground-truth labels".into()))?;
    let run = single_run(&cfg, &data, args.repetition)?;
    let input = sample_level(&run.input, run.map.as_ref())?;
    let enhanced = sample_level(&run.enhanced.c, run.map.as_ref())?;
    let files = emit_matrix_views(&input, &enhanced, &truth, &out)?;
    println!("{} files -> {}", files.len(), out.display());
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Numerical { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let workers = cli.workers;
    let outcome = match cli.command {
        Command::Pool(a) => cmd_pool(a, workers),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a, workers),
        Command::Views(a) => cmd_views(a, workers),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical { iter: 3, msg: "x".into() }), 3);
        assert_eq!(exit_code(&Error::Validation("x".into())), 1);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
