use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detlsh::io::{
    compute_ground_truth, load_index, load_ivecs, load_vectors, save_index, GroundTruth,
};
use detlsh::parallel::WorkerPlan;
use detlsh::{estimate_r_min, Dataset, DetIndex, IndexConfig, PointId, Preset, QueryParams};
use detlsh_cli::{run_queries, speedup, CliError, CsvSink, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Parser)]
#[command(
    name = "detlsh",
    version,
    about = "DET-LSH approximate nearest neighbor index"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index and write it as a .deti file
    Build(BuildArgs),
    /// Compute exact k-NN ground truth as ivecs
    Gt(GtArgs),
    /// Run c²-k-ANN queries against a saved index and write per-query CSV
    Query(QueryArgs),
    /// Sweep parameter lists, appending one CSV row per (config, query)
    Bench(BenchArgs),
    /// Run the built-in oracle checks
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "paperK16L4")]
    K16L4,
    #[value(name = "paperK4L16")]
    K4L16,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::K16L4 => Preset::K16L4,
            PresetArg::K4L16 => Preset::K4L16,
        }
    }
}

#[derive(Args, Clone)]
struct IndexOpts {
    /// Projected dimensions per space
    #[arg(long = "K", default_value_t = 16)]
    proj_dim: usize,
    /// Number of projected spaces
    #[arg(long = "L", default_value_t = 4)]
    spaces: usize,
    /// Overrides --K and --L
    #[arg(long)]
    preset: Option<PresetArg>,
    /// Regions per projected dimension
    #[arg(long, default_value_t = 256)]
    nr: usize,
    #[arg(long, default_value_t = 128)]
    max_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl IndexOpts {
    fn config(&self) -> IndexConfig {
        let (proj_dim, spaces) = match self.preset.map(Preset::from) {
            Some(p) => (p.proj_dim(), p.spaces()),
            None => (self.proj_dim, self.spaces),
        };
        IndexConfig {
            proj_dim,
            spaces,
            regions: self.nr,
            max_leaf: self.max_leaf,
            seed: self.seed,
            sample_size: None,
        }
    }
}

#[derive(Args, Clone)]
struct ParallelOpts {
    /// Worker threads; 0 uses every hardware thread
    #[arg(long, default_value_t = 8)]
    nw: usize,
    /// Range-query result queues
    #[arg(long, default_value_t = 4)]
    nq: usize,
}

impl ParallelOpts {
    fn plan(&self) -> Result<WorkerPlan> {
        Ok(WorkerPlan::new(self.nw, Some(self.nq))?)
    }
}

#[derive(Args, Clone)]
struct SearchOpts {
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Approximation ratio
    #[arg(long, default_value_t = 1.5)]
    c: f64,
    /// Candidate budget fraction
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    /// Initial radius; estimated from sampled data points when omitted
    #[arg(long)]
    rmin: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    /// Base vectors (.fvecs or .bvecs)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    index: IndexOpts,
    #[command(flatten)]
    parallel: ParallelOpts,
}

#[derive(Args)]
struct GtArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every hardware thread
    #[arg(long, default_value_t = 8)]
    nw: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Ground truth ivecs; computed exactly when omitted
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchOpts,
    #[command(flatten)]
    parallel: ParallelOpts,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// CSV file; rows are appended
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "K", value_delimiter = ',', default_value = "16")]
    proj_dim: Vec<usize>,
    #[arg(long = "L", value_delimiter = ',', default_value = "4")]
    spaces: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1.5")]
    c: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    beta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "50")]
    k: Vec<usize>,
    /// Replaces the --K/--L sweep with one preset
    #[arg(long)]
    preset: Option<PresetArg>,
    #[arg(long, default_value_t = 256)]
    nr: usize,
    #[arg(long, default_value_t = 128)]
    max_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rmin: Option<f64>,
    #[command(flatten)]
    parallel: ParallelOpts,
}

const R_MIN_SAMPLES: usize = 20;

fn resolve_params(index: &DetIndex, search: &SearchOpts, seed: u64) -> Result<QueryParams> {
    let cfg = index.config();
    let params = QueryParams::derive(cfg.proj_dim, search.c, cfg.spaces, 1.0, Some(search.beta))?;
    let r_min = match search.rmin {
        Some(r) => r,
        None => {
            let data = index.dataset();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let picks = sample(&mut rng, data.len(), R_MIN_SAMPLES.min(data.len()));
            let tuning: Vec<&[f32]> = picks.iter().map(|i| data.point(i as PointId)).collect();
            estimate_r_min(index, &tuning, &params, search.k)?
        }
    };
    Ok(params.with_r_min(r_min)?)
}

fn ground_truth(
    path: Option<&Path>,
    data: &Dataset,
    queries: &Dataset,
    k: usize,
    nw: usize,
) -> Result<GroundTruth> {
    match path {
        Some(p) => Ok(GroundTruth::from_ids(&load_ivecs(p)?, data, queries)?),
        None => Ok(compute_ground_truth(data, queries, k, nw.max(1))?),
    }
}

fn build_index(data: Dataset, config: IndexConfig, plan: &WorkerPlan) -> Result<(DetIndex, f64)> {
    let start = Instant::now();
    let index = if plan.workers > 1 {
        DetIndex::build_parallel(data, config, plan)?
    } else {
        DetIndex::build(data, config)?
    };
    Ok((index, start.elapsed().as_micros() as f64 / 1e6))
}

fn build(args: BuildArgs) -> Result<()> {
    let data = load_vectors(&args.data)?;
    let plan = args.parallel.plan()?;
    let n = data.len();
    let (index, secs) = build_index(data, args.index.config(), &plan)?;
    save_index(&index, &args.out)?;
    println!(
        "built index over {n} points in {secs:.6}s with {} workers",
        plan.workers
    );
    Ok(())
}

fn gt(args: GtArgs) -> Result<()> {
    let data = load_vectors(&args.data)?;
    let queries = load_vectors(&args.queries)?;
    let workers = WorkerPlan::new(args.nw, None)?.workers;
    compute_ground_truth(&data, &queries, args.k, workers)?.write_ivecs(&args.out)?;
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let data = load_vectors(&args.data)?;
    let queries = load_vectors(&args.queries)?;
    let plan = args.parallel.plan()?;
    let truth = ground_truth(
        args.gt.as_deref(),
        &data,
        &queries,
        args.search.k,
        plan.workers,
    )?;
    let index = load_index(&args.index, data)?;
    let params = resolve_params(&index, &args.search, index.config().seed)?;
    let records = run_queries(&index, &queries, &truth, args.search.k, &params, &plan)?;
    let mut sink = CsvSink::open(&args.out, false)?;
    sink.write(&records)?;
    sink.finish()
}

fn bench(args: BenchArgs) -> Result<()> {
    let data = load_vectors(&args.data)?;
    let queries = load_vectors(&args.queries)?;
    let plan = args.parallel.plan()?;
    let max_k = args.k.iter().copied().max().unwrap_or(50);
    let truth = ground_truth(args.gt.as_deref(), &data, &queries, max_k, plan.workers)?;
    let shapes: Vec<(usize, usize)> = match args.preset.map(Preset::from) {
        Some(p) => vec![(p.proj_dim(), p.spaces())],
        None => args
            .proj_dim
            .iter()
            .flat_map(|&k| args.spaces.iter().map(move |&l| (k, l)))
            .collect(),
    };
    let mut sink = CsvSink::open(&args.out, true)?;
    for (proj_dim, spaces) in shapes {
        let config = IndexConfig {
            proj_dim,
            spaces,
            regions: args.nr,
            max_leaf: args.max_leaf,
            seed: args.seed,
            sample_size: None,
        };
        let (index, secs) = build_index(data.clone(), config, &plan)?;
        if plan.workers > 1 {
            let (_, t1) = build_index(data.clone(), config, &WorkerPlan::sequential())?;
            eprintln!(
                "K={proj_dim} L={spaces}: build {secs:.6}s, S_{} = {:.2}",
                plan.workers,
                speedup(t1, secs)?
            );
        } else {
            eprintln!("K={proj_dim} L={spaces}: build {secs:.6}s");
        }
        for &k in &args.k {
            for &c in &args.c {
                for &beta in &args.beta {
                    let search = SearchOpts {
                        k,
                        c,
                        beta,
                        rmin: args.rmin,
                    };
                    let params = resolve_params(&index, &search, args.seed)?;
                    sink.write(&run_queries(&index, &queries, &truth, k, &params, &plan)?)?;
                }
            }
        }
    }
    sink.finish()
}

fn selftest() -> Result<()> {
    let failures = detlsh_cli::selftest::run();
    if failures == 0 {
        Ok(())
    } else {
        Err(CliError::Parameter(format!(
            "{failures} self-test check(s) failed"
        )))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Build(a) => build(a),
        Command::Gt(a) => gt(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => bench(a),
        Command::Selftest => selftest(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
