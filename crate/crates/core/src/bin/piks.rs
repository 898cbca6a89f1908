//! Benchmark CLI: simulate coordinated-turn trajectories, run the
//! iterated smoothers over them, and time both engines over a grid of
//! trajectory lengths.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use piks::iterated::{default_workers, run_iterated, Engine, IterationConfig, Method};
use piks::model::{
    read_trajectory_csv, simulate, write_trajectory_csv, CtModel, CtParams, Trajectory,
};
use piks::scan::ScanPlan;
use piks::SymMatrix;

#[derive(Parser)]
#[command(name = "piks", version, about = "Parallel-in-time iterated Kalman smoothers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a coordinated-turn trajectory with bearings-only
    /// measurements and write it as CSV.
    Simulate(SimulateArgs),
    /// Run an iterated smoother over a simulated trajectory and write
    /// per-step smoothed estimates as CSV.
    Run(RunArgs),
    /// Time the methods and engines over a grid of trajectory lengths
    /// and write a runtime CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Step length in seconds.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Velocity spectral density of the process noise.
    #[arg(long, default_value_t = 0.1)]
    q1: f64,
    /// Turn-rate spectral density of the process noise.
    #[arg(long, default_value_t = 0.01)]
    q2: f64,
    /// Bearing noise standard deviation in radians.
    #[arg(long = "r-std", default_value_t = 0.05)]
    r_std: f64,
    /// Sensor position as "x,y"; repeat the flag for more sensors.
    /// Defaults to two sensors at (-1.5, 0.5) and (1, 1).
    #[arg(long = "sensor")]
    sensors: Vec<String>,
    /// Prior mean as "px,py,vx,vy,omega".
    #[arg(long, default_value = "0.1,0.2,1,0,0")]
    m0: String,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of measurement steps (>= 1).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trajectory CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Ieks,
    Ipls,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EngineArg {
    Seq,
    Par,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Ieks => Method::Ieks,
            MethodArg::Ipls => Method::Ipls,
        }
    }
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Engine {
        match e {
            EngineArg::Seq => Engine::Sequential,
            EngineArg::Par => Engine::Parallel,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Input trajectory CSV (from `simulate`).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "par")]
    engine: EngineArg,
    /// Outer relinearization iterations.
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Worker threads for the parallel engine; defaults to
    /// PIKS_WORKERS or the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV of smoothed means and covariance diagonals.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Ascending comma-separated trajectory lengths; defaults to a
    /// log-spaced grid over 10..15000.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated subset of {ieks, ipls}.
    #[arg(long, default_value = "ieks,ipls")]
    methods: String,
    /// Comma-separated subset of {seq, par}.
    #[arg(long, default_value = "seq,par")]
    engines: String,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 1)]
    warmups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

enum CliError {
    Usage(String),
    Failure(piks::Error),
}

impl From<piks::Error> for CliError {
    fn from(e: piks::Error) -> Self {
        CliError::Failure(e)
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match outcome {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

fn build_model(args: &ModelArgs) -> Result<CtModel, CliError> {
    let mut params = CtParams {
        dt: args.dt,
        q1: args.q1,
        q2: args.q2,
        r_std: args.r_std,
        ..CtParams::default()
    };
    if !args.sensors.is_empty() {
        let mut sensors = Vec::with_capacity(args.sensors.len());
        for s in &args.sensors {
            let parts: Vec<&str> = s.split(',').collect();
            let bad = || CliError::Usage(format!("--sensor expects \"x,y\", got {s:?}"));
            if parts.len() != 2 {
                return Err(bad());
            }
            let x: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let y: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            sensors.push([x, y]);
        }
        params.sensors = sensors;
    }
    let entries: Vec<&str> = args.m0.split(',').collect();
    if entries.len() != 5 {
        return Err(CliError::Usage(format!(
            "--m0 expects 5 comma-separated values, got {:?}",
            args.m0
        )));
    }
    let mut prior_mean = DVector::zeros(5);
    for (i, e) in entries.iter().enumerate() {
        prior_mean[i] = e.trim().parse().map_err(|_| {
            CliError::Usage(format!("bad value {e:?} in --m0"))
        })?;
    }
    params.prior_mean = prior_mean;
    params.prior_cov = SymMatrix::scaled_identity(5, 0.1);
    CtModel::new(params).map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".to_string()));
    }
    let model = build_model(&args.model)?;
    let trajectory = simulate(&model, args.n, args.seed)?;
    let file = File::create(&args.out).map_err(piks::Error::from)?;
    write_trajectory_csv(&trajectory, BufWriter::new(file))?;
    println!("seed {} -> {}", args.seed, args.out.display());
    Ok(())
}

fn make_config(
    method: MethodArg,
    engine: EngineArg,
    iterations: usize,
    workers: Option<usize>,
    count_combines: bool,
) -> IterationConfig {
    let workers = workers.unwrap_or_else(default_workers).max(1);
    IterationConfig {
        method: method.into(),
        engine: engine.into(),
        iterations,
        early_stop_tol: None,
        plan: ScanPlan::parallel(workers).counting(count_combines),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    if args.iterations == 0 {
        return Err(CliError::Usage("--iterations must be at least 1".to_string()));
    }
    let model = build_model(&args.model)?;
    let file = File::open(&args.input).map_err(piks::Error::from)?;
    let trajectory = read_trajectory_csv(BufReader::new(file))?;
    let config = make_config(args.method, args.engine, args.iterations, args.workers, false);

    let started = Instant::now();
    let trace = run_iterated(&model, &trajectory.measurements, &config)?;
    let elapsed = started.elapsed();

    write_results_csv(&args.out, &trace.smoothed[1..])?;

    let rmse = position_rmse(&trace.smoothed[1..], &trajectory.states);
    println!(
        "method={:?} engine={:?} n={} iterations={} time={:.3}s rmse_position={:.9e}",
        args.method,
        args.engine,
        trajectory.len(),
        trace.records.len(),
        elapsed.as_secs_f64(),
        rmse
    );
    println!("results -> {}", args.out.display());
    Ok(())
}

fn position_rmse(smoothed: &[piks::GaussianBelief], states: &[DVector<f64>]) -> f64 {
    let mut acc = 0.0;
    for (belief, x) in smoothed.iter().zip(&states[1..]) {
        let dx = belief.mean[0] - x[0];
        let dy = belief.mean[1] - x[1];
        acc += dx * dx + dy * dy;
    }
    (acc / smoothed.len() as f64).sqrt()
}

fn write_results_csv(path: &PathBuf, smoothed: &[piks::GaussianBelief]) -> Result<(), CliError> {
    let file = File::create(path).map_err(piks::Error::from)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "k", "px", "py", "vx", "vy", "omega", "var_px", "var_py", "var_vx", "var_vy", "var_omega",
    ])
    .map_err(piks::Error::from)?;
    for (i, belief) in smoothed.iter().enumerate() {
        let mut record = vec![(i + 1).to_string()];
        record.extend(belief.mean.iter().map(|v| v.to_string()));
        record.extend((0..belief.mean.len()).map(|j| belief.cov[(j, j)].to_string()));
        w.write_record(&record).map_err(piks::Error::from)?;
    }
    w.flush().map_err(piks::Error::from)?;
    Ok(())
}

fn default_grid() -> Vec<usize> {
    // log-spaced over the plotted range 10..1.5e4
    let points = 12usize;
    let (lo, hi) = (10f64.ln(), 15000f64.ln());
    let mut grid: Vec<usize> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

fn parse_grid(arg: &Option<String>) -> Result<Vec<usize>, CliError> {
    let Some(text) = arg else {
        return Ok(default_grid());
    };
    let mut grid = Vec::new();
    for part in text.split(',') {
        let n: usize = part
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad grid entry {part:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("grid entries must be >= 1".to_string()));
        }
        grid.push(n);
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage(
            "grid must be non-empty and strictly ascending".to_string(),
        ));
    }
    Ok(grid)
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let grid = parse_grid(&args.grid)?;
    let methods: Vec<MethodArg> = parse_list(&args.methods, "methods", &[("ieks", MethodArg::Ieks), ("ipls", MethodArg::Ipls)])?;
    let engines: Vec<EngineArg> = parse_list(&args.engines, "engines", &[("seq", EngineArg::Seq), ("par", EngineArg::Par)])?;
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".to_string()));
    }
    let model = build_model(&args.model)?;

    let file = File::create(&args.out).map_err(piks::Error::from)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["n", "method", "engine", "mean_s", "std_s", "combine_calls"])
        .map_err(piks::Error::from)?;

    for &n in &grid {
        let trajectory = simulate(&model, n, args.seed)?;
        for &method in &methods {
            for &engine in &engines {
                let row = bench_cell(&model, &trajectory, method, engine, &args)?;
                w.write_record([
                    n.to_string(),
                    format!("{method:?}").to_lowercase(),
                    format!("{engine:?}").to_lowercase(),
                    format!("{:.6e}", row.0),
                    format!("{:.6e}", row.1),
                    row.2.to_string(),
                ])
                .map_err(piks::Error::from)?;
                eprintln!(
                    "n={n} method={method:?} engine={engine:?} mean={:.4}s std={:.4}s combines={}",
                    row.0, row.1, row.2
                );
            }
        }
    }
    w.flush().map_err(piks::Error::from)?;
    println!("runtimes -> {}", args.out.display());
    Ok(())
}

fn parse_list<T: Copy>(
    text: &str,
    what: &str,
    table: &[(&str, T)],
) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let key = part.trim().to_lowercase();
        match table.iter().find(|(name, _)| *name == key) {
            Some((_, v)) => out.push(*v),
            None => {
                return Err(CliError::Usage(format!("unknown value {part:?} in --{what}")));
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("--{what} must not be empty")));
    }
    Ok(out)
}

/// One benchmark cell: `warmups` untimed runs, then `repeats` timed
/// runs of the full M-iteration smoother. Returns mean and standard
/// deviation of the wall time plus the per-run combine count.
fn bench_cell(
    model: &CtModel,
    trajectory: &Trajectory,
    method: MethodArg,
    engine: EngineArg,
    args: &BenchArgs,
) -> Result<(f64, f64, u64), CliError> {
    let config = make_config(method, engine, args.iterations, args.workers, true);
    let mut combine_calls = 0;
    for _ in 0..args.warmups {
        let trace = run_iterated(model, &trajectory.measurements, &config)?;
        combine_calls = trace.combine_calls;
    }
    let mut times = Vec::with_capacity(args.repeats);
    for _ in 0..args.repeats {
        let started = Instant::now();
        let trace = run_iterated(model, &trajectory.measurements, &config)?;
        times.push(started.elapsed().as_secs_f64());
        combine_calls = trace.combine_calls;
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
        / (times.len().max(2) - 1) as f64;
    Ok((mean, var.sqrt(), combine_calls))
}
