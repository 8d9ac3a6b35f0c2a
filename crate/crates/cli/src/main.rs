use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gabp_mud::detectors::{self, DetectorKind, DetectorSpec};
use gabp_mud::diagnostics::{self, check_diagonal_dominance};
use gabp_mud::io::{self, format_value};
use gabp_mud::montanari::{lockstep, NotationMap};
use gabp_mud::simulator::{self, NoiseModel, Scenario, Spreading, Symbols};
use gabp_mud::{
    gabp, matrix, Clipping, Error, NoiseCovariance, RectangularMatrix, Schedule, SolverConfig,
};

mod config;

use config::{parse_sweep, RunConfig, Sweep};

const MONTANARI_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "gabp-mud",
    version,
    about = "GaBP linear solver and CDMA multiuser detectors"
)]
struct Cli {
    /// Cap on worker threads. Results do not depend on it.
    #[arg(long, global = true, env = "GABP_MUD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve A x = b for a symmetric matrix file and right-hand side file.
    Solve(SolveArgs),
    /// Run one detector on a spreading matrix and an observation.
    Detect(DetectArgs),
    /// Monte Carlo BER simulation from a run config.
    Simulate(SimulateArgs),
    /// Convergence diagnostics for the augmented system of a spreading matrix.
    Diagnose(DiagnoseArgs),
    /// Run the Montanari detector and GaBP side by side and compare messages.
    MontanariEquiv(MontanariArgs),
}

#[derive(Debug, Clone, Default, Args)]
struct SolverFlags {
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// synchronous or sequential
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<Schedule>,
    #[arg(long)]
    damping: Option<f64>,
}

impl SolverFlags {
    fn apply(&self, mut config: SolverConfig) -> SolverConfig {
        if let Some(v) = self.tolerance {
            config.tolerance = v;
        }
        if let Some(v) = self.max_iterations {
            config.max_iterations = v;
        }
        if let Some(v) = self.schedule {
            config.schedule = v;
        }
        if let Some(v) = self.damping {
            config.damping = v;
        }
        config
    }
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    match s {
        "synchronous" => Ok(Schedule::Synchronous),
        "sequential" => Ok(Schedule::Sequential),
        _ => Err(format!(
            "unknown schedule {s:?}; expected synchronous or sequential"
        )),
    }
}

fn parse_clipping(s: &str) -> std::result::Result<Clipping, String> {
    match s {
        "sign" => Ok(Clipping::Sign),
        "identity" => Ok(Clipping::Identity),
        _ => Err(format!("unknown clipping {s:?}; expected sign or identity")),
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    matrix: PathBuf,
    rhs: PathBuf,
    /// Solution file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Add posterior precisions as a second column.
    #[arg(long)]
    precisions: bool,
    /// Print the per-iteration residual history to stderr.
    #[arg(long)]
    residuals: bool,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct DetectArgs {
    spreading: PathBuf,
    observation: PathBuf,
    /// mf, zf, mmse or pinv
    #[arg(long)]
    detector: DetectorKind,
    /// Scalar chip variance or a per-chip vector file. Required for mmse.
    #[arg(long)]
    noise: Option<String>,
    /// sign or identity. Defaults to identity for pinv, sign otherwise.
    #[arg(long, value_parser = parse_clipping)]
    clipping: Option<Clipping>,
    /// Output file with `decision raw` per line; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Run config; the bundled quickstart config when absent.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    chips: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Comma-separated detector list.
    #[arg(long, value_delimiter = ',')]
    detectors: Option<Vec<DetectorKind>>,
    /// Vary one parameter: key=start:stop:steps with key in sigma2, k, n, damping.
    #[arg(long)]
    sweep: Option<String>,
    /// Also write GaBP vs Jacobi iteration counts for each point to baseline.csv.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    spreading: PathBuf,
    /// Scalar chip variance or a per-chip vector file.
    #[arg(long)]
    noise: String,
    /// Margin used when sizing the diagonal-dominance regularization.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct MontanariArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
}

/// Failure classes mapped onto exit codes.
enum Status {
    Converged,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::MontanariEquiv(a) => cmd_montanari_equiv(a),
    };
    match result {
        Ok(Status::Converged) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_algorithmic(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_algorithmic(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::ZeroCavityPrecision { .. }
                | Error::ZeroPosteriorPrecision { .. }
                | Error::NonFiniteMessage { .. }
                | Error::ZeroPrecisionMessage { .. }
        )
    )
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn with_path<T>(path: &Path, r: gabp_mud::Result<T>) -> Result<T> {
    r.map_err(anyhow::Error::from)
        .with_context(|| format!("in {}", path.display()))
}

pub(crate) fn read_rectangular(path: &Path) -> Result<RectangularMatrix> {
    with_path(path, io::parse_rectangular(&read(path)?))
}

fn read_vector(path: &Path) -> Result<gabp_mud::Vector> {
    with_path(path, io::parse_vector(&read(path)?))
}

fn read_noise(spec: &str, chips: usize) -> Result<NoiseCovariance> {
    let noise = match spec.parse::<f64>() {
        Ok(v) => NoiseCovariance::uniform(chips, v)?,
        Err(_) => NoiseCovariance::new(read_vector(Path::new(spec))?.into_inner())?,
    };
    if noise.len() != chips {
        bail!(
            "noise file has {} entries, spreading has {chips} chips",
            noise.len()
        );
    }
    Ok(noise)
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_solve(args: SolveArgs) -> Result<Status> {
    let a = with_path(&args.matrix, io::parse_symmetric(&read(&args.matrix)?))?;
    let b = read_vector(&args.rhs)?;
    let config = args.solver.apply(SolverConfig::default());
    let result = gabp::run(&a, &b, &config)?;
    let text: String = if args.precisions {
        result
            .means
            .iter()
            .zip(result.precisions.iter())
            .map(|(m, p)| format!("{} {}\n", format_value(*m), format_value(*p)))
            .collect()
    } else {
        io::write_vector(&result.means)
    };
    emit(args.output.as_deref(), &text)?;
    eprintln!("iterations: {}", result.iterations);
    eprintln!("converged: {}", result.converged);
    if args.residuals {
        for (i, r) in result.residual_history.iter().enumerate() {
            eprintln!("residual {} {}", i + 1, format_value(*r));
        }
    }
    Ok(if result.converged {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

fn cmd_detect(args: DetectArgs) -> Result<Status> {
    let s = read_rectangular(&args.spreading)?;
    let y = read_vector(&args.observation)?;
    let noise = match (&args.noise, args.detector) {
        (Some(spec), _) => read_noise(spec, s.rows())?,
        (None, DetectorKind::Mmse) => bail!("--noise is required for the mmse detector"),
        (None, _) => NoiseCovariance::uniform(s.rows(), detectors::DEFAULT_ETA)?,
    };
    let clipping = args.clipping.unwrap_or(match args.detector {
        DetectorKind::Pseudoinverse => Clipping::Identity,
        _ => Clipping::Sign,
    });
    let config = args.solver.apply(SolverConfig::default());
    let detection = detectors::detect(
        DetectorSpec::new(args.detector, clipping),
        &s,
        &noise,
        &y,
        &config,
    )?;
    let text: String = detection
        .decisions
        .iter()
        .zip(detection.raw.iter())
        .map(|(d, r)| format!("{} {}\n", format_value(*d), format_value(*r)))
        .collect();
    emit(args.output.as_deref(), &text)?;
    eprintln!("detector: {}", args.detector);
    eprintln!("iterations: {}", detection.iterations());
    eprintln!("converged: {}", detection.converged());
    if args.detector != DetectorKind::MatchedFilter {
        let system_noise = match args.detector {
            DetectorKind::Mmse => noise,
            _ => NoiseCovariance::uniform(s.rows(), detectors::DEFAULT_ETA)?,
        };
        let (dd, margin) = check_diagonal_dominance(&matrix::build_augmented(&s, &system_noise)?);
        eprintln!("diagonally_dominant: {dd}");
        eprintln!("dd_margin: {}", format_value(margin));
    }
    Ok(if detection.converged() {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

fn load_run_config(args: &SimulateArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            RunConfig::parse(&read(path)?).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::parse(config::QUICKSTART)?,
    };
    if let Some(v) = args.seed {
        cfg.scenario.seed = v;
    }
    if let Some(v) = args.frames {
        cfg.scenario.frames = v;
    }
    if let Some(v) = args.users {
        cfg.scenario.users = v;
    }
    if let Some(v) = args.chips {
        cfg.scenario.chips = v;
    }
    if let Some(v) = args.sigma2 {
        cfg.scenario.sigma2 = v;
        cfg.scenario.noise_per_chip = None;
    }
    if let Some(v) = &args.detectors {
        cfg.detectors.kinds = v.clone();
    }
    cfg.solver = args.solver.apply(cfg.solver);
    Ok(cfg)
}

fn cmd_simulate(args: SimulateArgs) -> Result<Status> {
    let base = load_run_config(&args)?;
    let sweep: Option<Sweep> = args.sweep.as_deref().map(parse_sweep).transpose()?;
    let points: Vec<(f64, RunConfig)> = match &sweep {
        Some(s) => s
            .values
            .iter()
            .map(|&v| Ok((v, s.apply(&base, v)?)))
            .collect::<Result<_>>()?,
        None => vec![(0.0, base.clone())],
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;

    let mut rows = Vec::new();
    let mut plot: Vec<(DetectorKind, Vec<(f64, f64)>)> = base
        .detectors
        .kinds
        .iter()
        .map(|&k| (k, Vec::new()))
        .collect();
    let mut baseline = Vec::new();
    for (value, cfg) in &points {
        cfg.solver.validate()?;
        let scenario = cfg.scenario()?;
        let generated = simulator::generate_scenario(&scenario)?;
        let records = simulator::run_trials(&generated, &cfg.detector_specs(), &cfg.solver)?;
        let point_rows =
            simulator::summarize(&scenario.hash(), &records, cfg.scenario.batch_frames);
        for (batch, row) in point_rows.iter().enumerate() {
            let x = if sweep.is_some() {
                *value
            } else {
                (batch / cfg.detectors.kinds.len().max(1)) as f64
            };
            if let Some((_, series)) = plot.iter_mut().find(|(k, _)| *k == row.detector) {
                series.push((x, row.ber));
            }
        }
        rows.extend(point_rows);
        if args.baseline && !generated.noise.diagonal().contains(&0.0) {
            baseline.extend(simulator::compare_with_jacobi(&generated, &cfg.solver)?);
        }
    }

    let csv_path = args.out_dir.join("results.csv");
    let file = fs::File::create(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;
    simulator::write_summary_csv(file, &rows)?;
    let x_label = sweep.as_ref().map_or("batch", |s| s.key.name());
    for (kind, series) in &plot {
        let mut text = format!("# {x_label} ber\n");
        for (x, ber) in series {
            text.push_str(&format!("{} {}\n", format_value(*x), format_value(*ber)));
        }
        let path = args.out_dir.join(format!("ber_{kind}.dat"));
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if args.baseline {
        let path = args.out_dir.join("baseline.csv");
        let file =
            fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        simulator::write_baseline_csv(file, &baseline)?;
    }
    eprintln!("rng: {}", simulator::RNG_ID);
    eprintln!("wrote {} rows to {}", rows.len(), csv_path.display());
    Ok(Status::Converged)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<Status> {
    let s = read_rectangular(&args.spreading)?;
    let noise = read_noise(&args.noise, s.rows())?;
    let r = diagnostics::diagnose(&s, &noise, args.epsilon)?;
    println!("is_diagonally_dominant = {}", r.is_diagonally_dominant);
    println!("dd_margin = {}", format_value(r.dd_margin));
    println!(
        "noise_threshold_satisfied = {}",
        r.noise_threshold_satisfied
    );
    println!(
        "noise_threshold_value = {}",
        format_value(r.noise_threshold_value)
    );
    println!("min_noise = {}", format_value(r.min_noise));
    println!("walk_summable = {}", r.walk_summable);
    println!(
        "spectral_radius_estimate = {}",
        format_value(r.spectral_radius_estimate)
    );
    println!(
        "regularization_total = {}",
        format_value(r.regularization_total)
    );
    println!(
        "regularization_epsilon = {}",
        format_value(r.regularization_epsilon)
    );
    Ok(Status::Converged)
}

fn cmd_montanari_equiv(args: MontanariArgs) -> Result<Status> {
    if args.k == 0 || args.n == 0 {
        bail!("--k and --n must be at least 1");
    }
    if !(args.sigma2 > 0.0 && args.sigma2.is_finite()) {
        bail!("--sigma2 must be positive; the Montanari recursion divides by it");
    }
    let scenario = Scenario {
        users: args.k,
        chips: args.n,
        spreading: Spreading::RandomBinary,
        noise: NoiseModel::Uniform(args.sigma2),
        symbols: Symbols::Binary,
        frames: 1,
        seed: args.seed,
    };
    let generated = simulator::generate_scenario(&scenario)?;
    let sign_data = (0..args.n)
        .flat_map(|a| {
            generated
                .spreading
                .row(a)
                .iter()
                .map(|v| v.signum())
                .collect::<Vec<_>>()
        })
        .collect();
    let signs = RectangularMatrix::new(args.n, args.k, sign_data)?;
    let map = NotationMap::new(&signs, args.sigma2)?;
    let report = lockstep(&map, &generated.frames[0].observation, args.iterations)?;
    let max = report.max_message_discrepancy();
    println!("iterations = {}", args.iterations);
    println!("max_message_discrepancy = {}", format_value(max));
    println!(
        "final_mean_discrepancy = {}",
        format_value(report.final_mean_discrepancy())
    );
    for (i, m) in report.final_means.iter().enumerate() {
        println!("mean {i} = {}", format_value(*m));
    }
    Ok(if max < MONTANARI_TOLERANCE {
        Status::Converged
    } else {
        Status::NotConverged
    })
}
