use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use consensus_core::pipeline::{self, ErrorMode, RunConfig};
use consensus_core::synthetic::{Signal, SyntheticSpec};
use consensus_core::{Error, Result};

#[derive(Parser)]
#[command(name = "consensus", version, about = "Bayesian consensus of proxy records and trend credibility maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the consensus posterior and write curves, maps and contributions.
    Analyze(Box<AnalyzeArgs>),
    /// Generate synthetic records from a known signal.
    Simulate(SimulateArgs),
    /// Print the elicited error bound of each record.
    Bounds(BoundsArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV files (record_id,age_bp,age_sd,value).
    #[arg(short, long = "input", num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Rerun the configuration stored in a manifest.json; other flags override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    random_dates: bool,
    /// Pool all observations under one error covariance.
    #[arg(long)]
    extended: bool,
    #[arg(long, value_enum)]
    error_mode: Option<ModeArg>,
    /// Prior scale w for every record.
    #[arg(long)]
    prior_scale: Option<f64>,
    /// Per-record bound as RECORD=VALUE; repeatable.
    #[arg(long, value_parser = parse_bound)]
    sigma_bar: Vec<(String, f64)>,
    /// Bound for records without --sigma-bar (small/custom modes).
    #[arg(long)]
    default_sigma_bar: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    scale_levels: Option<usize>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    time_points: Option<usize>,
    /// Marker levels as comma-separated fractions of the scale grid.
    #[arg(long, value_delimiter = ',')]
    markers: Option<Vec<f64>>,
    #[arg(long)]
    psi_bandwidth: Option<f64>,
    #[arg(long)]
    psi_floor: Option<f64>,
    /// Also write every stored sample to chain.csv.
    #[arg(long)]
    write_chain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Large,
    Small,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignalArg {
    Line,
    Sine,
    TwoSines,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "two-sines")]
    signal: SignalArg,
    #[arg(long, default_value_t = 3)]
    records: usize,
    #[arg(long, default_value_t = 1)]
    cores: usize,
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value_t = 0.2)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0.0)]
    age_min: f64,
    #[arg(long, default_value_t = 10_000.0)]
    age_max: f64,
    #[arg(long, default_value_t = 0.0)]
    dating_sd_young: f64,
    #[arg(long, default_value_t = 0.0)]
    dating_sd_old: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(short, long = "input", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
}

fn parse_bound(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected RECORD=VALUE, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn run_config(a: AnalyzeArgs) -> Result<RunConfig> {
    let mut c = match &a.manifest {
        Some(p) => pipeline::load_manifest(p)?,
        None => RunConfig::default(),
    };
    if !a.inputs.is_empty() {
        c.inputs = a.inputs;
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { c.$field = v; } )* };
    }
    set!(
        out,
        bin_width,
        alpha,
        iterations,
        burn_in,
        thin,
        seed,
        eta,
        beta,
        scale_levels,
        time_points,
        markers,
        psi_floor
    );
    if a.prior_scale.is_some() {
        c.prior_scale = a.prior_scale;
    }
    if a.default_sigma_bar.is_some() {
        c.default_sigma_bar = a.default_sigma_bar;
    }
    if a.lambda_min.is_some() {
        c.lambda_min = a.lambda_min;
    }
    if a.lambda_max.is_some() {
        c.lambda_max = a.lambda_max;
    }
    if a.psi_bandwidth.is_some() {
        c.psi_bandwidth = a.psi_bandwidth;
    }
    if let Some(m) = a.error_mode {
        c.error_mode = match m {
            ModeArg::Large => ErrorMode::Large,
            ModeArg::Small => ErrorMode::Small,
            ModeArg::Custom => ErrorMode::Custom,
        };
    }
    c.sigma_bar.extend(a.sigma_bar);
    c.random_dates |= a.random_dates;
    c.extended |= a.extended;
    c.write_chain |= a.write_chain;
    Ok(c)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let signal = match a.signal {
        SignalArg::Line => Signal::Line { intercept: 0.0, slope: -1e-4 },
        SignalArg::Sine => Signal::Sine { amplitude: 1.0, period: 4000.0, phase: 0.0 },
        SignalArg::TwoSines => Signal::two_sines(),
    };
    let spec = SyntheticSpec {
        signal,
        records: a.records,
        noise_sd: a.noise_sd,
        samples_per_record: a.samples,
        cores: a.cores,
        age_min: a.age_min,
        age_max: a.age_max,
        dating_sd_young: a.dating_sd_young,
        dating_sd_old: a.dating_sd_old,
        seed: a.seed,
    };
    let input = pipeline::simulate_to(&spec, &a.out)?;
    println!("{}", input.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => {
            let config = run_config(*a)?;
            let report = pipeline::analyze(&config)?;
            for f in &report.files {
                println!("{}", f.display());
            }
        }
        Command::Simulate(a) => simulate(a)?,
        Command::Bounds(a) => {
            let records = pipeline::load_inputs(&a.inputs)?;
            println!("record,samples,sigma_bar");
            for (id, j, b) in pipeline::error_bounds(&records)? {
                println!("{id},{j},{b:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
