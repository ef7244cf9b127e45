use clap::{Args, Parser, Subcommand};

use cbmed_cli::{
    resolve, run_estimate, run_simulate, run_tune, run_weights, write_estimate, write_json,
    write_simulate, CliError, ConfigFile,
};

#[derive(Parser)]
#[command(
    name = "cbmed",
    about = "Nonparametric mediation analysis with entropy-calibrated balancing weights",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate direct/indirect effect curves from a CSV dataset.
    Estimate(CommonArgs),
    /// Select sieve dimensions and the kernel bandwidth only.
    Tune(CommonArgs),
    /// Run the Monte Carlo harness on a built-in simulation design.
    Simulate(CommonArgs),
    /// Report calibration-weight diagnostics for a dataset.
    Weights(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    input: Option<String>,
    /// Output path ('-' for stdout).
    #[arg(long)]
    output: Option<String>,
    /// Output format: json or csv.
    #[arg(long)]
    format: Option<String>,
    /// JSON config file; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<String>,

    /// Outcome column name.
    #[arg(long)]
    y: Option<String>,
    /// Treatment column name.
    #[arg(long)]
    t: Option<String>,
    /// Mediator column name(s), comma-separated.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<String>>,
    /// Confounder column name(s), comma-separated.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<String>>,
    /// Treatment kind: continuous, binary, discrete, or mixed[:mass].
    #[arg(long)]
    treatment: Option<String>,

    /// Estimation methods, comma-separated: cbs, cbk, ols, ipw.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    /// Evaluation grid as start:end:step.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Benchmark treatment level t'.
    #[arg(long, allow_hyphen_values = true)]
    tprime: Option<f64>,
    /// Accept grid points far outside the observed treatment range.
    #[arg(long)]
    force_grid: bool,

    /// Override the treatment-basis dimension.
    #[arg(long)]
    k1: Option<usize>,
    /// Override the per-coordinate confounder-basis dimension.
    #[arg(long)]
    kx: Option<usize>,
    /// Override the per-coordinate (mediator, confounder) basis dimension.
    #[arg(long)]
    kmx: Option<usize>,
    /// Override the outcome-basis dimension.
    #[arg(long)]
    k0: Option<usize>,
    /// Bandwidth constant for the kernel estimator.
    #[arg(long)]
    bandwidth_constant: Option<f64>,
    /// Kernel family: epanechnikov2, epanechnikov4, gaussian.
    #[arg(long)]
    kernel: Option<String>,

    /// Bootstrap replicates for confidence bands (0 disables).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Standard errors: auto, plugin, bootstrap, none.
    #[arg(long)]
    se: Option<String>,
    /// RNG seed; every output is deterministic given the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    /// Simulation design: I, II, III, or binary.
    #[arg(long)]
    scenario: Option<String>,
    /// Simulated sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Harness estimators, comma-separated: cbs, cbk, ols, ipw, oracle, truth.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Tune once on a pilot draw instead of per trial.
    #[arg(long)]
    tune_once: bool,
}

impl CommonArgs {
    fn to_config(&self) -> Result<ConfigFile, CliError> {
        let flags = ConfigFile {
            input: self.input.clone(),
            output: self.output.clone(),
            format: self.format.clone(),
            y: self.y.clone(),
            t: self.t.clone(),
            m: self.m.clone(),
            x: self.x.clone(),
            treatment: self.treatment.clone(),
            methods: self.method.clone(),
            grid: self.grid.clone(),
            t_prime: self.tprime,
            k1: self.k1,
            kx: self.kx,
            kmx: self.kmx,
            k0: self.k0,
            bandwidth_constant: self.bandwidth_constant,
            kernel: self.kernel.clone(),
            bootstrap: self.bootstrap,
            se: self.se.clone(),
            seed: self.seed,
            threads: self.threads,
            scenario: self.scenario.clone(),
            n: self.n,
            trials: self.trials,
            estimators: self.estimators.clone(),
            tune_once: if self.tune_once { Some(true) } else { None },
            force_grid: if self.force_grid { Some(true) } else { None },
        };
        let base = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        Ok(flags.merged_over(base))
    }
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Estimate(a) => ("estimate", a),
        Command::Tune(a) => ("tune", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Weights(a) => ("weights", a),
    };
    let cfg = args.to_config()?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let mut resolved = resolve(name, &cfg);
    let output = cfg.output.clone().unwrap_or_else(|| "-".to_string());
    let format = cfg.format.clone().unwrap_or_else(|| "json".to_string());
    match name {
        "estimate" => {
            let out = run_estimate(&cfg, &mut resolved)?;
            write_estimate(&out, &format, &output)?;
        }
        "tune" => {
            let out = run_tune(&cfg, &resolved)?;
            write_json(&out, &output)?;
        }
        "simulate" => {
            let out = run_simulate(&cfg, &resolved)?;
            write_simulate(&out, &format, &output)?;
        }
        "weights" => {
            let out = run_weights(&cfg, &resolved)?;
            write_json(&out, &output)?;
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
