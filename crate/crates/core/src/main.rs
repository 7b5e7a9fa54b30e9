use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use tvbo_core::harness::{
    aggregate, emit, load_config, posterior_dump, to_toml, write_posterior_dump, AggregateRow,
    BanditExperimentConfig, BoExperimentConfig, OutputFormat,
};
use tvbo_core::tuner::{self, TunerInit};
use tvbo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tvbo", version, about = "Time-varying Bayesian optimization with costly feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML experiment file; omitted keys take their defaults
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Number of trials (overrides the config)
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Skip the per-round CSVs
    #[arg(long)]
    no_rounds: bool,
    /// Worker threads (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Both => OutputFormat::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Bo,
    Bandit,
    Tuner,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic time-varying BO benchmark (epsilon x policy sweep)
    SynthBo(RunArgs),
    /// Three-arm time-varying bandit benchmark
    SynthBandit(RunArgs),
    /// Posterior snapshots of a single BO trial
    PosteriorDump {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "posterior")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.03)]
        epsilon: f64,
        /// Policy cell label, e.g. CE-GP-UCB, TV-GP-UCB, TV-GP-UCB-Ber
        #[arg(long, default_value = "CE-GP-UCB")]
        policy: String,
        /// Cell parameter (kappa or Bernoulli rate)
        #[arg(long)]
        param: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Rounds to snapshot, comma separated
        #[arg(long, value_delimiter = ',', default_value = "1,100,250,500")]
        rounds: Vec<u64>,
    },
    /// Print the default configuration as TOML
    PrintConfig {
        #[arg(value_enum, default_value = "bo")]
        kind: ConfigKind,
    },
    /// Serve the suggest/observe protocol as NDJSON over stdin/stdout
    Tune,
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // only fails if a pool already exists, which is harmless here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn print_summary(rows: &[AggregateRow]) {
    eprintln!(
        "{:<16} {:>7} {:>8} {:>18} {:>16} {:>5}",
        "policy", "param", "epsilon", "R_T/T", "C_T", "fail"
    );
    for r in rows {
        let p = r.param.map(|v| v.to_string()).unwrap_or_default();
        let e = r.epsilon.map(|v| v.to_string()).unwrap_or_default();
        eprintln!(
            "{:<16} {:>7} {:>8} {:>9.4} ± {:<6.4} {:>7.1} ± {:<6.1} {:>5}",
            r.policy, p, e, r.mean_avg_regret, r.std_avg_regret, r.mean_cost, r.std_cost, r.failures
        );
    }
}

fn synth_bo(args: RunArgs) -> Result<()> {
    let mut cfg: BoExperimentConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => BoExperimentConfig::default(),
    };
    if let Some(o) = args.out {
        cfg.output.dir = o;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(f) = args.format {
        cfg.output.format = f.into();
    }
    if args.no_rounds {
        cfg.output.rounds = false;
    }
    configure_threads(args.threads);
    let start = Instant::now();
    let records = cfg.run()?;
    let report = aggregate(&records);
    emit(&records, &report, &cfg.output.dir, cfg.output.format, cfg.output.rounds)?;
    print_summary(&report.rows);
    eprintln!("wrote {} in {:.1?}", cfg.output.dir.display(), start.elapsed());
    Ok(())
}

fn synth_bandit(args: RunArgs) -> Result<()> {
    let mut cfg: BanditExperimentConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => BanditExperimentConfig::default(),
    };
    if let Some(o) = args.out {
        cfg.output.dir = o;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(f) = args.format {
        cfg.output.format = f.into();
    }
    if args.no_rounds {
        cfg.output.rounds = false;
    }
    configure_threads(args.threads);
    let start = Instant::now();
    for (name, records) in cfg.run()? {
        let report = aggregate(&records);
        let dir = cfg.output.dir.join(&name);
        emit(&records, &report, &dir, cfg.output.format, cfg.output.rounds)?;
        eprintln!("== {name}");
        print_summary(&report.rows);
    }
    eprintln!("wrote {} in {:.1?}", cfg.output.dir.display(), start.elapsed());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn dump(
    config: Option<PathBuf>,
    out: PathBuf,
    epsilon: f64,
    policy: String,
    param: Option<f64>,
    trial: usize,
    rounds: Vec<u64>,
) -> Result<()> {
    let cfg: BoExperimentConfig = match &config {
        Some(p) => load_config(p)?,
        None => BoExperimentConfig::default(),
    };
    let cells = cfg.cells();
    let cell = cells
        .iter()
        .find(|c| c.label() == policy && (param.is_none() || c.param == param))
        .ok_or_else(|| Error::Config(format!("no policy cell {policy} {param:?} in the configuration")))?;
    let dump = posterior_dump(&cfg, cell, epsilon, trial, &rounds)?;
    let domain = tvbo_core::Domain::unit_grid(cfg.grid_size)?;
    write_posterior_dump(&dump, &domain, &out)?;
    eprintln!(
        "{} trial {trial}: R_T/T = {:.4}, C_T = {}; wrote {}",
        policy,
        dump.record.avg_regret(),
        dump.record.cost,
        out.display()
    );
    Ok(())
}

fn print_config(kind: ConfigKind) -> Result<()> {
    let text = match kind {
        ConfigKind::Bo => to_toml(&BoExperimentConfig::default())?,
        ConfigKind::Bandit => to_toml(&BanditExperimentConfig::default())?,
        ConfigKind::Tuner => serde_json::to_string_pretty(&TunerInit::default())
            .map_err(|e| Error::Config(e.to_string()))?,
    };
    println!("{text}");
    Ok(())
}

fn tune() -> Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    tuner::serve(stdin.lock(), &mut out).map_err(|e| Error::io("<stdio>", e))?;
    out.flush().map_err(|e| Error::io("<stdout>", e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthBo(a) => synth_bo(a),
        Command::SynthBandit(a) => synth_bandit(a),
        Command::PosteriorDump {
            config,
            out,
            epsilon,
            policy,
            param,
            trial,
            rounds,
        } => dump(config, out, epsilon, policy, param, trial, rounds),
        Command::PrintConfig { kind } => print_config(kind),
        Command::Tune => tune(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
