use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kmaxband::harness::{
    emit, run_experiment, summarize, sweep_configs, ExperimentConfig, RunOptions, DEFAULT_BURN_IN, OUT_DIR_ENV, SCHEMA,
};
use kmaxband::verify::{suite_concentration, suite_lemmas, suite_mle, suite_oracle, Check, Scale};

#[derive(Parser)]
#[command(
    name = "kmaxband",
    version,
    about = "Simulate and check continuous K-Max and exponential K-Min bandits"
)]
struct Cli {
    /// Print the experiment config schema and exit.
    #[arg(long)]
    print_schema: bool,

    /// Default output directory when the config does not set one.
    #[arg(long, env = OUT_DIR_ENV, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV and JSON artifacts.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Also write the learner state per seed.
        #[arg(long)]
        dump_state: bool,
        /// Add reward and learner diagnostics to the CSV.
        #[arg(long)]
        diagnostics: bool,
        /// Override the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`; dotted keys reach into tables.
        #[arg(long)]
        vary: String,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run a property suite and report pass/fail with margins.
    Verify {
        suite: Suite,
        /// Use the full acceptance sample sizes.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Lemmas,
    Oracle,
    Concentration,
    Mle,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if cli.print_schema {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(2);
    };
    match run(command, cli.out_dir) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, out_dir: Option<PathBuf>) -> kmaxband::Result<bool> {
    match command {
        Command::Simulate {
            config,
            dump_state,
            diagnostics,
            workers,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let opts = RunOptions {
                diagnostics,
                dump_state,
                workers,
            };
            simulate(&cfg, opts, out_dir.as_ref())?;
            Ok(true)
        }
        Command::Sweep { config, vary, workers } => {
            let text = std::fs::read_to_string(&config).map_err(|e| kmaxband::Error::Io {
                path: config.clone(),
                source: e,
            })?;
            let (key, values) = vary
                .split_once('=')
                .ok_or_else(|| kmaxband::Error::Config(format!("--vary expects key=v1,v2,..., got `{vary}`")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let opts = RunOptions {
                workers,
                ..RunOptions::default()
            };
            for (_, cfg) in sweep_configs(&text, key, &values)? {
                simulate(&cfg, opts, out_dir.as_ref())?;
            }
            Ok(true)
        }
        Command::Verify { suite, full } => {
            let scale = if full { Scale::Full } else { Scale::Quick };
            let checks: Vec<Check> = match suite {
                Suite::Lemmas => suite_lemmas(scale)?,
                Suite::Oracle => suite_oracle(scale)?,
                Suite::Concentration => suite_concentration(scale)?,
                Suite::Mle => suite_mle(scale)?,
            };
            for c in &checks {
                println!("{}", c.line());
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn simulate(cfg: &ExperimentConfig, opts: RunOptions, out_dir: Option<&PathBuf>) -> kmaxband::Result<()> {
    let traces = run_experiment(cfg, opts)?;
    let dir = cfg
        .output
        .dir
        .clone()
        .or_else(|| out_dir.cloned())
        .unwrap_or_else(|| cfg.out_dir());
    let artifacts = emit(&traces, &dir, &cfg.stem())?;
    let summary = summarize(&traces, DEFAULT_BURN_IN)?;
    println!(
        "{}: mean final regret {:.4} (std {:.4}) over {} seeds; exponent {}",
        cfg.stem(),
        summary.mean_final_regret,
        summary.std_final_regret,
        summary.seeds.len(),
        summary
            .mean_curve_exponent
            .map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}")),
    );
    println!("wrote {}", artifacts.csv.display());
    Ok(())
}
