use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qcp_cli::error::{CliError, CliResult};
use qcp_cli::pipeline::{run, Overrides, RunOptions, Stage};
use qcp_cli::{load_scenario, output_dir, presets, OUT_ENV};

#[derive(Parser)]
#[command(name = "qcp", version, about = "Quenched compound-Poisson return-time statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the sufficient conditions (F1)-(F9).
    Check(RunArgs),
    /// Exact cluster tables at finite n and in the limit.
    Beta(RunArgs),
    /// Extremal index θ(s) from the cluster table and from the model.
    Theta(RunArgs),
    /// Twisted transfer-operator multipliers.
    Spectral(RunArgs),
    /// Limiting pmf by Lévy inversion, Panjer recursion and closed form.
    Pmf(RunArgs),
    /// Monte Carlo hit counts.
    Simulate(RunArgs),
    /// Simulation against the limiting law.
    Compare(RunArgs),
    /// Every stage in dependency order.
    All(RunArgs),
    /// List the built-in scenarios.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a preset.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: $QCP_OUT/<scenario> or qcp-runs/<scenario>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    samples: Option<u64>,
    /// Comma-separated s values.
    #[arg(long, value_delimiter = ',')]
    sgrid: Option<Vec<f64>>,
    #[arg(long)]
    tv_threshold: Option<f64>,
}

fn execute(stage: Stage, args: RunArgs) -> CliResult<()> {
    let mut scenario = load_scenario(&args.scenario)?;
    Overrides {
        seed: args.seed,
        n: args.n,
        samples: args.samples,
        s_grid: args.sgrid,
        tv_threshold: args.tv_threshold,
    }
    .apply(&mut scenario);
    let env_root = std::env::var(OUT_ENV).ok();
    let opts = RunOptions {
        out_dir: output_dir(args.out.as_deref(), env_root.as_deref(), &scenario.name),
        workers: args
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    };
    let outcome = run(stage, &scenario, &opts);
    let manifest = match &outcome {
        Ok(o) => Some(&o.manifest),
        Err(_) => None,
    };
    if let Some(m) = manifest {
        if let Some(report) = &m.check {
            print!("{report}");
        }
        for w in &m.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(c) = &m.compare {
            println!(
                "total variation {:.6} (threshold {}), sup CF distance {:.6}",
                c.total_variation, c.threshold, c.sup_cf_distance
            );
        }
        println!("wrote {} files to {}", m.files.len(), opts.out_dir.display());
    }
    outcome.map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let err = CliError::Config(e.to_string());
                eprint!("{e}");
                eprintln!("{}", err.reason_line());
                return ExitCode::from(2);
            }
            e.exit();
        }
    };
    let stage = match cli.command {
        Command::Presets => {
            for p in presets::list_presets() {
                println!("{:<24} {:<52} {}", p.name, p.law, p.description);
            }
            return ExitCode::SUCCESS;
        }
        Command::Check(a) => (Stage::Check, a),
        Command::Beta(a) => (Stage::Beta, a),
        Command::Theta(a) => (Stage::Theta, a),
        Command::Spectral(a) => (Stage::Spectral, a),
        Command::Pmf(a) => (Stage::Pmf, a),
        Command::Simulate(a) => (Stage::Simulate, a),
        Command::Compare(a) => (Stage::Compare, a),
        Command::All(a) => (Stage::All, a),
    };
    match execute(stage.0, stage.1) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.reason_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
