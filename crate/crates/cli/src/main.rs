use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lmp_kbrl::harness::{self, RunSpec};
use lmp_kbrl::{Environment, Error};

/// Run seeded multi-trial experiments comparing LMP exponent-selection
/// methods and write learning curves as CSV.
#[derive(Debug, Parser)]
#[command(name = "lmp-kbrl", version)]
struct Args {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,

    /// Override the number of trials.
    #[arg(long)]
    trials: Option<usize>,

    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, short, default_value = "results")]
    out: PathBuf,

    /// Run only the method with this label; repeatable.
    #[arg(long = "method", value_name = "LABEL")]
    methods: Vec<String>,

    /// Override the number of steps per trial. A change step at or beyond
    /// the new horizon is moved to its midpoint.
    #[arg(long)]
    steps: Option<usize>,

    /// Write only the trial means to the CSV.
    #[arg(long)]
    no_per_trial: bool,

    /// Print the method labels in the config and exit.
    #[arg(long)]
    list_methods: bool,

    /// Write the first trial's data stream (n, o, y, changed) to this file
    /// instead of running the methods.
    #[arg(long, value_name = "FILE")]
    dump_stream: Option<PathBuf>,
}

fn apply_overrides(spec: &mut RunSpec, args: &Args) -> lmp_kbrl::Result<()> {
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.steps {
        spec.experiment.total_steps = n;
        if spec.experiment.change_step >= n {
            let moved = n / 2;
            eprintln!(
                "note: change step {} is past the horizon, moved to {moved}",
                spec.experiment.change_step
            );
            spec.experiment.change_step = moved;
        }
    }
    if args.no_per_trial {
        spec.per_trial = false;
    }
    if !args.methods.is_empty() {
        spec.retain_methods(&args.methods)?;
    }
    spec.validate()
}

fn execute(args: &Args) -> lmp_kbrl::Result<()> {
    let mut spec = RunSpec::load(&args.config)?;
    apply_overrides(&mut spec, args)?;

    if args.list_methods {
        for m in &spec.methods {
            println!("{}", m.label());
        }
        return Ok(());
    }
    if let Some(path) = &args.dump_stream {
        let seed = lmp_kbrl::rng::trial_seed(spec.seed, 0);
        Environment::dump_csv(spec.experiment, seed, spec.experiment.total_steps, path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let started = std::time::Instant::now();
    let output = harness::run(&spec, &args.out)?;
    let total = spec.experiment.total_steps;
    let change = spec.experiment.change_step;
    let tail = total.min(1000);
    println!(
        "{}: {} trials x {} steps (change at {change}) in {:.1}s",
        spec.name,
        spec.trials,
        total,
        started.elapsed().as_secs_f64()
    );
    println!("{:<24} {:>12} {:>12}", "method", "pre-change", "final");
    for curve in &output.curves {
        let pre = if change >= tail {
            format!("{:.2}", curve.window_mean(change - tail..change))
        } else {
            "-".into()
        };
        println!(
            "{:<24} {:>12} {:>12.2}",
            curve.method,
            pre,
            curve.window_mean(total - tail..total)
        );
    }
    println!("wrote {}", output.csv.display());
    for f in &output.rff_files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
