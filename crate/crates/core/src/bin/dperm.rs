use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dperm::bench::{self, PreparedExperiment};
use dperm::{
    calibrate_sigma, oracle_optimum, verify_calibration, CalibrationInputs, ExperimentSpec,
    OutputFormat, PrivacyParams, Regime,
};

#[derive(Parser)]
#[command(
    name = "dperm",
    version,
    about = "Private ERM by input perturbation, with baselines and sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep described by a spec file.
    Run(RunArgs),
    /// Print the calibrated input-perturbation variance.
    Calibrate(CalibrateArgs),
    /// Calibrate, then audit the result with the moments accountant.
    VerifyPrivacy(VerifyArgs),
    /// Solve the non-private problem of a spec file to high accuracy.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output file. Defaults to the spec's `output`, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    steps: u64,
    /// Number of training rows.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    /// Strong convexity modulus. Omit for the PL form.
    #[arg(long)]
    modulus: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    calibration: CalibrateArgs,
    #[arg(long, default_value_t = 1.0)]
    curvature_floor: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn scale_of(a: &CalibrateArgs) -> dperm::Result<(PrivacyParams, dperm::NoiseScale)> {
    let params = PrivacyParams::new(a.epsilon, a.delta)?;
    let regime = match a.modulus {
        Some(modulus) => Regime::StronglyConvex { modulus },
        None => Regime::Pl,
    };
    Ok((
        params,
        calibrate_sigma(params, a.steps, a.n, a.lipschitz, regime, a.c)?,
    ))
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

fn run(args: RunArgs) -> dperm::Result<ExitCode> {
    let mut spec = ExperimentSpec::from_file(&args.spec)?;
    if let Some(w) = args.workers {
        spec.workers = w;
    }
    if let Some(s) = args.seed {
        spec.base_seed = s;
    }
    if let Some(f) = args.format {
        spec.format = f.into();
    }
    let out = args.out.or_else(|| spec.output.clone());
    let prepared = PreparedExperiment::new(spec)?;
    eprintln!(
        "n_train={} n_test={} delta={:e} steps={} learning_rate={} L*={:.6}",
        prepared.train.len(),
        prepared.test.len(),
        prepared.delta,
        prepared.tuning.steps,
        prepared.tuning.learning_rate,
        prepared.l_star
    );
    let table = prepared.run()?;
    match out {
        Some(path) => bench::emit(&table, prepared.spec.format, &path)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match prepared.spec.format {
                OutputFormat::Csv => bench::write_csv(&table, &mut lock)?,
                OutputFormat::Json => bench::write_json(&table, &mut lock)?,
            }
            let _ = writeln!(lock);
        }
    }
    eprint!("{table}");
    for row in table.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "error in {} eps={:?} seed={}: {}",
            row.mechanism,
            row.epsilon,
            row.seed,
            row.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if table.any_errors() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn dispatch(cli: Cli) -> dperm::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Calibrate(args) => {
            let (_, scale) = scale_of(&args)?;
            print_json(
                &json!({ "sigma_sq": scale.sigma_sq, "sigma": scale.sigma(), "scale": scale }),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyPrivacy(args) => {
            let (params, scale) = scale_of(&args.calibration)?;
            let inputs = CalibrationInputs {
                curvature_floor: args.curvature_floor,
            };
            let report = verify_calibration(&params, &scale, &inputs)?;
            print_json(&json!({
                "sigma_sq": scale.sigma_sq,
                "report": report,
                "consistent_c": inputs.consistent_c(),
            }));
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Oracle(args) => {
            let mut spec = ExperimentSpec::from_file(&args.spec)?;
            if let Some(s) = args.seed {
                spec.base_seed = s;
            }
            let prepared = PreparedExperiment::new(spec)?;
            let sol = oracle_optimum(
                &prepared.train,
                &prepared.loss,
                prepared.spec.oracle_tolerance,
            )?;
            print_json(&json!({
                "value": sol.value,
                "grad_norm": sol.grad_norm,
                "iterations": sol.iterations,
                "certified_gap": sol.certified_gap,
                "theta": sol.params.theta().to_vec(),
            }));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
