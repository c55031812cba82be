//! `featprog` — batch workflows over the feature-programming engine, the
//! spin-gas simulator and the evaluation harness.
//!
//! Exit codes: 0 success, 2 usage or program/parse errors, 3 data errors,
//! 4 enumeration capacity exceeded, 5 validation assertion failure.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use featprog::{
    build_joint, check_node_conditionals, default_program, export_features, generate,
    make_synthetic, parse_program, path_probability, one_step_prob, resemble_report,
    resemblance_program, run_comparison, simulate_panel, Error, FeatureProgram, Panel, ParamsFile,
    Resemblance, SpinGasParams, SpinHistory, SyntheticTarget,
};

#[derive(Parser)]
#[command(name = "featprog", version, about = "Programmable time series feature engineering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate features from a panel CSV using a feature program.
    Generate(GenerateArgs),
    /// Print a builtin feature program as JSON.
    Program(ProgramArgs),
    /// Simulate a spin-gas panel and write it as CSV.
    Simulate(SimulateArgs),
    /// Validate the dynamics numerically by exhaustive enumeration.
    Validate(ValidateArgs),
    /// Compare ridge accuracy on basic vs. extended features.
    Evaluate(EvaluateArgs),
    /// Score a customization program against its hand-crafted counterpart.
    Resemble(ResembleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Input panel CSV (optional `time` column + one column per variate).
    #[arg(long)]
    input: PathBuf,
    /// `default` or a path to a program JSON file.
    #[arg(long, default_value = "default")]
    program: String,
    /// Output features CSV.
    #[arg(long)]
    output: PathBuf,
    /// Drop the leading rows consumed by warmup.
    #[arg(long)]
    drop_warmup: bool,
    /// Write the generation report JSON here (defaults to stderr).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ProgramArgs {
    /// `default`, `mom`, `bias` or `absenergy`.
    #[arg(default_value = "default")]
    which: String,
    /// Lookback for the resemblance programs.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    dtau: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dynamics parameters JSON.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_parser = positive_usize)]
    steps: usize,
    /// Seed for the sampling stream (falls back to the params file's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output panel CSV.
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated initial values (defaults to zeros).
    #[arg(long)]
    x0: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dynamics parameters JSON; omit to use seeded random parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Spin count for random parameters (used when --params is absent).
    #[arg(long, value_parser = positive_usize)]
    n: Option<usize>,
    /// Seed for random parameters and histories.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Input panel CSV; mutually exclusive with --synthetic.
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Target panel CSV (defaults to the input panel).
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Use the seeded synthetic dataset instead of files.
    #[arg(long)]
    synthetic: bool,
    /// Variates in the synthetic dataset.
    #[arg(long, default_value_t = 20, value_parser = positive_usize)]
    n: usize,
    /// Length of the synthetic dataset.
    #[arg(long, default_value_t = 2000, value_parser = positive_usize)]
    steps: usize,
    /// Synthetic target: `wstd`, `ewm`, `wstd:12`, ...
    #[arg(long, default_value = "wstd:7")]
    target: String,
    /// Seed for the synthetic dataset (mandatory with --synthetic).
    #[arg(long)]
    seed: Option<u64>,
    /// Extended program: `default` or a JSON path.
    #[arg(long, default_value = "default")]
    program: String,
    /// Basic program: `raw` or a JSON path.
    #[arg(long, default_value = "raw")]
    basic_program: String,
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    /// Write the results JSON here (defaults to stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ResembleArgs {
    /// `mom`, `bias` or `absenergy`.
    #[arg(long)]
    which: Resemblance,
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    dtau: usize,
    /// Input panel CSV.
    #[arg(long)]
    input: PathBuf,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("`{s}` is not an integer"))?;
    if v == 0 {
        return Err("must be >= 1".into());
    }
    Ok(v)
}

enum CliError {
    Usage(String),
    Lib(Error),
    ValidationFailed,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Parse { .. } | Error::Program(_) | Error::Json(_) => 2,
                Error::Capacity(_) => 4,
                _ => 3,
            };
            ExitCode::from(code)
        }
        Err(CliError::ValidationFailed) => {
            eprintln!("error: validation assertions failed");
            ExitCode::from(5)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Program(args) => cmd_program(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Resemble(args) => cmd_resemble(args),
    }
}

fn load_panel(path: &Path) -> Result<Panel, Error> {
    Panel::from_csv(BufReader::new(File::open(path)?))
}

fn load_program(source: &str) -> Result<FeatureProgram, Error> {
    match source {
        "default" => Ok(default_program()),
        "raw" => parse_program(r#"{"orders":[{"order":0,"basic":["raw"]}]}"#),
        path => parse_program(&std::fs::read_to_string(path)?),
    }
}

fn load_params(path: &Path) -> Result<ParamsFile, Error> {
    let text = std::fs::read_to_string(path)?;
    let file: ParamsFile = serde_json::from_str(&text)?;
    file.params.validate()?;
    Ok(file)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let panel = load_panel(&args.input)?;
    let program = load_program(&args.program)?;
    let (matrix, report) = generate(&panel, &program)?;
    let out = File::create(&args.output).map_err(Error::from)?;
    export_features(&matrix, args.drop_warmup, BufWriter::new(out))?;
    let report_json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    match &args.report {
        Some(path) => std::fs::write(path, report_json).map_err(Error::from)?,
        None => eprintln!("{report_json}"),
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(())
}

fn cmd_program(args: ProgramArgs) -> Result<(), CliError> {
    let program = match args.which.as_str() {
        "default" => default_program(),
        other => resemblance_program(other.parse::<Resemblance>()?, args.dtau)?,
    };
    println!("{}", program.to_json());
    Ok(())
}

fn parse_x0(input: Option<&str>, n: usize) -> Result<Vec<f64>, CliError> {
    match input {
        None => Ok(vec![0.0; n]),
        Some(text) => {
            let parsed: Result<Vec<f64>, _> =
                text.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let x0 =
                parsed.map_err(|_| CliError::Usage(format!("bad --x0 value `{text}`")))?;
            if x0.len() != n {
                return Err(CliError::Usage(format!(
                    "--x0 has {} entries, expected {n}",
                    x0.len()
                )));
            }
            Ok(x0)
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let file = load_params(&args.params)?;
    let seed = args
        .seed
        .or(file.seed)
        .ok_or_else(|| CliError::Usage("a seed is required: pass --seed or set it in the params file".into()))?;
    let x0 = parse_x0(args.x0.as_deref(), file.params.n)?;
    // the file's history supplies the two trailing vectors; the current
    // spins at t = 0 stay at the all-up default
    let init = match &file.history {
        Some(h) => Some(SpinHistory::new(vec![1; file.params.n], h.prev.clone(), h.prev2.clone())?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let panel = simulate_panel(&mut rng, &file.params, &x0, args.steps, init)?;
    let out = File::create(&args.output).map_err(Error::from)?;
    panel.to_csv(BufWriter::new(out))?;
    eprintln!(
        "simulated {} variates x {} steps (seed {seed}) -> {}",
        file.params.n,
        args.steps,
        args.output.display()
    );
    Ok(())
}

fn random_validation_params(rng: &mut ChaCha8Rng, n: usize) -> SpinGasParams {
    use rand::Rng;
    let mut p = SpinGasParams::zero(n);
    for i in 0..n {
        p.h[i] = rng.random::<f64>() - 0.5;
        for k in (i + 1)..n {
            let j = rng.random::<f64>() - 0.5;
            p.j[i][k] = j;
            p.j[k][i] = j;
        }
        for k in 0..n {
            p.g1[i][k] = rng.random::<f64>() - 0.5;
            p.g2[i][k] = rng.random::<f64>() - 0.5;
        }
    }
    p
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let (params, history) = match &args.params {
        Some(path) => {
            let file = load_params(path)?;
            let history = file.history.clone();
            (file.params, history)
        }
        None => {
            let n = args.n.unwrap_or(3);
            let seed = args.seed.ok_or_else(|| {
                CliError::Usage("--seed is required when generating random parameters".into())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (random_validation_params(&mut rng, n), None)
        }
    };
    let n = params.n;
    let (prev, prev2) = match &history {
        Some(h) => (h.prev.clone(), h.prev2.clone()),
        None => (vec![1; n], vec![1; n]),
    };

    println!("validating dynamics with N = {n}");
    let mut failed = false;

    // joint distribution checks
    let joint = build_joint(&params, &prev, &prev2)?;
    let mass_err = (joint.total_mass() - 1.0).abs();
    let ok = mass_err < 1e-12;
    failed |= !ok;
    println!("[{}] joint table mass error {mass_err:.2e} (< 1e-12)", verdict(ok));

    let report = check_node_conditionals(&joint);
    let ok = report.max_dev_next_slice < 1e-10;
    failed |= !ok;
    println!(
        "[{}] next-slice conditional deviation {:.2e} (< 1e-10)",
        verdict(ok),
        report.max_dev_next_slice
    );
    if report.field_only {
        let ok = report.max_dev_current_slice < 1e-10;
        failed |= !ok;
        println!(
            "[{}] current-slice conditional deviation {:.2e} (< 1e-10, field-only)",
            verdict(ok),
            report.max_dev_current_slice
        );
    } else {
        println!(
            "[diag] current-slice deviation {:.2e} (reported only; couplings nonzero)",
            report.max_dev_current_slice
        );
    }

    // path-integral checks at L = 3
    let steps = 3;
    let start = vec![1i8; n];
    let mut total = 0.0;
    let mut configs = vec![];
    for mask in 0..1usize << n {
        configs.push((0..n).map(|i| if mask >> i & 1 == 1 { 1i8 } else { -1 }).collect::<Vec<_>>());
    }
    for end in &configs {
        total += path_probability(&params, &start, end, steps, (&prev, &prev2))?;
    }
    let ok = (total - 1.0).abs() < 1e-10;
    failed |= !ok;
    println!(
        "[{}] path endpoint mass error {:.2e} over L = {steps} (< 1e-10)",
        verdict(ok),
        (total - 1.0).abs()
    );

    if params.g1.iter().flatten().all(|&g| g == 0.0)
        && params.g2.iter().flatten().all(|&g| g == 0.0)
    {
        // first-order Markov case: enumeration must match the matrix power
        let m: Vec<Vec<f64>> = configs
            .iter()
            .map(|s| {
                let hist = SpinHistory::new(s.clone(), s.clone(), s.clone()).unwrap();
                configs.iter().map(|e| one_step_prob(&params, &hist, e)).collect()
            })
            .collect();
        let mut power = m.clone();
        for _ in 1..steps {
            power = mat_mul(&power, &m);
        }
        let mut max_dev: f64 = 0.0;
        let from = (1usize << n) - 1; // start = all +1
        for (to, end) in configs.iter().enumerate() {
            let enumerated = path_probability(&params, &start, end, steps, (&prev, &prev2))?;
            max_dev = max_dev.max((enumerated - power[from][to]).abs());
        }
        let ok = max_dev < 1e-10;
        failed |= !ok;
        println!("[{}] matrix-power deviation {max_dev:.2e} (< 1e-10)", verdict(ok));
    } else {
        println!("[skip] matrix-power check (momentum couplings nonzero)");
    }

    if failed {
        return Err(CliError::ValidationFailed);
    }
    println!("all asserted checks passed");
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let basic = load_program(&args.basic_program)?;
    let extended = load_program(&args.program)?;

    let (inputs, targets) = if args.synthetic {
        let seed = args.seed.ok_or_else(|| {
            CliError::Usage("--seed is required with --synthetic".into())
        })?;
        let target: SyntheticTarget = args.target.parse()?;
        let data = make_synthetic(seed, args.n, args.steps, None, target)?;
        (data.inputs, data.targets)
    } else {
        let input = args.input.as_ref().ok_or_else(|| {
            CliError::Usage("pass --input or --synthetic".into())
        })?;
        let inputs = load_panel(input)?;
        let targets = match &args.targets {
            Some(path) => load_panel(path)?,
            None => inputs.clone(),
        };
        (inputs, targets)
    };

    let report = run_comparison(&inputs, &targets, &basic, &extended, args.split, args.lambda)?;
    if report.n_train < extended.feature_count() {
        eprintln!(
            "warning: only {} training rows for {} features",
            report.n_train,
            extended.feature_count()
        );
    }
    eprintln!("{}", report.human_table());
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    match &args.output {
        Some(path) => std::fs::write(path, json).map_err(Error::from)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_resemble(args: ResembleArgs) -> Result<(), CliError> {
    let panel = load_panel(&args.input)?;
    let report = resemble_report(&panel, args.which, args.dtau)?;
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.15}"),
        None => "n/a (constant reference)".into(),
    };
    println!(
        "{} (dtau {}): max abs err {:.3e}, max rel err {:.3e}, r2 {}, pearson {}, {} points",
        report.which,
        report.dtau,
        report.max_abs_err,
        report.max_rel_err,
        fmt_opt(report.r2),
        fmt_opt(report.pearson),
        report.n_compared
    );
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}
