//! `tubeband` command line: fit bands from CSV data, run coverage
//! simulations, and solve tube quantiles standalone.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use tubeband::bands::BandMethod;
use tubeband::lepski::{LepskiConfig, ThresholdMode};
use tubeband::posterior::{Dataset, PriorSpec};
use tubeband::sim::{SimConfig, Truth};

const EXIT_OK: u8 = 0;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "tubeband", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an adaptive credible band to `x,y` CSV data.
    Fit(FitArgs),
    /// Run the Monte Carlo coverage study.
    Simulate(SimulateArgs),
    /// Solve the tube quantile equation for given arc length and gamma.
    Quantile(QuantileArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with header `x,y`, x in [0, 1].
    input: PathBuf,
    /// Credibility parameter: the band has posterior mass >= 1 - gamma.
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    /// Output prefix: writes <out>.csv and <out>.json.
    #[arg(long, default_value = "band")]
    out: PathBuf,
    /// Spline order (4 = cubic).
    #[arg(long, default_value_t = 4)]
    q: usize,
    /// Prior variance per coefficient (Omega = v I).
    #[arg(long, default_value_t = 10.0)]
    prior_variance: f64,
    /// Stopping-rule constant.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Evaluation grid size.
    #[arg(long, default_value_t = 512)]
    grid_size: usize,
    /// Threshold mode: practical or asymptotic.
    #[arg(long, default_value = "practical")]
    threshold_mode: String,
    /// Override the smallest candidate dimension.
    #[arg(long)]
    j_min: Option<usize>,
    /// Override the largest candidate dimension.
    #[arg(long)]
    j_max: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sample size; repeat the flag for several columns in the output table.
    #[arg(long = "n", required = true)]
    n: Vec<usize>,
    /// Monte Carlo replicates per sample size.
    #[arg(long, default_value_t = 300)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of bayes-lepski,frequentist,fixed-radius.
    #[arg(long, default_value = "bayes-lepski,frequentist,fixed-radius")]
    methods: String,
    /// Output prefix: writes <out>.json and <out>.csv.
    #[arg(long, default_value = "simulation")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results are worker-independent.
    #[arg(long)]
    workers: Option<usize>,
    /// Posterior draws for the fixed-radius comparator.
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    /// Noise variance of the data-generating process.
    #[arg(long, default_value_t = 0.1)]
    sigma0_sq: f64,
    /// Keep the per-replicate log in the JSON report.
    #[arg(long, default_value_t = false)]
    log_replicates: bool,
}

#[derive(Args)]
struct QuantileArgs {
    /// Arc length |beta| of the standardized curve.
    #[arg(long)]
    arc: f64,
    /// Credibility parameter in (0, 1].
    #[arg(long)]
    gamma: f64,
}

/// Provenance block embedded in (or accompanying) every artifact.
/// Wall-clock duration is printed, not persisted, so reruns stay
/// byte-identical.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    seed: Option<u64>,
    parameters: serde_json::Value,
    input: Option<String>,
    outputs: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("TUBEBAND_LOG")
            .default_filter_or("error"),
    )
    .init();
    let cli = Cli::parse();
    let started = Instant::now();
    let code = match &cli.command {
        Command::Fit(args) => cmd_fit(args, started),
        Command::Simulate(args) => cmd_simulate(args, started),
        Command::Quantile(args) => cmd_quantile(args),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Maps library errors onto the documented exit codes: bad input or
/// configuration is 2, numerical failure is 3.
fn classify(e: &tubeband::Error) -> u8 {
    use tubeband::Error::*;
    match e {
        NotPositiveDefinite { .. } | NumericalDegeneracy(_) => EXIT_NUMERICAL,
        _ => EXIT_BAD_INPUT,
    }
}

fn read_xy_csv(path: &Path) -> Result<Dataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| format!("cannot read header: {e}"))?;
        if headers.len() < 2 || headers[0].to_lowercase() != "x" || headers[1].to_lowercase() != "y"
        {
            return Err(format!(
                "expected header `x,y`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("row {}: {e}", line + 2))?;
        let x: f64 = record[0]
            .parse()
            .map_err(|e| format!("row {}: bad x ({e})", line + 2))?;
        let y: f64 = record[1]
            .parse()
            .map_err(|e| format!("row {}: bad y ({e})", line + 2))?;
        xs.push(x);
        ys.push(y);
    }
    Dataset::new(xs, ys).map_err(|e| e.to_string())
}

fn cmd_fit(args: &FitArgs, started: Instant) -> Result<u8, tubeband::Error> {
    if !(args.gamma > 0.0 && args.gamma < 1.0) {
        eprintln!(
            "error: --gamma {} must lie in (0, 1)\nusage: tubeband fit <INPUT> --gamma <G> --out <PREFIX>",
            args.gamma
        );
        return Ok(EXIT_BAD_INPUT);
    }
    let data = match read_xy_csv(&args.input) {
        Ok(d) => d,
        Err(msg) => {
            eprintln!("error: malformed input: {msg}");
            return Ok(EXIT_BAD_INPUT);
        }
    };
    let mode = match args.threshold_mode.as_str() {
        "practical" => ThresholdMode::Practical,
        "asymptotic" => ThresholdMode::Asymptotic,
        other => {
            eprintln!("error: unknown threshold mode `{other}`");
            return Ok(EXIT_BAD_INPUT);
        }
    };
    let mut cfg = LepskiConfig::for_sample_size_with_order(data.len(), args.q);
    cfg.tau = args.tau;
    cfg.grid_size = args.grid_size;
    cfg.threshold_mode = mode;
    if let Some(j) = args.j_min {
        cfg.j_min = j;
    }
    if let Some(j) = args.j_max {
        cfg.j_max = j;
    }
    if args.prior_variance <= 0.0 {
        eprintln!("error: --prior-variance must be positive");
        return Ok(EXIT_BAD_INPUT);
    }
    let prior = PriorSpec::with_scalar_precision(1.0 / args.prior_variance);

    let (band, trace) = tubeband::bands::credible_band(&data, args.gamma, &cfg, &prior)?;

    let csv_path = args.out.with_extension("csv");
    let json_path = args.out.with_extension("json");
    let manifest = RunManifest {
        tool: "tubeband",
        version: tubeband::VERSION,
        subcommand: "fit",
        seed: None,
        parameters: serde_json::json!({
            "gamma": args.gamma,
            "q": args.q,
            "prior_variance": args.prior_variance,
            "tau": args.tau,
            "grid_size": args.grid_size,
            "threshold_mode": args.threshold_mode,
            "j_min": cfg.j_min,
            "j_max": cfg.j_max,
            "n": data.len(),
        }),
        input: Some(args.input.display().to_string()),
        outputs: vec![
            csv_path.display().to_string(),
            json_path.display().to_string(),
        ],
    };
    let metadata = serde_json::json!({
        "manifest": manifest,
        "selected_j": band.selected_j,
        "sigma_hat": band.sigma_hat,
        "quantile_w": band.quantile_w,
        "arc_length": band.arc_length,
        "gamma": args.gamma,
        "trace": {
            "selected": trace.selected,
            "stop_reason": trace.stop_reason,
            "threshold_mode": trace.threshold_mode,
            "practical_log_index": trace.practical_log_index,
            "candidates_fitted": trace.candidates.len(),
            "comparisons": trace.comparisons.len(),
        },
    });
    std::fs::write(&csv_path, band.to_csv()).map_err(io_err)?;
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&metadata).expect("serializable") + "\n",
    )
    .map_err(io_err)?;
    println!(
        "fit: n={} jhat={} sigma={:.4} w={:.4} arc={:.3} gamma={} -> {}, {} ({:.2}s)",
        data.len(),
        band.selected_j,
        band.sigma_hat,
        band.quantile_w,
        band.arc_length,
        args.gamma,
        csv_path.display(),
        json_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

fn parse_methods(spec: &str) -> Result<Vec<BandMethod>, tubeband::Error> {
    spec.split(',')
        .map(|tok| tok.trim().parse::<BandMethod>())
        .collect()
}

fn cmd_simulate(args: &SimulateArgs, started: Instant) -> Result<u8, tubeband::Error> {
    if args.reps == 0 {
        eprintln!("error: --reps must be at least 1");
        return Ok(EXIT_BAD_INPUT);
    }
    if !(args.gamma > 0.0 && args.gamma < 1.0) {
        eprintln!("error: --gamma {} must lie in (0, 1)", args.gamma);
        return Ok(EXIT_BAD_INPUT);
    }
    let methods = match parse_methods(&args.methods) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_BAD_INPUT);
        }
    };

    let mut reports = Vec::with_capacity(args.n.len());
    for &n in &args.n {
        let cfg = SimConfig {
            n,
            reps: args.reps,
            gamma: args.gamma,
            sigma0_sq: args.sigma0_sq,
            truth: Truth::PaperDefault,
            methods: methods.clone(),
            seed: args.seed,
            desk_scale: args.reps <= 300,
            fixed_radius_draws: args.draws,
            record_replicates: args.log_replicates,
        };
        log::info!("simulate: n={n} reps={} seed={}", args.reps, args.seed);
        let report = run_with_workers(&cfg, args.workers)?;
        for m in &report.methods {
            log::info!(
                "  {}: coverage={:.4} mean_radius={:.4} mean_j={:.1} failures={}",
                m.method.name(),
                m.coverage,
                m.mean_radius,
                m.mean_selected_j,
                m.failures
            );
        }
        reports.push(report);
    }

    let json_path = args.out.with_extension("json");
    let csv_path = args.out.with_extension("csv");
    let manifest = RunManifest {
        tool: "tubeband",
        version: tubeband::VERSION,
        subcommand: "simulate",
        seed: Some(args.seed),
        parameters: serde_json::json!({
            "n": args.n,
            "reps": args.reps,
            "gamma": args.gamma,
            "sigma0_sq": args.sigma0_sq,
            "methods": args.methods,
            "draws": args.draws,
        }),
        input: None,
        outputs: vec![
            json_path.display().to_string(),
            csv_path.display().to_string(),
        ],
    };
    let doc = serde_json::json!({
        "manifest": manifest,
        "reports": reports,
    });
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n",
    )
    .map_err(io_err)?;
    std::fs::write(&csv_path, tubeband::sim::coverage_table_csv(&reports)).map_err(io_err)?;

    for report in &reports {
        for m in &report.methods {
            println!(
                "simulate: n={} {} coverage={:.4} (se {:.4}) mean_radius={:.4} mean_j={:.1} failures={}",
                report.config.n,
                m.method.name(),
                m.coverage,
                m.coverage_se,
                m.mean_radius,
                m.mean_selected_j,
                m.failures
            );
        }
    }
    println!(
        "simulate: wrote {} and {} ({:.2}s)",
        json_path.display(),
        csv_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(EXIT_OK)
}

#[cfg(feature = "parallel")]
fn run_with_workers(
    cfg: &SimConfig,
    workers: Option<usize>,
) -> Result<tubeband::SimulationReport, tubeband::Error> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| tubeband::Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| tubeband::sim::run(cfg))
        }
        None => tubeband::sim::run(cfg),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_workers(
    cfg: &SimConfig,
    workers: Option<usize>,
) -> Result<tubeband::SimulationReport, tubeband::Error> {
    if let Some(k) = workers {
        if k > 1 {
            log::warn!("built without the `parallel` feature; --workers {k} ignored");
        }
    }
    tubeband::sim::run(cfg)
}

/// Formats to 12 significant digits without scientific notation.
fn significant_digits(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn cmd_quantile(args: &QuantileArgs) -> Result<u8, tubeband::Error> {
    let q = tubeband::solve_quantile(args.arc, args.gamma)?;
    println!("{}", significant_digits(q.w, 12));
    Ok(EXIT_OK)
}

fn io_err(e: std::io::Error) -> tubeband::Error {
    tubeband::Error::InvalidConfig(format!("io: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(significant_digits(1.959963984540054, 12), "1.95996398454");
        assert_eq!(significant_digits(0.0, 12), "0");
        assert_eq!(significant_digits(123.456789, 5), "123.46");
        assert_eq!(significant_digits(0.000123456, 3), "0.000123");
    }

    #[test]
    fn method_list_parsing() {
        let ms = parse_methods("bayes-lepski,fixed-radius").unwrap();
        assert_eq!(ms.len(), 2);
        assert!(parse_methods("nonsense").is_err());
    }
}
