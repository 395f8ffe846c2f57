//! `wassproj`: batch front end for Wasserstein PCA and regression.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "wassproj", version, about = "Projected PCA and regression for distributions under the 2-Wasserstein metric")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode distributions as monotone quadratic B-spline coefficients.
    Encode {
        /// Distribution CSV (`dist_id,value` or `dist_id,edge_lo,edge_hi,mass`).
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        basis_size: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PCA on a coefficient CSV: projected, global or nested.
    Pca(PcaArgs),
    /// Geodesic PCA (global or nested) on a coefficient CSV.
    GeodesicPca(PcaArgs),
    /// Fit a projected regression, choosing rho by cross-validation.
    Regress {
        /// Predictor distribution CSV; repeat for several predictors.
        #[arg(long = "z", required = true)]
        z: Vec<PathBuf>,
        /// Response distribution CSV.
        #[arg(long = "y")]
        y: PathBuf,
        #[arg(long, default_value_t = 20)]
        basis_size: usize,
        /// Fixed penalty; skips cross-validation.
        #[arg(long, conflicts_with = "rho_grid")]
        rho: Option<f64>,
        /// Comma-separated penalties to cross-validate.
        #[arg(long, value_delimiter = ',')]
        rho_grid: Option<Vec<f64>>,
        /// `loo` or a number of folds.
        #[arg(long, default_value = "loo")]
        folds: String,
        #[arg(long)]
        no_intercept: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a regression model to predictor distributions.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Predictor CSVs (distributions or encoded coefficients), one per model predictor.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise Wasserstein distances between two distribution CSVs.
    Wasserstein {
        a: PathBuf,
        /// Defaults to the first file.
        b: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a simulation scenario.
    Simulate {
        #[arg(value_enum)]
        scenario: ScenarioName,
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Mixture size for dpm and bernstein.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the main pipeline stages on simulated data.
    Bench {
        #[arg(long, default_value_t = 20)]
        basis_size: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct PcaArgs {
    /// Coefficient CSV written by `encode`.
    input: PathBuf,
    /// Number of components.
    #[arg(long)]
    dims: usize,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Expected basis size; checked against the input.
    #[arg(long)]
    basis_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Projected,
    Global,
    Nested,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioName {
    GaussianMix,
    Dpm,
    Bernstein,
    RegWasserstein,
    ConsistencyBeta1,
    ConsistencyBeta2,
    StepQuantile,
}

impl ScenarioName {
    fn as_str(self) -> &'static str {
        match self {
            Self::GaussianMix => "gaussian_mix",
            Self::Dpm => "dpm",
            Self::Bernstein => "bernstein",
            Self::RegWasserstein => "reg_wasserstein",
            Self::ConsistencyBeta1 => "consistency_beta1",
            Self::ConsistencyBeta2 => "consistency_beta2",
            Self::StepQuantile => "step_quantile",
        }
    }
}

fn error_document(err: &anyhow::Error) -> serde_json::Value {
    match err.downcast_ref::<wassproj::Error>() {
        Some(wassproj::Error::Parse { line, message }) => json!({
            "error": "parse",
            "line": line,
            "message": message,
        }),
        Some(e) => json!({ "error": e.kind(), "message": e.to_string() }),
        None if err.downcast_ref::<std::io::Error>().is_some() => json!({ "error": "io", "message": format!("{err:#}") }),
        None => json!({ "error": "invalid-argument", "message": format!("{err:#}") }),
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("WASSPROJ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| anyhow::anyhow!("WASSPROJ_THREADS must be a positive integer, got '{raw}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Encode { input, basis_size, out } => commands::encode(&input, basis_size, out.as_deref()),
        Command::Pca(a) => {
            let method = a.method.unwrap_or(Method::Projected);
            commands::pca(&a.input, a.dims, method, a.basis_size, a.seed, &a.out)
        }
        Command::GeodesicPca(a) => {
            let method = a.method.unwrap_or(Method::Nested);
            if method == Method::Projected {
                anyhow::bail!("geodesic-pca takes --method global or nested");
            }
            commands::pca(&a.input, a.dims, method, a.basis_size, a.seed, &a.out)
        }
        Command::Regress { z, y, basis_size, rho, rho_grid, folds, no_intercept, out } => {
            let folds = commands::parse_folds(&folds)?;
            commands::regress(&z, &y, basis_size, rho, rho_grid, folds, !no_intercept, &out)
        }
        Command::Predict { model, inputs, out } => commands::predict(&model, &inputs, out.as_deref()),
        Command::Wasserstein { a, b, out } => commands::wasserstein(&a, b.as_deref(), out.as_deref()),
        Command::Simulate { scenario, n, k, seed, out } => commands::simulate(scenario.as_str(), n, k, seed, &out),
        Command::Bench { basis_size, n, seed } => commands::bench(basis_size, n, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let doc = json!({ "error": "usage", "message": e.to_string().trim_end() });
            eprintln!("{doc}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed stdout (e.g. piping into `head`) is not a failure.
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_document(&e));
            ExitCode::FAILURE
        }
    }
}
