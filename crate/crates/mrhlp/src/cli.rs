//! Command-line surface: `fit`, `segment`, `simulate`, `select`, `eval`
//! and `plot` subcommands over the CSV/JSON formats of [`crate::io`].
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::em::{self, EmOptions, InitStrategy};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{Hyperparams, ParamCountMode};
use crate::plot;
use crate::segmentation;
use crate::selection::{self, SelectionGrid};
use crate::simulate;

#[derive(Parser)]
#[command(
    name = "mrhlp",
    version,
    about = "Joint segmentation of multivariate time series by hidden logistic process regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset and write the model document.
    Fit(FitArgs),
    /// Segment a CSV dataset with a fitted model.
    Segment(SegmentArgs),
    /// Sample a labeled dataset from a model spec.
    Simulate(SimulateArgs),
    /// Fit a hyperparameter grid and rank the cells by BIC.
    Select(SelectArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Render channels and regime probabilities as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InitFlag {
    ContiguousRandom,
    KmeansTimeWindows,
}

impl From<InitFlag> for InitStrategy {
    fn from(f: InitFlag) -> Self {
        match f {
            InitFlag::ContiguousRandom => InitStrategy::ContiguousRandom,
            InitFlag::KmeansTimeWindows => InitStrategy::KmeansTimeWindows,
        }
    }
}

#[derive(Args)]
struct EmFlags {
    /// Independent EM restarts.
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Base RNG seed (overridden by the MRHLP_SEED environment variable).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Iteration cap per restart.
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Relative log-likelihood increment below which EM stops.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Minimum eigenvalue enforced on every covariance.
    #[arg(long, default_value_t = 1e-6)]
    cov_floor: f64,
    /// Initialization strategy.
    #[arg(long, value_enum, default_value_t = InitFlag::ContiguousRandom)]
    init: InitFlag,
    /// Cap on restart/grid parallelism (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl EmFlags {
    fn to_options(&self) -> Result<EmOptions> {
        let seed = match std::env::var("MRHLP_SEED") {
            Ok(raw) => raw.parse::<u64>().map_err(|e| Error::InvalidOptions {
                reason: format!("MRHLP_SEED={raw:?}: {e}"),
            })?,
            Err(_) => self.seed,
        };
        Ok(EmOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            restarts: self.restarts,
            seed,
            cov_floor: self.cov_floor,
            init: self.init.into(),
            ..EmOptions::default()
        })
    }

    fn run_pooled<T: Send>(&self, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        match self.threads {
            Some(threads) => rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidOptions {
                    reason: format!("cannot build thread pool: {e}"),
                })?
                .install(job),
            None => job(),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV ("-" or omitted reads stdin).
    input: Option<PathBuf>,
    /// Number of regimes.
    #[arg(long)]
    k: usize,
    /// Shared polynomial degree of every regime.
    #[arg(long, conflicts_with = "degrees")]
    p: Option<usize>,
    /// Per-regime polynomial degrees, comma separated (overrides --p).
    #[arg(long, value_delimiter = ',')]
    degrees: Option<Vec<usize>>,
    /// Degree of the logistic time covariates.
    #[arg(long, default_value_t = 1)]
    u: usize,
    #[command(flatten)]
    em: EmFlags,
    /// Output model document.
    #[arg(short, long, default_value = "model.json")]
    output: PathBuf,
    /// Where to write the fit report.
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Use the legacy univariate parameter count in the BIC penalty.
    #[arg(long)]
    legacy_param_count: bool,
}

#[derive(Args)]
struct SegmentArgs {
    /// Fitted model document.
    model: PathBuf,
    /// Input CSV ("-" or omitted reads stdin).
    input: Option<PathBuf>,
    /// Output label table.
    #[arg(short, long, default_value = "labels.csv")]
    output: PathBuf,
    /// Output prior-probability trace.
    #[arg(long, default_value = "pi_trace.csv")]
    pi_trace: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec document.
    spec: PathBuf,
    /// Output CSV ("-" or omitted writes stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Input CSV ("-" or omitted reads stdin).
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 4)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    p_min: usize,
    #[arg(long, default_value_t = 1)]
    p_max: usize,
    #[arg(long, default_value_t = 1)]
    u_min: usize,
    #[arg(long, default_value_t = 1)]
    u_max: usize,
    #[command(flatten)]
    em: EmFlags,
    /// Output ranking table.
    #[arg(short, long, default_value = "ranking.csv")]
    output: PathBuf,
    /// Use the legacy univariate parameter count in the BIC penalty.
    #[arg(long)]
    legacy_param_count: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with the predicted labels (any file with a `label` column).
    pred: PathBuf,
    /// CSV with the true labels.
    truth: PathBuf,
    /// Output evaluation document.
    #[arg(short, long, default_value = "eval.json")]
    output: PathBuf,
    /// Also export the matched confusion matrix as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Probability trace written by `segment`.
    pi_trace: PathBuf,
    /// The segmented CSV dataset.
    input: PathBuf,
    /// Output SVG.
    #[arg(short, long, default_value = "segmentation.svg")]
    output: PathBuf,
}

fn is_stdio(path: Option<&PathBuf>) -> bool {
    match path {
        None => true,
        Some(p) => p.as_os_str() == "-",
    }
}

fn read_dataset(path: Option<&PathBuf>) -> Result<io::CsvDataset> {
    if is_stdio(path) {
        io::read_csv(std::io::stdin().lock())
    } else {
        io::read_csv_path(path.unwrap())
    }
}

fn open_output(path: &Path) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(std::io::stdout().lock()))
    } else {
        Ok(Box::new(std::fs::File::create(path)?))
    }
}

/// Parses `argv` and runs the selected subcommand, translating every
/// failure into the documented exit codes with a one-line diagnostic on
/// stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here as well; they are not failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Segment(args) => run_segment(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Select(args) => run_select(args),
        Command::Eval(args) => run_eval(args),
        Command::Plot(args) => run_plot(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_fit(args: FitArgs) -> Result<()> {
    let dataset = read_dataset(args.input.as_ref())?;
    let hyper = match (&args.degrees, args.p) {
        (Some(degrees), _) => {
            if degrees.len() != args.k {
                return Err(Error::InvalidHyperparams {
                    reason: format!("--degrees lists {} values for K={}", degrees.len(), args.k),
                });
            }
            Hyperparams::with_degrees(degrees.clone(), args.u)
        }
        (None, Some(p)) => Hyperparams::shared(args.k, p, args.u),
        (None, None) => {
            return Err(Error::InvalidHyperparams {
                reason: "either --p or --degrees is required".into(),
            })
        }
    };
    let opts = args.em.to_options()?;
    let out = args.em.run_pooled(|| em::fit(&dataset.series, &hyper, &opts))?;

    let mut report = out.report;
    if args.legacy_param_count {
        report.bic = selection::bic_with_mode(
            report.final_loglik(),
            &hyper,
            dataset.series.dim(),
            dataset.series.len(),
            ParamCountMode::UnivariateLegacy,
        );
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let metadata = io::ModelMetadata {
        seed: report.seed,
        loglik: report.final_loglik(),
        bic: report.bic,
    };
    io::write_model(open_output(&args.output)?, &out.model, Some(&metadata))?;
    io::write_report(open_output(&args.report)?, &report)?;
    eprintln!(
        "fit: K={} loglik={:.6} bic={:.6} iterations={} converged={} restart={}",
        hyper.k,
        report.final_loglik(),
        report.bic,
        report.iterations,
        report.converged,
        report.restart_index,
    );
    Ok(())
}

fn run_segment(args: SegmentArgs) -> Result<()> {
    let (model, _) = io::read_model_path(&args.model)?;
    let dataset = read_dataset(args.input.as_ref())?;
    let segmentation = segmentation::map_segment(&dataset.series, &model)?;
    io::write_labels(
        open_output(&args.output)?,
        &dataset.series.t,
        &segmentation.labels,
    )?;
    io::write_pi_trace(
        open_output(&args.pi_trace)?,
        &dataset.series.t,
        &segmentation.pi_trace,
    )?;
    eprintln!(
        "segment: {} samples, {} runs",
        dataset.series.len(),
        segmentation.runs().len()
    );
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let spec = io::read_simulation_spec(std::fs::File::open(&args.spec)?)?;
    let spec = match std::env::var("MRHLP_SEED") {
        Ok(raw) => {
            let seed = raw.parse::<u64>().map_err(|e| Error::InvalidOptions {
                reason: format!("MRHLP_SEED={raw:?}: {e}"),
            })?;
            simulate::SimulationSpec { seed, ..spec }
        }
        Err(_) => spec,
    };
    let (series, truth) = simulate::simulate(&spec)?;
    let writer = match &args.output {
        Some(path) if path.as_os_str() != "-" => open_output(path)?,
        _ => Box::new(std::io::stdout().lock()),
    };
    io::write_csv(
        writer,
        &series,
        &io::default_channel_names(series.dim()),
        Some(&truth.labels),
    )?;
    Ok(())
}

fn run_select(args: SelectArgs) -> Result<()> {
    let dataset = read_dataset(args.input.as_ref())?;
    let grid = SelectionGrid {
        k_min: args.k_min,
        k_max: args.k_max,
        p_min: args.p_min,
        p_max: args.p_max,
        u_min: args.u_min,
        u_max: args.u_max,
    };
    let opts = args.em.to_options()?;
    let mode = if args.legacy_param_count {
        ParamCountMode::UnivariateLegacy
    } else {
        ParamCountMode::General
    };
    let outcome = args
        .em
        .run_pooled(|| selection::select_with_mode(&dataset.series, &grid, &opts, mode))?;
    io::write_ranking_csv(open_output(&args.output)?, &outcome)?;
    if let Some(best) = outcome.best() {
        eprintln!(
            "select: best K={} p={} u={} bic={:.6}",
            best.hyper.k, best.hyper.degrees[0], best.hyper.u, best.report.bic
        );
    }
    for (hyper, error) in &outcome.failed {
        eprintln!("warning: cell K={} failed: {error}", hyper.k);
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let pred = io::read_labels_path(&args.pred)?;
    let truth = io::read_labels_path(&args.truth)?;
    let report = segmentation::match_labels(&pred, &truth)?;
    io::write_eval(open_output(&args.output)?, &report)?;
    if let Some(path) = &args.confusion {
        io::write_confusion_csv(open_output(path)?, &report)?;
    }
    eprintln!("eval: accuracy={:.6}", report.accuracy);
    Ok(())
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let (t, pi) = io::read_pi_trace(std::fs::File::open(&args.pi_trace)?)?;
    let dataset = io::read_csv_path(&args.input)?;
    if t.len() != dataset.series.len() {
        return Err(Error::LengthMismatch {
            left: t.len(),
            right: dataset.series.len(),
        });
    }
    let segmentation = crate::model::Segmentation::from_pi_trace(pi);
    let svg = plot::render_svg(
        &dataset.series.t,
        &dataset.series.y,
        &dataset.names,
        &segmentation,
    )?;
    let mut out = open_output(&args.output)?;
    out.write_all(svg.as_bytes())?;
    Ok(())
}

#[allow(unused)]
fn read_to_string(mut r: impl Read) -> Result<String> {
    let mut buf = String::new();
    r.read_to_string(&mut buf)?;
    Ok(buf)
}
