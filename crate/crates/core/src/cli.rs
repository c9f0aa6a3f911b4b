//! Command-line surface. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::diagnostics::{rate_fit, sin2_subspace_empirical, DiagnosticsTrace};
use crate::error::{Error, Result};
use crate::io::{load_dataset, save_matrix, DataFormat, Dataset, ModelFile};
use crate::kernel::{median_bandwidth, FeatureForm, KernelFamily, KernelSpec};
use crate::model::CoefficientModel;
use crate::oracles::dual_kpca;
use crate::solvers::{fit, DatasetSampler, Fitted, Revisit, Sampling, StepSchedule, SubspaceProbe, Task, TrainConfig};

/// Points used to pick the median bandwidth.
const MEDIAN_SUBSAMPLE: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "dskca", version, about = "Doubly stochastic kernel component analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it with its diagnostics trace.
    Fit {
        #[arg(value_enum)]
        task: TaskArg,
        #[command(flatten)]
        args: FitArgs,
    },
    /// Evaluate a model's k functions on every row of a dataset.
    Eval(EvalArgs),
    /// Write input rows followed by their k evaluations, with a header.
    Project(EvalArgs),
    /// Convergence diagnostics.
    Diagnose {
        #[command(subcommand)]
        what: Diagnose,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Kpca,
    Gha,
    Ksvd,
    Kcca,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Kpca => Task::Kpca,
            TaskArg::Gha => Task::Gha,
            TaskArg::Ksvd => Task::Ksvd,
            TaskArg::Kcca => Task::Kcca,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FormatArg {
    Csv,
    F64le,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => DataFormat::Csv,
            FormatArg::F64le => DataFormat::F64Le,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FamilyArg {
    Gaussian,
    Laplacian,
    Cauchy,
    Linear,
}

impl From<FamilyArg> for KernelFamily {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => KernelFamily::Gaussian,
            FamilyArg::Laplacian => KernelFamily::Laplacian,
            FamilyArg::Cauchy => KernelFamily::Cauchy,
            FamilyArg::Linear => KernelFamily::Linear,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RevisitArg {
    Cycle,
    None,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SamplingArg {
    EpochShuffle,
    WithReplacement,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FeatureFormArg {
    Phase,
    SinCos,
}

#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Input data file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Skip one header line in CSV input.
    #[arg(long)]
    skip_header: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Second view for ksvd and kcca, same row count and format as --data.
    #[arg(long)]
    data_y: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gaussian")]
    kernel: FamilyArg,
    /// A positive number or `median`.
    #[arg(long, default_value = "median")]
    bandwidth: String,
    /// Right-view kernel; defaults to --kernel.
    #[arg(long, value_enum)]
    kernel_y: Option<FamilyArg>,
    /// Right-view bandwidth; defaults to `median` of the right view.
    #[arg(long)]
    bandwidth_y: Option<String>,
    #[arg(long, value_enum, default_value = "phase")]
    feature_form: FeatureFormArg,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    iters: u64,
    #[arg(long, default_value_t = 256)]
    data_batch: usize,
    #[arg(long, default_value_t = 64)]
    feature_batch: usize,
    #[arg(long, default_value_t = 16384)]
    total_features: usize,
    #[arg(long, default_value_t = 1.0)]
    theta0: f64,
    #[arg(long, default_value_t = 0.001)]
    theta1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "cycle")]
    revisit: RevisitArg,
    #[arg(long, value_enum, default_value = "epoch-shuffle")]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 100)]
    trace_stride: u64,
    /// Keep sampled frequencies in memory during training.
    #[arg(long)]
    store_frequencies: bool,
    /// CCA ridge.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Record wall-clock seconds in the trace.
    #[arg(long)]
    record_time: bool,
    /// Held-out points (kpca and gha); the trace potential is measured
    /// against exact kernel PCA of these points.
    #[arg(long)]
    probe: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Output trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Which side of a paired model to evaluate.
    #[arg(long, value_enum, default_value = "left")]
    view: ViewArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    out_format: FormatArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ViewArg {
    Left,
    Right,
}

#[derive(Subcommand, Debug)]
enum Diagnose {
    /// Log-log slope of the potential over the final window of a trace.
    Rate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        window: f64,
    },
    /// sin^2 of the largest principal angle between a model and reference
    /// evaluations on the same points.
    Angle {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Reference evaluations (CSV, one row per data row).
        #[arg(long, conflicts_with = "reference_model")]
        reference: Option<PathBuf>,
        /// Reference model file.
        #[arg(long)]
        reference_model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "left")]
        view: ViewArg,
    },
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            if kind == ErrorKind::UnknownArgument {
                eprintln!("\n{}", help_for(&argv));
            }
            return 1;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Help text of the deepest subcommand named in `argv`.
fn help_for(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    for tok in argv.iter().skip(1).filter_map(|a| a.to_str()) {
        match cmd.find_subcommand(tok) {
            Some(sub) => cmd = sub.clone(),
            None => continue,
        }
    }
    cmd.render_help().to_string()
}

fn configure_threads() {
    if let Some(n) = std::env::var("DSKCA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if the pool already exists, e.g. on a second call in-process.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fit { task, args } => run_fit(task.into(), args),
        Command::Eval(args) => run_eval(args, false),
        Command::Project(args) => run_eval(args, true),
        Command::Diagnose { what: Diagnose::Rate { trace, window } } => {
            let t = DiagnosticsTrace::read_csv(BufReader::new(fs::File::open(trace)?))?;
            println!("{}", rate_fit(&t, window)?);
            Ok(())
        }
        Command::Diagnose { what: Diagnose::Angle { model, input, reference, reference_model, view } } => {
            let x = load(&input)?;
            let file = ModelFile::read(&model)?;
            let h = side(&file, view)?.evaluate(&x)?;
            let r = match (reference, reference_model) {
                (Some(p), _) => load_dataset(&p, DataFormat::Csv, false)?,
                (None, Some(p)) => side(&ModelFile::read(&p)?, view)?.evaluate(&x)?,
                (None, None) => {
                    return Err(Error::InvalidArgument("pass --reference or --reference-model".into()))
                }
            };
            println!("{}", sin2_subspace_empirical(&r, &h)?);
            Ok(())
        }
    }
}

fn load(input: &InputArgs) -> Result<DMatrix<f64>> {
    load_dataset(&input.data, input.format.into(), input.skip_header)
}

fn side(file: &ModelFile, view: ViewArg) -> Result<&CoefficientModel> {
    match (&file.model, view) {
        (Fitted::Single(m), ViewArg::Left) => Ok(m),
        (Fitted::Single(_), ViewArg::Right) => {
            Err(Error::InvalidArgument("single-view model has no right side".into()))
        }
        (Fitted::Paired(p), ViewArg::Left) => Ok(&p.left),
        (Fitted::Paired(p), ViewArg::Right) => Ok(&p.right),
    }
}

fn kernel_spec(
    family: KernelFamily,
    bandwidth: &str,
    form: FeatureForm,
    data: &DMatrix<f64>,
    seed: u64,
) -> Result<KernelSpec> {
    if family == KernelFamily::Linear {
        return Ok(KernelSpec::linear(data.ncols()));
    }
    let bw = if bandwidth == "median" {
        median_bandwidth(data, MEDIAN_SUBSAMPLE, seed)?
    } else {
        bandwidth
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bandwidth must be a number or 'median', got '{bandwidth}'")))?
    };
    Ok(KernelSpec::new(family, bw, data.ncols())?.with_feature_form(form))
}

fn run_fit(task: Task, a: FitArgs) -> Result<()> {
    let x = load(&a.input)?;
    let y = match (&a.data_y, task.is_paired()) {
        (Some(p), true) => Some(load_dataset(p, a.input.format.into(), a.input.skip_header)?),
        (None, true) => return Err(Error::InvalidArgument(format!("{task} needs --data-y"))),
        (Some(_), false) => return Err(Error::InvalidArgument(format!("{task} takes a single view"))),
        (None, false) => None,
    };
    let data = Dataset::new(x, y)?;
    let form = match a.feature_form {
        FeatureFormArg::Phase => FeatureForm::Phase,
        FeatureFormArg::SinCos => FeatureForm::SinCosPairs,
    };
    let left = kernel_spec(a.kernel.into(), &a.bandwidth, form, &data.x, a.seed)?;
    let right = match &data.y {
        Some(y) => Some(kernel_spec(
            a.kernel_y.unwrap_or(a.kernel).into(),
            a.bandwidth_y.as_deref().unwrap_or("median"),
            form,
            y,
            a.seed,
        )?),
        None => None,
    };

    let mut config = TrainConfig::new(a.k, a.iters, StepSchedule::new(a.theta0, a.theta1)?, a.seed);
    config.data_batch = a.data_batch;
    config.feature_batch = a.feature_batch;
    config.total_features = a.total_features;
    config.revisit = match a.revisit {
        RevisitArg::Cycle => Revisit::Cycle,
        RevisitArg::None => Revisit::None,
    };
    config.sampling = match a.sampling {
        SamplingArg::EpochShuffle => Sampling::EpochShuffle,
        SamplingArg::WithReplacement => Sampling::WithReplacement,
    };
    config.trace_stride = a.trace_stride;
    config.store_frequencies = a.store_frequencies;
    config.kcca_ridge = a.ridge;
    config.record_time = a.record_time;

    let probe = match &a.probe {
        Some(_) if task.is_paired() => {
            return Err(Error::InvalidArgument("--probe is supported for kpca and gha only".into()))
        }
        Some(p) => {
            let pts = load_dataset(p, a.input.format.into(), a.input.skip_header)?;
            let reference = dual_kpca(&pts, &left, a.k)?.evaluate(&pts)?;
            Some(SubspaceProbe::new(pts, reference)?)
        }
        None => None,
    };

    let mut source = DatasetSampler::new(data.x, data.y, config.sampling, a.seed)?;
    let out = fit(
        task,
        &left,
        right.as_ref(),
        &mut source,
        &config,
        probe.as_ref().map(|p| p as &dyn crate::solvers::PotentialProbe),
    )?;
    ModelFile::new(task, out.model, a.total_features, a.feature_batch)?.write(&a.out)?;
    if let Some(t) = &a.trace {
        let mut f = fs::File::create(t)?;
        out.trace.write_csv(&mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn run_eval(a: EvalArgs, project: bool) -> Result<()> {
    let x = load(&a.input)?;
    let file = ModelFile::read(&a.model)?;
    let h = side(&file, a.view)?.evaluate(&x)?;
    if !project {
        return save_matrix(&a.out, &h, a.out_format.into());
    }
    let mut joined = DMatrix::zeros(x.nrows(), x.ncols() + h.ncols());
    joined.columns_mut(0, x.ncols()).copy_from(&x);
    joined.columns_mut(x.ncols(), h.ncols()).copy_from(&h);
    match a.out_format {
        FormatArg::F64le => save_matrix(&a.out, &joined, DataFormat::F64Le),
        FormatArg::Csv => write_projection(&a.out, &joined, x.ncols()),
    }
}

fn write_projection(path: &Path, m: &DMatrix<f64>, d: usize) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let names: Vec<String> = (0..m.ncols())
        .map(|c| if c < d { format!("x{}", c + 1) } else { format!("f{}", c - d + 1) })
        .collect();
    writeln!(f, "{}", names.join(","))?;
    crate::io::write_csv(m, &mut f)?;
    f.flush()?;
    Ok(())
}
