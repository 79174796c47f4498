//! Command-line front end: `rank-study`, `search`, `build`, `cost` and `fit`.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or parse error,
//! 3 infeasible budget. Every file written lands under `--out` and carries
//! the tool version, seed and resolved flags.

mod trends;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::archspec::{
    calibrate_linear, fit_linear, import_spec, ArchError, Family, Layout, ModelSpec, MAX_WIDTH_MULTIPLIER,
    MIN_WIDTH_MULTIPLIER,
};
use crate::costmodel::{model_cost, parse_config_string, Budget, ConfigParseError, CostError, CostReport};
use crate::numerics::{Nonlinearity, NumericsError, RankSettings};
use crate::randnet::{
    default_ratio_grid, emit_curve_csv_with_comments, run_sweep, LayerArch, RandnetError, SweepSpec,
};
use crate::search::{emit_run_with_metadata, format_channels, run_search, FitnessKind, SearchError, SearchSpec};

pub use trends::{trend_checks, TrendCheck};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

pub const TOOL: &str = "rexrank";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<ArchError> for CliError {
    fn from(e: ArchError) -> Self {
        match e {
            ArchError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            ArchError::Schema { .. } | ArchError::InvalidParam(_) | ArchError::Cost(_) => CliError::Usage(e.to_string()),
            ArchError::Io { .. } => CliError::Usage(e.to_string()),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ConfigParseError> for CliError {
    fn from(e: ConfigParseError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<RandnetError> for CliError {
    fn from(e: RandnetError) -> Self {
        match e {
            RandnetError::InvalidSpec(_) | RandnetError::ChannelOrder { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            SearchError::InvalidSpec(_) | SearchError::Cost(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "rexrank", version, about = "Rank study, channel search and cost accounting for inverted-bottleneck networks")]
pub struct Cli {
    /// Master seed, echoed into every output.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory; created if absent. Nothing is written outside it.
    #[arg(long, global = true, default_value = "./out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Rank ratio vs. channel dimension ratio for random networks.
    RankStudy(RankStudyArgs),
    /// Budget-constrained random search over channel configurations.
    Search(SearchArgs),
    /// Build a model family and report its cost.
    Build(BuildArgs),
    /// Cost report for a spec file or a stage-wise config string.
    Cost(CostArgs),
    /// Least-squares line through a channel sequence.
    Fit(FitArgs),
}

fn parse_arch(s: &str) -> Result<LayerArch, String> {
    s.parse()
}

fn parse_nonlinearity(s: &str) -> Result<Nonlinearity, String> {
    s.parse().map_err(|e: crate::numerics::UnknownNonlinearity| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: ArchError| e.to_string())
}

fn parse_width(s: &str) -> Result<f64, String> {
    let m: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (MIN_WIDTH_MULTIPLIER..=MAX_WIDTH_MULTIPLIER).contains(&m) {
        Ok(m)
    } else {
        Err(format!("width must lie in [{MIN_WIDTH_MULTIPLIER}, {MAX_WIDTH_MULTIPLIER}]"))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RankStudyArgs {
    /// 1x1, 3x3, ib-conv or ib-dw.
    #[arg(long, value_parser = parse_arch)]
    pub arch: LayerArch,
    /// A single activation to sweep.
    #[arg(long, value_parser = parse_nonlinearity, required_unless_present = "all", conflicts_with = "all")]
    pub nonlinearity: Option<Nonlinearity>,
    /// Sweep all eight activations.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = crate::randnet::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Comma-separated dimension ratios; ten evenly spaced in [0.1, 1] by default.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<f64>,
    /// Relative singular-value threshold for the rank.
    #[arg(long, default_value_t = RankSettings::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessArg {
    Rank,
    External,
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    /// Number of blocks.
    #[arg(long)]
    pub depth: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), required_unless_present = "max_macs")]
    pub max_params: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_macs: Option<u64>,
    /// Number of candidates.
    #[arg(long, default_value_t = crate::search::DEFAULT_CANDIDATES)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = FitnessArg::Rank)]
    pub fitness: FitnessArg,
    /// Random-weight draws per candidate for the rank fitness.
    #[arg(long, default_value_t = crate::search::DEFAULT_TRIALS)]
    pub trials: usize,
    /// Exchange directory for external scoring, relative to --out.
    #[arg(long, required_if_eq("fitness", "external"))]
    pub exchange_dir: Option<PathBuf>,
    /// Seconds to wait for external scores; unbounded when absent.
    #[arg(long)]
    pub timeout: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    /// rexnet, plain or lite.
    #[arg(long, value_parser = parse_family)]
    pub family: Family,
    #[arg(long, value_parser = parse_width, default_value = "1.0")]
    pub width: f64,
    /// Params target for fitting the channel line (needs --calibrate-macs).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), requires = "calibrate_macs")]
    pub calibrate_params: Option<u64>,
    /// MACs target for fitting the channel line (needs --calibrate-params).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), requires = "calibrate_params")]
    pub calibrate_macs: Option<u64>,
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1000)]
    pub classes: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    /// Model spec JSON file.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    pub spec: Option<PathBuf>,
    /// Stage-wise config string, e.g. `32 / 16(×1)-24(×2)`.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, default_value_t = 224)]
    pub resolution: usize,
    /// Defaults to the spec's head, or 1000 for config strings.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Comma-separated channel widths, at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub channels: Vec<usize>,
}

/// Shared per-invocation context.
struct Ctx<'a> {
    out_dir: &'a Path,
    seed: u64,
    metadata: Value,
}

impl Ctx<'_> {
    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(self.out_dir)
            .map_err(|e| CliError::Internal(format!("{}: {e}", self.out_dir.display())))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.ensure_out()?;
        let path = self.out_dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("json serializes");
        text.push('\n');
        self.write(name, &text)
    }

    fn comment(&self) -> String {
        self.metadata.to_string()
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// printing summaries to `stdout` and diagnostics to `stderr`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(&cli, &argv, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn metadata(cli: &Cli, argv: &[OsString]) -> Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "seed": cli.seed,
        "argv": argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "flags": cli,
    })
}

fn execute(cli: &Cli, argv: &[OsString], stdout: &mut dyn Write) -> Result<(), CliError> {
    let ctx = Ctx {
        out_dir: &cli.out,
        seed: cli.seed,
        metadata: metadata(cli, argv),
    };
    let text = match &cli.command {
        Command::RankStudy(a) => rank_study(&ctx, a)?,
        Command::Search(a) => search(&ctx, a)?,
        Command::Build(a) => build(&ctx, a)?,
        Command::Cost(a) => cost(&ctx, a)?,
        Command::Fit(a) => fit(&ctx, a)?,
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Internal(format!("stdout: {e}")))
}

fn rank_study(ctx: &Ctx<'_>, a: &RankStudyArgs) -> Result<String, CliError> {
    let settings = RankSettings::new(a.tolerance)?;
    let nonlinearities: Vec<Nonlinearity> = match a.nonlinearity {
        Some(f) => vec![f],
        None => Nonlinearity::ALL.to_vec(),
    };
    let grid = if a.ratios.is_empty() {
        default_ratio_grid(10)
    } else {
        a.ratios.clone()
    };
    let mut curves = Vec::with_capacity(nonlinearities.len());
    let mut out = String::new();
    for f in nonlinearities {
        let mut spec = SweepSpec::new(a.arch, f);
        spec.ratio_grid = grid.clone();
        spec.trials = a.trials;
        spec.master_seed = ctx.seed;
        spec.validate()?;
        curves.push(run_sweep(&spec, &settings)?);
    }
    ctx.ensure_out()?;
    for c in &curves {
        let name = format!("{}_{}.csv", c.spec.arch.name(), c.spec.nonlinearity.name());
        let path = ctx.out_dir.join(&name);
        emit_curve_csv_with_comments(c, &path, &[ctx.comment()])?;
        let first = &c.points[0];
        let last = c.points.last().expect("non-empty grid");
        writeln!(
            out,
            "{name}: rank ratio {:.4} at r={} .. {:.4} at r={}",
            first.mean_rank_ratio, first.ratio, last.mean_rank_ratio, last.ratio
        )
        .unwrap();
    }
    let checks = trend_checks(&curves);
    let mut report = format!("# {}\n", ctx.comment());
    for c in &checks {
        writeln!(report, "{c}").unwrap();
    }
    ctx.write("trends.txt", &report)?;
    let passed = checks.iter().filter(|c| c.passed).count();
    writeln!(out, "trends: {passed}/{} checks pass (see trends.txt)", checks.len()).unwrap();
    Ok(out)
}

/// Resolves `p` against `out` and refuses anything that would land outside it.
fn inside_out_dir(out: &Path, p: &Path) -> Result<PathBuf, CliError> {
    if p.components().any(|c| matches!(c, Component::ParentDir)) {
        return Err(CliError::Usage(format!("{} must not contain `..`", p.display())));
    }
    if p.is_absolute() {
        let abs_out = std::path::absolute(out).map_err(|e| CliError::Internal(e.to_string()))?;
        if !p.starts_with(&abs_out) {
            return Err(CliError::Usage(format!(
                "{} lies outside the output directory {}",
                p.display(),
                abs_out.display()
            )));
        }
        return Ok(p.to_path_buf());
    }
    Ok(out.join(p))
}

fn search(ctx: &Ctx<'_>, a: &SearchArgs) -> Result<String, CliError> {
    let budget = Budget::new(a.max_params, a.max_macs)?;
    let mut spec = SearchSpec::new(a.depth, budget);
    spec.num_candidates = a.n;
    spec.master_seed = ctx.seed;
    spec.fitness = match a.fitness {
        FitnessArg::Rank => FitnessKind::RankScore {
            trials: a.trials,
            settings: RankSettings::default(),
        },
        FitnessArg::External => {
            let dir = a
                .exchange_dir
                .as_deref()
                .ok_or_else(|| CliError::Usage("--fitness external needs --exchange-dir".into()))?;
            FitnessKind::External {
                exchange_dir: inside_out_dir(ctx.out_dir, dir)?,
                timeout: a.timeout.map(Duration::from_secs),
            }
        }
    };
    spec.validate()?;
    let run = run_search(&spec)?;
    ctx.ensure_out()?;
    emit_run_with_metadata(&run, ctx.out_dir, Some(&ctx.metadata))?;
    let line = |tag: &str, c: &crate::search::Candidate| {
        format!(
            "{tag} {}  score {:.6}  params {}  macs {}\n",
            format_channels(&c.channels),
            c.score.expect("scored"),
            c.cost.params,
            c.cost.macs
        )
    };
    Ok(line("best ", &run.best) + &line("worst", &run.worst))
}

fn cost_json(ctx: &Ctx<'_>, report: &CostReport, resolution: usize, classes: usize) -> Value {
    let mut v = serde_json::to_value(report).expect("cost report serializes");
    v["resolution"] = json!(resolution);
    v["classes"] = json!(classes);
    v["metadata"] = ctx.metadata.clone();
    v
}

fn summary_line(name: &str, report: &CostReport) -> String {
    format!(
        "{name}: params {} ({:.2}M)  macs {} ({:.3}B)\n",
        report.params,
        report.params as f64 / 1e6,
        report.macs,
        report.macs as f64 / 1e9
    )
}

fn build(ctx: &Ctx<'_>, a: &BuildArgs) -> Result<String, CliError> {
    let mut layout = Layout::new(a.family, a.width);
    layout.options.classes = a.classes;
    let mut spec: ModelSpec = match (a.calibrate_params, a.calibrate_macs) {
        (Some(p), Some(m)) => {
            let cal = calibrate_linear(&layout, &Budget::new(Some(p), Some(m))?, a.resolution)?;
            layout.spec_with(&cal.param)?
        }
        _ => layout.build()?,
    };
    let report = model_cost(&spec, a.resolution, a.classes)?;
    let stem = format!("{}_x{:.2}", a.family, a.width);
    spec.name = stem.clone();
    spec.metadata = Some(ctx.metadata.clone());
    ctx.write(&format!("{stem}.spec.json"), &(spec.to_json() + "\n"))?;
    ctx.write_json(&format!("{stem}.cost.json"), &cost_json(ctx, &report, a.resolution, a.classes))?;
    Ok(summary_line(&stem, &report))
}

fn cost(ctx: &Ctx<'_>, a: &CostArgs) -> Result<String, CliError> {
    let (name, spec) = match (&a.spec, &a.config) {
        (Some(path), None) => {
            let spec = import_spec(path)?;
            (spec.name.clone(), spec)
        }
        (None, Some(cfg)) => {
            let parsed = parse_config_string(cfg)?;
            ("config".to_string(), parsed.to_model_spec("config", a.classes.unwrap_or(1000)))
        }
        _ => return Err(CliError::Usage("give exactly one of --spec or --config".into())),
    };
    let classes = a.classes.unwrap_or(spec.head.classes);
    let report = model_cost(&spec, a.resolution, classes)?;
    ctx.write_json("cost.json", &cost_json(ctx, &report, a.resolution, classes))?;
    Ok(summary_line(&name, &report))
}

fn fit(ctx: &Ctx<'_>, a: &FitArgs) -> Result<String, CliError> {
    if a.channels.len() < 2 {
        return Err(CliError::Usage(format!("need at least two channels, got {}", a.channels.len())));
    }
    let f = fit_linear(&a.channels)?;
    ctx.write_json(
        "fit.json",
        &json!({
            "channels": a.channels,
            "slope": f.slope,
            "intercept": f.intercept,
            "rms_residual": f.rms_residual,
            "metadata": ctx.metadata,
        }),
    )?;
    Ok(format!(
        "slope {:.6}  intercept {:.6}  rms {:.6}\n",
        f.slope, f.intercept, f.rms_residual
    ))
}
