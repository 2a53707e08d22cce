//! Command line for the selection-analysis library: simulation, exact
//! statistic distributions, adverse-rate tables and sweeps, minimum
//! sample-size searches, full experiment runs, and SVG plots.
//!
//! Exit codes: 0 on success, 2 on configuration or argument errors, 3 when
//! a numerical routine fails to converge.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use arxcv::arx::simulate;
use arxcv::experiments::{
    default_schemes, run_experiment, statistic_laws, sweep, Engine, SweepAxis, SweepConfig,
    Variant,
};
use arxcv::report::{self, PlotKind};
use arxcv::schemes::SchemeSpec;
use arxcv::selection::{min_sample_size, Statistic, DEFAULT_GAMMA};

use crate::config::Config;

#[derive(Parser)]
#[command(
    name = "arxcv",
    version,
    about = "Finite-sample behavior of cross-validated model selection for ARX regressions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineArg {
    Analytic,
    FullBayes,
}

impl From<EngineArg> for Engine {
    fn from(value: EngineArg) -> Self {
        match value {
            EngineArg::Analytic => Engine::Analytic,
            EngineArg::FullBayes => Engine::FullBayes,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Easy,
    Hard,
}

impl From<VariantArg> for Variant {
    fn from(value: VariantArg) -> Self {
        match value {
            VariantArg::Easy => Variant::Easy,
            VariantArg::Hard => Variant::Hard,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Scatter,
    Line,
}

impl From<KindArg> for PlotKind {
    fn from(value: KindArg) -> Self {
        match value {
            KindArg::Scatter => PlotKind::Scatter,
            KindArg::Line => PlotKind::Line,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Alpha,
    T,
    H,
    V,
}

impl From<AxisArg> for SweepAxis {
    fn from(value: AxisArg) -> Self {
        match value {
            AxisArg::Alpha => SweepAxis::Alpha,
            AxisArg::T => SweepAxis::T,
            AxisArg::H => SweepAxis::H,
            AxisArg::V => SweepAxis::V,
        }
    }
}

#[derive(Args)]
struct CommonOpts {
    /// TOML run configuration; overrides --preset and --variant.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment preset (1-5), used when no config is given.
    #[arg(long, default_value_t = 1)]
    preset: u8,
    /// Coefficient variant for the preset.
    #[arg(long, value_enum, default_value_t = VariantArg::Hard)]
    variant: VariantArg,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output artifacts (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; 0 keeps the library default.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Posterior treatment.
    #[arg(long, value_enum, default_value_t = EngineArg::Analytic)]
    engine: EngineArg,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate series from the experiment DGP and write them as CSV.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Dependence level of the DGP.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Number of independent series.
        #[arg(long, default_value_t = 1)]
        paths: usize,
    },
    /// Exact CDF of the cross-validation statistic for each candidate and
    /// their difference at one grid cell.
    ElpdDist {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Points per CDF curve.
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Adverse selection rates per (alpha, scheme) cell, or along one swept
    /// axis with --axis.
    AdverseRate {
        #[command(flatten)]
        common: CommonOpts,
        /// Sweep this axis instead of tabulating the alpha grid.
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Axis values for the sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Fixed dependence level for non-alpha sweeps.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Smallest series length whose adverse probability falls below gamma,
    /// by bisection over a step grid.
    MinSampleSize {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Separation level the adverse probability must fall below.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        #[arg(long, default_value_t = 10)]
        t_lo: usize,
        #[arg(long, default_value_t = 2500)]
        t_hi: usize,
        #[arg(long, default_value_t = 10)]
        step: usize,
    },
    /// Experiment-level operations.
    Experiment {
        #[command(subcommand)]
        action: ExperimentCmd,
    },
    /// Render a CSV file into a minimal SVG plot.
    Plot {
        /// Input CSV; the first two columns are plotted unless --x/--y name
        /// others.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Column name for the horizontal axis.
        #[arg(long)]
        x: Option<String>,
        /// Column name for the vertical axis.
        #[arg(long)]
        y: Option<String>,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run the configured experiment and write all its artifacts.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 3 for numerical failures anywhere in the chain, 2 for everything else
/// (configuration, arguments, I/O).
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(arxcv::Error::NumericalFailure(_)) = cause.downcast_ref::<arxcv::Error>() {
            return 3;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, alpha, paths } => cmd_simulate(&common, alpha, paths),
        Command::ElpdDist { common, alpha, grid } => cmd_elpd_dist(&common, alpha, grid),
        Command::AdverseRate { common, axis, values, alpha } => {
            cmd_adverse_rate(&common, axis, &values, alpha)
        }
        Command::MinSampleSize { common, alpha, gamma, t_lo, t_hi, step } => {
            cmd_min_sample_size(&common, alpha, gamma, t_lo, t_hi, step)
        }
        Command::Experiment { action: ExperimentCmd::Run { common } } => cmd_experiment_run(&common),
        Command::Plot { input, kind, out, x, y } => cmd_plot(&input, kind, &out, x, y),
    }
}

/// Thread pool, config resolution, seed override, output directory.
fn prepare(common: &CommonOpts) -> Result<(Config, PathBuf)> {
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::from_preset(common.preset, common.variant.into())?,
    };
    if let Some(seed) = common.seed {
        config.experiment.seed = seed;
    }
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("cannot create {}", common.out_dir.display()))?;
    Ok((config, common.out_dir.clone()))
}

/// Scheme cells to evaluate: the configured ones, else the engine defaults.
fn resolved_schemes(config: &Config, engine: Engine) -> Vec<SchemeSpec> {
    if config.schemes.is_empty() {
        default_schemes(engine)
    } else {
        config.schemes.clone()
    }
}

fn first_scheme(config: &Config) -> SchemeSpec {
    config
        .schemes
        .first()
        .copied()
        .unwrap_or_else(|| default_schemes(Engine::Analytic)[0])
}

fn require_analytic(common: &CommonOpts, what: &str) -> Result<()> {
    if common.engine != EngineArg::Analytic {
        bail!("{what} evaluates exact laws and supports only --engine analytic");
    }
    Ok(())
}

fn number(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_simulate(common: &CommonOpts, alpha: f64, paths: usize) -> Result<()> {
    let (config, out_dir) = prepare(common)?;
    if paths == 0 {
        bail!("--paths must be positive");
    }
    let spec = &config.experiment;
    let z = spec.design();
    let dgp = spec.dgp(alpha, &z)?;
    let series = simulate(&dgp, spec.seed, paths);

    let mut rows = Vec::with_capacity(paths * spec.t);
    for p in 0..paths {
        for (t, value) in series.row(p).iter().enumerate() {
            rows.push(vec![(p + 1).to_string(), (t + 1).to_string(), number(*value)]);
        }
    }
    write_csv(&out_dir.join("paths.csv"), &["path", "t", "y"], rows)?;
    write_text(&out_dir.join("design.csv"), &report::design_csv(&z))?;
    println!(
        "simulated {paths} series of length {} at alpha={alpha} into {}",
        spec.t,
        out_dir.display()
    );
    Ok(())
}

fn cmd_elpd_dist(common: &CommonOpts, alpha: f64, grid: usize) -> Result<()> {
    require_analytic(common, "elpd-dist")?;
    let (config, out_dir) = prepare(common)?;
    if grid < 2 {
        bail!("--grid needs at least two points");
    }
    let spec = &config.experiment;
    let scheme = first_scheme(&config);
    let laws = statistic_laws(spec, alpha, scheme)?;

    let mut rows = Vec::new();
    for (name, law) in &laws {
        let mean = law.mean();
        let sd = law.variance().sqrt();
        println!("{name}: mean={mean:.6} sd={sd:.6}");
        let lo = mean - 4.0 * sd;
        let hi = mean + 4.0 * sd;
        for i in 0..grid {
            let w = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
            rows.push(vec![name.clone(), number(w), number(law.cdf(w)?)]);
        }
    }
    write_csv(&out_dir.join("elpd_dist.csv"), &["series", "w", "cdf"], rows)?;
    println!("wrote {}", out_dir.join("elpd_dist.csv").display());
    Ok(())
}

fn cmd_adverse_rate(
    common: &CommonOpts,
    axis: Option<AxisArg>,
    values: &[f64],
    alpha: Option<f64>,
) -> Result<()> {
    let (config, out_dir) = prepare(common)?;
    let spec = &config.experiment;
    match axis {
        None => {
            let engine = common.engine.into();
            let schemes = resolved_schemes(&config, engine);
            let result = run_experiment(spec, engine, &schemes)?;
            for row in &result.rows {
                match (&row.error, row.adverse_prob) {
                    (Some(msg), _) => println!(
                        "alpha={} scheme=\"{}\": {msg}",
                        row.alpha,
                        row.scheme.label()
                    ),
                    (None, prob) => println!(
                        "alpha={} scheme=\"{}\" adverse={:.4}",
                        row.alpha,
                        row.scheme.label(),
                        prob.unwrap_or(f64::NAN)
                    ),
                }
            }
            write_text(&out_dir.join("adverse_rates.csv"), &report::selection_csv(&result.rows))?;
            println!("wrote {}", out_dir.join("adverse_rates.csv").display());
        }
        Some(axis) => {
            require_analytic(common, "adverse-rate --axis")?;
            let section = config.sweep.clone();
            let values = if values.is_empty() {
                section.as_ref().map(|s| s.values.clone()).unwrap_or_default()
            } else {
                values.to_vec()
            };
            if values.is_empty() {
                bail!("a sweep needs --values or a [sweep] section with values");
            }
            let cfg = SweepConfig {
                axis: axis.into(),
                values,
                alpha: alpha
                    .or_else(|| section.as_ref().map(|s| s.alpha))
                    .unwrap_or(1.0),
                scheme: section
                    .as_ref()
                    .and_then(|s| s.scheme)
                    .unwrap_or_else(|| first_scheme(&config)),
            };
            let rows = sweep(spec, &cfg)?;
            for point in &rows {
                match (&point.row.error, point.row.adverse_prob) {
                    (Some(msg), _) => {
                        println!("{}={}: {msg}", point.axis.label(), point.value)
                    }
                    (None, prob) => println!(
                        "{}={} adverse={:.4}",
                        point.axis.label(),
                        point.value,
                        prob.unwrap_or(f64::NAN)
                    ),
                }
            }
            write_text(&out_dir.join("sweep.csv"), &report::sweep_csv(&rows))?;
            println!("wrote {}", out_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn cmd_min_sample_size(
    common: &CommonOpts,
    alpha: f64,
    gamma: f64,
    t_lo: usize,
    t_hi: usize,
    step: usize,
) -> Result<()> {
    require_analytic(common, "min-sample-size")?;
    let (config, out_dir) = prepare(common)?;
    let spec = config.experiment.clone();
    let scheme = first_scheme(&config);
    let make_setup =
        |t: usize| arxcv::experiments::comparison_setup(&spec, alpha, t, scheme, gamma);
    let search = min_sample_size(&make_setup, Statistic::CrossValidation, t_lo, t_hi, step)?;

    write_csv(
        &out_dir.join("min_sample_size.csv"),
        &["t", "adverse_prob"],
        search
            .evaluations
            .iter()
            .map(|(t, p)| vec![t.to_string(), number(*p)]),
    )?;
    match search.result {
        Some(t) => println!(
            "t_min={t} (scheme \"{}\", alpha={alpha}, gamma={gamma}{})",
            scheme.label(),
            if search.downgraded_to_scan { ", confirmed by linear scan" } else { "" }
        ),
        None => println!(
            "no length up to {t_hi} separates the candidates at gamma={gamma}"
        ),
    }
    println!("wrote {}", out_dir.join("min_sample_size.csv").display());
    Ok(())
}

/// Lowercase alphanumeric slug for artifact file names.
fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn cmd_experiment_run(common: &CommonOpts) -> Result<()> {
    let (mut config, out_dir) = prepare(common)?;
    let engine = common.engine.into();
    let schemes = resolved_schemes(&config, engine);
    config.schemes = schemes.clone();
    let spec = config.experiment.clone();

    let result = run_experiment(&spec, engine, &schemes)?;

    write_text(&out_dir.join("config.toml"), &config.to_toml_string()?)?;
    write_text(&out_dir.join("design.csv"), &report::design_csv(&spec.design()))?;
    write_text(&out_dir.join("selection.csv"), &report::selection_csv(&result.rows))?;

    for row in &result.rows {
        match (&row.error, row.adverse_prob) {
            (Some(msg), _) => {
                println!("alpha={} scheme=\"{}\": {msg}", row.alpha, row.scheme.label())
            }
            (None, prob) => println!(
                "alpha={} scheme=\"{}\" adverse={:.4} mean={:.4} sd={:.4}",
                row.alpha,
                row.scheme.label(),
                prob.unwrap_or(f64::NAN),
                row.mean.unwrap_or(f64::NAN),
                row.sd.unwrap_or(f64::NAN)
            ),
        }
    }

    if !result.replicate_rows.is_empty() {
        write_text(
            &out_dir.join("replicates.csv"),
            &report::replicate_csv(&result.replicate_rows),
        )?;
        // Scatter of the two statistics across replicates; negative values
        // mean the cell selected the nominally worse candidate.
        let scatter_rows = result.replicate_rows.iter().map(|r| {
            vec![number(r.stat_joint), number(r.stat_pointwise)]
        });
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["stat_joint", "stat_pointwise"]).expect("in-memory write");
        for row in scatter_rows {
            w.write_record(&row).expect("in-memory write");
        }
        let scatter_csv =
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
        report::emit_plot(
            &scatter_csv,
            PlotKind::Scatter,
            &out_dir.join("statistics_scatter.svg"),
        )?;
    }

    // One adverse-rate-versus-alpha line per scheme cell.
    for scheme in &schemes {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["alpha", "adverse_prob"]).expect("in-memory write");
        for row in result.rows.iter().filter(|r| r.scheme == *scheme) {
            if let Some(p) = row.adverse_prob {
                w.write_record([number(row.alpha), number(p)]).expect("in-memory write");
            }
        }
        let text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8");
        let name = format!("adverse_{}.svg", slug(&scheme.label()));
        report::emit_plot(&text, PlotKind::Line, &out_dir.join(name))?;
    }

    println!("wrote experiment artifacts to {}", out_dir.display());
    Ok(())
}

fn select_columns(text: &str, x: &str, y: &str) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers().context("input CSV has no header row")?.clone();
    let xi = headers
        .iter()
        .position(|h| h == x)
        .with_context(|| format!("column {x:?} not found in the input CSV"))?;
    let yi = headers
        .iter()
        .position(|h| h == y)
        .with_context(|| format!("column {y:?} not found in the input CSV"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([x, y]).expect("in-memory write");
    for record in reader.records() {
        let record = record.context("cannot parse input CSV")?;
        let xv = record.get(xi).unwrap_or("");
        let yv = record.get(yi).unwrap_or("");
        w.write_record([xv, yv]).expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"))
}

fn cmd_plot(
    input: &Path,
    kind: KindArg,
    out: &Path,
    x: Option<String>,
    y: Option<String>,
) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read {}", input.display()))?;
    let text = match (x, y) {
        (Some(x), Some(y)) => select_columns(&text, &x, &y)?,
        (None, None) => text,
        _ => bail!("--x and --y must be given together"),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    report::emit_plot(&text, kind.into(), out)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_exit_code_three() {
        let numerical = anyhow::Error::new(arxcv::Error::NumericalFailure("diverged".into()))
            .context("while integrating");
        assert_eq!(classify(&numerical), 3);

        let invalid = anyhow::Error::new(arxcv::Error::InvalidArgument("bad".into()));
        assert_eq!(classify(&invalid), 2);

        let io = anyhow::Error::new(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        assert_eq!(classify(&io), 2);
    }

    #[test]
    fn slugs_are_filename_safe() {
        assert_eq!(slug("hv-block(h=3,v=3) joint"), "hv_block_h_3_v_3_joint");
        assert_eq!(slug("loo pointwise"), "loo_pointwise");
    }

    #[test]
    fn column_selection_keeps_named_columns_in_order() {
        let text = "a,b,c\n1,2,3\n4,5,6\n";
        let out = select_columns(text, "c", "a").unwrap();
        assert_eq!(out, "c,a\n3,1\n6,4\n");
        assert!(select_columns(text, "missing", "a").is_err());
    }
}
