//! `gmm-otda` command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 on I/O or parse failures.

use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmm_otda::data::{load_csv, load_csv_features, make_shifted_blobs, save_csv};
use gmm_otda::eval::{adapt, emit_plot_data, PreparedTask, Role};
use gmm_otda::gmm::{em_fit, select_k_bic, EmConfig};
use gmm_otda::{Dataset, Error, ExperimentConfig, Method, Result, StandardizationParams};

#[derive(Parser)]
#[command(name = "gmm-otda", version, about = "Domain adaptation with Gaussian mixture optimal transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled source/target pair of shifted Gaussian blobs.
    Gen(GenArgs),
    /// Fit a diagonal Gaussian mixture to a CSV and save it as JSON.
    Fit(FitArgs),
    /// Run one adaptation method on a source/target pair.
    Adapt(AdaptArgs),
    /// Run an experiment grid from a JSON config.
    Eval(EvalArgs),
    /// Write 2D scatter data (and optionally an SVG) for point sets.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Samples per class in each domain.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    n_per_class: u64,
    /// Number of classes.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(2..))]
    classes: u64,
    /// Feature dimension.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(2..))]
    dim: u64,
    /// Target translation, comma separated; missing trailing entries are zero.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "5,0")]
    shift: Vec<f64>,
    /// Target rotation in the first two dimensions, radians.
    #[arg(long, default_value_t = FRAC_PI_4, allow_hyphen_values = true)]
    rotate: f64,
    /// Standard deviation of every blob.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV for the source domain.
    #[arg(long)]
    out_src: PathBuf,
    /// Output CSV for the target domain (labels kept for scoring).
    #[arg(long)]
    out_tgt: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Number of components.
    #[arg(long, conflicts_with = "k_sweep", required_unless_present = "k_sweep",
          value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Pick K by BIC over an inclusive range such as `2..8`.
    #[arg(long)]
    k_sweep: Option<String>,
    /// Name of the label column, which is skipped unless `--labeled` is set.
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Read the labels and store P(label | component) in the mixture.
    #[arg(long)]
    labeled: bool,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    /// One of: source-only, otda-emd, otda-sinkhorn, otda-linear, gmm-otda-m,
    /// gmm-otda-e, gmm-otda-t.
    #[arg(long)]
    method: String,
    /// Labeled source CSV.
    #[arg(long)]
    src: PathBuf,
    /// Target CSV; its label column, if any, is never read.
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Source mixture size (default: number of classes).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k_src: Option<u64>,
    /// Target mixture size (default: number of classes).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k_tgt: Option<u64>,
    /// Entropic strength for otda-sinkhorn (default: 0.01 x mean cost).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Standardize both domains with source statistics while adapting;
    /// outputs are mapped back to the original units.
    #[arg(long)]
    standardize: bool,
    /// Allow empirical plans beyond the default size limit.
    #[arg(long)]
    allow_large: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV: transported labeled points, or one `label` column per
    /// target row for gmm-otda-m. Diagnostics go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for results.csv and report.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads for grid cells (default: all cores).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Record wall-clock times (makes outputs run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Source CSV, plotted with its labels when present.
    #[arg(long)]
    src: Option<PathBuf>,
    /// Target CSV, plotted without labels.
    #[arg(long)]
    tgt: Option<PathBuf>,
    /// Transported points written by `adapt`.
    #[arg(long)]
    transported: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Output scatter CSV; projection details go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG scatter here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn has_column(path: &Path, name: &str) -> Result<bool> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header = text.lines().next().unwrap_or("");
    Ok(header.split(',').any(|h| h.trim() == name))
}

/// Loads a CSV with labels if it has the label column, without otherwise.
fn load_optionally_labeled(path: &Path, label_column: &str) -> Result<Dataset> {
    if has_column(path, label_column)? {
        load_csv(path, Some(label_column))
    } else {
        load_csv(path, None)
    }
}

fn parse_k_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || invalid(format!("--k-sweep expects MIN..MAX with 1 <= MIN <= MAX, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

fn run_gen(a: GenArgs) -> Result<()> {
    let d = a.dim as usize;
    if a.shift.len() > d {
        return Err(invalid(format!("--shift has {} entries for dimension {d}", a.shift.len())));
    }
    let mut shift = a.shift.clone();
    shift.resize(d, 0.0);
    let (src, tgt) = stage(
        "generating blobs",
        make_shifted_blobs(
            a.n_per_class as usize,
            a.classes as usize,
            d,
            &shift,
            a.rotate,
            a.spread,
            a.seed,
        ),
    )?;
    stage("writing source", save_csv(&src, &a.out_src))?;
    stage("writing target", save_csv(&tgt, &a.out_tgt))?;
    println!(
        "wrote {} source and {} target samples (d={d}, {} classes)",
        src.n_samples(),
        tgt.n_samples(),
        a.classes
    );
    Ok(())
}

fn run_fit(a: FitArgs) -> Result<()> {
    let data = stage(
        "loading data",
        if a.labeled {
            load_csv(&a.data, Some(&a.label_column))
        } else {
            load_csv_features(&a.data, &[&a.label_column])
        },
    )?;
    let cfg = EmConfig {
        max_iter: a.max_iter,
        tol: EmConfig::default().tol,
        seed: a.seed,
        n_restarts: a.restarts,
    };
    let fit = match (&a.k, &a.k_sweep) {
        (Some(k), _) => stage("fitting mixture", em_fit(&data, *k as usize, &cfg))?,
        (None, Some(range)) => {
            let ks = parse_k_range(range)?;
            let (fit, scores) = stage("selecting K by BIC", select_k_bic(&data, ks, &cfg))?;
            for (k, bic) in scores {
                println!("K={k} BIC={bic:.3}");
            }
            fit
        }
        (None, None) => return Err(invalid("give --k or --k-sweep")),
    };
    let gmm = if a.labeled {
        stage("labeling components", fit.gmm.label_components(&data))?.0
    } else {
        fit.gmm
    };
    stage("writing mixture", gmm.save_json(&a.out))?;
    println!(
        "K={} mean log-likelihood {:.6} after {} EM steps",
        gmm.n_components(),
        fit.trace.last().copied().unwrap_or(f64::NAN),
        fit.trace.len()
    );
    Ok(())
}

fn run_adapt(a: AdaptArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    let src = stage("loading source", load_csv(&a.src, Some(&a.label_column)))?;
    let tgt = stage(
        "loading target",
        load_csv_features(&a.tgt, &[&a.label_column]),
    )?;
    let params = a.standardize.then(|| StandardizationParams::fit(src.features().view()));
    let (src_in, tgt_in) = match &params {
        Some(p) => (
            Dataset::labeled(
                p.apply(src.features().view())?,
                src.require_labels("source domain")?.to_vec(),
                src.n_classes(),
            )?,
            Dataset::unlabeled(p.apply(tgt.features().view())?)?,
        ),
        None => (src, tgt),
    };
    let mut config = ExperimentConfig::new(Vec::new());
    config.k_src = a.k_src.map(|k| k as usize);
    config.k_tgt = a.k_tgt.map(|k| k as usize);
    config.epsilon = a.epsilon;
    config.seed = a.seed;
    config.allow_large = a.allow_large;
    if let Some(e) = a.epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(invalid(format!("--epsilon must be positive, got {e}")));
        }
    }
    let task = PreparedTask::from_domains("cli", src_in, tgt_in)?;
    let mut result = stage(&format!("running {method}"), adapt(&task, method, &config))?;
    if let (Some(p), Some(points)) = (&params, &result.transported) {
        let back = p.invert(points.features().view())?;
        let labels = points.require_labels("transported points")?.to_vec();
        result.transported = Some(Dataset::labeled(back, labels, points.n_classes())?);
    }
    stage("writing output", result.export(&a.out))?;
    let d = &result.diagnostics;
    let mut line = format!("{method}: class counts {:?}", d.class_counts);
    if let Some(mw2) = d.mw2 {
        line.push_str(&format!(", MW2 {mw2:.6}"));
    }
    if d.converged == Some(false) {
        line.push_str(", solver did not converge");
    }
    println!("{line}");
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mut config = stage("loading config", ExperimentConfig::load(&a.config))?;
    config.record_timing |= a.timing;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        pool = pool.num_threads(j as usize);
    }
    let pool = pool
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let report = pool.install(|| gmm_otda::run_experiment(&config))?;
    stage("writing report", report.write(&a.out_dir))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for m in &report.means {
        println!("{:<14} {:.4}", m.method.to_string(), m.accuracy);
    }
    Ok(())
}

fn run_plot(a: PlotArgs) -> Result<()> {
    let mut sets = Vec::new();
    if let Some(p) = &a.src {
        sets.push((Role::Source, stage("loading source", load_optionally_labeled(p, &a.label_column))?));
    }
    if let Some(p) = &a.tgt {
        sets.push((Role::Target, stage("loading target", load_csv_features(p, &[&a.label_column]))?));
    }
    if let Some(p) = &a.transported {
        sets.push((
            Role::Transported,
            stage("loading transported points", load_optionally_labeled(p, &a.label_column))?,
        ));
    }
    if sets.is_empty() {
        return Err(invalid("give at least one of --src, --tgt, --transported"));
    }
    let refs: Vec<(Role, &Dataset)> = sets.iter().map(|(r, d)| (*r, d)).collect();
    let info = stage("writing plot data", emit_plot_data(&refs, &a.out, a.svg.as_deref()))?;
    println!(
        "{} projection of d={} data, {:.1}% of variance shown",
        info.projection,
        info.input_dim,
        100.0 * info.variance_captured
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Fit(a) => run_fit(a),
        Command::Adapt(a) => run_adapt(a),
        Command::Eval(a) => run_eval(a),
        Command::PlotData(a) => run_plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
