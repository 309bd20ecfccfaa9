//! `mprobe`: synthetic clouds, intrinsic-dimension estimates, trajectory
//! shapes and perplexity correlations from the command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mprobe::correlation::correlate_values;
use mprobe::estimators::{
    estimate, Aggregation, EstimatorParams, MleParams, TwonnParams, TwonnVariant,
};
use mprobe::io::manifest::{ManifestFile, Run, RunManifest, SCHEMA_VERSION};
use mprobe::io::report::{read_perplexity_csv, read_report_json, read_trajectory_csv, trajectories_from_rows};
use mprobe::io::{emit_report, read_atf_header, read_atf_with, write_atf, write_manifest, write_report};
use mprobe::io::{NonFinitePolicy, Report, ReportFormat, TrajectoryRow};
use mprobe::knn::{knn_exact, KnnConfig, DEFAULT_BLOCK_SIZE};
use mprobe::synth::{generate, ManifoldKind, ManifoldSpec};
use mprobe::trajectory::{
    classify_shape, ShapeConfig, DEFAULT_MONOTONE_SLACK, DEFAULT_REBOUND_THRESHOLD, DEFAULT_SMOOTH_WINDOW,
};
use mprobe::{CloudTag, Error, Estimator, Layer, PointCloud, Result};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "mprobe", version, about = "Intrinsic-dimension probes for point clouds and diffusion activations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a cloud of known intrinsic dimension and write it as ATF plus a manifest.
    Synth(SynthArgs),
    /// Estimate intrinsic dimension for every selected cloud and emit a trajectory report.
    Estimate(EstimateArgs),
    /// Classify the shape of each trajectory in a report.
    Trajectory(TrajectoryArgs),
    /// Correlate per-prompt ID estimates with prompt perplexity.
    Correlate(CorrelateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ManifoldArg {
    Cube,
    Sphere,
    SwissRoll,
    Gaussian,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    manifold: ManifoldArg,
    /// Intrinsic dimension (ignored for swiss_roll).
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Ambient dimension.
    #[arg(long, default_value_t = 100)]
    ambient: usize,
    /// Number of points.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Standard deviation of isotropic ambient noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives cloud.atf and manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Mle,
    Twonn,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    InverseMeanOfInverses,
    MeanOfLocals,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    LinearFit,
    ClosedForm,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum NonFiniteArg {
    Reject,
    DropRows,
}

#[derive(Args)]
struct EstimateArgs {
    /// Run manifest (.json), a directory holding manifest.json, or a stacked ATF file. Repeatable.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    estimator: EstimatorArg,
    /// Upper end of the MLE neighbour range.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Lower end of the MLE neighbour range.
    #[arg(long, default_value_t = 10)]
    k_min: usize,
    #[arg(long, value_enum, default_value = "inverse-mean-of-inverses")]
    aggregation: AggregationArg,
    /// Fraction of the largest TwoNN ratios left out of the linear fit.
    #[arg(long, default_value_t = 0.10)]
    discard: f64,
    #[arg(long, value_enum, default_value = "linear-fit")]
    variant: VariantArg,
    /// Steps to estimate: all, last, a single step, or an inclusive range A..B.
    #[arg(long, default_value = "all")]
    steps: String,
    /// Report format; defaults to the --out extension, else csv.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rows containing NaN or infinite values.
    #[arg(long, value_enum, default_value = "reject")]
    non_finite: NonFiniteArg,
    /// Query rows per kNN block.
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
    /// Clouds processed concurrently; also the worker thread count.
    #[arg(long, env = "MPROBE_JOBS", default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Trajectory report (.csv or .json) from `mprobe estimate`.
    #[arg(long)]
    input: PathBuf,
    /// Odd moving-average window.
    #[arg(long, default_value_t = DEFAULT_SMOOTH_WINDOW)]
    smooth: usize,
    /// Minimum rebound or drop, in ID units, that counts as a shape.
    #[arg(long, default_value_t = DEFAULT_REBOUND_THRESHOLD)]
    rebound_threshold: f64,
    /// Largest step-to-step rise still allowed in a decreasing curve.
    #[arg(long, default_value_t = DEFAULT_MONOTONE_SLACK)]
    monotone_slack: f64,
    /// Also write the verdicts as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Trajectory report (.csv or .json) from `mprobe estimate`.
    #[arg(long)]
    ids: PathBuf,
    /// CSV with columns prompt_id,perplexity.
    #[arg(long)]
    perplexity: PathBuf,
    /// Layer to correlate; required when the report holds several.
    #[arg(long)]
    layer: Option<String>,
    #[arg(long, value_enum, default_value = "mle")]
    estimator: EstimatorArg,
    /// Step whose ID is used; defaults to each prompt's last step.
    #[arg(long)]
    step: Option<u32>,
    /// Report path (.csv or .json); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Estimation(_) | Error::UndefinedCorrelation(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| writeln!(buf, "{}: {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Trajectory(a) => cmd_trajectory(a),
        Command::Correlate(a) => cmd_correlate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mprobe: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let kind = match a.manifold {
        ManifoldArg::Cube => ManifoldKind::Cube(a.d),
        ManifoldArg::Sphere => ManifoldKind::Sphere(a.d),
        ManifoldArg::SwissRoll => ManifoldKind::SwissRoll,
        ManifoldArg::Gaussian => ManifoldKind::Gaussian(a.d),
    };
    let spec = ManifoldSpec::new(kind, a.ambient, a.n, a.seed).with_noise(a.noise);
    spec.validate()?;
    let (cloud, true_dim) = generate(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let file = "cloud.atf";
    write_atf(&cloud.to_tensor(), a.out.join(file))?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        model_id: "synthetic".into(),
        prompt: format!("{kind} in R^{} with noise {}", a.ambient, a.noise),
        prompt_id: kind.to_string(),
        layer: format!("synthetic_d{true_dim}"),
        total_steps: 1,
        guidance_scale: 0.0,
        num_images: a.n,
        base_seed: a.seed,
        freeze_after_step: None,
        files: vec![ManifestFile { step: 1, path: file.into(), shape: vec![a.n, a.ambient] }],
    };
    write_manifest(&manifest, a.out.join("manifest.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepSelect {
    All,
    Last,
    Range(u32, u32),
}

fn parse_steps(s: &str) -> Result<StepSelect> {
    let bad = || Error::Config(format!("--steps must be all, last, N or A..B, got {s:?}"));
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    match s.trim() {
        "all" => Ok(StepSelect::All),
        "last" => Ok(StepSelect::Last),
        t => match t.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(bad());
                }
                Ok(StepSelect::Range(lo, hi))
            }
            None => num(t).map(|n| StepSelect::Range(n, n)),
        },
    }
}

enum Source {
    Run(Run),
    Atf(PathBuf),
}

struct Job<'a> {
    source: &'a Source,
    file: Option<&'a ManifestFile>,
}

fn open_source(path: &Path) -> Result<(Source, usize, Vec<String>)> {
    let is_atf = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("atf"));
    if is_atf {
        let header = read_atf_header(path)?;
        if header.dims.len() < 2 {
            return Err(Error::Input(format!(
                "{}: need a stacked [N, ...] tensor, got shape {:?}",
                path.display(),
                header.dims
            )));
        }
        return Ok((Source::Atf(path.to_path_buf()), header.dims[0], Vec::new()));
    }
    let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let run = Run::open(&manifest_path)?;
    run.check_files()?;
    let n = run.manifest.num_images;
    let warnings = run.manifest.expectation_warnings();
    Ok((Source::Run(run), n, warnings))
}

fn select_jobs<'a>(source: &'a Source, select: StepSelect) -> Result<Vec<Job<'a>>> {
    let Source::Run(run) = source else {
        return Ok(vec![Job { source, file: None }]);
    };
    let steps = run.manifest.steps();
    let chosen: Vec<&ManifestFile> = match select {
        StepSelect::All => steps,
        StepSelect::Last => steps.last().copied().into_iter().collect(),
        StepSelect::Range(lo, hi) => steps.into_iter().filter(|f| (lo..=hi).contains(&f.step)).collect(),
    };
    if chosen.is_empty() {
        return Err(Error::Config(format!(
            "--steps selects no step of {} (1..={})",
            run.manifest.prompt_id, run.manifest.total_steps
        )));
    }
    Ok(chosen.into_iter().map(|f| Job { source, file: Some(f) }).collect())
}

fn load_job(job: &Job, policy: NonFinitePolicy) -> Result<(CloudTag, PointCloud)> {
    match (job.source, job.file) {
        (Source::Run(run), Some(file)) => run.load_step(file, policy),
        (Source::Atf(path), _) => {
            let contents = read_atf_with(path, policy)?;
            if !contents.dropped_rows.is_empty() {
                log::warn!("{}: dropped {} row(s) with non-finite values", path.display(), contents.dropped_rows.len());
            }
            let prompt_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let tag = CloudTag {
                layer: Layer::Other("atf".into()),
                prompt: prompt_id.clone(),
                prompt_id,
                step: 1,
            };
            Ok((tag, PointCloud::from_stacked(&contents.tensor)?))
        }
        (Source::Run(_), None) => unreachable!("manifest jobs always carry a file"),
    }
}

fn estimator_params(a: &EstimateArgs) -> Vec<EstimatorParams> {
    let mle = EstimatorParams::Mle(MleParams {
        k: a.k,
        k_min: a.k_min,
        aggregation: match a.aggregation {
            AggregationArg::InverseMeanOfInverses => Aggregation::InverseMeanOfInverses,
            AggregationArg::MeanOfLocals => Aggregation::MeanOfLocals,
        },
    });
    let twonn = EstimatorParams::TwoNn(TwonnParams {
        discard_fraction: a.discard,
        variant: match a.variant {
            VariantArg::LinearFit => TwonnVariant::LinearFit,
            VariantArg::ClosedForm => TwonnVariant::ClosedFormMl,
        },
    });
    match a.estimator {
        EstimatorArg::Mle => vec![mle],
        EstimatorArg::Twonn => vec![twonn],
        EstimatorArg::Both => vec![mle, twonn],
    }
}

fn estimate_job(job: &Job, params: &[EstimatorParams], a: &EstimateArgs, policy: NonFinitePolicy) -> Result<Vec<TrajectoryRow>> {
    let (tag, cloud) = load_job(job, policy)?;
    let k = params.iter().map(EstimatorParams::required_k).max().unwrap_or(2);
    let table = knn_exact(&cloud, &KnnConfig::new(k).with_block_size(a.block_size))?;
    let mut rows = Vec::with_capacity(params.len());
    for p in params {
        let est = estimate(&table, p)?;
        for w in &est.warnings {
            log::warn!("{} {} step {} {}: {w}", tag.prompt_id, tag.layer, tag.step, est.estimator);
        }
        rows.push(TrajectoryRow {
            prompt_id: tag.prompt_id.clone(),
            layer: tag.layer.clone(),
            estimator: est.estimator,
            step: tag.step,
            id_value: est.value,
            n_used: est.n_used,
        });
    }
    Ok(rows)
}

fn report_format(format: Option<FormatArg>, out: Option<&Path>) -> ReportFormat {
    match (format, out) {
        (Some(FormatArg::Csv), _) => ReportFormat::Csv,
        (Some(FormatArg::Json), _) => ReportFormat::Json,
        (None, Some(path)) => ReportFormat::from_path(path),
        (None, None) => ReportFormat::Csv,
    }
}

fn emit(report: &Report, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => emit_report(report, format, path),
        None => write_report(report, format, io::stdout().lock()),
    }
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let select = parse_steps(&a.steps)?;
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    if a.block_size == 0 {
        return Err(Error::Config("--block-size must be at least 1".into()));
    }
    let params = estimator_params(&a);
    let policy = match a.non_finite {
        NonFiniteArg::Reject => NonFinitePolicy::Reject,
        NonFiniteArg::DropRows => NonFinitePolicy::DropRows,
    };

    let mut sources = Vec::with_capacity(a.input.len());
    for path in &a.input {
        let (source, n, warnings) = open_source(path)?;
        for p in &params {
            p.validate(n)?;
        }
        for w in warnings {
            log::warn!("{}: {w}", path.display());
        }
        sources.push(source);
    }
    let jobs = sources
        .iter()
        .map(|s| select_jobs(s, select))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker thread(s): {e}", a.jobs)))?;
    let mut rows = Vec::new();
    pool.install(|| -> Result<()> {
        // a chunk of at most `jobs` clouds is resident at a time
        for chunk in jobs.chunks(a.jobs) {
            let done = chunk
                .par_iter()
                .map(|job| estimate_job(job, &params, &a, policy))
                .collect::<Result<Vec<_>>>()?;
            rows.extend(done.into_iter().flatten());
        }
        Ok(())
    })?;
    emit(&Report::trajectories(rows), report_format(a.format, a.out.as_deref()), a.out.as_deref())
}

fn read_rows(path: &Path) -> Result<Vec<TrajectoryRow>> {
    if ReportFormat::from_path(path) == ReportFormat::Json {
        match read_report_json(path)? {
            Report::Trajectories { rows } => Ok(rows),
            Report::Correlation(_) => Err(Error::Input(format!(
                "{}: expected a trajectory report, found a correlation report",
                path.display()
            ))),
        }
    } else {
        read_trajectory_csv(path)
    }
}

fn cmd_trajectory(a: TrajectoryArgs) -> Result<()> {
    let cfg = ShapeConfig {
        smooth_window: a.smooth,
        rebound_threshold: a.rebound_threshold,
        monotone_slack: a.monotone_slack,
    };
    cfg.validate()?;
    let rows = read_rows(&a.input)?;
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: no trajectory rows", a.input.display())));
    }
    let mut verdicts = Vec::new();
    for traj in trajectories_from_rows(&rows)? {
        let v = classify_shape(&traj, &cfg).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("{} {} {}: {m}", traj.prompt_id(), traj.layer(), traj.estimator())),
            other => other,
        })?;
        verdicts.push((traj, v));
    }

    let mut out = io::stdout().lock();
    let stdout_err = |e| Error::Io { path: "<stdout>".into(), source: e };
    writeln!(out, "prompt_id\tlayer\testimator\tsteps\tclass\targmin_step\trebound").map_err(stdout_err)?;
    for (t, v) in &verdicts {
        let class = serde_json::to_value(v.class)?;
        let argmin = v.argmin_step.map_or("-".to_string(), |s| s.to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}",
            t.prompt_id(),
            t.layer(),
            t.estimator(),
            t.len(),
            class.as_str().unwrap_or_default(),
            argmin,
            v.rebound
        )
        .map_err(stdout_err)?;
    }
    if let Some(path) = &a.out {
        let json: Vec<serde_json::Value> = verdicts
            .iter()
            .map(|(t, v)| {
                serde_json::json!({
                    "prompt_id": t.prompt_id(),
                    "layer": t.layer().to_string(),
                    "estimator": t.estimator(),
                    "steps": t.len(),
                    "class": v.class,
                    "argmin_step": v.argmin_step,
                    "rebound": v.rebound,
                })
            })
            .collect();
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        serde_json::to_writer_pretty(&mut w, &json)?;
        writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    Ok(())
}

fn cmd_correlate(a: CorrelateArgs) -> Result<()> {
    let estimator = match a.estimator {
        EstimatorArg::Mle => Estimator::Mle,
        EstimatorArg::Twonn => Estimator::TwoNn,
        EstimatorArg::Both => return Err(Error::Config("--estimator must be mle or twonn".into())),
    };
    let layer = a.layer.as_deref().map(Layer::from_name);
    let rows: Vec<TrajectoryRow> = read_rows(&a.ids)?
        .into_iter()
        .filter(|r| r.estimator == estimator && layer.as_ref().is_none_or(|l| &r.layer == l))
        .collect();

    let mut ids: Vec<(String, f64)> = Vec::new();
    for traj in trajectories_from_rows(&rows)? {
        let picked = match a.step {
            Some(s) => traj.steps().iter().find(|(t, _)| *t == s),
            None => traj.steps().last(),
        };
        let Some((_, est)) = picked else { continue };
        if ids.iter().any(|(p, _)| p == traj.prompt_id()) {
            return Err(Error::Input(format!(
                "prompt {} appears under several layers; pick one with --layer",
                traj.prompt_id()
            )));
        }
        ids.push((traj.prompt_id().to_string(), est.value));
    }
    let ppl = read_perplexity_csv(&a.perplexity)?;
    let result = correlate_values(&ids, &ppl.entries)?;
    if let Some(model) = &ppl.surrogate_model_id {
        log::info!("perplexity from {model}");
    }
    let summary = format!("pearson_r={} spearman_rho={} n={}", result.pearson_r, result.spearman_rho, result.n);
    let format = report_format(None, a.out.as_deref());
    emit(&Report::Correlation(result), format, a.out.as_deref())?;
    if a.out.is_some() {
        println!("{summary}");
    }
    Ok(())
}
