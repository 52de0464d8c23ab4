//! `decam` command-line driver.
//!
//! Exit codes: 0 success, 1 usage / input problems, 2 scorer failure,
//! 3 degenerate result (or failed self-test).

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::aggregation::{aggregate, select_candidates, AggregationError};
use crate::de::{evolve_observed, DeConfig, EvolveError};
use crate::genome::GenomeError;
use crate::io::{self, FormatError, RunManifest};
use crate::metrics::{diff_auc, MetricsConfig, MetricsError};
use crate::scorer::oracle::{
    make_disc_oracle, make_two_blob_oracle, Disc, OracleError, TwoClassAdapter,
};
use crate::scorer::{serve, BridgeScorer, Scorer, ScorerError};
use crate::selftest;
use crate::tensor::ImageTensor;

pub const BRIDGE_ENV: &str = "DECAM_BRIDGE_CMD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Usage = 1,
    Scorer = 2,
    Degenerate = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Usage,
            message: msg.to_string(),
        }
    }

    fn scorer(msg: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Scorer,
            message: msg.to_string(),
        }
    }

    fn degenerate(msg: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Degenerate,
            message: msg.to_string(),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::usage(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::usage(e)
    }
}

impl From<ScorerError> for CliError {
    fn from(e: ScorerError) -> Self {
        CliError::scorer(e)
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::usage(e)
    }
}

impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> Self {
        match e {
            AggregationError::Degenerate
            | AggregationError::NoCandidates
            | AggregationError::EmptyPopulation => CliError::degenerate(e),
            other => CliError::usage(other),
        }
    }
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        match e {
            EvolveError::Scorer { .. } => CliError::scorer(e),
            EvolveError::Config(_) | EvolveError::Genome(GenomeError::DimensionMismatch { .. }) => {
                CliError::usage(e)
            }
            EvolveError::Genome(GenomeError::InvalidGeometry { .. }) => CliError::usage(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Scorer(s) => CliError::scorer(s),
            other => CliError::usage(other),
        }
    }
}

/// Where model scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    /// `disc:ROW,COL,RADIUS`
    Disc(Disc),
    /// `blobs:ROW1,COL1,RADIUS1,ROW2,COL2,RADIUS2`
    Blobs(Disc, Disc),
    /// `bridge:COMMAND`
    Bridge(String),
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| {
            format!("scorer `{s}` should look like disc:R,C,RAD, blobs:..., or bridge:CMD")
        })?;
        let numbers = |n: usize| -> Result<Vec<f64>, String> {
            let v: Vec<f64> = rest
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
                .collect::<Result<_, _>>()?;
            if v.len() != n {
                return Err(format!("`{kind}` takes {n} numbers, got {}", v.len()));
            }
            Ok(v)
        };
        match kind {
            "disc" => {
                let v = numbers(3)?;
                Ok(ScorerSpec::Disc(Disc::new(v[0], v[1], v[2])))
            }
            "blobs" => {
                let v = numbers(6)?;
                Ok(ScorerSpec::Blobs(
                    Disc::new(v[0], v[1], v[2]),
                    Disc::new(v[3], v[4], v[5]),
                ))
            }
            "bridge" if !rest.trim().is_empty() => Ok(ScorerSpec::Bridge(rest.to_string())),
            "bridge" => Err("bridge scorer needs a command".into()),
            other => Err(format!("unknown scorer kind `{other}`")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "decam",
    version,
    about = "Black-box saliency maps via differential evolution over ellipse masks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Produce a saliency map for one image.
    Explain(ExplainArgs),
    /// Insertion/deletion evaluation of a saliency map.
    Evaluate(EvaluateArgs),
    /// Built-in correctness checks.
    Selftest(SelftestArgs),
    /// Serve a synthetic oracle over the bridge protocol on stdio.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// disc:ROW,COL,RADIUS | blobs:R1,C1,RAD1,R2,C2,RAD2 | bridge:COMMAND
    /// (falls back to $DECAM_BRIDGE_CMD)
    #[arg(long)]
    pub scorer: Option<ScorerSpec>,
    /// Number of bridge processes to launch.
    #[arg(long, default_value_t = 1)]
    pub bridge_workers: usize,
    /// Seconds to wait for a bridge reply.
    #[arg(long, default_value_t = 60)]
    pub bridge_timeout: u64,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    /// Sparsity penalty weight; must match the scale of the model's logits.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub cr: f64,
    #[arg(long, default_value_t = 0.8)]
    pub f: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 200)]
    pub pop: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write overlay.png.
    #[arg(long)]
    pub overlay: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Raw saliency file written by `explain`.
    #[arg(long)]
    pub sm: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    #[command(flatten)]
    pub scorer: ScorerArgs,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 5.0)]
    pub blur_sigma: f64,
    #[arg(long, default_value_t = 11)]
    pub blur_kernel: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Optional bridge to check for SCORE/LOGITS_ALL agreement.
    #[arg(long)]
    pub scorer: Option<ScorerSpec>,
    #[arg(long, default_value_t = 0)]
    pub class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Reference image for the oracle.
    #[arg(long)]
    pub image: PathBuf,
    /// disc:... or blobs:...
    #[arg(long)]
    pub scorer: ScorerSpec,
}

fn resolve_spec(args: &ScorerArgs) -> Result<ScorerSpec, CliError> {
    if let Some(spec) = &args.scorer {
        return Ok(spec.clone());
    }
    match std::env::var(BRIDGE_ENV) {
        Ok(cmd) if !cmd.trim().is_empty() => Ok(ScorerSpec::Bridge(cmd)),
        _ => Err(CliError::usage(format!(
            "no scorer given: pass --scorer or set {BRIDGE_ENV}"
        ))),
    }
}

fn build_oracle(
    spec: &ScorerSpec,
    image: &ImageTensor,
) -> Result<Option<crate::scorer::RegionOracle>, CliError> {
    Ok(match spec {
        ScorerSpec::Disc(d) => Some(make_disc_oracle(image, *d)?),
        ScorerSpec::Blobs(a, b) => Some(make_two_blob_oracle(image, *a, *b)?),
        ScorerSpec::Bridge(_) => None,
    })
}

fn build_scorer(
    spec: &ScorerSpec,
    args: &ScorerArgs,
    image: &ImageTensor,
) -> Result<Box<dyn Scorer>, CliError> {
    if let Some(oracle) = build_oracle(spec, image)? {
        return Ok(Box::new(oracle));
    }
    let ScorerSpec::Bridge(cmd) = spec else {
        unreachable!()
    };
    let bridge = BridgeScorer::spawn(
        cmd,
        args.bridge_workers,
        Duration::from_secs(args.bridge_timeout),
    )?;
    let expected = bridge.handshake().shape();
    if expected != image.shape() {
        return Err(CliError::scorer(ScorerError::ShapeMismatch {
            expected,
            got: image.shape(),
        }));
    }
    Ok(Box::new(bridge))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    builder.build().map_err(CliError::usage)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<(), CliError> {
    let started = unix_now();
    let image = io::load_image(&args.image)?;
    let spec = resolve_spec(&args.scorer)?;
    let alpha = match (args.alpha, &spec) {
        (Some(a), _) => a,
        (None, ScorerSpec::Bridge(_)) => {
            eprintln!(
                "warning: --alpha not given; using {} but the penalty weight must match the scale of the model's logits",
                DeConfig::default().alpha
            );
            DeConfig::default().alpha
        }
        (None, _) => DeConfig::default().alpha,
    };
    let cfg = DeConfig {
        crossover: args.cr,
        weight: args.f,
        ellipses: args.k,
        max_iter: args.max_iter,
        population: args.pop,
        alpha,
        seed: args.seed,
        batch_size: args.batch_size,
    };
    cfg.validate().map_err(CliError::usage)?;
    let scorer = build_scorer(&spec, &args.scorer, &image)?;
    fs::create_dir_all(&args.out_dir)?;

    let pool = thread_pool(args.jobs)?;
    let quiet = args.quiet;
    let (pop, trace) = pool.install(|| {
        evolve_observed(&image, &scorer, args.class, &cfg, |gen, stats| {
            if !quiet && (gen % 10 == 0 || gen == cfg.max_iter) {
                eprintln!(
                    "generation {gen:>4}: mean {:.5} max {:.5}",
                    stats.mean, stats.max
                );
            }
        })
    })?;
    let candidates = select_candidates(&pop)?;
    let sm = aggregate(&candidates, image.height(), image.width())?;

    let png_path = args.out_dir.join("saliency.png");
    let raw_path = args.out_dir.join("saliency.sm");
    let manifest_path = args.out_dir.join("manifest.txt");
    io::save_sm_png(&sm, &png_path)?;
    write_file(&raw_path, |w| io::write_sm_raw(&sm, w))?;
    let overlay_path = args.out_dir.join("overlay.png");
    if args.overlay {
        io::save_overlay(&image, &sm, &overlay_path)?;
    }

    let best = pop.best().and_then(|b| b.fitness()).unwrap_or(f64::NAN);
    let mut m = RunManifest::new();
    m.set("command", "explain")
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("image", args.image.display())
        .set("image_sha256", io::sha256_file(&args.image)?)
        .set(
            "image_shape",
            format!("{}x{}x{}", image.height(), image.width(), image.channels()),
        )
        .set("scorer", scorer.identity())
        .set("class_index", args.class)
        .set("cr", cfg.crossover)
        .set("f", cfg.weight)
        .set("k", cfg.ellipses)
        .set("max_iter", cfg.max_iter)
        .set("pop", cfg.population)
        .set("alpha", cfg.alpha)
        .set("alpha_given", args.alpha.is_some())
        .set("seed", cfg.seed)
        .set("batch_size", cfg.batch_size)
        .set("evaluations", trace.evaluations)
        .set("scorer_calls", trace.scorer_calls)
        .set("best_fitness", best)
        .set("candidates", candidates.len())
        .set("elapsed_s", format!("{:.3}", trace.elapsed.as_secs_f64()))
        .set("started_unix", started)
        .set("finished_unix", unix_now())
        .set("out_sm_png", png_path.display())
        .set("out_sm_raw", raw_path.display());
    if args.overlay {
        m.set("out_overlay", overlay_path.display());
    }
    fs::write(&manifest_path, m.to_text())?;

    println!(
        "best fitness {best:.5}, {} candidates, {} evaluations in {:.1}s -> {}",
        candidates.len(),
        trace.evaluations,
        trace.elapsed.as_secs_f64(),
        raw_path.display()
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let image = io::load_image(&args.image)?;
    let sm = io::read_sm_raw(File::open(&args.sm)?)?;
    if (sm.height(), sm.width()) != (image.height(), image.width()) {
        return Err(CliError::usage(format!(
            "saliency map is {}x{} but image is {}x{}",
            sm.height(),
            sm.width(),
            image.height(),
            image.width()
        )));
    }
    let spec = resolve_spec(&args.scorer)?;
    let scorer = build_scorer(&spec, &args.scorer, &image)?;
    let cfg = MetricsConfig {
        steps: args.steps,
        blur_sigma: args.blur_sigma,
        blur_kernel: args.blur_kernel,
        batch_size: args.batch_size.max(1),
    };
    let report =
        thread_pool(args.jobs)?.install(|| diff_auc(&image, &sm, &scorer, args.class, &cfg))?;

    fs::create_dir_all(&args.out_dir)?;
    write_file(&args.out_dir.join("insertion.csv"), |w| {
        io::write_curve_csv(&report.insertion, w)
    })?;
    write_file(&args.out_dir.join("deletion.csv"), |w| {
        io::write_curve_csv(&report.deletion, w)
    })?;
    write_file(&args.out_dir.join("report.txt"), |w| {
        io::write_report(&report, w)
    })?;
    println!(
        "AUC insertion {:.5}, deletion {:.5}, DiffAUC {:.3}",
        report.auc_insertion, report.auc_deletion, report.diff_auc
    );
    Ok(())
}

pub fn cmd_selftest(args: &SelftestArgs) -> Result<(), CliError> {
    let mut checks = selftest::run_builtin(args.seed);
    match &args.scorer {
        Some(ScorerSpec::Bridge(cmd)) => {
            let bridge = BridgeScorer::spawn(cmd, 1, crate::scorer::DEFAULT_BRIDGE_TIMEOUT)?;
            checks.push(selftest::bridge_consistency(&bridge, args.class, args.seed));
        }
        Some(_) => return Err(CliError::usage("selftest --scorer only accepts a bridge")),
        None => {}
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!("{} checks, {} failed", checks.len(), failed);
    if failed > 0 {
        return Err(CliError::degenerate(format!(
            "{failed} self-test checks failed"
        )));
    }
    Ok(())
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let image = io::load_image(&args.image)?;
    let oracle = build_oracle(&args.scorer, &image)?
        .ok_or_else(|| CliError::usage("serve needs a disc: or blobs: oracle"))?;
    serve::serve_stdio(&TwoClassAdapter(oracle)).map_err(CliError::scorer)
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitCode::Usage
            } else {
                ExitCode::Success
            };
            let _ = e.print();
            return code as i32;
        }
    };
    let result = match &cli.command {
        Command::Explain(a) => cmd_explain(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::Success as i32,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code as i32
        }
    }
}
