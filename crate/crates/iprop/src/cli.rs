//! The `iprop` command line: `propagate`, `eval`, `analyze`, `inspect`.
//!
//! Exit codes: 0 success (propagate: converged), 1 usage error, 2 I/O or
//! validation error, 3 max-iters reached without convergence (output still
//! written), 4 predictor/protocol error, 5 numerical error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::attribution::{
    export_heatmap, load_attribution, save_attribution, AttributionFormat,
};
use crate::error::{Error, Result};
use crate::graph::{
    self, build_transition, build_weighted_graph_mode, DistanceMode, PropagationConfig,
};
use crate::imaging;
use crate::metrics::{self, AnnotationMask};
use crate::predictor::PredictorSession;
use crate::propagate;
use crate::threads;

pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser)]
#[command(name = "iprop", version, about = "Attribution-map refinement by propagation over a pixel-similarity graph, plus interpretability metrics")]
pub struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Refine an attribution map over the image's pixel-similarity graph.
    Propagate(PropagateArgs),
    /// Evaluate interpretability metrics.
    Eval(EvalArgs),
    /// Transition-row KL and distance-profile analyses.
    Analyze(AnalyzeArgs),
    /// Print a summary of an IPAM file or a run manifest.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct PropagateArgs {
    /// Input image (PNG or JPEG).
    #[arg(long)]
    image: PathBuf,
    /// Base attribution map (IPAM binary or CSV).
    #[arg(long)]
    am: PathBuf,
    /// Refined map output path (IPAM binary).
    #[arg(long)]
    out: PathBuf,
    /// Neighborhood order; defaults to floor(min(H,W)/32), at least 1.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = graph::DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value_t = graph::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = graph::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Also write a 16-bit grayscale heatmap PNG here.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Additionally solve the dense closed form and record the max-abs
    /// deviation (refused above the node cap).
    #[arg(long)]
    oracle: bool,
    /// Node cap for the closed-form oracle.
    #[arg(long, default_value_t = propagate::DEFAULT_ORACLE_CAP)]
    oracle_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricName {
    Pointing,
    Rocauc,
    Insdel,
    Spearman,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: MetricName,
    /// Attribution map(s); repeat for a batch.
    #[arg(long, required = true)]
    am: Vec<PathBuf>,
    /// Annotation mask PNG(s) (nonzero = inside); one per map, or a single
    /// mask shared by every map. Required for pointing and rocauc.
    #[arg(long)]
    mask: Vec<PathBuf>,
    /// Image(s) matching the maps; required for insdel.
    #[arg(long)]
    image: Vec<PathBuf>,
    /// Second map(s) for spearman.
    #[arg(long)]
    am2: Vec<PathBuf>,
    /// Predictor command line (whitespace-split); required for insdel.
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long, default_value_t = 0)]
    class_index: u32,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Directory for per-image insertion/deletion curve CSVs.
    #[arg(long)]
    curves_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    image: PathBuf,
    /// Comma-separated neighborhood orders to compare against
    /// --reference-k (emits one CSV row per pixel and K).
    #[arg(long)]
    kl: Option<String>,
    #[arg(long)]
    reference_k: Option<usize>,
    /// Use only the spatial distance when building the compared graphs.
    #[arg(long)]
    spatial_only: bool,
    /// Emit the (d_s, median d_c) profile instead.
    #[arg(long)]
    distance_profile: bool,
    /// Neighborhood order for the distance profile.
    #[arg(long)]
    k: Option<usize>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// An IPAM attribution file or a JSON run manifest.
    path: PathBuf,
}

/// Everything needed to reproduce a propagate run, written beside the
/// output map.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub k: usize,
    pub gamma: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Thread cap from IPROP_THREADS; 0 means the library default.
    pub threads: usize,
    pub image_sha256: String,
    pub am_sha256: String,
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub final_mse: f64,
    pub converged: bool,
    pub graph_build_ms: f64,
    pub transition_build_ms: f64,
    pub iteration_total_ms: f64,
    pub iteration_mean_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_max_abs_deviation: Option<f64>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha2::Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn thread_cap() -> usize {
    std::env::var(threads::THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Parse `args` (including argv[0]) and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        CliCommand::Propagate(args) => cmd_propagate(args),
        CliCommand::Eval(args) => cmd_eval(args),
        CliCommand::Analyze(args) => cmd_analyze(args),
        CliCommand::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("iprop: {e}");
            e.exit_code()
        }
    }
}

fn cmd_propagate(args: PropagateArgs) -> Result<i32> {
    let image_bytes = read_bytes(&args.image)?;
    let am_bytes = read_bytes(&args.am)?;
    let rgb = imaging::decode_image(&image_bytes)?;
    let (height, width) = (rgb.height(), rgb.width());
    let base_am = load_attribution(&args.am, Some((height, width)))?;
    let k = args
        .k
        .unwrap_or_else(|| PropagationConfig::default_k(height, width));
    let cfg = PropagationConfig::new(k, args.gamma, args.tol, args.max_iters)?;

    let run = propagate::run_iprop(&image_bytes, &base_am, &cfg)?;
    let result = &run.result;
    save_attribution(&result.refined, &args.out, AttributionFormat::Binary)?;
    if let Some(heatmap) = &args.heatmap {
        export_heatmap(&result.refined, heatmap)?;
    }

    let oracle_max_abs_deviation = if args.oracle {
        let lab = imaging::rgb_to_lab(&rgb);
        let p = build_transition(&graph::build_weighted_graph(&lab, cfg.k)?)?;
        let closed =
            propagate::closed_form_solve(&p, &base_am, cfg.gamma, Some(args.oracle_cap))?;
        Some(propagate::max_abs_diff(&result.refined, &closed))
    } else {
        None
    };

    let iteration_total_ms = result.wall_time.as_secs_f64() * 1e3;
    let manifest = RunManifest {
        k: cfg.k,
        gamma: cfg.gamma,
        tol: cfg.tol,
        max_iters: cfg.max_iters,
        threads: thread_cap(),
        image_sha256: sha256_hex(&image_bytes),
        am_sha256: sha256_hex(&am_bytes),
        height,
        width,
        iterations: result.iterations,
        final_mse: result.final_mse,
        converged: result.converged,
        graph_build_ms: run.diagnostics.graph_build.as_secs_f64() * 1e3,
        transition_build_ms: run.diagnostics.transition_build.as_secs_f64() * 1e3,
        iteration_total_ms,
        iteration_mean_ms: iteration_total_ms / result.iterations as f64,
        oracle_max_abs_deviation,
    };
    let manifest_path = manifest_path_for(&args.out);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    if let Some(dev) = oracle_max_abs_deviation {
        println!("oracle max-abs deviation: {dev:e}");
    }
    println!(
        "{} iterations, final MSE {:e}, converged: {}",
        result.iterations, result.final_mse, result.converged
    );
    Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
}

pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    match args.metric {
        MetricName::Pointing | MetricName::Rocauc => {
            let masks = broadcast(&args.mask, args.am.len(), "--mask")?;
            let mut total = 0.0f64;
            for (am_path, mask_path) in args.am.iter().zip(masks) {
                let am = load_attribution(am_path, None)?;
                let mask = AnnotationMask::from_image_bytes(&read_bytes(mask_path)?)?;
                let value = match args.metric {
                    MetricName::Pointing => {
                        let hit = metrics::pointing_game(&am, &mask)?;
                        println!("{}: {}", am_path.display(), if hit { "hit" } else { "miss" });
                        hit as u8 as f64
                    }
                    _ => {
                        let auc = metrics::roc_auc(&am, &mask)?;
                        println!("{}: {auc}", am_path.display());
                        auc
                    }
                };
                total += value;
            }
            println!("mean: {}", total / args.am.len() as f64);
        }
        MetricName::Insdel => {
            let images = broadcast(&args.image, args.am.len(), "--image")?;
            let command = args.predictor.as_deref().ok_or_else(|| {
                Error::Argument("--predictor is required for insdel".into())
            })?;
            let mut session = PredictorSession::open_command_line(command)?;
            let mut sums = (0.0f64, 0.0f64, 0.0f64);
            for (am_path, image_path) in args.am.iter().zip(images) {
                let image = imaging::decode_image(&read_bytes(image_path)?)?;
                let am = load_attribution(am_path, Some((image.height(), image.width())))?;
                let ins = metrics::insertion_curve(
                    &image,
                    &am,
                    &mut session,
                    args.class_index,
                    args.steps,
                )?;
                let del = metrics::deletion_curve(
                    &image,
                    &am,
                    &mut session,
                    args.class_index,
                    args.steps,
                )?;
                let ratio = metrics::dir(ins.auc, del.auc)?;
                println!(
                    "{}: insertion {} deletion {} dir {ratio}",
                    am_path.display(),
                    ins.auc,
                    del.auc
                );
                if let Some(dir_path) = &args.curves_dir {
                    fs::create_dir_all(dir_path).map_err(|e| Error::io(dir_path, e))?;
                    let stem = am_path
                        .file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned();
                    write_curve_csv(&dir_path.join(format!("{stem}.insertion.csv")), &ins)?;
                    write_curve_csv(&dir_path.join(format!("{stem}.deletion.csv")), &del)?;
                }
                sums.0 += ins.auc;
                sums.1 += del.auc;
                sums.2 += ratio;
            }
            let n = args.am.len() as f64;
            println!(
                "mean: insertion {} deletion {} dir {}",
                sums.0 / n,
                sums.1 / n,
                sums.2 / n
            );
        }
        MetricName::Spearman => {
            if args.am2.len() != args.am.len() {
                return Err(Error::Argument(format!(
                    "spearman needs one --am2 per --am ({} vs {})",
                    args.am2.len(),
                    args.am.len()
                )));
            }
            let mut total = 0.0f64;
            for (a, b) in args.am.iter().zip(&args.am2) {
                let rho = metrics::spearman_abs(
                    &load_attribution(a, None)?,
                    &load_attribution(b, None)?,
                )?;
                println!("{} vs {}: {rho}", a.display(), b.display());
                total += rho;
            }
            println!("mean: {}", total / args.am.len() as f64);
        }
    }
    Ok(0)
}

fn broadcast<'a>(
    paths: &'a [PathBuf],
    count: usize,
    flag: &str,
) -> Result<Vec<&'a PathBuf>> {
    if paths.len() == count {
        Ok(paths.iter().collect())
    } else if paths.len() == 1 {
        Ok(std::iter::repeat_n(&paths[0], count).collect())
    } else {
        Err(Error::Argument(format!(
            "{flag} must appear once or once per --am ({} vs {count})",
            paths.len()
        )))
    }
}

fn write_curve_csv(path: &Path, curve: &metrics::MetricCurve) -> Result<()> {
    let mut out = String::from("fraction,score\n");
    for (fraction, score) in &curve.points {
        out.push_str(&format!("{fraction},{score}\n"));
    }
    out.push_str(&format!("# auc,{}\n", curve.auc));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32> {
    let image = imaging::decode_image(&read_bytes(&args.image)?)?;
    let lab = imaging::rgb_to_lab(&image);
    let mode = if args.spatial_only {
        DistanceMode::SpatialOnly
    } else {
        DistanceMode::Combined
    };

    let mut csv = String::new();
    if let Some(kl_list) = &args.kl {
        let reference_k = args.reference_k.ok_or_else(|| {
            Error::Argument("--kl requires --reference-k".into())
        })?;
        let ks: Vec<usize> = kl_list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Argument(format!("bad K value {s:?} in --kl")))
            })
            .collect::<Result<_>>()?;
        let reference =
            build_transition(&build_weighted_graph_mode(&lab, reference_k, mode)?)?;
        csv.push_str("node,k,kl\n");
        for k in ks {
            if k > reference_k {
                return Err(Error::Argument(format!(
                    "compared K={k} exceeds reference K={reference_k}; \
                     its rows cannot embed into the reference support"
                )));
            }
            let compared = build_transition(&build_weighted_graph_mode(&lab, k, mode)?)?;
            for node in 0..compared.dimension() {
                let kl = graph::transition_row_kl(compared.row(node), reference.row(node))?;
                csv.push_str(&format!("{node},{k},{kl}\n"));
            }
        }
    } else if args.distance_profile {
        let k = args
            .k
            .unwrap_or_else(|| PropagationConfig::default_k(image.height(), image.width()));
        csv.push_str("d_s,median_d_c\n");
        for (d_s, median) in graph::distance_profile(&lab, k)? {
            csv.push_str(&format!("{d_s},{median}\n"));
        }
    } else {
        return Err(Error::Argument(
            "analyze needs --kl or --distance-profile".into(),
        ));
    }

    match &args.out {
        Some(path) => fs::write(path, csv).map_err(|e| Error::io(path, e))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(0)
}

fn cmd_inspect(args: InspectArgs) -> Result<i32> {
    let bytes = read_bytes(&args.path)?;
    if bytes.starts_with(b"IPAM") {
        let am = load_attribution(&args.path, None)?;
        let argmax = am.argmax();
        println!("format: IPAM v1");
        println!("dimensions: {}x{}", am.height(), am.width());
        println!("min: {}", am.min());
        println!("max: {}", am.max());
        println!("mean: {}", am.mean());
        println!(
            "argmax: ({}, {}) value {}",
            argmax / am.width(),
            argmax % am.width(),
            am.values()[argmax]
        );
        return Ok(0);
    }
    // normalized 2D map written as CSV also inspects fine
    if let Ok(am) = load_attribution(&args.path, None) {
        println!("format: CSV");
        println!("dimensions: {}x{}", am.height(), am.width());
        println!("min: {}", am.min());
        println!("max: {}", am.max());
        println!("mean: {}", am.mean());
        let argmax = am.argmax();
        println!(
            "argmax: ({}, {}) value {}",
            argmax / am.width(),
            argmax % am.width(),
            am.values()[argmax]
        );
        return Ok(0);
    }
    let manifest: RunManifest = serde_json::from_slice(&bytes).map_err(|_| {
        Error::Format(format!(
            "{} is neither an IPAM map, a CSV map, nor a run manifest",
            args.path.display()
        ))
    })?;
    println!("format: run manifest");
    println!(
        "{}",
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    );
    Ok(0)
}
