//! `birfr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use birfr::bench::{
    degrade, load_config, load_dataset, load_gallery_dir, make_synth, run_benchmark, train_block_weights, BenchConfig, DegradeSpec,
    LoadOptions, SynthOptions, TsfMode,
};
use birfr::detect::{crop_chip, detect_faces, load_cascade, CascadeModel, DetectParams};
use birfr::illum::{default_normal_map, NormalMap};
use birfr::image::{load_image, save_image};
use birfr::lbp::{default_weight_map, BlockWeightMap};
use birfr::recognizer::{recognize, Algorithm, DecisionRule, MatchResult, RecognizerConfig};
use birfr::tsf::{Penalty, SolverConfig, TransformSet};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "birfr", version, about = "Blur-, illumination- and expression-robust face identification")]
struct Cli {
    /// `key = value` file with defaults for any long option.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Seed for degradations and corpus generation.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Identify one probe image against a gallery directory.
    Identify {
        probe: PathBuf,
        /// Directory with `<class>/*.pgm`, or a dataset root containing `gallery/`.
        #[arg(long)]
        gallery: PathBuf,
        /// Output format: table, csv or json.
        #[arg(long)]
        format: Option<String>,
        #[command(flatten)]
        rec: RecognizerArgs,
        #[command(flatten)]
        det: DetectArgs,
    },
    /// Classify every probe of a dataset and report recognition rates.
    Bench {
        root: PathBuf,
        /// Also write the CSV report here.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        /// Fail on unreadable images instead of skipping them.
        #[arg(long)]
        strict: bool,
        /// Replace true labels by random classes (harness sanity check).
        #[arg(long)]
        scramble: bool,
        #[command(flatten)]
        rec: RecognizerArgs,
        #[command(flatten)]
        deg: DegradeArgs,
        #[command(flatten)]
        det: DetectArgs,
    },
    /// Apply seeded synthetic degradations to one image.
    Degrade {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        deg: DegradeArgs,
    },
    /// Run the cascade detector and print `x y width height` per face.
    Detect {
        image: PathBuf,
        #[command(flatten)]
        det: DetectArgs,
        /// Save a 64x64 chip per detection into this directory.
        #[arg(long, value_name = "DIR")]
        crop_dir: Option<PathBuf>,
    },
    /// Learn per-block LBP weights from a dataset.
    TrainWeights {
        root: PathBuf,
        /// Probe blur used during training.
        #[arg(long)]
        sigma: Option<f64>,
        /// LBP grid as `BXxBY`.
        #[arg(long)]
        grid: Option<String>,
        /// Output weight file (default: stdout).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write the procedural synthetic corpus.
    MakeSynth {
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        gallery_per_class: Option<usize>,
        #[arg(long)]
        probes_per_class: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct RecognizerArgs {
    /// brfr, birfr or biefr.
    #[arg(long)]
    algo: Option<String>,
    /// Translation radius k of the TSF set.
    #[arg(long)]
    radius: Option<usize>,
    /// Absolute L1 weight (overrides --beta-rel).
    #[arg(long)]
    beta: Option<f64>,
    /// L1 weight relative to max |A^T W^2 p|.
    #[arg(long)]
    beta_rel: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    outer_iters: Option<usize>,
    /// LBP grid as `BXxBY`.
    #[arg(long)]
    grid: Option<String>,
    /// Block weight file (as written by train-weights).
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// lbp or residual.
    #[arg(long)]
    decision: Option<String>,
    /// Expression-removal strength in [0, 1].
    #[arg(long)]
    fer_strength: Option<f64>,
    /// Normal map file (default: built-in ellipsoid cap).
    #[arg(long, value_name = "FILE")]
    normals: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Gaussian blur width (0 = off).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    tsf_radius: Option<usize>,
    /// none, random-line or random-sparse.
    #[arg(long)]
    tsf_mode: Option<String>,
    /// Random relighting.
    #[arg(long)]
    relight: bool,
    /// Checkerboard perturbation amplitude.
    #[arg(long)]
    fer_perturb: Option<f64>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Cascade file; when given, images are cropped to the largest face.
    #[arg(long, value_name = "FILE")]
    cascade: Option<PathBuf>,
    #[arg(long)]
    scale_step: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    min_overlap: Option<f64>,
}

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

const CONFIG_KEYS: &[&str] = &[
    "algo",
    "radius",
    "beta",
    "beta_rel",
    "max_iters",
    "rel_tol",
    "outer_iters",
    "grid",
    "weights",
    "decision",
    "fer_strength",
    "normals",
    "sigma",
    "tsf_radius",
    "tsf_mode",
    "relight",
    "fer_perturb",
    "cascade",
    "scale_step",
    "stride",
    "min_overlap",
    "threads",
    "seed",
    "verbose",
    "strict",
    "scramble",
    "format",
    "classes",
    "gallery_per_class",
    "probes_per_class",
];

/// Config-file values, keyed with underscores.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let file = match path {
            Some(p) => load_config(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?,
            None => BTreeMap::new(),
        };
        let mut normalized = BTreeMap::new();
        for (k, v) in file {
            let key = k.replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("unknown config key {k:?}")));
            }
            normalized.insert(key, v);
        }
        Ok(Settings { file: normalized })
    }

    /// Command-line value, else config value, else `None`.
    fn get<T: std::str::FromStr>(&self, cli: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key {key}: {v:?}: {e}"))),
            None => Ok(None),
        }
    }

    fn flag(&self, cli: bool, key: &str) -> anyhow::Result<bool> {
        Ok(cli || self.get::<bool>(None, key)?.unwrap_or(false))
    }
}

fn parse_grid(s: &str) -> anyhow::Result<(usize, usize)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("grid {s:?} must look like 8x8")))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| usage(format!("grid {s:?} must look like 8x8")));
    Ok((parse(a)?, parse(b)?))
}

fn parse_with<T: std::str::FromStr<Err = birfr::Error>>(v: Option<String>, default: T) -> anyhow::Result<T> {
    match v {
        Some(s) => s.parse().map_err(|e: birfr::Error| usage(e.to_string())),
        None => Ok(default),
    }
}

fn algorithm(rec: &RecognizerArgs, st: &Settings) -> anyhow::Result<Algorithm> {
    parse_with(st.get(rec.algo.clone(), "algo")?, Algorithm::Birfr)
}

fn recognizer_config(rec: &RecognizerArgs, st: &Settings) -> anyhow::Result<RecognizerConfig> {
    let defaults = SolverConfig::default();
    let penalty = match (st.get(rec.beta, "beta")?, st.get(rec.beta_rel, "beta_rel")?) {
        (Some(b), _) => Penalty::Absolute(b),
        (None, Some(r)) => Penalty::Relative(r),
        (None, None) => defaults.penalty,
    };
    let solver = SolverConfig {
        penalty,
        max_iters: st.get(rec.max_iters, "max_iters")?.unwrap_or(defaults.max_iters),
        rel_tol: st.get(rec.rel_tol, "rel_tol")?.unwrap_or(defaults.rel_tol),
        outer_iters: st.get(rec.outer_iters, "outer_iters")?.unwrap_or(defaults.outer_iters),
    };
    solver.validate().map_err(|e| usage(e.to_string()))?;
    let grid = match st.get(rec.grid.clone(), "grid")? {
        Some(g) => parse_grid(&g)?,
        None => (8, 8),
    };
    let block_weights = match st.get(rec.weights.clone(), "weights")? {
        Some(path) => BlockWeightMap::load(&path)?,
        None => default_weight_map(grid.0, grid.1).map_err(|e| usage(e.to_string()))?,
    };
    let grid = (block_weights.blocks_x(), block_weights.blocks_y());
    let normals = match st.get(rec.normals.clone(), "normals")? {
        Some(path) => NormalMap::load(&path)?,
        None => default_normal_map(),
    };
    let fer_strength = st.get(rec.fer_strength, "fer_strength")?.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&fer_strength) {
        return Err(usage(format!("fer-strength {fer_strength} outside [0, 1]")));
    }
    Ok(RecognizerConfig {
        transforms: TransformSet::new(st.get(rec.radius, "radius")?.unwrap_or(5)),
        solver,
        grid,
        block_weights,
        pixel_weights: None,
        decision: parse_with(st.get(rec.decision.clone(), "decision")?, DecisionRule::Lbp)?,
        fer_strength,
        normals: Arc::new(normals),
    })
}

fn degrade_spec(deg: &DegradeArgs, st: &Settings, default_sigma: f64, seed: u64) -> anyhow::Result<DegradeSpec> {
    let spec = DegradeSpec {
        gaussian_sigma: st.get(deg.sigma, "sigma")?.unwrap_or(default_sigma),
        tsf_radius: st.get(deg.tsf_radius, "tsf_radius")?.unwrap_or(0),
        tsf_mode: parse_with(st.get(deg.tsf_mode.clone(), "tsf_mode")?, TsfMode::None)?,
        relight: st.flag(deg.relight, "relight")?,
        fer_perturb: st.get(deg.fer_perturb, "fer_perturb")?.unwrap_or(0.0),
        seed,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn detector(det: &DetectArgs, st: &Settings) -> anyhow::Result<Option<(CascadeModel, DetectParams)>> {
    let Some(path) = st.get(det.cascade.clone(), "cascade")? else {
        return Ok(None);
    };
    let d = DetectParams::default();
    let params = DetectParams {
        scale_step: st.get(det.scale_step, "scale_step")?.unwrap_or(d.scale_step),
        window_stride: st.get(det.stride, "stride")?.unwrap_or(d.window_stride),
        min_overlap: st.get(det.min_overlap, "min_overlap")?.unwrap_or(d.min_overlap),
    };
    if !(params.scale_step > 1.0) {
        return Err(usage("scale-step must exceed 1"));
    }
    Ok(Some((load_cascade(&path)?, params)))
}

fn match_table(r: &MatchResult) -> String {
    let width = r.per_class.iter().map(|c| c.class_id.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "best class: {}", r.best_class);
    let _ = writeln!(out, "algorithm: {}", r.algorithm);
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>12}  {:>8}  {:>5}",
        "class", "lbp_distance", "residual", "tsf_mass", "best"
    );
    for (i, c) in r.per_class.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12.4}  {:>12.6}  {:>8.4}  {:>5}",
            c.class_id,
            c.lbp_distance,
            c.residual,
            c.tsf.mass(),
            if i == r.best_index { "*" } else { "" }
        );
    }
    out
}

fn match_csv(r: &MatchResult) -> String {
    let mut out = String::from("class,lbp_distance,residual,tsf_mass,best\n");
    for (i, c) in r.per_class.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{}",
            c.class_id,
            c.lbp_distance,
            c.residual,
            c.tsf.mass(),
            u8::from(i == r.best_index)
        );
    }
    out
}

fn match_json(r: &MatchResult) -> String {
    let classes: Vec<serde_json::Value> = r
        .per_class
        .iter()
        .map(|c| {
            serde_json::json!({
                "class": c.class_id,
                "lbp_distance": c.lbp_distance,
                "residual": c.residual,
                "tsf": c.tsf.weights(),
                "coeffs": c.coeffs.map(|a| a.0.to_vec()),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "best_class": r.best_class,
        "algorithm": r.algorithm.to_string(),
        "decision": format!("{:?}", r.decision).to_lowercase(),
        "per_class": classes,
    });
    serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
}

/// Accepts either a dataset root (with `gallery/`) or a bare
/// `<class>/*.pgm` directory.
fn load_gallery(dir: &Path, opts: &LoadOptions) -> anyhow::Result<birfr::Gallery> {
    let sub = dir.join("gallery");
    Ok(load_gallery_dir(if sub.is_dir() { &sub } else { dir }, opts)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let st = Settings::load(cli.config.as_deref())?;
    let verbose = st.flag(cli.verbose, "verbose")?;
    env_logger::Builder::new()
        .filter_level(if verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Some(n) = st.get(cli.threads, "threads")? {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let seed = st.get(cli.seed, "seed")?.unwrap_or(0);

    match cli.command {
        Command::Identify {
            probe,
            gallery,
            format,
            rec,
            det,
        } => {
            let algo = algorithm(&rec, &st)?;
            let cfg = recognizer_config(&rec, &st)?;
            let detector = detector(&det, &st)?;
            let format = st.get(format, "format")?.unwrap_or_else(|| "table".into());
            if !["table", "csv", "json"].contains(&format.as_str()) {
                return Err(usage(format!("unknown format {format:?}")));
            }
            let opts = LoadOptions {
                strict: true,
                detector: detector.clone(),
            };
            let gallery = load_gallery(&gallery, &opts)?;
            let chip = birfr::bench::dataset::load_chip(&probe, detector.as_ref())?;
            let result = recognize(&chip, &gallery, algo, &cfg)?;
            print!(
                "{}",
                match format.as_str() {
                    "csv" => match_csv(&result),
                    "json" => match_json(&result),
                    _ => match_table(&result),
                }
            );
        }
        Command::Bench {
            root,
            csv,
            strict,
            scramble,
            rec,
            deg,
            det,
        } => {
            let algo = algorithm(&rec, &st)?;
            let recognizer = recognizer_config(&rec, &st)?;
            let spec = degrade_spec(&deg, &st, 0.0, seed)?;
            let opts = LoadOptions {
                strict: st.flag(strict, "strict")?,
                detector: detector(&det, &st)?,
            };
            let dataset = load_dataset(&root, &opts)?;
            let cfg = BenchConfig {
                algorithm: algo,
                recognizer,
                degrade: (!spec.is_identity()).then_some(spec),
                scramble_seed: st.flag(scramble, "scramble")?.then_some(seed),
            };
            let report = run_benchmark(&dataset, &cfg)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Degrade { input, output, deg } => {
            let spec = degrade_spec(&deg, &st, 4.0, seed)?;
            let img = load_image(&input)?;
            save_image(&degrade(&img, &spec)?, &output)?;
        }
        Command::Detect { image, det, crop_dir } => {
            let (model, params) = detector(&det, &st)?.ok_or_else(|| usage("detect needs --cascade"))?;
            let img = load_image(&image)?;
            let boxes = detect_faces(&img, &model, &params)?;
            if let Some(dir) = &crop_dir {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            for (i, b) in boxes.iter().enumerate() {
                println!("{} {} {} {}", b.x, b.y, b.width, b.height);
                if let Some(dir) = &crop_dir {
                    save_image(&crop_chip(&img, b)?, dir.join(format!("face{i}.pgm")))?;
                }
            }
        }
        Command::TrainWeights { root, sigma, grid, out } => {
            let sigma = st.get(sigma, "sigma")?.unwrap_or(4.0);
            let grid = match st.get(grid, "grid")? {
                Some(g) => parse_grid(&g)?,
                None => (8, 8),
            };
            let dataset = load_dataset(&root, &LoadOptions::default())?;
            let map = train_block_weights(&dataset, sigma, grid)?;
            match out {
                Some(path) => map.save(&path)?,
                None => print!("{}", map.to_text()),
            }
        }
        Command::MakeSynth {
            out,
            classes,
            gallery_per_class,
            probes_per_class,
        } => {
            let d = SynthOptions::default();
            let opts = SynthOptions {
                classes: st.get(classes, "classes")?.unwrap_or(d.classes),
                seed: st.get(cli.seed, "seed")?.unwrap_or(d.seed),
                gallery_per_class: st.get(gallery_per_class, "gallery_per_class")?.unwrap_or(d.gallery_per_class),
                probes_per_class: st.get(probes_per_class, "probes_per_class")?.unwrap_or(d.probes_per_class),
            };
            if opts.classes == 0 || opts.gallery_per_class == 0 {
                return Err(usage("make-synth needs at least one class and one gallery image per class"));
            }
            make_synth(&out, &opts)?;
        }
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
