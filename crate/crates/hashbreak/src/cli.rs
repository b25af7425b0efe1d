//! Batch command-line surface: hashing corpora into databases, running the
//! black-box and white-box attacks, sweeping detection thresholds, the
//! flag-k probability model, and the DCT property checks.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 attack unsuccessful,
//! 4 property violation. `HASHBREAK_THREADS` caps worker threads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::dctlab::DctMap;
use crate::hashkit;
use crate::imagecore::{
    distance, format_f64, load_image, save_image, Hash, HashAlgorithm, Image, NormOrder,
};
use crate::nesattack::{attack, AttackConfig, BlackBoxOracle};
use crate::scanner::{
    evaluate, flag_tail, standard_thresholds, FlagModel, HashDb, UserKind,
};
use crate::wbattack::{wb_optimize, wb_sample, WbError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_ATTACK_FAILED: i32 = 3;
pub const EXIT_PROPERTY_VIOLATION: i32 = 4;

#[derive(Parser)]
#[command(
    name = "hashbreak",
    about = "Red-team toolkit for perceptual-hashing-based client-side scanning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hash every image in a corpus directory into a database file.
    Hash(HashArgs),
    /// Run the black-box detection-avoidance attack on one image.
    Attack(AttackArgs),
    /// White-box attack: rejection sampling on the DCT eigen-sphere.
    WbSample(WbSampleArgs),
    /// White-box attack: projected ascent on the DCT feature displacement.
    WbOptim(WbOptimArgs),
    /// Estimate FPR (and FNR) across detection thresholds.
    Eval(EvalArgs),
    /// Tail probabilities of the flag-k user model.
    Flagprob(FlagprobArgs),
    /// Verify the DCT map properties at given parameters.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct HashArgs {
    /// Directory of PNG/PNM images.
    #[arg(long)]
    corpus: PathBuf,
    /// Hash algorithm: ahash, dhash, phash, phash-continuous, pdqlite.
    #[arg(long)]
    algo: String,
    /// Output database path.
    #[arg(long)]
    out: PathBuf,
    /// Detection threshold stored in the header; defaults to the lowest
    /// standard threshold of the algorithm.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Clone)]
struct AttackArgs {
    /// Image to attack.
    #[arg(long)]
    image: PathBuf,
    /// Hash algorithm under attack.
    #[arg(long)]
    algo: String,
    /// Detection threshold; defaults to the lowest standard threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Attacker seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the report and the modified image.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// key=value configuration file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Diversity mode: random nonzero initialization and a larger budget.
    #[arg(long)]
    diverse: bool,
    /// Number of diverse runs (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long)]
    sigma: Option<f64>,
    /// Step size of the sign-gradient update.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    eta_epsilon: Option<f64>,
    #[arg(long)]
    k_plateau: Option<usize>,
    #[arg(long)]
    d_samples: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Attack-space size n' (perfect square).
    #[arg(long)]
    attack_dim: Option<usize>,
    /// Norm order of the budget: 1, 2 or inf.
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    eps_start: Option<f64>,
}

#[derive(Args)]
struct WbSampleArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    threshold: f64,
    /// First kept DCT row/column (0-based).
    #[arg(long, default_value_t = 1)]
    dct_a: usize,
    /// Last kept DCT row/column (0-based).
    #[arg(long, default_value_t = 8)]
    dct_b: usize,
    #[arg(long, default_value_t = 1_000_000)]
    max_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Resize the grayscaled input to k x k before attacking.
    #[arg(long)]
    resize_to: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct WbOptimArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    dct_a: usize,
    #[arg(long, default_value_t = 8)]
    dct_b: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    resize_to: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Hash database file.
    #[arg(long)]
    db: PathBuf,
    /// Directory of out-of-database images for the FPR estimate.
    #[arg(long)]
    queries: PathBuf,
    /// Directory of attacked images; relative paths must match database ids.
    #[arg(long)]
    attacked: Option<PathBuf>,
    /// Comma-separated thresholds; defaults to the algorithm's standard set.
    #[arg(long)]
    thresholds: Option<String>,
    /// Expected algorithm; exits 2 if the database differs.
    #[arg(long)]
    algo: Option<String>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlagprobArgs {
    /// Images per user.
    #[arg(long)]
    n: usize,
    /// Illegal images shared by an offender.
    #[arg(long)]
    l: usize,
    #[arg(long)]
    fpr: f64,
    #[arg(long)]
    fnr: f64,
    /// Emit tails for k = 1..=kmax.
    #[arg(long)]
    kmax: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    /// Dump the DCT matrix and the verified spectrum as CSV files here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

/// Entry point used by the binary: parses `std::env::args`, configures the
/// thread pool, and returns the process exit code.
pub fn main() -> i32 {
    init_thread_pool();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    let result = match cli.command {
        Command::Hash(args) => cmd_hash(args),
        Command::Attack(args) => cmd_attack(args),
        Command::WbSample(args) => cmd_wb_sample(args),
        Command::WbOptim(args) => cmd_wb_optim(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Flagprob(args) => cmd_flagprob(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("HASHBREAK_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_algo(name: &str) -> Result<HashAlgorithm, String> {
    HashAlgorithm::parse(name).ok_or_else(|| {
        format!("unknown algorithm {name:?}; expected ahash, dhash, phash, phash-continuous or pdqlite")
    })
}

/// Lists image files under `dir` recursively as (relative id, path), sorted
/// lexicographically by id. Ids use '/' separators.
fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if matches!(
                path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "pgm" | "ppm" | "pnm")
            ) {
                let rel = path
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((rel, path));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out).map_err(|e| format!("cannot read corpus {}: {e}", dir.display()))?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn cmd_hash(args: HashArgs) -> Result<i32, String> {
    let algo = parse_algo(&args.algo)?;
    let threshold = args.threshold.unwrap_or_else(|| standard_thresholds(algo)[0]);
    let entries = list_images(&args.corpus)?;

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (id, path) in entries {
        match load_image(&path) {
            Ok(img) => records.push((id, hashkit::hash(&img, algo))),
            Err(e) => {
                eprintln!("skipping {id}: {e}");
                skipped += 1;
            }
        }
    }
    if records.is_empty() {
        eprintln!("error: no readable images in {}", args.corpus.display());
        return Ok(EXIT_USAGE);
    }
    let db = HashDb::new(algo, threshold, records).map_err(|e| e.to_string())?;
    db.save(&args.out).map_err(|e| e.to_string())?;
    println!("{}", db.len());
    if skipped > 0 {
        eprintln!("{skipped} file(s) skipped");
    }
    Ok(EXIT_OK)
}

/// Resolution order for attack settings: per-algorithm defaults, then the
/// key=value config file, then command-line flags.
fn resolve_attack_config(args: &AttackArgs, algo: HashAlgorithm) -> Result<AttackConfig, String> {
    let threshold = args.threshold.unwrap_or_else(|| standard_thresholds(algo)[0]);
    let mut cfg = if args.diverse {
        AttackConfig::diversity_for(algo, threshold)
    } else {
        AttackConfig::for_algorithm(algo, threshold)
    };
    cfg.seed = args.seed;

    if let Some(path) = &args.config {
        let file = parse_config_file(path)?;
        apply_config_file(&mut cfg, &file)?;
    }

    if let Some(v) = args.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = args.eta {
        cfg.step_size = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.epsilon0 {
        cfg.epsilon0 = v;
    }
    if let Some(v) = args.eta_epsilon {
        cfg.eta_epsilon = v;
    }
    if let Some(v) = args.k_plateau {
        cfg.k_plateau = v;
    }
    if let Some(v) = args.d_samples {
        cfg.d_samples = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.attack_dim {
        cfg.attack_dim = v;
    }
    if let Some(p) = &args.p {
        cfg.norm = NormOrder::parse(p).ok_or_else(|| format!("invalid norm order {p:?}"))?;
    }
    if let Some(v) = args.eps_start {
        cfg.eps_start = v;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Parses a flat key=value file; '#' starts a comment, unknown keys are
/// rejected.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    const KNOWN: &[&str] = &[
        "algo",
        "threshold",
        "seed",
        "sigma",
        "eta",
        "momentum",
        "epsilon0",
        "eta_epsilon",
        "k_plateau",
        "d_samples",
        "max_iterations",
        "attack_dim",
        "p",
        "eps_start",
        "corpus_dir",
        "db_path",
        "out_dir",
    ];
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", lineno + 1))?;
        let key = key.trim();
        if !KNOWN.contains(&key) {
            return Err(format!("line {}: unknown key {key:?}", lineno + 1));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn apply_config_file(cfg: &mut AttackConfig, file: &BTreeMap<String, String>) -> Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        v.parse::<T>().map_err(|e| format!("config key {key}: {e}"))
    }
    for (key, value) in file {
        match key.as_str() {
            "threshold" => cfg.threshold = num(key, value)?,
            "seed" => cfg.seed = num(key, value)?,
            "sigma" => cfg.sigma = num(key, value)?,
            "eta" => cfg.step_size = num(key, value)?,
            "momentum" => cfg.momentum = num(key, value)?,
            "epsilon0" => cfg.epsilon0 = num(key, value)?,
            "eta_epsilon" => cfg.eta_epsilon = num(key, value)?,
            "k_plateau" => cfg.k_plateau = num(key, value)?,
            "d_samples" => cfg.d_samples = num(key, value)?,
            "max_iterations" => cfg.max_iterations = num(key, value)?,
            "attack_dim" => cfg.attack_dim = num(key, value)?,
            "eps_start" => cfg.eps_start = num(key, value)?,
            "p" => {
                cfg.norm =
                    NormOrder::parse(value).ok_or_else(|| format!("invalid norm order {value:?}"))?
            }
            // Path and algorithm keys are consumed by the caller.
            "algo" | "corpus_dir" | "db_path" | "out_dir" => {}
            _ => unreachable!("unknown keys rejected at parse"),
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn cmd_attack(args: AttackArgs) -> Result<i32, String> {
    let algo = parse_algo(&args.algo)?;
    let cfg = resolve_attack_config(&args, algo)?;
    let image = load_image(&args.image).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
    let stem = stem_of(&args.image);

    let runs = if args.diverse { args.runs.max(1) } else { 1 };
    let mut all_success = true;
    let mut modified_hashes: Vec<Hash> = Vec::with_capacity(runs);

    for run in 0..runs {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(run as u64);
        let oracle = BlackBoxOracle::for_algorithm(algo);
        let report = attack(&image, &oracle, &run_cfg).map_err(|e| e.to_string())?;

        let suffix = if runs > 1 { format!("_run{run}") } else { String::new() };
        let report_path = args.out_dir.join(format!("{stem}_{}_report{suffix}.json", algo.name()));
        let image_path = args.out_dir.join(format!("{stem}_{}_modified{suffix}.png", algo.name()));

        let mut doc = report.to_json();
        doc["algorithm"] = serde_json::Value::String(algo.name().into());
        doc["oracle_calls"] = serde_json::Value::from(oracle.calls());
        write_json(&report_path, &doc)?;

        let modified = report.delta.apply(&image).map_err(|e| e.to_string())?;
        save_image(&modified, &image_path).map_err(|e| e.to_string())?;
        modified_hashes.push(hashkit::hash(&modified, algo));

        println!(
            "run {run}: success={} iterations={} f_final={} l2_per_pixel={}",
            report.success, report.iterations, report.f_final, report.l2_per_pixel
        );
        all_success &= report.success;
    }

    if runs > 1 {
        let mut distances = Vec::new();
        for i in 0..runs {
            for j in i + 1..runs {
                distances
                    .push(distance(&modified_hashes[i], &modified_hashes[j]).expect("same algo"));
            }
        }
        let mut sorted = distances.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let median = if sorted.is_empty() {
            0.0
        } else if sorted.len() % 2 == 0 {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        } else {
            sorted[sorted.len() / 2]
        };
        let summary = serde_json::json!({
            "algorithm": algo.name(),
            "runs": runs,
            "pairwise_hash_distances": distances,
            "median_pairwise_distance": median,
        });
        write_json(
            &args.out_dir.join(format!("{stem}_{}_diversity.json", algo.name())),
            &summary,
        )?;
        println!("median pairwise hash distance: {median}");
    }

    Ok(if all_success { EXIT_OK } else { EXIT_ATTACK_FAILED })
}

/// Loads and prepares a square single-channel input for the white-box
/// attacks.
fn load_wb_image(path: &Path, resize_to: Option<usize>) -> Result<Image, String> {
    let img = load_image(path).map_err(|e| e.to_string())?;
    let gray = hashkit::grayscale(&img);
    let gray = match resize_to {
        Some(k) => hashkit::resize(&gray, k, k),
        None => gray,
    };
    if gray.width() != gray.height() {
        return Err(format!(
            "white-box attacks need a square image; got {}x{} (use --resize-to)",
            gray.width(),
            gray.height()
        ));
    }
    Ok(gray)
}

fn write_wb_outputs(
    out_dir: &Path,
    stem: &str,
    kind: &str,
    image: &Image,
    result: &crate::wbattack::WbResult,
) -> Result<(), String> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    write_json(
        &out_dir.join(format!("{stem}_{kind}_report.json")),
        &result.to_json(kind),
    )?;
    let modified = result.delta.apply(image).map_err(|e| e.to_string())?;
    save_image(&modified, &out_dir.join(format!("{stem}_{kind}_modified.png")))
        .map_err(|e| e.to_string())?;
    Ok(())
}

fn cmd_wb_sample(args: WbSampleArgs) -> Result<i32, String> {
    let gray = load_wb_image(&args.image, args.resize_to)?;
    let map = DctMap::build(gray.width(), args.dct_a, args.dct_b).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let stem = stem_of(&args.image);
    match wb_sample(&gray, &map, args.threshold, args.max_samples, &mut rng) {
        Ok(result) => {
            write_wb_outputs(&args.out_dir, &stem, "wb_sample", &gray, &result)?;
            println!(
                "success: samples={} delta_norm={} a_delta_norm={}",
                result.attempts, result.delta_norm, result.a_delta_norm
            );
            Ok(EXIT_OK)
        }
        Err(WbError::Exhausted(n)) => {
            std::fs::create_dir_all(&args.out_dir)
                .map_err(|e| format!("cannot create {}: {e}", args.out_dir.display()))?;
            let doc = serde_json::json!({
                "attack_kind": "wb_sample",
                "success": false,
                "iterations": n,
            });
            write_json(&args.out_dir.join(format!("{stem}_wb_sample_report.json")), &doc)?;
            eprintln!("no valid perturbation within {n} samples");
            Ok(EXIT_ATTACK_FAILED)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn cmd_wb_optim(args: WbOptimArgs) -> Result<i32, String> {
    let gray = load_wb_image(&args.image, args.resize_to)?;
    let map = DctMap::build(gray.width(), args.dct_a, args.dct_b).map_err(|e| e.to_string())?;
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let stem = stem_of(&args.image);
    let result = wb_optimize(
        &gray,
        &map,
        args.threshold,
        args.max_iter,
        args.restarts,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    write_wb_outputs(&args.out_dir, &stem, "wb_optim", &gray, &result)?;
    println!(
        "success={} iterations={} delta_norm={} a_delta_norm={}",
        result.success, result.attempts, result.delta_norm, result.a_delta_norm
    );
    Ok(if result.success { EXIT_OK } else { EXIT_ATTACK_FAILED })
}

fn cmd_eval(args: EvalArgs) -> Result<i32, String> {
    let db = HashDb::load(&args.db).map_err(|e| e.to_string())?;
    if let Some(expected) = &args.algo {
        let expected = parse_algo(expected)?;
        if expected != db.algorithm() {
            eprintln!(
                "error: database algorithm {} does not match requested {}",
                db.algorithm(),
                expected
            );
            return Ok(EXIT_USAGE);
        }
    }

    let queries = {
        let mut hashes = Vec::new();
        for (id, path) in list_images(&args.queries)? {
            match load_image(&path) {
                Ok(img) => hashes.push(hashkit::hash(&img, db.algorithm())),
                Err(e) => eprintln!("skipping query {id}: {e}"),
            }
        }
        hashes
    };
    if queries.is_empty() {
        eprintln!("error: no readable query images in {}", args.queries.display());
        return Ok(EXIT_USAGE);
    }

    let attacked: Option<Vec<(String, Hash)>> = match &args.attacked {
        None => None,
        Some(dir) => {
            let mut entries = Vec::new();
            for (id, path) in list_images(dir)? {
                match load_image(&path) {
                    Ok(img) => entries.push((id, hashkit::hash(&img, db.algorithm()))),
                    Err(e) => eprintln!("skipping attacked {id}: {e}"),
                }
            }
            if entries.is_empty() {
                eprintln!("warning: attacked corpus is empty; fnr column omitted");
                None
            } else {
                Some(entries)
            }
        }
    };

    let thresholds: Vec<f64> = match &args.thresholds {
        Some(list) => list
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad threshold {t:?}: {e}")))
            .collect::<Result<_, _>>()?,
        None => standard_thresholds(db.algorithm()).to_vec(),
    };

    let result = evaluate(&db, &queries, attacked.as_deref(), &thresholds)
        .map_err(|e| e.to_string())?;
    let csv = result.to_csv();
    match &args.out {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn cmd_flagprob(args: FlagprobArgs) -> Result<i32, String> {
    let model = match FlagModel::new(args.n, args.l, args.fpr, args.fnr) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(EXIT_USAGE);
        }
    };
    let kmax = args.kmax.min(args.n);
    let mut csv = String::from("k,non_offender_tail,offender_tail\n");
    for k in 1..=kmax {
        let non = flag_tail(&model, UserKind::NonOffender, k).map_err(|e| e.to_string())?;
        let off = flag_tail(&model, UserKind::Offender, k).map_err(|e| e.to_string())?;
        csv.push_str(&format!("{k},{},{}\n", format_f64(non), format_f64(off)));
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, String> {
    let map = DctMap::build(args.k, args.a, args.b).map_err(|e| e.to_string())?;
    let m_res = map.m_orthogonality_residual();
    let mp_res = map.m_prime_orthogonality_residual();
    let a_res = map.a_orthogonality_residual();

    // Verify the analytic eigenbasis end to end: every row-space vector is a
    // unit eigenvector of A^T A for eigenvalue 1, every kernel vector for
    // eigenvalue 0. Together they account for the full spectrum.
    let n = map.input_len();
    let c2 = map.output_len();
    let mut eigen_res = 0.0f64;
    let mut unit_count = 0usize;
    let mut null_count = 0usize;
    let mut spectrum: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let (v, lambda) = if i < c2 {
            (map.row_basis_vector(i), 1.0)
        } else {
            (map.kernel_basis_vector(i - c2), 0.0)
        };
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        eigen_res = eigen_res.max((norm - 1.0).abs());
        let proj = map.project_row_space(&v).map_err(|e| e.to_string())?;
        let res = proj
            .iter()
            .zip(&v)
            .map(|(p, x)| (p - lambda * x).abs())
            .fold(0.0f64, f64::max);
        eigen_res = eigen_res.max(res);
        if res <= 1e-8 {
            if lambda == 1.0 {
                unit_count += 1;
            } else {
                null_count += 1;
            }
        }
        spectrum.push((i, lambda));
    }

    println!("M orthogonality residual:  {m_res:.3e}");
    println!("M' orthogonality residual: {mp_res:.3e}");
    println!("A A^T identity residual:   {a_res:.3e}");
    println!("eigenbasis residual:       {eigen_res:.3e}");
    println!(
        "{unit_count} unit eigenvalues, {null_count} null (expected {} and {})",
        c2,
        n - c2
    );

    if let Some(dir) = &args.dump {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let mut m_csv = String::new();
        for r in 0..args.k {
            let row: Vec<String> = (0..args.k).map(|c| format_f64(map.m().get(r, c))).collect();
            m_csv.push_str(&row.join(","));
            m_csv.push('\n');
        }
        std::fs::write(dir.join(format!("dct_matrix_k{}.csv", args.k)), m_csv)
            .map_err(|e| e.to_string())?;
        let mut s_csv = String::from("index,eigenvalue\n");
        for (i, l) in &spectrum {
            s_csv.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(
            dir.join(format!("spectrum_k{}_a{}_b{}.csv", args.k, args.a, args.b)),
            s_csv,
        )
        .map_err(|e| e.to_string())?;
    }

    let ok = m_res <= 1e-10
        && mp_res <= 1e-10
        && a_res <= 1e-9
        && eigen_res <= 1e-8
        && unit_count == c2
        && null_count == n - c2;
    if ok {
        println!("ok");
        Ok(EXIT_OK)
    } else {
        eprintln!("property violation");
        Ok(EXIT_PROPERTY_VIOLATION)
    }
}
