//! Command implementations. Each returns `Ok(())` or a [`Failure`]
//! carrying the process exit code: 1 partial/runtime failure, 2
//! configuration error, 3 I/O error.
//!
//! Human-readable progress goes to standard error; standard output and
//! result files carry only machine-readable records.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use voxaug_core::nn::save_checkpoint;
use voxaug_core::{
    apply_drawn, draw, fetch, load_dataset, load_manifest, mean_std, read_nifti, run_fold_full,
    synth_generate, write_folds_csv, write_history_csv, write_summary_csv, AugmentSpec, Error,
    ExperimentReport, FetchSpec, RngStream, SummaryRow, SynthSpec, Volume3,
};

use crate::config::{FetchFileConfig, RunConfig};

/// A command failure: exit code plus the message printed to stderr.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn runtime(message: impl Into<String>) -> Failure {
        Failure { code: 1, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Failure {
        Failure { code: 3, message: message.into() }
    }
}

/// Default mapping from library errors to exit codes: anything rooted in
/// reading or writing data is I/O (3); malformed requests are
/// configuration (2); mid-run breakage is runtime (1).
fn classify(e: Error) -> Failure {
    let code = match &e {
        Error::Io(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedDatatype(_)
        | Error::TruncatedPayload { .. }
        | Error::BadDim(_)
        | Error::BadManifest { .. }
        | Error::BadCheckpoint(_)
        | Error::ShapeInconsistency(_)
        | Error::Csv(_) => 3,
        Error::Json(_) | Error::BadRunState(_) => 1,
        _ => 2,
    };
    Failure { code, message: e.to_string() }
}

/// Run `f` on a bounded rayon pool when a worker count is given (0 or
/// absent means the default pool, i.e. all cores).
fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        None | Some(0) => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config(format!("cannot build a {n}-worker pool: {e}")))
            .map(|pool| pool.install(f)),
    }
}

fn parse_spec(text: &str) -> Result<AugmentSpec, Failure> {
    let spec: AugmentSpec = serde_json::from_str(text)
        .map_err(|e| Failure::config(format!("invalid augmentation spec {text:?}: {e}")))?;
    spec.validate().map_err(classify)?;
    Ok(spec)
}

fn wants_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Augment one volume: read, draw parameters from the seed, apply,
/// write, and print the drawn parameters as a single JSON line.
pub fn cmd_augment(
    input: &Path,
    output: &Path,
    spec_text: &str,
    seed: u64,
    workers: Option<usize>,
) -> Result<(), Failure> {
    let spec = parse_spec(spec_text)?;
    let (vol, _) = read_nifti(input).map_err(classify)?;
    let mut rng = RngStream::new(seed);
    let drawn = draw(&spec, &mut rng).map_err(classify)?;
    let out = with_pool(workers, || apply_drawn(&vol, &drawn))?.map_err(classify)?;
    voxaug_core::write_nifti(&out, output, wants_gzip(output)).map_err(classify)?;
    let line = serde_json::to_string(&drawn)
        .map_err(|e| Failure::runtime(format!("cannot encode drawn parameters: {e}")))?;
    println!("{line}");
    Ok(())
}

/// Generate a synthetic two-class dataset.
pub fn cmd_synth(
    out_dir: &Path,
    n_subjects: usize,
    seed: u64,
    shape: (usize, usize, usize),
    delta: f64,
    smoothness: f64,
    balance: f64,
) -> Result<(), Failure> {
    let spec = SynthSpec { n_subjects, shape, delta, smoothness, balance, seed };
    spec.validate().map_err(classify)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let entries = synth_generate(&spec, out_dir).map_err(classify)?;
    eprintln!(
        "wrote {} volumes ({} positive) and manifest.csv to {}",
        entries.len(),
        spec.positive_count(),
        out_dir.display()
    );
    Ok(())
}

/// Download any volumes missing from a manifest.
pub fn cmd_fetch(
    manifest_path: &Path,
    out_dir: &Path,
    config: Option<&Path>,
    template: Option<String>,
    pipeline: Option<String>,
    strategy: Option<String>,
    overwrite: bool,
) -> Result<(), Failure> {
    let file_cfg = match config {
        Some(p) => Some(FetchFileConfig::load(p).map_err(Failure::config)?),
        None => None,
    };
    let template = template
        .or_else(|| file_cfg.as_ref().map(|c| c.template.clone()))
        .ok_or_else(|| {
            Failure::config("no URL template: pass --template or a --config file with a `template` key")
        })?;
    let mut spec = FetchSpec::new(template);
    spec.overwrite = overwrite;
    if let Some(p) = pipeline.or_else(|| file_cfg.as_ref().and_then(|c| c.pipeline.clone())) {
        spec.pipeline = p;
    }
    if let Some(s) = strategy.or_else(|| file_cfg.as_ref().and_then(|c| c.strategy.clone())) {
        spec.strategy = s;
    }

    let entries = load_manifest(manifest_path).map_err(classify)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", out_dir.display())))?;
    let summary = fetch(&entries, &spec, out_dir).map_err(classify)?;
    for rec in &summary.records {
        if let voxaug_core::data::FetchOutcome::Failed(reason) = &rec.outcome {
            eprintln!("failed {}: {reason}", rec.file_id);
        }
    }
    println!(
        "fetched={} skipped={} failed={}",
        summary.fetched(),
        summary.skipped(),
        summary.failed()
    );
    if summary.failed() > 0 {
        return Err(Failure::runtime(format!(
            "{} of {} entries failed",
            summary.failed(),
            summary.records.len()
        )));
    }
    Ok(())
}

/// Train one experiment arm across its folds, resumably.
///
/// Per fold, the output directory receives `model_fold<i>.ckpt` (the
/// weights the test accuracy was measured with), `history_fold<i>.csv`,
/// and — written last, as the completion marker — `fold_<i>.json`.
/// Folds whose marker already exists are loaded instead of retrained, so
/// an interrupted run picks up where it stopped. `folds.csv` and
/// `summary.csv` are rebuilt from all fold results at the end.
pub fn cmd_train(config_path: &Path, workers_flag: Option<usize>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config_path).map_err(|msg| {
        if msg.starts_with("cannot read") {
            Failure::io(msg)
        } else {
            Failure::config(msg)
        }
    })?;
    cfg.validate().map_err(Failure::config)?;

    let entries = load_manifest(&cfg.manifest).map_err(classify)?;
    let ds = load_dataset(&entries).map_err(classify)?;
    let setup = cfg.setup(ds.shape());
    setup.validate().map_err(classify)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", cfg.out_dir.display())))?;

    let workers = workers_flag.or(cfg.workers);
    let spec_label = cfg.augment.label();
    let mut folds = Vec::with_capacity(cfg.n_folds);
    for fold in 0..cfg.n_folds {
        let marker = cfg.out_dir.join(format!("fold_{fold}.json"));
        let history = cfg.out_dir.join(format!("history_fold{fold}.csv"));
        if marker.is_file() {
            let result = voxaug_core::load_fold_json(&marker).map_err(|e| {
                let mut f = classify(e);
                f.message = format!("corrupt fold marker {}: {}", marker.display(), f.message);
                f
            })?;
            if !history.is_file() {
                write_history_csv(&history, &result).map_err(classify)?;
            }
            eprintln!("fold {fold}: resumed (test_acc {:.4})", result.test_acc);
            folds.push(result);
            continue;
        }

        let fold_seed = cfg.base_seed + fold as u64;
        let (result, model) =
            with_pool(workers, || run_fold_full(&ds, &setup, fold, fold_seed))?.map_err(classify)?;
        save_checkpoint(&cfg.out_dir.join(format!("model_fold{fold}.ckpt")), &model)
            .map_err(classify)?;
        write_history_csv(&history, &result).map_err(classify)?;
        voxaug_core::save_fold_json(&marker, &result).map_err(classify)?;
        eprintln!(
            "fold {fold}: test_acc {:.4} (best epoch {} of {}, {:.1}s)",
            result.test_acc,
            result.best_epoch,
            result.epochs_run(),
            result.seconds
        );
        folds.push(result);
    }

    let accs: Vec<f64> = folds.iter().map(|f| f.test_acc).collect();
    let (mean_acc, std_acc) = mean_std(&accs);
    let report = ExperimentReport {
        spec_label,
        mode: cfg.mode.clone(),
        folds,
        mean_acc,
        std_acc,
        delta_pp_vs_baseline: None,
    };
    write_folds_csv(&cfg.out_dir.join("folds.csv"), &report).map_err(classify)?;
    write_summary_csv(
        &cfg.out_dir.join("summary.csv"),
        &[SummaryRow::from_report(&report)],
    )
    .map_err(classify)?;
    eprintln!(
        "{} / {}: mean_acc {:.4} ± {:.4} over {} folds",
        report.spec_label,
        report.mode.label(),
        mean_acc,
        std_acc,
        report.folds.len()
    );
    Ok(())
}

/// Combine every arm summary under a runs directory into one table with
/// deltas against a named baseline arm, sorted by mean descending.
pub fn cmd_report(runs: &Path, baseline: &str, output: Option<&Path>) -> Result<(), Failure> {
    let rows = voxaug_core::collect_summaries(runs).map_err(classify)?;
    let combined = voxaug_core::combine_summaries(rows, baseline).map_err(|e| {
        let mut f = classify(e);
        f.code = 2;
        f
    })?;
    match output {
        Some(path) => write_summary_csv(path, &combined).map_err(classify)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for row in &combined {
                w.serialize(row)
                    .map_err(|e| Failure::io(format!("cannot write report: {e}")))?;
            }
            w.flush()
                .map_err(|e| Failure::io(format!("cannot write report: {e}")))?;
        }
    }
    Ok(())
}

/// Measure augmentation throughput: for each operator in the spec (each
/// step of a chain, plus the chain itself), time `iterations` fresh
/// draw-and-apply rounds after 3 warm-ups and print volumes/second with
/// nearest-rank p50/p95 latencies.
pub fn cmd_bench(
    spec_text: &str,
    input: &Path,
    iterations: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<(), Failure> {
    if iterations == 0 {
        return Err(Failure::config("iterations must be at least 1"));
    }
    let spec = parse_spec(spec_text)?;
    let (vol, _) = read_nifti(input).map_err(classify)?;

    let mut arms: Vec<AugmentSpec> = Vec::new();
    if let AugmentSpec::Compose { specs } = &spec {
        arms.extend(specs.iter().cloned());
    }
    arms.push(spec);

    let mut out = String::from("spec,volumes_per_s,p50_ms,p95_ms\n");
    for (a, arm) in arms.iter().enumerate() {
        let timings = with_pool(workers, || bench_arm(arm, &vol, iterations, seed, a as u64))?
            .map_err(classify)?;
        out.push_str(&timings.csv_row(&arm.label()));
        out.push('\n');
    }
    print!("{out}");
    std::io::stdout()
        .flush()
        .map_err(|e| Failure::io(format!("cannot write bench results: {e}")))?;
    Ok(())
}

struct BenchTimings {
    total: Duration,
    samples: Vec<Duration>,
}

impl BenchTimings {
    fn csv_row(&self, label: &str) -> String {
        let mut sorted = self.samples.clone();
        sorted.sort();
        let rank = |q: f64| sorted[((sorted.len() - 1) as f64 * q).floor() as usize];
        let throughput = self.samples.len() as f64 / self.total.as_secs_f64();
        format!(
            "{label},{throughput},{},{}",
            rank(0.50).as_secs_f64() * 1e3,
            rank(0.95).as_secs_f64() * 1e3
        )
    }
}

fn bench_arm(
    spec: &AugmentSpec,
    vol: &Volume3,
    iterations: usize,
    seed: u64,
    arm_index: u64,
) -> Result<BenchTimings, Error> {
    let root = RngStream::new(seed);
    let run = |i: u64| -> Result<Duration, Error> {
        let mut rng = root.descend(&[arm_index, i]);
        let drawn = draw(spec, &mut rng)?;
        let started = Instant::now();
        let out = apply_drawn(vol, &drawn)?;
        let elapsed = started.elapsed();
        std::hint::black_box(out);
        Ok(elapsed)
    };
    for i in 0..3 {
        run(i)?;
    }
    let started = Instant::now();
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..iterations {
        samples.push(run(3 + i as u64)?);
    }
    Ok(BenchTimings { total: started.elapsed(), samples })
}

/// Convert a phenotype CSV plus download destination into a manifest.
pub fn cmd_manifest(
    phenotype: &Path,
    output: &Path,
    id_column: &str,
    dx_column: &str,
    derivative: &str,
) -> Result<(), Failure> {
    let spec = voxaug_core::PhenotypeSpec::new(id_column, dx_column);
    let parsed = voxaug_core::parse_phenotype_csv(phenotype, &spec).map_err(classify)?;
    if parsed.skipped > 0 {
        eprintln!("skipped {} rows with unknown diagnosis codes", parsed.skipped);
    }
    let entries: Vec<voxaug_core::ManifestEntry> = parsed
        .labels
        .iter()
        .map(|(id, &label)| voxaug_core::ManifestEntry {
            file_id: id.clone(),
            label,
            path: None,
            derivative: derivative.to_string(),
        })
        .collect();
    let base = output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    voxaug_core::write_manifest(output, &entries, &base).map_err(classify)?;
    eprintln!("wrote {} entries to {}", entries.len(), output.display());
    Ok(())
}
