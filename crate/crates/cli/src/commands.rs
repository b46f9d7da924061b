use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use protocal_core::dump::{read_jsonl, write_jsonl};
use protocal_core::synth::{conventional_accuracy, linear_grid, BayesEstimate};
use protocal_core::{
    aggregate, bayes_optimal_accuracy, boundary_sweep, calibrate_with_report, evaluate, predict_conventional,
    sample_scenario, Aggregate, CalibratedClassifier, CalibrationConfig, CalibrationReport, LogitVector, Metrics,
    PredictionRecord, ScenarioSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Keeps the estimate-set draw independent of the restart seeds.
const SAMPLING_STREAM: u64 = 7;

pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let records = read_jsonl(BufReader::new(file)).map_err(|e| CliError::from(e).context(path.display()))?;
    if records.is_empty() {
        return Err(CliError::data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn logits_of(records: &[PredictionRecord]) -> Result<Vec<LogitVector>, CliError> {
    records
        .iter()
        .map(|r| r.logit_vector().map_err(CliError::from))
        .collect()
}

fn gold_of(records: &[PredictionRecord], path: &Path) -> Result<Vec<usize>, CliError> {
    records
        .iter()
        .map(|r| {
            r.gold().ok_or_else(|| {
                CliError::data(format!(
                    "MissingLabels: record `{}` in {} has no label",
                    r.id,
                    path.display()
                ))
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, contents: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::data(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text.into_bytes()
}

/// Uniform sample of `size` indices without replacement, returned in file order.
pub fn sample_estimate_indices(n_records: usize, size: usize, seed: u64) -> Result<Vec<usize>, CliError> {
    if size > n_records {
        return Err(CliError::data(format!(
            "InsufficientData: estimate size {size} exceeds the {n_records} records available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLING_STREAM);
    let mut idx = rand::seq::index::sample(&mut rng, n_records, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    input_records: usize,
    estimate_ids: Vec<&'a str>,
    config: CalibrationConfig,
    convergence_rate: f64,
    wall_time_ms: f64,
    #[serde(flatten)]
    report: CalibrationReport,
}

pub fn calibrate(input: &Path, out: &Path, diagnostics: Option<&Path>, cfg: &RunConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let records = read_records(input)?;
    let n_classes = records[0].logits.len();
    let size = cfg.estimate_size_for(n_classes);
    let picked = sample_estimate_indices(records.len(), size, cfg.calibration.seed)?;
    // Only ids and logits cross this line; labels stay behind.
    let estimate: Vec<LogitVector> = picked
        .iter()
        .map(|&i| records[i].logit_vector())
        .collect::<Result<_, _>>()?;

    let (classifier, report) = calibrate_with_report(&estimate, n_classes, &cfg.calibration)?;
    if classifier.degenerate() {
        eprintln!("warning: selected estimate is degenerate (collapsed or underflowed components)");
    }
    write_file(out, classifier.to_json().as_bytes())?;

    let diag = Diagnostics {
        input_records: records.len(),
        estimate_ids: picked.iter().map(|&i| records[i].id.as_str()).collect(),
        config: cfg.calibration,
        convergence_rate: report.converged as f64 / report.restarts as f64,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        report,
    };
    let diag_path = diagnostics
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_diagnostics_path(out));
    write_file(&diag_path, &to_json(&diag))
}

pub fn default_diagnostics_path(out: &Path) -> PathBuf {
    out.with_extension("diagnostics.json")
}

pub fn load_classifier(path: &Path) -> Result<CalibratedClassifier, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    CalibratedClassifier::from_json(&text).map_err(|e| CliError::from(e).context(path.display()))
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    n_examples: usize,
    n_classes: usize,
    /// Confusion matrices are indexed `[gold][predicted]` with row/column `i`
    /// standing for label `i + 1`.
    runs: Vec<Metrics>,
    aggregate: Aggregate,
}

pub fn evaluate_cmd(classifiers: &[PathBuf], input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    if classifiers.is_empty() {
        return Err(CliError::usage("at least one --classifier is required"));
    }
    let records = read_records(input)?;
    let gold = gold_of(&records, input)?;
    let logits = logits_of(&records)?;
    let mut runs = Vec::with_capacity(classifiers.len());
    for path in classifiers {
        let clf = load_classifier(path)?;
        if clf.n_classes() != logits[0].n_classes() {
            return Err(CliError::data(format!(
                "{} has {} classes, {} has {}",
                path.display(),
                clf.n_classes(),
                input.display(),
                logits[0].n_classes()
            )));
        }
        runs.push(evaluate(&clf, &logits, &gold)?);
    }
    let report = EvaluationReport {
        n_examples: records.len(),
        n_classes: logits[0].n_classes(),
        aggregate: aggregate(&runs)?,
        runs,
    };
    emit(out, &to_json(&report))
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    label: usize,
    conventional: usize,
}

pub fn predict(classifier: &Path, input: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let clf = load_classifier(classifier)?;
    let records = read_records(input)?;
    let logits = logits_of(&records)?;
    let mut buf = Vec::new();
    for (rec, l) in records.iter().zip(&logits) {
        let line = PredictionLine {
            id: &rec.id,
            label: clf.predict(l)? + 1,
            conventional: predict_conventional(l) + 1,
        };
        serde_json::to_writer(&mut buf, &line).expect("plain data serializes");
        buf.push(b'\n');
    }
    emit(out, &buf)
}

/// `start:stop:count` or a comma-separated list of thresholds.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(CliError::usage("empty threshold grid"));
    }
    let bad = |part: &str| CliError::usage(format!("grid: cannot parse `{part}`"));
    let grid = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
        let [start, stop, count] = parts[..] else {
            return Err(CliError::usage(format!("grid `{spec}` is not start:stop:count")));
        };
        let start: f64 = start.parse().map_err(|_| bad(start))?;
        let stop: f64 = stop.parse().map_err(|_| bad(stop))?;
        let count: usize = count.parse().map_err(|_| bad(count))?;
        linear_grid(start, stop, count)
    } else {
        spec.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>().map_err(|_| bad(p)))
            .collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() {
        return Err(CliError::usage("empty threshold grid"));
    }
    Ok(grid)
}

pub fn sweep(input: &Path, grid: &[f64], out: Option<&Path>) -> Result<(), CliError> {
    let records = read_records(input)?;
    let gold = gold_of(&records, input)?;
    let logits = logits_of(&records)?;
    let result = boundary_sweep(&logits, &gold, grid)?;
    let mut csv = String::from("threshold,accuracy\n");
    for (t, a) in result.thresholds.iter().zip(&result.accuracies) {
        csv.push_str(&format!("{t},{a}\n"));
        if *t == 0.5 {
            eprintln!("note: threshold 0.5 is the conventional argmax boundary (accuracy {a})");
        }
    }
    if let Some((t, a)) = result.best() {
        eprintln!("best threshold {t} (accuracy {a})");
    }
    emit(out, csv.as_bytes())
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    scenario: &'a ScenarioSpec,
    bayes: BayesEstimate,
    test_conventional_accuracy: Option<f64>,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn synth(spec: &ScenarioSpec, out_dir: &Path, bayes_draws: usize) -> Result<(), CliError> {
    let sample = sample_scenario(spec)?;
    let bayes = bayes_optimal_accuracy(spec, bayes_draws)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for (name, recs) in [
        ("estimate.jsonl", sample.estimate_records()),
        ("test.jsonl", sample.test_records()),
    ] {
        let path = out_dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        write_jsonl(BufWriter::new(file), &recs).map_err(|e| CliError::io(&path, e))?;
    }
    let truth = Truth {
        scenario: spec,
        bayes,
        test_conventional_accuracy: (!sample.test.is_empty())
            .then(|| conventional_accuracy(&sample.test, &sample.test_gold)),
    };
    write_file(&out_dir.join("truth.json"), &to_json(&truth))
}
