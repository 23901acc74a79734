//! Experiment orchestration: flat JSON configs, learning-rate selection on
//! held-out leading tasks, seed × method fan-out with per-run persistence,
//! and summary tables/plots recomputed from the persisted files.

mod plot;
mod snapshot;

pub use plot::emit_plots;
pub use snapshot::{
    parse_snapshot_manifest, read_snapshot_manifest, write_memory_snapshot, SnapshotEntry,
};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{build_split_stream, split_cross_validation, DatasetId, SyntheticSpec, TaskStream};
use crate::metrics::{acc_metric, bwt_metric, write_result_matrix, ResultMatrix};
use crate::model::{build_model, Arch, MultiHeadModel};
use crate::rng::stream_id;
use crate::trainer::{
    buffer_informativeness, train_continual, train_multitask, Method, MethodConfig,
};
use crate::{Error, Result};

/// Flat experiment description. Every field has a default so a config file
/// only states what it changes; CLI flags override file values field by
/// field.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// "synthetic" or a directory holding the binary-format image archive.
    pub dataset: String,
    pub arch: String,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub lr: f32,
    /// Candidate learning rates for the selection verb.
    pub lr_grid: Vec<f32>,
    pub n_sc: f64,
    pub epf: usize,
    pub stride: usize,
    pub batch_size: usize,
    /// Task count of the full stream, before any leading tasks are held out.
    pub num_tasks: usize,
    pub classes_per_task: usize,
    /// Leading tasks reserved for hyperparameter selection (0 disables).
    pub cv_tasks: usize,
    /// Seed for the class-order shuffle; 0 keeps the natural order.
    pub class_order_seed: u64,
    pub image_side: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Synthetic class count; 0 derives num_tasks * classes_per_task.
    pub n_classes: usize,
    /// Epochs for the buffer-informativeness probe (0 disables).
    pub probe_epochs: usize,
    pub probe_lr: f32,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "synthetic".into(),
            arch: "small-cnn".into(),
            methods: vec!["epr".into()],
            seeds: vec![0],
            lr: 0.1,
            lr_grid: Vec::new(),
            n_sc: 1.0,
            epf: 2,
            stride: 1,
            batch_size: 10,
            num_tasks: 4,
            classes_per_task: 2,
            cv_tasks: 0,
            class_order_seed: 0,
            image_side: 32,
            per_class_train: 100,
            per_class_test: 20,
            n_classes: 0,
            probe_epochs: 0,
            probe_lr: 0.1,
            out: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn dataset_id(&self) -> Result<DatasetId> {
        match self.dataset.as_str() {
            "synthetic" => Ok(DatasetId::Synthetic(SyntheticSpec {
                n_classes: if self.n_classes == 0 {
                    self.num_tasks * self.classes_per_task
                } else {
                    self.n_classes
                },
                per_class_train: self.per_class_train,
                per_class_test: self.per_class_test,
                image_side: self.image_side,
            })),
            dir => Ok(DatasetId::CifarFormatDir(PathBuf::from(dir))),
        }
    }

    pub fn arch(&self) -> Result<Arch> {
        self.arch.parse()
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn method_config(&self, method: Method, seed: u64) -> MethodConfig {
        MethodConfig {
            method,
            lr: self.lr,
            n_sc: self.n_sc,
            epf: self.epf,
            stride: self.stride,
            batch_size: self.batch_size,
            seed,
        }
    }

    /// The streams this config describes: an optional leading hold-out for
    /// hyperparameter selection and the evaluation stream proper.
    pub fn build_streams(&self) -> Result<(Option<TaskStream>, TaskStream)> {
        let full = build_split_stream(
            &self.dataset_id()?,
            self.num_tasks,
            self.classes_per_task,
            self.class_order_seed,
        )?;
        if self.cv_tasks == 0 {
            Ok((None, full))
        } else {
            let (cv, eval) = split_cross_validation(full, self.cv_tasks)?;
            Ok((Some(cv), eval))
        }
    }
}

/// Strict parse of a flat JSON config; unknown keys are rejected.
pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_config(&bytes)
}

/// Everything recomputable about one finished run, persisted as
/// metrics.json inside the run directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub acc: f64,
    pub bwt: Option<f64>,
    pub per_task_acc: Vec<f64>,
    pub wall_clock: f64,
    pub rng_fingerprint: String,
    pub buffer_len: usize,
    pub buffer_informativeness: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FailureRecord {
    pub method: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub records: Vec<RunRecord>,
    pub failures: Vec<FailureRecord>,
    pub run_dirs: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct TimingFile {
    per_task: Vec<f64>,
    total: f64,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn model_for(stream: &TaskStream, arch: Arch, seed: u64) -> Result<MultiHeadModel> {
    build_model(
        arch,
        stream.num_tasks(),
        stream.meta.classes_per_task,
        stream.meta.image_side,
        stream.meta.channels,
        seed,
    )
}

fn run_single(
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    method: Method,
    seed: u64,
    dir: &Path,
) -> Result<RunRecord> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let arch = cfg.arch()?;
    let mut model = model_for(stream, arch, seed)?;
    let mut snapshot_cfg = cfg.clone();
    snapshot_cfg.methods = vec![method.name().into()];
    snapshot_cfg.seeds = vec![seed];
    write_json(&snapshot_cfg, &dir.join("config.json"))?;

    let (rows, task_seconds, buffer) = if method == Method::Multitask {
        let started = Instant::now();
        train_multitask(stream, &mut model, cfg.lr, seed)?;
        let elapsed = started.elapsed().as_secs_f64();
        let row = crate::trainer::evaluate_all(&model, stream)?;
        (vec![row], vec![elapsed], crate::trainer::FinalBuffer::None)
    } else {
        let run = train_continual(stream, &mut model, &cfg.method_config(method, seed))?;
        (run.result_matrix, run.task_seconds, run.buffer)
    };

    write_result_matrix(&rows, &dir.join("result_matrix.csv"))?;
    let matrix = ResultMatrix::new(rows, seed, method.name());
    let acc = if method == Method::Multitask {
        matrix.rows[0].iter().sum::<f64>() / matrix.rows[0].len() as f64
    } else {
        acc_metric(&matrix)?
    };
    let bwt = if method == Method::Multitask || stream.num_tasks() < 2 {
        None
    } else {
        Some(bwt_metric(&matrix)?)
    };
    let total: f64 = task_seconds.iter().sum();
    write_json(
        &TimingFile {
            per_task: task_seconds,
            total,
        },
        &dir.join("timing.json"),
    )?;
    write_memory_snapshot(&buffer, &dir.join("memory_snapshot"))?;

    let probe = if cfg.probe_epochs > 0 && !buffer.is_empty() {
        let mut fresh = model_for(stream, arch, stream_id(seed, "probe-init"))?;
        Some(buffer_informativeness(
            &buffer,
            &mut fresh,
            stream,
            cfg.probe_epochs,
            cfg.probe_lr,
            seed,
        )?)
    } else {
        None
    };

    let record = RunRecord {
        method: method.name().into(),
        seed,
        acc,
        bwt,
        per_task_acc: matrix.rows[matrix.rows.len() - 1].clone(),
        wall_clock: total,
        rng_fingerprint: format!("{:016x}", stream_id(seed, method.name())),
        buffer_len: buffer.len(),
        buffer_informativeness: probe,
    };
    write_json(&record, &dir.join("metrics.json"))?;
    Ok(record)
}

/// Run every (method, seed) pair of the config against its evaluation
/// stream, persist one directory per run, and write summary.md/summary.csv
/// recomputed from those directories. Failed runs are recorded and leave a
/// gap rather than aborting the sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let methods = cfg.parsed_methods()?;
    if cfg.seeds.is_empty() {
        return Err(Error::Config("no seeds requested".into()));
    }
    let (_, eval_stream) = cfg.build_streams()?;
    let out_dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut run_dirs = Vec::new();
    for &method in &methods {
        for &seed in &cfg.seeds {
            let dir = out_dir.join(format!("{}_seed{seed}", method.name()));
            match run_single(cfg, &eval_stream, method, seed, &dir) {
                Ok(record) => records.push(record),
                Err(err) => {
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let failure = FailureRecord {
                        method: method.name().into(),
                        seed,
                        message: err.to_string(),
                    };
                    write_json(&failure, &dir.join("error.json"))?;
                    failures.push(failure);
                }
            }
            run_dirs.push(dir);
        }
    }

    let md = emit_report(&run_dirs, ReportFormat::Md)?;
    let md_path = out_dir.join("summary.md");
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    let csv = emit_report(&run_dirs, ReportFormat::Csv)?;
    let csv_path = out_dir.join("summary.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    Ok(ExperimentSummary {
        records,
        failures,
        run_dirs,
        out_dir,
    })
}

/// Score every grid entry on the hold-out stream and keep the best mean
/// final accuracy. Runs whose loss blows up score 0 instead of aborting the
/// sweep; ties prefer the lower learning rate, then earlier declaration.
pub fn cross_validate(
    grid: &[MethodConfig],
    cv_stream: &TaskStream,
    arch: Arch,
) -> Result<MethodConfig> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid".into()));
    }
    let mut best: Option<(f64, f32, usize)> = None;
    for (idx, mc) in grid.iter().enumerate() {
        let mut model = model_for(cv_stream, arch, mc.seed)?;
        let outcome = if mc.method == Method::Multitask {
            train_multitask(cv_stream, &mut model, mc.lr, mc.seed)
        } else {
            train_continual(cv_stream, &mut model, mc).and_then(|run| {
                acc_metric(&ResultMatrix::new(run.result_matrix, mc.seed, mc.method.name()))
            })
        };
        let acc = cv_score(outcome)?;
        let better = match best {
            None => true,
            Some((best_acc, best_lr, _)) => {
                acc > best_acc || (acc == best_acc && mc.lr < best_lr)
            }
        };
        if better {
            best = Some((acc, mc.lr, idx));
        }
    }
    Ok(grid[best.expect("non-empty grid").2])
}

/// Score one sweep entry: a run whose loss went non-finite counts as zero
/// accuracy so the sweep can continue; any other failure is fatal.
fn cv_score(outcome: Result<f64>) -> Result<f64> {
    match outcome {
        Ok(acc) => Ok(acc),
        Err(Error::NonFiniteLoss { .. }) => Ok(0.0),
        Err(other) => Err(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Md,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" => Ok(ReportFormat::Md),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RunArtifacts {
    pub record: RunRecord,
    pub config: ExperimentConfig,
}

pub(crate) fn read_run_dirs(run_dirs: &[PathBuf]) -> Result<Vec<RunArtifacts>> {
    let mut runs = Vec::new();
    for dir in run_dirs {
        let metrics = dir.join("metrics.json");
        if !metrics.exists() {
            continue;
        }
        let bytes = fs::read(&metrics).map_err(|e| Error::io(&metrics, e))?;
        let record: RunRecord = serde_json::from_slice(&bytes)?;
        let config = load_config(&dir.join("config.json"))?;
        runs.push(RunArtifacts { record, config });
    }
    Ok(runs)
}

fn read_failures(run_dirs: &[PathBuf]) -> Result<Vec<FailureRecord>> {
    let mut failures = Vec::new();
    for dir in run_dirs {
        let path = dir.join("error.json");
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            failures.push(serde_json::from_slice(&bytes)?);
        }
    }
    Ok(failures)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct MethodAggregate {
    method: String,
    runs: usize,
    acc: (f64, f64),
    bwt: Option<(f64, f64)>,
}

fn aggregate(runs: &[RunArtifacts]) -> Vec<MethodAggregate> {
    let mut order: Vec<String> = Vec::new();
    for run in runs {
        if !order.contains(&run.record.method) {
            order.push(run.record.method.clone());
        }
    }
    order
        .into_iter()
        .map(|method| {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.record.method == method)
                .map(|r| r.record.acc)
                .collect();
            let bwts: Vec<f64> = runs
                .iter()
                .filter(|r| r.record.method == method)
                .filter_map(|r| r.record.bwt)
                .collect();
            MethodAggregate {
                method,
                runs: accs.len(),
                acc: mean_std(&accs),
                bwt: if bwts.is_empty() {
                    None
                } else {
                    Some(mean_std(&bwts))
                },
            }
        })
        .collect()
}

/// Build the per-method summary table (Method, ACC±std, BWT±std) from run
/// directories. Markdown shows percentages; CSV keeps raw full-precision
/// fractions so the table stays exactly recomputable.
pub fn emit_report(run_dirs: &[PathBuf], format: ReportFormat) -> Result<String> {
    let runs = read_run_dirs(run_dirs)?;
    let failures = read_failures(run_dirs)?;
    if runs.is_empty() && failures.is_empty() {
        return Err(Error::Empty("run set".into()));
    }
    let aggregates = aggregate(&runs);
    match format {
        ReportFormat::Md => {
            let mut out = String::from("| Method | Runs | ACC (%) | BWT (%) |\n|---|---|---|---|\n");
            for agg in &aggregates {
                let bwt = match agg.bwt {
                    Some((m, s)) => format!("{:.1} ± {:.2}", m * 100.0, s * 100.0),
                    None => "—".into(),
                };
                out.push_str(&format!(
                    "| {} | {} | {:.1} ± {:.2} | {} |\n",
                    agg.method,
                    agg.runs,
                    agg.acc.0 * 100.0,
                    agg.acc.1 * 100.0,
                    bwt
                ));
            }
            if !failures.is_empty() {
                out.push_str("\nFailed runs:\n");
                for f in &failures {
                    out.push_str(&format!("- {} seed {}: {}\n", f.method, f.seed, f.message));
                }
            }
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = String::from("method,runs,acc_mean,acc_std,bwt_mean,bwt_std\n");
            for agg in &aggregates {
                let (bm, bs) = match agg.bwt {
                    Some((m, s)) => (format!("{m:?}"), format!("{s:?}")),
                    None => (String::new(), String::new()),
                };
                out.push_str(&format!(
                    "{},{},{:?},{:?},{},{}\n",
                    agg.method, agg.runs, agg.acc.0, agg.acc.1, bm, bs
                ));
            }
            Ok(out)
        }
    }
}

/// Run directories under `out`, sorted by name: anything holding a
/// metrics.json or error.json.
pub fn discover_run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(out, e))?;
        let path = entry.path();
        if path.is_dir()
            && (path.join("metrics.json").exists() || path.join("error.json").exists())
        {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = parse_config(b"{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = parse_config(br#"{"lr": 0.3, "methods": ["er-ring"], "seeds": [4, 5]}"#).unwrap();
        assert_eq!(cfg.lr, 0.3);
        assert_eq!(cfg.parsed_methods().unwrap(), vec![Method::ErRing]);
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.epf, 2);
    }

    #[test]
    fn config_rejects_unknown_and_malformed_keys() {
        assert!(parse_config(br#"{"learning_rate": 0.1}"#).is_err());
        assert!(parse_config(b"[1,2]").is_err());
        assert!(parse_config(b"").is_err());
        assert!(parse_config(br#"{"lr": "fast"}"#).is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.methods = vec!["epr".into(), "finetune".into()];
        cfg.n_sc = 0.5;
        let bytes = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(parse_config(&bytes).unwrap(), cfg);
    }

    #[test]
    fn synthetic_dataset_derives_class_count() {
        let cfg = ExperimentConfig::default();
        match cfg.dataset_id().unwrap() {
            DatasetId::Synthetic(spec) => assert_eq!(spec.n_classes, 8),
            other => panic!("unexpected dataset {other:?}"),
        }
    }

    #[test]
    fn report_recomputes_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for (seed, acc) in [(0u64, 0.6), (1, 0.7)] {
            let run = dir.path().join(format!("epr_seed{seed}"));
            fs::create_dir_all(&run).unwrap();
            let record = RunRecord {
                method: "epr".into(),
                seed,
                acc,
                bwt: Some(-0.05),
                per_task_acc: vec![acc],
                wall_clock: 1.0,
                rng_fingerprint: format!("{seed:016x}"),
                buffer_len: 8,
                buffer_informativeness: None,
            };
            write_json(&record, &run.join("metrics.json")).unwrap();
            write_json(&ExperimentConfig::default(), &run.join("config.json")).unwrap();
            dirs.push(run);
        }
        let csv = emit_report(&dirs, ReportFormat::Csv).unwrap();
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "epr");
        assert_eq!(fields[1], "2");
        let mean: f64 = fields[2].parse().unwrap();
        let std: f64 = fields[3].parse().unwrap();
        assert!((mean - 0.65).abs() < 1e-15);
        // Sample std of {0.6, 0.7} is 0.05 * sqrt(2).
        assert!((std - 0.05 * 2.0f64.sqrt()).abs() < 1e-12);
        let md = emit_report(&dirs, ReportFormat::Md).unwrap();
        assert!(md.contains("| epr | 2 |"));
        assert!(emit_report(&[], ReportFormat::Md).is_err());
    }

    #[test]
    fn cv_score_maps_divergence_to_zero() {
        assert_eq!(cv_score(Ok(0.7)).unwrap(), 0.7);
        let diverged = Error::NonFiniteLoss {
            loss: f32::NAN,
            task: 1,
            step: 3,
        };
        assert_eq!(cv_score(Err(diverged)).unwrap(), 0.0);
        assert!(cv_score(Err(Error::Config("typo".into()))).is_err());
    }

    #[test]
    fn cross_validate_picks_by_holdout_accuracy_with_low_lr_ties() {
        let cfg = ExperimentConfig {
            num_tasks: 3,
            classes_per_task: 2,
            per_class_train: 40,
            per_class_test: 10,
            image_side: 16,
            cv_tasks: 1,
            ..ExperimentConfig::default()
        };
        let (cv, eval) = cfg.build_streams().unwrap();
        let cv = cv.unwrap();
        assert_eq!(cv.num_tasks(), 1);
        assert_eq!(eval.num_tasks(), 2);
        // A learning rate of zero cannot beat chance, so the trained entry
        // must win regardless of which lr comes first.
        let grid = vec![
            MethodConfig::new(Method::Finetune, 0.0, 0),
            MethodConfig::new(Method::Finetune, 0.05, 0),
        ];
        let best = cross_validate(&grid, &cv, Arch::SmallCnn).unwrap();
        assert_eq!(best.lr, 0.05);
        // Equal scores prefer the lower learning rate, so a duplicated
        // entry keeps the first occurrence.
        let dup = vec![
            MethodConfig::new(Method::Finetune, 0.05, 0),
            MethodConfig::new(Method::Finetune, 0.05, 0),
        ];
        assert_eq!(cross_validate(&dup, &cv, Arch::SmallCnn).unwrap().lr, 0.05);
        assert!(cross_validate(&[], &cv, Arch::SmallCnn).is_err());
    }

    #[test]
    fn discover_finds_only_run_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("b_run");
        let b = dir.path().join("a_run");
        let noise = dir.path().join("not_a_run");
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        fs::create_dir_all(&noise).unwrap();
        fs::write(a.join("metrics.json"), b"{}").unwrap();
        fs::write(b.join("error.json"), b"{}").unwrap();
        let found = discover_run_dirs(dir.path()).unwrap();
        assert_eq!(found, vec![b, a]);
    }
}
