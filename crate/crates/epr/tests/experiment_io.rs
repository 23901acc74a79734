//! The persistence contract of the experiment harness: every run leaves a
//! self-describing directory, the headline numbers in metrics.json are
//! recomputable from the persisted result matrix alone, snapshots describe
//! exactly what the buffer held, and one failing run never poisons a sweep.

use std::fs;
use std::path::Path;

use epr::experiment::{
    discover_run_dirs, emit_report, read_snapshot_manifest, run_experiment,
    write_memory_snapshot, ExperimentConfig, ReportFormat, RunRecord,
};
use epr::memory::memory_capacity;
use epr::metrics::{acc_metric, bwt_metric, parse_result_matrix, ResultMatrix};
use epr::model::{build_model, Arch};
use epr::rng::stream_id;
use epr::trainer::{train_continual, FinalBuffer, Method, MethodConfig};

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        methods: vec!["epr".into(), "er-ring".into(), "multitask".into()],
        seeds: vec![0, 1],
        lr: 0.3,
        num_tasks: 3,
        classes_per_task: 2,
        image_side: 16,
        per_class_train: 30,
        per_class_test: 5,
        probe_epochs: 2,
        probe_lr: 0.1,
        out: out.to_str().unwrap().into(),
        ..ExperimentConfig::default()
    }
}

fn reload_record(dir: &Path) -> RunRecord {
    let bytes = fs::read(dir.join("metrics.json")).unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

#[test]
fn every_run_is_persisted_and_recomputable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let summary = run_experiment(&cfg).unwrap();

    assert_eq!(summary.records.len(), 6);
    assert!(summary.failures.is_empty());
    assert_eq!(summary.run_dirs.len(), 6);
    assert!(tmp.path().join("summary.md").is_file());
    assert!(tmp.path().join("summary.csv").is_file());
    let md = fs::read_to_string(tmp.path().join("summary.md")).unwrap();
    for method in ["epr", "er-ring", "multitask"] {
        assert!(md.contains(&format!("| {method} | 2 |")), "missing {method} in:\n{md}");
    }

    let mut sorted_dirs = summary.run_dirs.clone();
    sorted_dirs.sort();
    assert_eq!(discover_run_dirs(tmp.path()).unwrap(), sorted_dirs);

    for dir in &summary.run_dirs {
        for file in ["config.json", "result_matrix.csv", "metrics.json", "timing.json"] {
            assert!(dir.join(file).is_file(), "missing {file} in {dir:?}");
        }
        let record = reload_record(dir);
        assert_eq!(
            dir.file_name().unwrap().to_str().unwrap(),
            format!("{}_seed{}", record.method, record.seed)
        );

        // the headline numbers must be recomputable from the matrix alone
        let csv = fs::read(dir.join("result_matrix.csv")).unwrap();
        let rows = parse_result_matrix(&csv).unwrap();
        assert_eq!(&rows[rows.len() - 1], &record.per_task_acc);
        if record.method == "multitask" {
            assert_eq!(rows.len(), 1);
            let mean = rows[0].iter().sum::<f64>() / rows[0].len() as f64;
            assert_eq!(mean, record.acc);
            assert_eq!(record.bwt, None);
        } else {
            assert_eq!(rows.len(), cfg.num_tasks);
            let matrix = ResultMatrix::new(rows, record.seed, record.method.clone());
            assert_eq!(acc_metric(&matrix).unwrap(), record.acc);
            assert_eq!(Some(bwt_metric(&matrix).unwrap()), record.bwt);
        }
        assert_eq!(
            record.rng_fingerprint,
            format!("{:016x}", stream_id(record.seed, &record.method))
        );

        let timing: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.join("timing.json")).unwrap()).unwrap();
        let per_task = timing["per_task"].as_array().unwrap();
        let expected_rows = if record.method == "multitask" { 1 } else { cfg.num_tasks };
        assert_eq!(per_task.len(), expected_rows);
        let total: f64 = per_task.iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((timing["total"].as_f64().unwrap() - total).abs() < 1e-9);
        assert!((record.wall_clock - total).abs() < 1e-9);

        // the snapshot manifest must describe exactly the final buffer
        let entries = read_snapshot_manifest(&dir.join("memory_snapshot")).unwrap();
        assert_eq!(entries.len(), record.buffer_len);
        match record.method.as_str() {
            "epr" => {
                assert_eq!(record.buffer_len, 6 * cfg.epf);
                let probe = record.buffer_informativeness.unwrap();
                assert!((0.0..=1.0).contains(&probe));
                for entry in &entries {
                    let wp = entry.w_p.unwrap();
                    assert!(entry.x_cord.unwrap() + wp <= cfg.image_side);
                    assert!(entry.y_cord.unwrap() + wp <= cfg.image_side);
                    let tier = entry.tier.as_deref().unwrap();
                    assert!(["correct", "top3", "other"].contains(&tier), "tier {tier}");
                    assert!(dir.join("memory_snapshot").join(&entry.path).is_file());
                }
            }
            "er-ring" => {
                assert_eq!(
                    record.buffer_len,
                    memory_capacity(cfg.n_sc, cfg.classes_per_task, cfg.num_tasks)
                );
                assert!(record.buffer_informativeness.is_some());
                for entry in &entries {
                    assert!(entry.w_p.is_none() && entry.tier.is_none());
                    assert!(dir.join("memory_snapshot").join(&entry.path).is_file());
                }
            }
            "multitask" => {
                assert_eq!(record.buffer_len, 0);
                assert_eq!(record.buffer_informativeness, None);
                assert!(entries.is_empty());
            }
            other => panic!("unexpected method {other}"),
        }
    }
}

#[test]
fn one_bad_run_never_poisons_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.methods = vec!["epr".into(), "finetune".into()];
    cfg.seeds = vec![0];
    // a budget too small for even a 1x1 crop sinks the packing method only
    cfg.n_sc = 0.001;
    cfg.probe_epochs = 0;

    let summary = run_experiment(&cfg).unwrap();
    assert_eq!(summary.records.len(), 1);
    assert_eq!(summary.records[0].method, "finetune");
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].method, "epr");

    let failed_dir = tmp.path().join("epr_seed0");
    assert!(failed_dir.join("error.json").is_file());
    assert!(!failed_dir.join("metrics.json").exists());
    assert!(tmp.path().join("finetune_seed0").join("metrics.json").is_file());

    let md = fs::read_to_string(tmp.path().join("summary.md")).unwrap();
    assert!(md.contains("Failed runs:"), "no failure section in:\n{md}");
    assert!(md.contains("| finetune | 1 |"));

    // report regeneration from disk sees the same picture
    let dirs = discover_run_dirs(tmp.path()).unwrap();
    assert_eq!(dirs.len(), 2);
    let regenerated = emit_report(&dirs, ReportFormat::Md).unwrap();
    assert_eq!(regenerated, md);
}

#[test]
fn snapshots_mirror_the_buffer_exactly() {
    let spec = epr::data::SyntheticSpec {
        n_classes: 4,
        per_class_train: 20,
        per_class_test: 5,
        image_side: 16,
    };
    let stream =
        epr::data::build_split_stream(&epr::data::DatasetId::Synthetic(spec), 2, 2, 0).unwrap();
    let mut model = build_model(Arch::SmallCnn, 2, 2, 16, 3, 0).unwrap();
    let cfg = MethodConfig::new(Method::Epr, 0.3, 0);
    let run = train_continual(&stream, &mut model, &cfg).unwrap();
    let memory = match &run.buffer {
        FinalBuffer::Patches(memory) => memory,
        other => panic!("expected patches, found {} items", other.len()),
    };

    let tmp = tempfile::tempdir().unwrap();
    let written = write_memory_snapshot(&run.buffer, tmp.path()).unwrap();
    let read_back = read_snapshot_manifest(tmp.path()).unwrap();
    assert_eq!(written, read_back);

    assert_eq!(read_back.len(), memory.len());
    for (entry, patch) in read_back.iter().zip(memory.patches()) {
        assert_eq!(entry.task, patch.task_id);
        assert_eq!(entry.class, patch.label);
        assert_eq!(entry.x_cord, Some(patch.x_cord));
        assert_eq!(entry.y_cord, Some(patch.y_cord));
        assert_eq!(entry.w_p, Some(patch.pixels.dim().1));
        assert_eq!(entry.tier.as_deref(), Some(patch.tier.name()));
        assert!(tmp.path().join(&entry.path).is_file());
    }
}
