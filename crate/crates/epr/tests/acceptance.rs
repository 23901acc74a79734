//! Release gate. Every test prints one `ACCEPTANCE <n> <name>: PASS` line so
//! the suite output doubles as a checklist. Numeric components are checked
//! against independent brute-force oracles; the training-behavior checks
//! (6-9) share one cached set of deterministic runs on the synthetic stream.
//!
//! Check 10, the full-scale image benchmark, needs the binary image archive
//! on disk and a long CPU budget, so it is `#[ignore]`d; a companion test
//! reports its availability instead of silently passing.

use std::collections::HashMap;
use std::sync::OnceLock;

use ndarray::{Array2, Array3};
use rand::Rng;

use epr::data::{
    build_split_stream, split_cross_validation, DatasetId, SyntheticSpec, TaskStream,
};
use epr::experiment::{cross_validate, run_experiment, ExperimentConfig};
use epr::memory::memory_capacity;
use epr::metrics::{acc_metric, bwt_metric, ResultMatrix};
use epr::model::{build_model, Arch, TargetCapture};
use epr::packing::{locate_salient_patch, patch_width};
use epr::rng::stream;
use epr::saliency::{importance_weights, localization_map, upsample_bilinear, SaliencyMap};
use epr::trainer::{buffer_informativeness, train_continual, FinalBuffer, Method, MethodConfig};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// 1. Patch sizing against the reference table.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_patch_sizing_table() {
    // Expected square-patch sides for every (slot budget, packing factor)
    // pair used at the three stock image scales (widths 32, 84, 224).
    let rows: &[(f64, usize, usize, usize)] = &[
        (2.0, 3, 32, 26),
        (2.0, 5, 84, 53),
        (2.0, 7, 224, 119),
        (1.0, 2, 32, 22),
        (1.0, 3, 84, 48),
        (1.0, 4, 224, 112),
        (0.75, 1, 32, 27),
        (0.75, 2, 84, 51),
        (0.75, 3, 224, 112),
        (0.5, 1, 32, 22),
        (0.5, 2, 84, 42),
        (0.5, 2, 224, 112),
    ];
    for &(n_sc, epf, w, expected) in rows {
        let got = patch_width(n_sc, epf, w).unwrap();
        assert_eq!(
            got, expected,
            "patch_width({n_sc}, {epf}, {w}) = {got}, expected {expected}"
        );
    }
    println!("ACCEPTANCE 1 patch sizing table: PASS ({} rows)", rows.len());
}

// ---------------------------------------------------------------------------
// 2. Buffer capacity against the reference sets.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_buffer_capacity_sets() {
    // A 17-task evaluation stream at five and at ten classes per task, over
    // the standard slot budgets.
    let budgets = [0.5, 0.75, 1.0, 2.0];
    let five_wide: Vec<usize> = budgets.iter().map(|&n| memory_capacity(n, 5, 17)).collect();
    assert_eq!(five_wide, vec![42, 64, 85, 170]);
    let ten_wide: Vec<usize> = budgets.iter().map(|&n| memory_capacity(n, 10, 17)).collect();
    assert_eq!(ten_wide, vec![85, 128, 170, 340]);
    println!("ACCEPTANCE 2 buffer capacity sets: PASS ({five_wide:?} and {ten_wide:?})");
}

// ---------------------------------------------------------------------------
// 3. Saliency pipeline against a brute-force oracle.
// ---------------------------------------------------------------------------

/// The whole saliency chain, recomputed from scratch in f64 with plain
/// loops: mean-pooled gradients weight the activation maps, the combination
/// is clamped at zero, then bilinearly upsampled with half-pixel centers.
fn brute_force_saliency(cap: &TargetCapture, out_h: usize, out_w: usize) -> Vec<Vec<f64>> {
    let (m, u, v) = cap.activations.dim();
    let mut alpha = vec![0.0f64; m];
    for (mi, a) in alpha.iter_mut().enumerate() {
        let mut s = 0.0f64;
        for i in 0..u {
            for j in 0..v {
                s += cap.gradients[[mi, i, j]] as f64;
            }
        }
        *a = s / (u * v) as f64;
    }
    let mut coarse = vec![vec![0.0f64; v]; u];
    for i in 0..u {
        for j in 0..v {
            let mut s = 0.0f64;
            for (mi, a) in alpha.iter().enumerate() {
                s += a * cap.activations[[mi, i, j]] as f64;
            }
            coarse[i][j] = s.max(0.0);
        }
    }
    let pos = |o: usize, out_n: usize, in_n: usize| -> (usize, usize, f64) {
        let t = ((o as f64 + 0.5) * in_n as f64 / out_n as f64 - 0.5)
            .clamp(0.0, (in_n - 1) as f64);
        let lo = t.floor() as usize;
        let hi = (lo + 1).min(in_n - 1);
        (lo, hi, t - lo as f64)
    };
    (0..out_h)
        .map(|i| {
            let (r0, r1, fr) = pos(i, out_h, u);
            (0..out_w)
                .map(|j| {
                    let (c0, c1, fc) = pos(j, out_w, v);
                    let top = coarse[r0][c0] * (1.0 - fc) + coarse[r0][c1] * fc;
                    let bottom = coarse[r1][c0] * (1.0 - fc) + coarse[r1][c1] * fc;
                    top * (1.0 - fr) + bottom * fr
                })
                .collect()
        })
        .collect()
}

#[test]
fn acceptance_03_saliency_pipeline_matches_brute_force() {
    let mut rng = stream(31, "acceptance-saliency");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(1..=8);
        let u = rng.gen_range(1..=8);
        let v = rng.gen_range(1..=8);
        let out_h = rng.gen_range(u..=24);
        let out_w = rng.gen_range(v..=24);
        let mut activations = Array3::<f32>::zeros((m, u, v));
        let mut gradients = Array3::<f32>::zeros((m, u, v));
        for x in activations.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        for x in gradients.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let cap = TargetCapture {
            activations,
            gradients,
        };
        let lib = upsample_bilinear(
            &localization_map(&importance_weights(&cap), &cap.activations),
            out_h,
            out_w,
        );
        let brute = brute_force_saliency(&cap, out_h, out_w);
        for i in 0..out_h {
            for j in 0..out_w {
                let diff = (lib[[i, j]] as f64 - brute[i][j]).abs();
                worst = worst.max(diff);
                assert!(
                    diff <= 1e-6,
                    "saliency mismatch {diff:e} at ({i},{j}) for dims m={m} u={u} v={v} -> {out_h}x{out_w}"
                );
            }
        }
    }
    println!("ACCEPTANCE 3 saliency pipeline vs brute force: PASS (100 captures, worst diff {worst:.2e})");
}

// ---------------------------------------------------------------------------
// 4. Salient-window search against an exhaustive scan.
// ---------------------------------------------------------------------------

/// Independent exhaustive scan via a summed-area table: every stride-aligned
/// offset (plus the final one, so edges stay reachable) is scored in f64 and
/// the best window wins, ties to the smallest (row, col).
fn exhaustive_best_window(values: &Array2<f32>, wp: usize, stride: usize) -> (usize, usize) {
    let (h, w) = values.dim();
    let mut sat = vec![vec![0.0f64; w + 1]; h + 1];
    for r in 0..h {
        for c in 0..w {
            sat[r + 1][c + 1] =
                values[[r, c]] as f64 + sat[r][c + 1] + sat[r + 1][c] - sat[r][c];
        }
    }
    let window = |x: usize, y: usize| {
        sat[x + wp][y + wp] - sat[x][y + wp] - sat[x + wp][y] + sat[x][y]
    };
    let offsets = |n: usize| {
        let last = n - wp;
        let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
        if *out.last().unwrap() != last {
            out.push(last);
        }
        out
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for &x in &offsets(h) {
        for &y in &offsets(w) {
            let s = window(x, y);
            let better = match best {
                None => true,
                Some((bs, bx, by)) => s > bs || (s == bs && (x, y) < (bx, by)),
            };
            if better {
                best = Some((s, x, y));
            }
        }
    }
    let (_, x, y) = best.unwrap();
    (x, y)
}

#[test]
fn acceptance_04_salient_window_matches_exhaustive_scan() {
    let mut rng = stream(41, "acceptance-window");
    for case in 0..1000 {
        let side = rng.gen_range(6..=20);
        let wp = rng.gen_range(4..=side);
        let stride = rng.gen_range(1..=3);
        let mut values = Array2::<f32>::zeros((side, side));
        // A quarter of the maps are quantized so equal-sum windows exist and
        // the tie-break rule is exercised; sums of quarter-steps are exact in
        // both f32 and f64, so the comparison stays bit-agnostic.
        let quantized = case % 4 == 0;
        for x in values.iter_mut() {
            *x = if quantized {
                rng.gen_range(0..=4) as f32 * 0.25
            } else {
                rng.gen_range(0.0..1.0)
            };
        }
        let expected = exhaustive_best_window(&values, wp, stride);
        let map = SaliencyMap {
            values,
            source_class: 0,
            source_task: 0,
        };
        let got = locate_salient_patch(&map, wp, stride).unwrap();
        assert_eq!(
            got, expected,
            "case {case}: side={side} wp={wp} stride={stride} quantized={quantized}"
        );
    }
    println!("ACCEPTANCE 4 salient window vs exhaustive scan: PASS (1000 maps)");
}

// ---------------------------------------------------------------------------
// 5. Accuracy and forgetting metrics against brute force.
// ---------------------------------------------------------------------------

fn brute_force_acc(rows: &[Vec<f64>]) -> f64 {
    let last = &rows[rows.len() - 1];
    last.iter().sum::<f64>() / last.len() as f64
}

fn brute_force_bwt(rows: &[Vec<f64>]) -> f64 {
    let t = rows.len();
    let mut total = 0.0f64;
    for i in 0..t - 1 {
        let mut worst_gap = f64::NEG_INFINITY;
        for row in rows.iter().take(t - 1).skip(i) {
            worst_gap = worst_gap.max(row[i] - rows[t - 1][i]);
        }
        total -= worst_gap;
    }
    total / (t - 1) as f64
}

#[test]
fn acceptance_05_metrics_match_brute_force() {
    // Worked example: two tasks, the first degrades 0.9 -> 0.8.
    let worked = ResultMatrix::new(vec![vec![0.9, 0.0], vec![0.8, 0.7]], 0, "worked");
    assert!((acc_metric(&worked).unwrap() - 0.75).abs() <= 1e-12);
    assert!((bwt_metric(&worked).unwrap() - (-0.1)).abs() <= 1e-12);

    let mut rng = stream(51, "acceptance-metrics");
    for case in 0..100 {
        let t = rng.gen_range(2..=10);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..t).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let matrix = ResultMatrix::new(rows.clone(), case, "random");
        let acc = acc_metric(&matrix).unwrap();
        let bwt = bwt_metric(&matrix).unwrap();
        assert!(
            (acc - brute_force_acc(&rows)).abs() <= 1e-12,
            "case {case}: acc {acc} != {}",
            brute_force_acc(&rows)
        );
        assert!(
            (bwt - brute_force_bwt(&rows)).abs() <= 1e-12,
            "case {case}: bwt {bwt} != {}",
            brute_force_bwt(&rows)
        );
    }
    println!("ACCEPTANCE 5 accuracy/forgetting metrics vs brute force: PASS (worked example + 100 matrices)");
}

// ---------------------------------------------------------------------------
// Shared deterministic training runs for checks 6-9.
// ---------------------------------------------------------------------------

const FROZEN_SEEDS: [u64; 3] = [0, 1, 2];
const FROZEN_LR: f32 = 0.3;
const FROZEN_SIDE: usize = 16;
const FROZEN_TASKS: usize = 4;
const FROZEN_CPT: usize = 2;

struct FrozenRuns {
    stream: TaskStream,
    /// Final mean accuracies per seed, full slot budget (one per class).
    epr_full: Vec<f64>,
    ring_full: Vec<f64>,
    finetune: Vec<f64>,
    /// Same at half budget (one slot per two classes).
    epr_half: Vec<f64>,
    ring_half: Vec<f64>,
    /// Final buffers of the full-budget runs, per seed.
    epr_buffers: Vec<FinalBuffer>,
    ring_buffers: Vec<FinalBuffer>,
}

fn frozen_config(method: Method, n_sc: f64, seed: u64) -> MethodConfig {
    let mut mc = MethodConfig::new(method, FROZEN_LR, seed);
    mc.n_sc = n_sc;
    mc
}

fn run_frozen(stream: &TaskStream, method: Method, n_sc: f64, seed: u64) -> (f64, FinalBuffer) {
    let mut model =
        build_model(Arch::SmallCnn, FROZEN_TASKS, FROZEN_CPT, FROZEN_SIDE, 3, seed).unwrap();
    let run = train_continual(stream, &mut model, &frozen_config(method, n_sc, seed)).unwrap();
    let acc = acc_metric(&ResultMatrix::new(run.result_matrix, seed, method.name())).unwrap();
    (acc, run.buffer)
}

fn frozen_runs() -> &'static FrozenRuns {
    static RUNS: OnceLock<FrozenRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let stream = build_split_stream(
            &DatasetId::Synthetic(SyntheticSpec {
                n_classes: FROZEN_TASKS * FROZEN_CPT,
                per_class_train: 250,
                per_class_test: 20,
                image_side: FROZEN_SIDE,
            }),
            FROZEN_TASKS,
            FROZEN_CPT,
            0,
        )
        .unwrap();
        let mut runs = FrozenRuns {
            stream,
            epr_full: Vec::new(),
            ring_full: Vec::new(),
            finetune: Vec::new(),
            epr_half: Vec::new(),
            ring_half: Vec::new(),
            epr_buffers: Vec::new(),
            ring_buffers: Vec::new(),
        };
        for seed in FROZEN_SEEDS {
            let (acc, buffer) = run_frozen(&runs.stream, Method::Epr, 1.0, seed);
            runs.epr_full.push(acc);
            runs.epr_buffers.push(buffer);
            let (acc, buffer) = run_frozen(&runs.stream, Method::ErRing, 1.0, seed);
            runs.ring_full.push(acc);
            runs.ring_buffers.push(buffer);
            let (acc, _) = run_frozen(&runs.stream, Method::Finetune, 1.0, seed);
            runs.finetune.push(acc);
            let (acc, _) = run_frozen(&runs.stream, Method::Epr, 0.5, seed);
            runs.epr_half.push(acc);
            let (acc, _) = run_frozen(&runs.stream, Method::ErRing, 0.5, seed);
            runs.ring_half.push(acc);
        }
        runs
    })
}

// ---------------------------------------------------------------------------
// 6. Method ordering on the synthetic stream.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_replay_ordering_on_synthetic_stream() {
    let runs = frozen_runs();
    let epr = mean(&runs.epr_full);
    let ring = mean(&runs.ring_full);
    let finetune = mean(&runs.finetune);
    assert!(
        epr >= ring,
        "patch replay ({epr:.4}) fell below ring replay ({ring:.4})"
    );
    assert!(
        ring >= finetune,
        "ring replay ({ring:.4}) fell below plain finetuning ({finetune:.4})"
    );
    assert!(
        epr - finetune >= 0.05,
        "patch replay ({epr:.4}) is not at least 5 points above finetuning ({finetune:.4})"
    );
    println!(
        "ACCEPTANCE 6 replay ordering: PASS (epr {epr:.4} >= er-ring {ring:.4} >= finetune {finetune:.4}; gap {:.1} points)",
        (epr - finetune) * 100.0
    );
}

// ---------------------------------------------------------------------------
// 7. Resilience when the slot budget is halved.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_budget_halving_resilience() {
    let runs = frozen_runs();
    let epr_drop = mean(&runs.epr_full) - mean(&runs.epr_half);
    let ring_drop = mean(&runs.ring_full) - mean(&runs.ring_half);
    assert!(
        epr_drop < ring_drop,
        "halving the budget cost patch replay {epr_drop:.4} but ring replay only {ring_drop:.4}"
    );
    println!(
        "ACCEPTANCE 7 budget-halving resilience: PASS (drop {:.2} vs {:.2} points)",
        epr_drop * 100.0,
        ring_drop * 100.0
    );
}

// ---------------------------------------------------------------------------
// 8. Informativeness of the final buffers.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_buffer_informativeness() {
    let runs = frozen_runs();
    let probe = |buffers: &[FinalBuffer]| -> Vec<f64> {
        buffers
            .iter()
            .zip(FROZEN_SEEDS)
            .map(|(buffer, seed)| {
                let mut fresh = build_model(
                    Arch::SmallCnn,
                    FROZEN_TASKS,
                    FROZEN_CPT,
                    FROZEN_SIDE,
                    3,
                    900 + seed,
                )
                .unwrap();
                buffer_informativeness(buffer, &mut fresh, &runs.stream, 50, 0.1, seed).unwrap()
            })
            .collect()
    };
    let epr = mean(&probe(&runs.epr_buffers));
    let ring = mean(&probe(&runs.ring_buffers));
    assert!(
        epr >= ring,
        "a fresh model learned less from the patch buffer ({epr:.4}) than from the ring buffer ({ring:.4})"
    );
    println!("ACCEPTANCE 8 buffer informativeness: PASS (epr buffer {epr:.4} >= er-ring buffer {ring:.4})");
}

// ---------------------------------------------------------------------------
// 9. Stored patches overlap the object regions.
// ---------------------------------------------------------------------------

fn iou(a: [usize; 4], b: [usize; 4]) -> f64 {
    let r0 = a[0].max(b[0]);
    let c0 = a[1].max(b[1]);
    let r1 = (a[0] + a[2]).min(b[0] + b[2]);
    let c1 = (a[1] + a[3]).min(b[1] + b[3]);
    if r1 <= r0 || c1 <= c0 {
        return 0.0;
    }
    let inter = ((r1 - r0) * (c1 - c0)) as f64;
    let union = (a[2] * a[3] + b[2] * b[3]) as f64 - inter;
    inter / union
}

#[test]
fn acceptance_09_patches_cover_object_regions() {
    let runs = frozen_runs();
    let boxes: HashMap<u64, [usize; 4]> = runs
        .stream
        .tasks
        .iter()
        .flat_map(|t| t.train.iter())
        .filter_map(|ex| ex.object_box.map(|b| (ex.id, b)))
        .collect();
    let wp = patch_width(1.0, 2, FROZEN_SIDE).unwrap();
    let mut hits = 0usize;
    let mut total = 0usize;
    for buffer in &runs.epr_buffers {
        let FinalBuffer::Patches(memory) = buffer else {
            panic!("patch-replay run did not leave a patch buffer");
        };
        for patch in memory.patches() {
            let object = boxes[&patch.source_id];
            total += 1;
            if iou([patch.x_cord, patch.y_cord, wp, wp], object) >= 0.25 {
                hits += 1;
            }
        }
    }
    let fraction = hits as f64 / total as f64;
    assert!(
        fraction >= 0.6,
        "only {hits}/{total} stored patches overlap their source object at IoU >= 0.25"
    );
    println!(
        "ACCEPTANCE 9 patch-object overlap: PASS ({hits}/{total} patches at IoU >= 0.25)"
    );
}

// ---------------------------------------------------------------------------
// 10. Full-scale image benchmark (opt-in).
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_full_scale_benchmark_availability() {
    match std::env::var_os("EPR_CIFAR_DIR") {
        Some(dir) => println!(
            "ACCEPTANCE 10 full-scale benchmark: archive found at {dir:?}; run \
             `cargo test --release -p epr --test acceptance -- --ignored acceptance_10` to execute it"
        ),
        None => println!(
            "ACCEPTANCE 10 full-scale benchmark: SKIP (set EPR_CIFAR_DIR to the image archive \
             directory and run the ignored test acceptance_10_full_scale_benchmark)"
        ),
    }
}

/// 20-task split of the 100-class archive, deep backbone, five seeds. Each
/// seed picks its learning rate on the three held-out leading tasks, trains
/// on the remaining 17, and the patch method must land within 3 points of
/// 58.5% mean accuracy while beating ring replay on every matched seed.
#[test]
#[ignore = "needs the binary image archive (EPR_CIFAR_DIR) and a multi-hour CPU budget"]
fn acceptance_10_full_scale_benchmark() {
    let dir = std::env::var("EPR_CIFAR_DIR")
        .expect("set EPR_CIFAR_DIR to the directory holding the binary image archive");
    let dataset = DatasetId::CifarFormatDir(dir.into());
    let mut epr_accs = Vec::new();
    let mut ring_accs = Vec::new();
    for seed in 0..5u64 {
        let full = build_split_stream(&dataset, 20, 5, seed).unwrap();
        let (cv, eval) = split_cross_validation(full, 3).unwrap();
        for (method, accs) in [
            (Method::Epr, &mut epr_accs),
            (Method::ErRing, &mut ring_accs),
        ] {
            let grid: Vec<MethodConfig> = [0.01f32, 0.03, 0.1, 0.3]
                .iter()
                .map(|&lr| {
                    let mut mc = MethodConfig::new(method, lr, seed);
                    mc.n_sc = 1.0;
                    mc
                })
                .collect();
            let best = cross_validate(&grid, &cv, Arch::ReducedResnet18).unwrap();
            let mut model = build_model(
                Arch::ReducedResnet18,
                eval.num_tasks(),
                eval.meta.classes_per_task,
                eval.meta.image_side,
                eval.meta.channels,
                seed,
            )
            .unwrap();
            let run = train_continual(&eval, &mut model, &best).unwrap();
            let acc =
                acc_metric(&ResultMatrix::new(run.result_matrix, seed, method.name())).unwrap();
            accs.push(acc);
        }
    }
    for (seed, (e, r)) in epr_accs.iter().zip(&ring_accs).enumerate() {
        assert!(
            e > r,
            "seed {seed}: patch replay {e:.4} did not beat ring replay {r:.4}"
        );
    }
    let epr = mean(&epr_accs);
    assert!(
        (epr - 0.585).abs() <= 0.03,
        "mean accuracy {epr:.4} is not within 3 points of 0.585"
    );
    println!(
        "ACCEPTANCE 10 full-scale benchmark: PASS (epr {epr:.4}, er-ring {:.4})",
        mean(&ring_accs)
    );
}

// ---------------------------------------------------------------------------
// 11. Bit-identical reruns.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_11_bitwise_deterministic_runs() {
    let run_once = |out: &std::path::Path| -> Vec<u8> {
        let cfg = ExperimentConfig {
            methods: vec!["epr".into()],
            seeds: vec![0],
            lr: FROZEN_LR,
            num_tasks: 2,
            classes_per_task: 2,
            per_class_train: 30,
            per_class_test: 5,
            image_side: FROZEN_SIDE,
            out: out.to_string_lossy().into_owned(),
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&cfg).unwrap();
        assert!(summary.failures.is_empty(), "{:?}", summary.failures);
        std::fs::read(out.join("epr_seed0").join("result_matrix.csv")).unwrap()
    };
    let dir = tempfile::tempdir().unwrap();
    let first = run_once(&dir.path().join("first"));
    let second = run_once(&dir.path().join("second"));
    assert!(!first.is_empty());
    assert_eq!(
        first, second,
        "identical config and seed produced different result matrices"
    );
    println!(
        "ACCEPTANCE 11 bitwise determinism: PASS ({} identical bytes)",
        first.len()
    );
}
