//! Online training loops: the patch-replay method and its padding/placement
//! ablations, ring/reservoir replay baselines, plain finetuning, the joint
//! multitask oracle, and a probe that measures how much a finished buffer
//! alone can teach a fresh model.

mod padding;

pub use padding::{random_pad, random_place, random_snip, zero_pad};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand_chacha::ChaCha8Rng;

use crate::data::{iterate_online, Example, Task, TaskStream};
use crate::memory::{
    memory_capacity, sample_replay_indices, EpisodicMemory, ErRingBuffer, ReservoirBuffer,
    RingBuffer,
};
use crate::model::MultiHeadModel;
use crate::packing::{
    classify_candidate, patch_width, select_patches, update_memory, PackingConfig,
};
use crate::rng::indexed_stream;
use crate::{Error, Result};

/// Staged images kept per class while a task streams by, as a multiple of
/// the per-class patch quota.
pub const STAGING_FACTOR: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Epr,
    EprZeroRandom,
    EprRandpadExact,
    RandomSnip,
    ErRing,
    ErReservoir,
    Finetune,
    Multitask,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Epr,
        Method::EprZeroRandom,
        Method::EprRandpadExact,
        Method::RandomSnip,
        Method::ErRing,
        Method::ErReservoir,
        Method::Finetune,
        Method::Multitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Epr => "epr",
            Method::EprZeroRandom => "epr-zero-random",
            Method::EprRandpadExact => "epr-randpad-exact",
            Method::RandomSnip => "random-snip",
            Method::ErRing => "er-ring",
            Method::ErReservoir => "er-reservoir",
            Method::Finetune => "finetune",
            Method::Multitask => "multitask",
        }
    }

    /// Methods that store and replay packed patches.
    pub fn packs_patches(self) -> bool {
        matches!(
            self,
            Method::Epr | Method::EprZeroRandom | Method::EprRandpadExact | Method::RandomSnip
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-run training knobs. Patch-packing fields are ignored by the
/// full-image baselines.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub lr: f32,
    /// Buffer budget per class, in full-image units.
    pub n_sc: f64,
    /// Patches stored per class.
    pub epf: usize,
    /// Candidate-grid step for patch location.
    pub stride: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MethodConfig {
    pub fn new(method: Method, lr: f32, seed: u64) -> Self {
        MethodConfig {
            method,
            lr,
            n_sc: 1.0,
            epf: 2,
            stride: 1,
            batch_size: 10,
            seed,
        }
    }
}

/// A replay example already transformed to full frame size and routed to a
/// head unit.
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub image: Array3<f32>,
    pub task_id: usize,
    pub unit: usize,
}

/// Whatever the method's buffer holds once training ends.
#[derive(Debug, Clone)]
pub enum FinalBuffer {
    Patches(EpisodicMemory),
    Examples(Vec<Example>),
    None,
}

impl FinalBuffer {
    pub fn len(&self) -> usize {
        match self {
            FinalBuffer::Patches(m) => m.len(),
            FinalBuffer::Examples(v) => v.len(),
            FinalBuffer::None => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of a continual run: accuracy-on-every-task rows (one per trained
/// task), the final buffer, and per-task training wall-clock.
#[derive(Debug)]
pub struct TrainRun {
    pub result_matrix: Vec<Vec<f64>>,
    pub buffer: FinalBuffer,
    pub task_seconds: Vec<f64>,
}

enum BufferState {
    Packing {
        staging: RingBuffer<Example>,
        memory: EpisodicMemory,
        packing: PackingConfig,
    },
    Ring(ErRingBuffer<Example>),
    Reservoir(ReservoirBuffer<Example>, ChaCha8Rng),
    None,
}

fn unit_of(stream: &TaskStream, example: &Example) -> Result<usize> {
    stream
        .tasks
        .get(example.task_id)
        .and_then(|t| t.head_index(example.label))
        .ok_or_else(|| {
            Error::Dataset(format!(
                "example {} (class {}) does not belong to task {}",
                example.id, example.label, example.task_id
            ))
        })
}

fn stack_batch(
    current: &[(&Array3<f32>, usize, usize)],
    replay: &[ReplayItem],
    channels: usize,
    side: usize,
) -> (Array4<f32>, Vec<usize>, Vec<usize>) {
    let n = current.len() + replay.len();
    let mut images = Array4::zeros((n, channels, side, side));
    let mut task_ids = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    for (row, (image, task_id, unit)) in current.iter().enumerate() {
        images.index_axis_mut(ndarray::Axis(0), row).assign(image);
        task_ids.push(*task_id);
        units.push(*unit);
    }
    for (offset, item) in replay.iter().enumerate() {
        images
            .index_axis_mut(ndarray::Axis(0), current.len() + offset)
            .assign(&item.image);
        task_ids.push(item.task_id);
        units.push(item.unit);
    }
    (images, task_ids, units)
}

fn draw_replay(
    state: &BufferState,
    method: Method,
    batch_size: usize,
    side: usize,
    stream: &TaskStream,
    sample_rng: &mut ChaCha8Rng,
    transform_rng: &mut ChaCha8Rng,
) -> Result<Vec<ReplayItem>> {
    let items = match state {
        BufferState::Packing { memory, .. } => {
            let picked = memory.sample(batch_size, sample_rng);
            let mut out = Vec::with_capacity(picked.len());
            for patch in picked {
                let image = match method {
                    Method::Epr | Method::RandomSnip => zero_pad(patch, side, side)?,
                    Method::EprZeroRandom => random_place(patch, side, side, transform_rng)?,
                    Method::EprRandpadExact => random_pad(patch, side, side, transform_rng)?,
                    _ => unreachable!("patch buffer under a full-image method"),
                };
                out.push(ReplayItem {
                    image,
                    task_id: patch.task_id,
                    unit: patch.label_unit,
                });
            }
            out
        }
        BufferState::Ring(buffer) => {
            let picked = buffer.sample(batch_size, sample_rng);
            let mut out = Vec::with_capacity(picked.len());
            for example in picked {
                out.push(ReplayItem {
                    image: example.image.clone(),
                    task_id: example.task_id,
                    unit: unit_of(stream, example)?,
                });
            }
            out
        }
        BufferState::Reservoir(buffer, _) => {
            let indices = sample_replay_indices(buffer.len(), batch_size, sample_rng);
            let mut out = Vec::with_capacity(indices.len());
            for i in indices {
                let example = &buffer.items()[i];
                out.push(ReplayItem {
                    image: example.image.clone(),
                    task_id: example.task_id,
                    unit: unit_of(stream, example)?,
                });
            }
            out
        }
        BufferState::None => Vec::new(),
    };
    Ok(items)
}

/// Random-location counterpart of the end-of-task memory update: crops are
/// placed uniformly at random instead of at the most salient window, but
/// candidate ranking and selection stay identical.
fn update_memory_random_snip(
    memory: &mut EpisodicMemory,
    staging: &RingBuffer<Example>,
    model: &MultiHeadModel,
    task: &Task,
    config: &PackingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let wp = patch_width(config.n_sc, config.epf, config.image_side)?;
    for &class in &task.label_set {
        let staged: Vec<&Example> = staging.class_items(class).collect();
        if staged.is_empty() {
            eprintln!(
                "warning: no staged examples for class {class} at end of task {}",
                task.id
            );
            continue;
        }
        let unit = task
            .head_index(class)
            .ok_or_else(|| Error::Config(format!("class {class} not in task {}", task.id)))?;
        let mut candidates = Vec::with_capacity(staged.len());
        for example in staged {
            let mut patch = random_snip(&example.image, wp, rng)?;
            patch.task_id = task.id;
            patch.label = class;
            patch.label_unit = unit;
            patch.source_id = example.id;
            patch.tier = classify_candidate(model, &patch, task.id)?;
            candidates.push(patch);
        }
        for patch in select_patches(candidates, config.epf) {
            memory.insert(patch)?;
        }
    }
    Ok(())
}

fn check_compatible(stream: &TaskStream, model: &MultiHeadModel) -> Result<()> {
    if model.image_side != stream.meta.image_side
        || model.channels != stream.meta.channels
        || model.classes_per_task != stream.meta.classes_per_task
    {
        return Err(Error::Config(format!(
            "model expects {}x{}x{} with {} classes per head, stream provides {}x{}x{} with {}",
            model.channels,
            model.image_side,
            model.image_side,
            model.classes_per_task,
            stream.meta.channels,
            stream.meta.image_side,
            stream.meta.image_side,
            stream.meta.classes_per_task,
        )));
    }
    if model.num_tasks() < stream.num_tasks() {
        return Err(Error::Config(format!(
            "model has {} heads for {} tasks",
            model.num_tasks(),
            stream.num_tasks()
        )));
    }
    Ok(())
}

/// Mean test accuracy of the task's head over its test set.
pub fn evaluate_task(model: &MultiHeadModel, task: &Task) -> Result<f64> {
    if task.test.is_empty() {
        return Err(Error::Empty(format!("test set of task {}", task.id)));
    }
    let mut correct = 0usize;
    for chunk in task.test.chunks(64) {
        let current: Vec<(&Array3<f32>, usize, usize)> = chunk
            .iter()
            .map(|ex| {
                let unit = task.head_index(ex.label).ok_or_else(|| {
                    Error::Dataset(format!("class {} not in task {}", ex.label, task.id))
                })?;
                Ok((&ex.image, task.id, unit))
            })
            .collect::<Result<_>>()?;
        let (images, task_ids, units) =
            stack_batch(&current, &[], model.channels, model.image_side);
        let logits = model.forward(&images, &task_ids)?;
        for (row, &unit) in units.iter().enumerate() {
            let predicted = logits
                .row(row)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            if predicted == unit {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / task.test.len() as f64)
}

/// Test accuracy on every task in the stream, in task order.
pub fn evaluate_all(model: &MultiHeadModel, stream: &TaskStream) -> Result<Vec<f64>> {
    stream
        .tasks
        .iter()
        .map(|task| evaluate_task(model, task))
        .collect()
}

/// Single-epoch online continual training over the stream's tasks in order.
///
/// Each step takes one joint SGD update on up to `batch_size` current plus
/// up to `batch_size` replayed examples (replay is skipped while the buffer
/// is empty, so the first task trains plain). Patch-packing methods stage
/// current examples per class and fold the best crops into memory when the
/// task ends; baseline buffers ingest every example as it streams. After
/// every task the model is evaluated on all tasks, filling one row of the
/// result matrix.
pub fn train_continual(
    stream: &TaskStream,
    model: &mut MultiHeadModel,
    cfg: &MethodConfig,
) -> Result<TrainRun> {
    check_compatible(stream, model)?;
    if cfg.method == Method::Multitask {
        return Err(Error::Config(
            "the joint-training oracle is not a sequential method".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let side = stream.meta.image_side;
    let mut state = match cfg.method {
        m if m.packs_patches() => {
            let packing = PackingConfig {
                n_sc: cfg.n_sc,
                epf: cfg.epf,
                stride: cfg.stride,
                image_side: side,
            };
            patch_width(packing.n_sc, packing.epf, side)?;
            BufferState::Packing {
                staging: RingBuffer::new(STAGING_FACTOR * cfg.epf),
                memory: EpisodicMemory::new(cfg.epf, cfg.n_sc, side),
                packing,
            }
        }
        Method::ErRing => BufferState::Ring(ErRingBuffer::new(memory_capacity(
            cfg.n_sc,
            stream.meta.classes_per_task,
            stream.num_tasks(),
        ))),
        Method::ErReservoir => BufferState::Reservoir(
            ReservoirBuffer::new(memory_capacity(
                cfg.n_sc,
                stream.meta.classes_per_task,
                stream.num_tasks(),
            )),
            indexed_stream(cfg.seed, "reservoir", 0),
        ),
        _ => BufferState::None,
    };

    let mut result_matrix = Vec::with_capacity(stream.num_tasks());
    let mut task_seconds = Vec::with_capacity(stream.num_tasks());
    for task in &stream.tasks {
        let started = Instant::now();
        let batches = iterate_online(task, cfg.batch_size, cfg.seed)?;
        let mut sample_rng = indexed_stream(cfg.seed, "replay-sample", task.id as u64);
        let mut transform_rng = indexed_stream(cfg.seed, "replay-transform", task.id as u64);
        for (step, batch) in batches.iter().enumerate() {
            let current: Vec<(&Array3<f32>, usize, usize)> = batch
                .iter()
                .map(|&i| {
                    let ex = &task.train[i];
                    let unit = task.head_index(ex.label).ok_or_else(|| {
                        Error::Dataset(format!("class {} not in task {}", ex.label, task.id))
                    })?;
                    Ok((&ex.image, task.id, unit))
                })
                .collect::<Result<_>>()?;
            let replay = draw_replay(
                &state,
                cfg.method,
                cfg.batch_size,
                side,
                stream,
                &mut sample_rng,
                &mut transform_rng,
            )?;
            let (images, task_ids, units) = stack_batch(&current, &replay, model.channels, side);
            let loss = model.sgd_step(&images, &task_ids, &units, cfg.lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    task: task.id,
                    step,
                });
            }
            match &mut state {
                BufferState::Packing { staging, .. } => {
                    for &i in batch {
                        let ex = &task.train[i];
                        staging.push(ex.label, ex.clone());
                    }
                }
                BufferState::Ring(buffer) => {
                    for &i in batch {
                        let ex = &task.train[i];
                        buffer.push(ex.label, ex.clone());
                    }
                }
                BufferState::Reservoir(buffer, rng) => {
                    for &i in batch {
                        buffer.push(task.train[i].clone(), rng);
                    }
                }
                BufferState::None => {}
            }
        }
        if let BufferState::Packing {
            staging,
            memory,
            packing,
        } = &mut state
        {
            if cfg.method == Method::RandomSnip {
                let mut snip_rng = indexed_stream(cfg.seed, "snip", task.id as u64);
                update_memory_random_snip(memory, staging, model, task, packing, &mut snip_rng)?;
            } else {
                update_memory(memory, staging, model, task, packing)?;
            }
            staging.clear();
        }
        task_seconds.push(started.elapsed().as_secs_f64());
        result_matrix.push(evaluate_all(model, stream)?);
    }

    let buffer = match state {
        BufferState::Packing { memory, .. } => FinalBuffer::Patches(memory),
        BufferState::Ring(buffer) => {
            FinalBuffer::Examples(buffer.items().into_iter().cloned().collect())
        }
        BufferState::Reservoir(buffer, _) => FinalBuffer::Examples(buffer.items().to_vec()),
        BufferState::None => FinalBuffer::None,
    };
    Ok(TrainRun {
        result_matrix,
        buffer,
        task_seconds,
    })
}

/// Joint-training oracle: one pass over the shuffled union of every task's
/// training data (heads still routed by task), then mean test accuracy.
pub fn train_multitask(
    stream: &TaskStream,
    model: &mut MultiHeadModel,
    lr: f32,
    seed: u64,
) -> Result<f64> {
    check_compatible(stream, model)?;
    let mut pool: Vec<(usize, usize)> = stream
        .tasks
        .iter()
        .flat_map(|task| (0..task.train.len()).map(move |i| (task.id, i)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Empty("training pool".into()));
    }
    let mut rng = crate::rng::stream(seed, "multitask-order");
    for i in (1..pool.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        pool.swap(i, j);
    }
    for (step, chunk) in pool.chunks(10).enumerate() {
        let current: Vec<(&Array3<f32>, usize, usize)> = chunk
            .iter()
            .map(|&(task_id, i)| {
                let task = &stream.tasks[task_id];
                let ex = &task.train[i];
                let unit = task.head_index(ex.label).ok_or_else(|| {
                    Error::Dataset(format!("class {} not in task {task_id}", ex.label))
                })?;
                Ok((&ex.image, task_id, unit))
            })
            .collect::<Result<_>>()?;
        let (images, task_ids, units) =
            stack_batch(&current, &[], model.channels, model.image_side);
        let loss = model.sgd_step(&images, &task_ids, &units, lr)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                task: usize::MAX,
                step,
            });
        }
    }
    let row = evaluate_all(model, stream)?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// How much the finished buffer alone can teach: train a fresh model for
/// `epochs` shuffled passes over the buffer contents (patches replayed
/// zero-padded at their stored positions), then report mean test accuracy
/// over all tasks.
pub fn buffer_informativeness(
    buffer: &FinalBuffer,
    model: &mut MultiHeadModel,
    stream: &TaskStream,
    epochs: usize,
    lr: f32,
    seed: u64,
) -> Result<f64> {
    check_compatible(stream, model)?;
    let side = model.image_side;
    let items: Vec<ReplayItem> = match buffer {
        FinalBuffer::Patches(memory) => memory
            .patches()
            .iter()
            .map(|patch| {
                Ok(ReplayItem {
                    image: zero_pad(patch, side, side)?,
                    task_id: patch.task_id,
                    unit: patch.label_unit,
                })
            })
            .collect::<Result<_>>()?,
        FinalBuffer::Examples(examples) => examples
            .iter()
            .map(|ex| {
                Ok(ReplayItem {
                    image: ex.image.clone(),
                    task_id: ex.task_id,
                    unit: unit_of(stream, ex)?,
                })
            })
            .collect::<Result<_>>()?,
        FinalBuffer::None => Vec::new(),
    };
    if items.is_empty() {
        return Err(Error::Empty("replay buffer".into()));
    }
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = indexed_stream(seed, "buffer-probe", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        for (step, chunk) in order.chunks(10).enumerate() {
            let replay: Vec<ReplayItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            let (images, task_ids, units) = stack_batch(&[], &replay, model.channels, side);
            let loss = model.sgd_step(&images, &task_ids, &units, lr)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    task: epoch,
                    step,
                });
            }
        }
    }
    let row = evaluate_all(model, stream)?;
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}
