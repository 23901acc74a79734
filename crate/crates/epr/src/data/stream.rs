use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::cifar::load_cifar100;
use super::synthetic::{generate_synthetic_dataset, SyntheticSpec};
use super::types::{DatasetMeta, DatasetSource, Example, SourceImage, Task, TaskStream};
use crate::rng::{indexed_stream, stream};
use crate::{Error, Result};

/// Which dataset a stream is built from.
#[derive(Debug, Clone)]
pub enum DatasetId {
    Synthetic(SyntheticSpec),
    CifarFormatDir(PathBuf),
}

/// Builds an ordered task stream: classes are shuffled by `seed` (seed 0
/// keeps the natural order), then partitioned contiguously into `num_tasks`
/// disjoint tasks of `classes_per_task` classes each.
pub fn build_split_stream(
    dataset: &DatasetId,
    num_tasks: usize,
    classes_per_task: usize,
    seed: u64,
) -> Result<TaskStream> {
    if num_tasks == 0 || classes_per_task == 0 {
        return Err(Error::Config(
            "num_tasks and classes_per_task must be positive".into(),
        ));
    }
    let source = match dataset {
        DatasetId::Synthetic(spec) => generate_synthetic_dataset(spec, seed)?,
        DatasetId::CifarFormatDir(dir) => load_cifar100(dir)?,
    };
    let needed = num_tasks * classes_per_task;
    if source.n_classes < needed {
        return Err(Error::Dataset(format!(
            "dataset {} has {} classes but {num_tasks} tasks x {classes_per_task} classes need {needed}",
            source.name, source.n_classes
        )));
    }
    let mut class_order: Vec<usize> = (0..source.n_classes).collect();
    if seed != 0 {
        class_order.shuffle(&mut stream(seed, "class-shuffle"));
    }

    let DatasetSource {
        name,
        image_side,
        channels,
        n_classes,
        train,
        test,
    } = source;
    let mut train_by_class: Vec<Vec<SourceImage>> = (0..n_classes).map(|_| Vec::new()).collect();
    let mut test_by_class: Vec<Vec<SourceImage>> = (0..n_classes).map(|_| Vec::new()).collect();
    for img in train {
        train_by_class[img.label].push(img);
    }
    for img in test {
        test_by_class[img.label].push(img);
    }

    let mut tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let label_set: Vec<usize> =
            class_order[t * classes_per_task..(t + 1) * classes_per_task].to_vec();
        let collect = |pools: &mut Vec<Vec<SourceImage>>| -> Vec<Example> {
            let mut out = Vec::new();
            for &class in &label_set {
                for img in pools[class].drain(..) {
                    out.push(Example {
                        id: img.id,
                        image: img.image,
                        task_id: t,
                        label: img.label,
                        object_box: img.object_box,
                    });
                }
            }
            out
        };
        let train = collect(&mut train_by_class);
        let test = collect(&mut test_by_class);
        if train.is_empty() || test.is_empty() {
            return Err(Error::Dataset(format!(
                "task {t} has an empty split (classes {label_set:?})"
            )));
        }
        tasks.push(Task {
            id: t,
            label_set,
            train,
            test,
        });
    }
    Ok(TaskStream {
        meta: DatasetMeta {
            name,
            image_side,
            channels,
            classes_per_task,
            num_tasks,
        },
        tasks,
    })
}

/// Splits a stream into its first `k` tasks (hyperparameter selection) and
/// the remaining tasks (training + evaluation). Task ids are renumbered from
/// zero within each half.
pub fn split_cross_validation(stream: TaskStream, k: usize) -> Result<(TaskStream, TaskStream)> {
    let total = stream.num_tasks();
    if k == 0 || k >= total {
        return Err(Error::Config(format!(
            "cross-validation task count must satisfy 0 < k < {total}, got {k}"
        )));
    }
    let TaskStream { meta, mut tasks } = stream;
    let rest = tasks.split_off(k);
    let renumber = |mut tasks: Vec<Task>, meta: &DatasetMeta| {
        for (new_id, task) in tasks.iter_mut().enumerate() {
            task.id = new_id;
            for ex in task.train.iter_mut().chain(task.test.iter_mut()) {
                ex.task_id = new_id;
            }
        }
        let mut meta = meta.clone();
        meta.num_tasks = tasks.len();
        TaskStream { meta, tasks }
    };
    let cv = renumber(tasks, &meta);
    let eval = renumber(rest, &meta);
    Ok((cv, eval))
}

/// Yields one pass over a task's training set as batches of indices into
/// `task.train`, in a seed-determined order. Each index appears exactly once.
pub fn iterate_online(task: &Task, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if task.train.is_empty() {
        return Err(Error::Empty(format!("task {} has no training data", task.id)));
    }
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    order.shuffle(&mut indexed_stream(seed, "online-order", task.id as u64));
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
