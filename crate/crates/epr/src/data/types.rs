use ndarray::Array3;

/// One labeled image. Pixel layout is (channels, side, side), values in [0, 1].
#[derive(Debug, Clone)]
pub struct Example {
    /// Stable identifier, unique within a dataset.
    pub id: u64,
    pub image: Array3<f32>,
    /// Task this example belongs to (0-based position in the stream).
    pub task_id: usize,
    /// Global class id across the whole dataset.
    pub label: usize,
    /// Ground-truth object box [row, col, height, width] when the generator
    /// knows it (synthetic data only).
    pub object_box: Option<[usize; 4]>,
}

/// A task: a disjoint set of classes with train/test examples.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    /// Global class ids owned by this task; a class's index here is the
    /// output unit its head uses.
    pub label_set: Vec<usize>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Task {
    /// Output-unit index of a global label within this task's head.
    pub fn head_index(&self, label: usize) -> Option<usize> {
        self.label_set.iter().position(|&c| c == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub image_side: usize,
    pub channels: usize,
    pub classes_per_task: usize,
    pub num_tasks: usize,
}

impl DatasetMeta {
    pub fn total_classes(&self) -> usize {
        self.classes_per_task * self.num_tasks
    }
}

/// An ordered sequence of tasks presented one at a time.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub meta: DatasetMeta,
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// A dataset before task partitioning: flat train/test pools with labels.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub name: String,
    pub image_side: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub train: Vec<SourceImage>,
    pub test: Vec<SourceImage>,
}

#[derive(Debug, Clone)]
pub struct SourceImage {
    pub id: u64,
    pub image: Array3<f32>,
    pub label: usize,
    pub object_box: Option<[usize; 4]>,
}
