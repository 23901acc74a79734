//! Datasets and task streams for class-incremental training.

mod cifar;
mod export;
mod stream;
mod synthetic;
mod types;

pub use cifar::{load_cifar100, parse_cifar_records, CifarRecord, CIFAR_RECORD_LEN};
pub use export::export_stream;
pub use stream::{build_split_stream, iterate_online, split_cross_validation, DatasetId};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};
pub use types::{DatasetMeta, DatasetSource, Example, SourceImage, Task, TaskStream};
