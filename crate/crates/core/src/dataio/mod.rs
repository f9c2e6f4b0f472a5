//! MNIST parsing, model containers and experiment reports.

mod container;
mod mnist;
mod report;

pub use container::{
    load_model, save_model, topology_hash, ModelContainer, TrainMeta, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use mnist::{
    encode_idx_images, encode_idx_labels, load_mnist, load_mnist_dir, mnist_paths, parse_idx_images,
    parse_idx_labels, Dataset, Split, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use report::{read_report, write_report, EvalReport, EvalRow, REPORT_HEADER};
