//! Year-based splitting, the training loop, in-season evaluation and
//! report files.

mod dataset;
mod evaluate;
mod metrics;
mod report;
mod trainer;

pub use dataset::{
    cube_file_name, load_dataset, save_dataset, split_by_year, CropObservation, Dataset, DatasetIndex, IndexCrop,
    IndexEntry, Sample, DATASET_INDEX,
};
pub use evaluate::{evaluate_in_season, BaselinePair, LocationError, MetricsRow, Predictor};
pub use metrics::{compute_metrics, error_percentage, pearson, Metrics};
pub use report::{export_report, fmt_sig, render_scatter_svg, scatter_file_name, LOCATIONS_CSV, SUMMARY_CSV};
pub(crate) use trainer::diverged;
pub use trainer::{train, train_with_context, TrainConfig, TrainHistory};
