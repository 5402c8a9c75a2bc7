//! Experiment harness: datasets, label noise, traced training runs,
//! ensembles, early stopping, width sweeps and CSV persistence.

mod data;
mod early_stop;
mod idx;
mod noise;
mod stats;
mod trace;
mod train;

pub use data::{gen_blobs, labels_to_one_hot, load_dataset_csv, load_dataset_dir, write_dataset_csv, write_dataset_dir, Dataset};
pub use early_stop::{find_stop_epoch, moving_average, EarlyStopConfig, StopMode, StopPoint};
pub use idx::{load_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use noise::{inject_label_noise, subsample_train_sets, NoiseSpec};
pub use stats::pearson_r;
pub use trace::{read_trace_csv, write_atomic, write_trace_csv, Trace, TraceRow, TRACE_HEADER};
pub use train::{
    early_stop_report, ensemble_trace, ensemble_trace_with_members, ov_series_by_batch_count, train_with_trace, width_sweep,
    EarlyStopReport, EnsembleMember, OptimizerConfig, RunConfig, SweepResult, SweepRow, DEFAULT_PROBE_LR,
};
