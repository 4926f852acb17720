//! Multi-modal MRI embedding and preprocessing for brain tumor segmentation.
//!
//! The crate reads and writes NIfTI-1 volumes, fuses two to four co-registered
//! channels into a single volume by weighted summation, runs the slice
//! removal / crop / clip / normalize chain in either stage order, exports PNG
//! stacks, scores predictions with the Dice coefficient and benchmarks the
//! two stage orders across the nine modality combinations.

pub mod bench;
pub mod dataset;
pub mod embedding;
pub mod metrics;
pub mod nifti;
pub mod pipeline;
pub mod png_stack;
pub mod synthetic;
pub mod volume;

pub use bench::{
    emit_table, run_bench, BenchOptions, BenchReport, BenchRow, BenchSource, Combination,
    TableFormat,
};
pub use dataset::{
    scan_dataset, scan_dataset_with, DatasetIndex, DatasetLayout, Grade, PatientEntry,
};
pub use embedding::{embed, EmbedConfig, EmbedError, EmbedMode, ModalitySet};
pub use metrics::{
    confusion, dice, dice_loss, evaluate_batch, evaluate_volumes, ConfusionCounts, DiceReport,
};
pub use nifti::{
    parse_nifti, read_nifti, save_volume, write_nifti, NiftiError, NiftiHeader, NiftiImage,
};
pub use pipeline::{
    run_pipeline, PipelineConfig, PipelineError, PreprocessedSample, Provenance, Stage, StageOrder,
};
pub use png_stack::{export_png_stack, import_png_stack, PngManifest};
pub use volume::{ElementKind, Modality, Volume, VoxelData};
