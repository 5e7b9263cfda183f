//! Dataset model, on-disk format, synthetic benchmark and split construction.

mod dataset;
mod format;
mod synth;
pub(crate) mod text;

pub use dataset::{AccessAudit, Dataset, Phase, PhaseGuard, Splits};
pub use format::{content_hash, dataset_files, load_dataset, save_dataset};
pub use synth::{
    generate_synthetic, make_validation_split, synthetic_map, SynthConfig, SynthMap, SEEN_TEST_FRACTION,
    VAL_HOLDOUT_FRACTION,
};
