//! Volumes, CT preprocessing and augmentation, cohort manifests, metadata
//! encoding, stratified splitting, and the synthetic cohort generator.

mod augment;
mod metadata;
mod preprocess;
mod split;
mod synth;
mod volume;

pub use augment::{augment, elastic, flip, rotate_z, AugmentConfig};
pub use metadata::{
    encode_metadata, CohortManifest, EncodeStats, FeatureEncoding, MetadataEncoder, PatientRecord, Split,
    FIXED_COLUMNS, MISSING, NUM_MRS,
};
pub use preprocess::{
    clip_hu, crop_or_pad, crop_or_pad_with, normalize, resample, PipelineTrace, Prepared, PreprocessConfig,
    Preprocessor, Stage, BACKGROUND_HU, CANONICAL_DIMS, HU_WINDOW, TARGET_SPACING,
};
pub use split::{split_cohort, stratified_allocation, stratified_partition};
pub use synth::{generate_synthetic_cohort, SignalSpec, SynthSpec, SyntheticCohort, DEFAULT_CLASS_COUNTS, DESK_DIMS};
pub use volume::{Volume, SVOL_MAGIC, SVOL_VERSION};
