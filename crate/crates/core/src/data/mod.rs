//! Core types and the on-disk interchange formats.

mod atlas;
mod labels;
mod matrix;
mod timeline;
mod validate;

pub use atlas::{
    atlas_to_csv, default_roi_groups, load_atlas, parse_roi_json, parse_voxel_csv, AtlasMap,
    DEFAULT_ROIS, DEFAULT_SUB_ROIS,
};
pub use labels::{
    load_labels, load_senteval, parse_labels, parse_senteval, save_labels, LabelTable,
    SentEvalCorpus, SentEvalRow,
};
pub use matrix::{
    load_matrix, save_matrix, FeatureMatrix, Matrix, ResponseMatrix, UnitKind, DEFAULT_TR_SECONDS,
};
pub(crate) use matrix::check_finite;
pub use timeline::{load_timeline, parse_timeline, save_timeline, WordTimeline};
pub use validate::{validate_dataset, validate_shape, DatasetShape, ValidationReport};
