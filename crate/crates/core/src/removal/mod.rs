//! Linear removal of a labeled property from representations.

mod inlp;
mod ridge;

pub use inlp::{inlp_remove, InlpResult};
pub use ridge::{
    build_design, fit_multiple_regressor, fit_property_regressor, identity_residual, remove_multiple, remove_property,
    residualize, residualize_columns, LabelEncoding, RemovalOptions, RemovalResult, RemoverModel,
};
