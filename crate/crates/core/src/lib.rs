//! Occupation-panel treatment-effect estimation.
//!
//! Builds occupation-by-month outcome panels from survey micro records,
//! assigns treatment from task-based exposure scores, and estimates effects
//! with two-way fixed-effects DiD, event studies, and per-unit synthetic
//! difference-in-differences with bootstrap inference. [`simlab`] generates
//! interactive fixed-effects panels for checking the estimators.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod did;
pub mod error;
pub mod exposure;
mod fe;
pub mod ingest;
pub mod io;
pub mod panel;
pub mod sdid;
pub mod seed;
pub mod simlab;

pub use did::{continuous_did, event_study, twfe_did, EventCoefficient, EventStudyFit, TwfeFit};
pub use error::{Error, Result};
pub use exposure::{ExposureScore, ExposureVariant, TaskRecord};
pub use ingest::{DeflatorSeries, MicroRecord, TopcodeRegime};
pub use panel::{
    check_balanced, donor_pool_for, split_pre_post, PanelCell, PanelDataset, TimeIndex,
    TreatmentSpec, UnitId,
};
pub use sdid::{sdid_per_unit, SdidConfig, SdidFit, SdidUnitFit, SimplexWeights, SolverOptions};
pub use simlab::{FactorDgpConfig, McReport};
