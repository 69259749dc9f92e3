//! Structured prediction of color-change trajectories in drying processes.
//!
//! A trajectory of CIELAB color differences is represented by nine fixed
//! component functions of normalized time. Neural encoders map initial-state
//! inputs (process parameters, optionally an initial image) to the nine
//! coefficients, which makes prediction under unseen process conditions a
//! regression problem over a compact, smooth representation.

pub mod basis;
pub mod colorspace;
pub mod dataset;
pub mod eval;
pub mod net;
pub mod signal;
pub mod synth;

pub use basis::{BasisConfig, CoefficientVector, ComponentBasis, Trajectory, BASIS_SIZE};
pub use colorspace::{delta_e, srgb_to_lab, LabColor, RgbColor};
pub use dataset::{EvalSelector, ProcessCondition, Raster, SampleRecord, SplitMode, SplitPlan};
pub use eval::{EvalReport, ModelKind, Target};
pub use net::{BaselineModel, Checkpoint, CoefficientEncoder, Modality, TrainConfig};
pub use synth::{Family, WorldConfig};
