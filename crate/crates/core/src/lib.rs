//! Crowd insights over grayscale CCTV-style video: adaptive-fusion people
//! counting, directional pedestrian flow, and a calibrated incident
//! confidence stream, together with the synthetic scene generator and the
//! evaluation harness used to validate all of it.

pub mod detect;
pub mod error;
pub mod eval;
pub mod flow;
pub mod fuse;
pub mod ml;
pub mod model;
pub mod pipeline;
pub mod regress;
pub mod segment;
pub mod synth;
pub mod track;
pub mod tracklets;

pub use error::{Error, Result};
pub use model::{BoxClass, DetectionBox, Frame, GroundTruth, PerspectiveMap, Roi, StreamConfig};
pub use segment::{BackgroundModel, BinaryMask};
