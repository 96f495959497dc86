//! Ball trajectory and possession inference from player tracking data.
//!
//! The crate ingests multi-agent tracking data at 10 Hz, trains a
//! hierarchical model that first classifies the ball-possessing player and
//! then regresses the ball trajectory, enforces physical plausibility with
//! a reality penalty and rule-based postprocessing, and derives downstream
//! products: trajectory imputation, pass annotation, region-of-interest
//! accuracy and possession-split running metrics.

extern crate blas_src;

pub mod autodiff;
pub mod checkpoint;
pub mod apps;
pub mod encoders;
pub mod error;
pub mod io;
pub mod losses;
pub mod pipeline;
pub mod postprocess;
pub mod sim;
pub mod train;
pub mod metrics;
pub mod models;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AgentSet, Episode, EventRecord, EventType, PitchConfig, PlayerState, Team, TrackingFrame,
    Window, BALL_OUT_IDS, FRAME_DT,
};
