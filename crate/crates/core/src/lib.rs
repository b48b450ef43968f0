//! Tracking-by-detection engine for scenes whose targets move in loose groups
//! (vehicle convoys, pedestrian clusters, UAV traffic footage).
//!
//! The pipeline couples four pieces:
//!
//! * [`vackf`] — a cubature Kalman filter over a 9-dim box state whose
//!   acceleration component decays once the target stops manoeuvring;
//! * [`association`] — two-stage score-split assignment with strict-minimum
//!   Hungarian matching and track lifecycle management;
//! * [`gmcs`] — group motion compensation: occluded tracks borrow the velocity
//!   change of co-moving neighbours to synthesise a pseudo-observation;
//! * [`stmp`] — a cascaded LSTM that predicts the next center of a lone track
//!   from its last eight positions when no neighbour is available.
//!
//! [`metrics`] implements CLEAR-style evaluation (MOTA/MOTP/IDF1/MT/ML) and
//! [`scenesim`] generates synthetic group scenes plus the ablation benchmark
//! used to validate that each stage earns its keep.

pub mod ablation;
pub mod association;
pub mod config;
pub mod gmcs;
pub mod io;
pub mod metrics;
pub mod model;
pub mod scenesim;
pub mod stmp;
pub mod vackf;

pub use association::{AssocConfig, Assignment, FeatureFlags, TrackOutput, Tracker};
pub use model::{BBox, Detection, HistoryEntry, SequenceMeta, Track, TrackStatus};
pub use vackf::{FilterState, NoiseConfig};
