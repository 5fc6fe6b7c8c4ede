//! Trace-driven simulator of stereo rendering on a NUMA multi-GPU system.
//!
//! The crate models a machine of GPU modules (GPMs) joined by bandwidth-
//! asymmetric links, renders synthetic scenes through a roofline-timed
//! four-step pipeline, and compares distribution schemes: a single-
//! programming-model baseline, alternate-frame rendering, tile and object
//! split-frame rendering, texture-sharing batching, and the full
//! object-oriented framework with a runtime distribution engine and
//! distributed composition. Every run is deterministic and reports frame
//! latency, categorized inter-GPM traffic, and load balance.

pub mod batching;
pub mod engine;
pub mod error;
pub mod machine;
pub mod metrics;
pub mod pipeline;
pub mod schemes;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use machine::MachineConfig;
pub use metrics::MetricsReport;
pub use schemes::{run_scheme, SchemeId};
pub use trace::{generate_scene, parse_trace, serialize_trace, SceneParams, Trace};
