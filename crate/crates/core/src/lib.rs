//! Patchmatch optical flow over hand-crafted descriptors.
//!
//! The engine alternates seed propagation and local search with a
//! winner-take-all update ([`patchmatch`]), inside a coarse-to-fine driver
//! ([`pyramid`]). Propagation has three interchangeable forms: plain
//! propagation, and inverse propagation (exact and approximate) which shifts
//! the target features once up front instead of shifting the flow every
//! iteration.
//!
//! Around the engine: dense correlation baselines and their closed-form costs
//! ([`correlation`], [`bench`]), `.flo` / KITTI I/O and colour coding
//! ([`flowio`]), evaluation metrics ([`metrics`]) and synthetic scenes with
//! exact ground truth ([`synth`]).
//!
//! ```no_run
//! use patchflow::{flowio, pyramid, EngineConfig};
//! # fn main() -> patchflow::Result<()> {
//! let a = flowio::load_image("frame1.png".as_ref())?;
//! let b = flowio::load_image("frame2.png".as_ref())?;
//! let out = pyramid::run_pyramid(&a, &b, &EngineConfig::default(), None)?;
//! flowio::save_flow("flow.flo".as_ref(), &out.flow)?;
//! # Ok(())
//! # }
//! ```

pub mod bench;
pub mod commands;
pub mod config;
pub mod correlation;
pub mod error;
pub mod features;
pub mod flowio;
pub mod metrics;
pub mod patchmatch;
pub mod pyramid;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use config::{EngineConfig, Level, PropagationMode, PyramidSchedule, RandomSearchConfig, SearchMode};
pub use error::{FlowError, Result};
pub use features::{extract_features, FeatureConfig, GrayImage};
pub use tensor::{FeatureMap, FlowField, Offset, SeedSet};
