//! Bird's-eye-view cross-modal fusion and density-aware contrastive
//! learning for LiDAR/camera semantic segmentation, on synthetic scenes.
//!
//! The crate is organised along the data path:
//!
//! - [`scene`]: procedural worlds, raycast LiDAR, rendered images and
//!   point-to-pixel projections (with controlled misalignment).
//! - [`bev`]: pillar assignment, scatter-max BEV maps for both modalities,
//!   area-to-area and point-to-area fusion.
//! - [`dvm`]: area histograms, density-maintained BEV vectors, and density
//!   transfer between beam configurations.
//! - [`learn`]: stand-in networks, a reverse-mode gradient tape, losses,
//!   Adam and the two-source training loop.
//! - [`eval`]: mIoU, 2D/3D ensembling and the experiment harnesses.
//! - [`cli`]: config-driven commands behind the `bevdg` binary.

pub mod bev;
pub mod cli;
pub mod config;
pub mod dvm;
pub mod error;
pub mod eval;
pub mod io;
pub mod learn;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Matrix;
