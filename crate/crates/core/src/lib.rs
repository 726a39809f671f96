//! Wall and column mapping from 3D LiDAR sweeps via bird's-eye-view
//! rasters.
//!
//! A frame is flattened into a height-banded point set and binary raster
//! ([`bev`]), line features are extracted by one of several detectors
//! ([`detect`]), fused within the frame ([`fuse_local`]) and across frames
//! ([`fuse_global`]), and optionally regularised into a watertight
//! orthogonal floor plan ([`manhattan`]). [`pipeline`] wires the stages
//! together; [`sim`] generates scenes with ground truth and [`eval`]
//! scores maps against it.

pub mod bench;
pub mod bev;
pub mod dbscan;
pub mod detect;
pub mod error;
pub mod eval;
pub mod fuse_global;
pub mod fuse_local;
pub mod geom;
pub mod manhattan;
pub mod pipeline;
pub mod render;
pub mod sim;

pub use error::{Error, Result};

/// Code samples from the book, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/bev.md")]
    struct Bev;
    #[doc = include_str!("../../../book/src/detectors.md")]
    struct Detectors;
    #[doc = include_str!("../../../book/src/local-fusion.md")]
    struct LocalFusion;
    #[doc = include_str!("../../../book/src/global-fusion.md")]
    struct GlobalFusion;
    #[doc = include_str!("../../../book/src/manhattan.md")]
    struct Manhattan;
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
