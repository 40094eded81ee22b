//! Calibrating a pre-captured equirectangular image against a current
//! look-around panorama: alignment, tone correction and sky replacement.
//!
//! Algorithms are generic over the scalar type; the aliases below fix it
//! to `f64`.

pub mod align;
pub mod correspond;
pub mod error;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod projection;
pub mod raster;
pub mod scalar;
pub mod segment;
pub mod sky;
pub mod stitch;
pub mod tone;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Image = raster::RasterImage<f64>;
pub type Equirect = raster::EquirectImage<f64>;
pub type View = projection::PerspectiveView<f64>;
pub type Similarity = align::SimilarityTransform2D<f64>;
pub type Alt = align::AltTransform<f64>;
pub type Match = correspond::Correspondence<f64>;
pub type Frames = stitch::FrameSet<f64>;
pub type Rotations = stitch::RotationChain<f64>;
pub type Plan = sky::SkyPlan<f64>;
