//! Rigid-body math, pinhole projection, epipolar geometry and 2-D
//! morphology shared by every stage.

mod camera;
mod epipolar;
pub mod morphology;
mod raster;
mod transform;

pub use camera::{Camera, MIN_DEPTH};
pub use epipolar::{epipolar_residual, fundamental_matrix, sampson_distance};
pub use morphology::{count_components, dilate, distance_transform, skeletonize};
pub(crate) use raster::{bilinear_taps, check_dims};
pub use raster::{nearest_pixel, BinaryMask, DepthMap, FlowField, RgbImage, ScalarMap};
pub use transform::RigidTransform;
