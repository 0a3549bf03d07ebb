//! Dense point-cloud and camera-pose reconstruction from short object-centric
//! sequences: a low-dimensional shape prior is fitted jointly with exponential
//! twist poses against photometric consistency and silhouette Chamfer losses.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below name the common instantiations. The experiment harness
//! works in `f64`.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod imaging;
pub mod losses;
pub mod optimizer;
pub mod persist;
pub mod pseudo_renderer;
pub mod scalar;
pub mod shape_prior;

pub use error::{Error, Result};
pub use scalar::Real;

macro_rules! precision_aliases {
    ($t:ty, $($alias:ident = $path:ident::$name:ident),+ $(,)?) => {
        $(pub type $alias = $path::$name<$t>;)+
    };
}

precision_aliases!(f64,
    PoseTwistF64 = geometry::PoseTwist,
    CameraIntrinsicsF64 = geometry::CameraIntrinsics,
    PointCloudF64 = shape_prior::PointCloud,
    StyleVectorF64 = shape_prior::StyleVector,
    LinearShapePriorF64 = shape_prior::LinearShapePrior,
    ImageRgbF64 = imaging::ImageRGB,
    FrameF64 = imaging::Frame,
    OptimizationStateF64 = optimizer::OptimizationState,
);

precision_aliases!(f32,
    PoseTwistF32 = geometry::PoseTwist,
    CameraIntrinsicsF32 = geometry::CameraIntrinsics,
    PointCloudF32 = shape_prior::PointCloud,
    StyleVectorF32 = shape_prior::StyleVector,
    LinearShapePriorF32 = shape_prior::LinearShapePrior,
    ImageRgbF32 = imaging::ImageRGB,
    FrameF32 = imaging::Frame,
    OptimizationStateF32 = optimizer::OptimizationState,
);
