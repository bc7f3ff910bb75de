//! Core algorithms for reconstructing a visibility-consistent, textured
//! triangle mesh of a static scene from lidar scans and grayscale images.
//!
//! The crate is `no_std` (with `alloc`); file formats, dataset loading and
//! the pipeline driver live in the `carvemap` companion crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod prelude;

pub mod bvh;
pub mod carve;
pub mod cars;
pub mod distance;
pub mod dst;
pub mod error;
pub mod eval;
pub mod geom;
pub mod ground;
pub mod hull;
pub mod kdtree;
pub mod mesh;
pub mod morphology;
pub mod raster;
pub mod refine;
pub mod registration;
pub mod scene;
pub mod texture;

pub use error::{Error, Result};
pub use geom::{
    BinaryMask, CameraView, GrayImage, Intrinsics, Point3, Ray, RigidTransform, ScanPoint, SurfacePoint,
    Vec3,
};
pub use mesh::TriangleMesh;
