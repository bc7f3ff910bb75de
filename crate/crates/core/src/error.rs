use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate depth {depth} (point at or behind the camera plane)")]
    DegenerateDepth { depth: f64 },
    #[error("degenerate face {face}: area {area:e} m^2")]
    DegenerateFace { face: usize, area: f64 },
    #[error("face {face} references vertex {vertex} but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, vertex: usize, count: usize },
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(&'static str),
    #[error("invalid image: {0}")]
    InvalidImage(&'static str),
    #[error("ray origin coincides with its target")]
    DegenerateRay,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("registration failure: {inliers:.3} inlier fraction")]
    RegistrationFailure { inliers: f64 },
    #[error("no ground under sensor")]
    NoGroundUnderSensor,
    #[error("total conflict between certain, contradictory evidence")]
    TotalConflict,
    #[error("degenerate (coplanar) point set for convex hull")]
    DegenerateHull,
    #[error("no visibility evidence")]
    NoVisibilityEvidence,
    #[error("triangulation failure: {0}")]
    Triangulation(&'static str),
    #[error("empty mesh")]
    EmptyMesh,
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}
