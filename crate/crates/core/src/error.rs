use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point is at or behind the optical center (depth {depth})")]
    NonPositiveDepth { depth: f64 },

    #[error("pixel ({u}, {v}) has no visible solution on the cylinder surface")]
    NoVisibleSolution { u: f64, v: f64 },

    #[error("central angle is undefined for a point on the cylinder axis")]
    DegeneratePoint,

    #[error("roll state maps outside the scene extent (contact_y {contact_y} mm)")]
    SceneExhausted { contact_y: f64 },

    #[error("grid incomplete: found {found} blobs, expected {expected}")]
    GridIncomplete { found: usize, expected: usize },

    #[error("need at least {required} correspondences, got {got}")]
    InsufficientPoints { required: usize, got: usize },

    #[error("solver diverged after {iterations} iterations")]
    SolverDiverged { iterations: usize },

    #[error("no frame produced a valid pose estimate")]
    NoValidFrames,

    #[error("patch height {patch_height} exceeds frame height {frame_height}")]
    PatchTooTall { patch_height: u32, frame_height: u32 },

    #[error("no shift candidate leaves overlapping rows")]
    NoOverlap,

    #[error("alignment points coincide")]
    DegeneratePoints,

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}
