use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask dimensions differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    MaskDimensionMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },

    #[error("box must have positive width and height, got {w}x{h}")]
    NonPositiveBox { w: f64, h: f64 },

    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    #[error("RLE counts sum to {sum}, expected {expected}")]
    RleCountMismatch { sum: u64, expected: u64 },

    #[error("json parse error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema violation at {entity} id {id}: {message}")]
    Schema {
        entity: &'static str,
        id: u64,
        message: String,
    },

    #[error("duplicate {entity} id {id}")]
    DuplicateId { entity: &'static str, id: u64 },

    #[error("annotation {annotation_id} references missing image id {image_id}")]
    DanglingImage { annotation_id: u64, image_id: u64 },

    #[error("annotation {annotation_id} references missing category id {category_id}")]
    DanglingCategory {
        annotation_id: u64,
        category_id: u64,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("raster dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("raster of {width}x{height} exceeds the {limit}-pixel input limit")]
    RasterTooLarge { width: u32, height: u32, limit: u64 },

    #[error("{kind} id {id} not found in library")]
    UnknownId { kind: &'static str, id: usize },

    #[error("placement {index} lands entirely outside the background")]
    PlacementOutside { index: usize },

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("{0} library is empty")]
    EmptyLibrary(&'static str),

    #[error("vector shapes differ: {expected} vs {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("epoch {epoch} precedes the first schedule entry at {first}")]
    EpochBeforeSchedule { epoch: u32, first: u32 },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("no ground-truth instances to evaluate against")]
    NoGroundTruth,

    #[error("line {line}: {message}")]
    CaseParse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
