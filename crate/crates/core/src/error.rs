use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot read or write image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed document {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifest {}: {reason}", path.display())]
    Schema { path: PathBuf, reason: String },

    #[error("image `{image_id}`: defect box ({x_min},{y_min},{x_max},{y_max}) lies outside the {width}x{height} image")]
    DefectOutOfBounds {
        image_id: String,
        x_min: u32,
        y_min: u32,
        x_max: u32,
        y_max: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid image id `{0}`: ids must be non-empty and free of path separators")]
    InvalidImageId(String),

    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),

    #[error("label {0} is not a binary class label")]
    InvalidLabel(u8),

    #[error("dataset has no {0} tiles")]
    EmptyClass(&'static str),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{split} split is empty after rounding")]
    EmptySplit { split: &'static str },

    #[error("transform {transform} changes the shape of a {width}x{height} tile")]
    ShapeChangingTransform {
        transform: u8,
        width: u32,
        height: u32,
    },

    #[error("length mismatch: {scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("AUC is undefined when only one class is present")]
    SingleClass,

    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),

    #[error("backbone `{0}` needs pretrained weights and no weights provider is available")]
    BackboneUnavailable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("corrupt artifact {}: {reason}", path.display())]
    CorruptArtifact { path: PathBuf, reason: String },

    #[error("could not place a defect on the object after {attempts} attempts")]
    DefectPlacement { attempts: usize },

    #[error("working directory {} is locked by another run", .0.display())]
    Locked(PathBuf),
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

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by bad inputs (as opposed to runtime faults).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::Image { .. }
                | Error::NonFiniteLoss { .. }
                | Error::DefectPlacement { .. }
                | Error::Locked(_)
        )
    }
}
