use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcdError {
    #[error("header error at line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("data error at line {line}: {reason}")]
    Data { line: usize, reason: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl PcdError {
    pub(crate) fn header(line: usize, reason: impl Into<String>) -> Self {
        PcdError::Header {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn data(line: usize, reason: impl Into<String>) -> Self {
        PcdError::Data {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcpError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("no correspondences within {radius} m")]
    NoOverlap { radius: f64 },
    #[error("invalid ICP parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChangeError {
    #[error("voxel grids differ in resolution or origin")]
    GridMismatch,
    #[error("no ground plane found (best inlier fraction {inlier_fraction:.3})")]
    NoGroundFound { inlier_fraction: f64 },
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ChangeError>,
    },
}
