use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the meshing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIFTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIFTI datatype code {0} (expected uint8, int16, uint16 or float32)")]
    UnsupportedDatatype(i16),

    #[error("gzip-compressed NIFTI is not supported, decompress {0} first")]
    GzipInput(PathBuf),

    #[error("invalid label volume: {0}")]
    InvalidVolume(String),

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid phantom specification: {0}")]
    InvalidPhantom(String),

    #[error("frame selection failed: {0}")]
    FrameSelection(String),

    #[error("contour extraction failed: {0}")]
    Contour(String),

    #[error("landmark extraction failed: {0}")]
    Landmark(String),

    #[error("surface fitting failed: {0}")]
    Fit(String),

    #[error("RV extrusion produced {0} inverted triangles")]
    InvertedExtrusion(usize),

    #[error("degenerate element {element}: volume {volume:e} mm^3")]
    DegenerateElement { element: usize, volume: f64 },

    #[error("conjugate gradient did not reach tolerance {tol:e} in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("volumetric deformation inverted {0} tetrahedra")]
    InvertedElements(usize),

    #[error("field computation failed: {0}")]
    Field(String),

    #[error("phenotype computation failed: {0}")]
    Phenotype(String),

    #[error("open surface: {0} boundary edges")]
    OpenSurface(usize),

    #[error("cohort error: {0}")]
    Cohort(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("mesh format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
