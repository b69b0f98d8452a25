use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Grid cell index `(ix, iy)` on the aperture grid.
pub type Cell = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Degenerate or non-uniform geometry.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("no peak: {0}")]
    NoPeak(String),

    /// Grid cells left uncovered or covered more than once while assembling a cube.
    #[error("structural error: uncovered cells {uncovered:?}, doubly covered cells {duplicated:?}")]
    Structural {
        uncovered: Vec<Cell>,
        duplicated: Vec<Cell>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed binary or text file contents.
    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
