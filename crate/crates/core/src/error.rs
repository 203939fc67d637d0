use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the discretisation, assembly and solution pipeline.
#[derive(Debug, Error)]
pub enum CpdError {
    #[error("domain extent {extent} along axis {axis} is not an integer multiple of the spacing {spacing}")]
    NonConformingDomain { axis: usize, extent: f64, spacing: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("point {point} has no neighbours within the horizon")]
    IsolatedPoint { point: usize },

    #[error("point {point} has no contributing {kind} although that interaction is enabled")]
    DegenerateNeighborhood { point: usize, kind: &'static str },

    #[error("degenerate reference measure ({measure}) for a contributing set")]
    DegenerateReference { measure: f64 },

    #[error("collapsed bond at point {point} (neighbour {neighbor})")]
    CollapsedBond { point: usize, neighbor: usize },

    #[error("collapsed triangle at point {point} (neighbours {pair:?})")]
    CollapsedArea { point: usize, pair: [usize; 2] },

    #[error("collapsed tetrahedron at point {point} (neighbours {triplet:?})")]
    CollapsedVolume { point: usize, triplet: [usize; 3] },

    #[error("boundary layers overlap: {0}")]
    LayerOverlap(String),

    #[error("tangent factorization failed: {0}")]
    SingularTangent(String),

    #[error("Newton iteration did not converge within {iterations} iterations (normalized residual {normalized:e})")]
    NonConvergence { iterations: usize, normalized: f64 },

    #[error("increment {increment}: {source}")]
    Increment {
        increment: usize,
        #[source]
        source: Box<CpdError>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CpdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// True for errors that signal a diverging Newton step rather than bad input.
    pub fn is_step_degeneracy(&self) -> bool {
        matches!(
            self,
            Self::CollapsedBond { .. } | Self::CollapsedArea { .. } | Self::CollapsedVolume { .. }
        )
    }
}

pub type Result<T, E = CpdError> = std::result::Result<T, E>;
