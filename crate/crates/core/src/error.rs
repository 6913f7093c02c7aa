use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} vertices")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-manifold edge ({0}, {1}) shared by more than two triangles")]
    NonManifold(usize, usize),

    #[error("duplicate element {0}")]
    DuplicateElement(usize),

    #[error("degenerate element {index}: {reason}")]
    DegenerateElement { index: usize, reason: String },

    #[error("degenerate edge ({0}, {1}): coincident endpoints")]
    DegenerateEdge(usize, usize),

    #[error("degenerate stencil {index}: {reason}")]
    DegenerateStencil { index: usize, reason: String },

    #[error("inverted tetrahedron {index}: J = {det}")]
    Inverted { index: usize, det: f64 },

    #[error("element {index}: {source}")]
    InElement {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("newton solve did not converge after {iters} iterations (|grad|_inf = {grad_norm:e})")]
    NoConvergence { iters: usize, grad_norm: f64 },

    #[error("line search failed at iteration {iter} (|grad|_inf = {grad_norm:e})")]
    LineSearch { iter: usize, grad_norm: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_layer(self, layer: usize) -> Error {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }

    pub fn in_element(self, index: usize) -> Error {
        Error::InElement {
            index,
            source: Box::new(self),
        }
    }

    /// Strips step/layer/element wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. }
            | Error::AtLayer { source, .. }
            | Error::InElement { source, .. } => source.root(),
            e => e,
        }
    }
}
