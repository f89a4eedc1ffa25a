use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // graph construction
    #[error("node index {index} out of range for graph with {num_nodes} nodes")]
    NodeOutOfRange { index: usize, num_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("root node {0} is not in the node set")]
    RootNotInSet(usize),
    #[error("not a permutation: {0}")]
    InvalidPermutation(String),

    // tape
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid axis {0}")]
    InvalidAxis(usize),
    #[error("segment id {id} out of range for {num_segments} segments")]
    SegmentOutOfRange { id: usize, num_segments: usize },
    #[error("backward needs a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    // linear algebra / encodings
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("requested {requested} eigenvectors but at most {available} are available")]
    TooManyEigenvectors { requested: usize, available: usize },

    // model / config
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameters do not match the configuration: {0}")]
    ParamMismatch(String),
    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    // training / data
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NanLoss { epoch: usize, step: usize },
    #[error("invalid dataset: {0}")]
    Dataset(String),

    // verification
    #[error("matching metric needs equal sizes, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("brute-force matching limited to {max} elements, got {got}")]
    TooLarge { got: usize, max: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
}
