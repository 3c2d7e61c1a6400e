//! Error types shared across the pipeline.

use crate::gateway::BackendRole;

/// Errors produced by gateway calls and the backends behind them.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    /// Network-level failure or a 5xx from a live endpoint. Retryable.
    #[error("transport failure for {role}: {message}")]
    Transport {
        role: BackendRole,
        status: Option<u16>,
        message: String,
    },

    /// 4xx from a live endpoint. Not retryable.
    #[error("request rejected for {role} (status {status}): {message}")]
    Rejected {
        role: BackendRole,
        status: u16,
        message: String,
    },

    /// The backend refused to produce content (e.g. an image-generation
    /// content-policy refusal). Counted and costed like a successful call.
    #[error("content refused by {role}: {message}")]
    Refused { role: BackendRole, message: String },

    /// Backend returned a vector whose dimension differs from the one the
    /// role was bound with.
    #[error("embedding contract violated for {role}: expected dim {expected}, got {got}")]
    Contract {
        role: BackendRole,
        expected: usize,
        got: usize,
    },

    /// Input the backend cannot meaningfully process (empty text, empty
    /// token set, unresolvable image reference).
    #[error("degenerate input for {role}: {message}")]
    DegenerateInput { role: BackendRole, message: String },

    /// No backend bound for the requested role.
    #[error("no backend bound for role {0}")]
    Unbound(BackendRole),
}

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/vector dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Zero-norm vector or empty input to a similarity computation.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Backward pass invoked with a cache from a differently shaped forward.
    #[error("stale or mismatched forward cache")]
    StaleCache,

    /// A backend reply could not be parsed into a fragmented description.
    #[error("could not parse backend reply: {message}; raw reply: {raw:?}")]
    DescriptionParse { message: String, raw: String },

    /// Normalization output violated the placeholder contract after retry.
    #[error("template normalization failed: {message}; raw reply: {raw:?}")]
    Normalization { message: String, raw: String },

    #[error("warm start failed for template {template_id}: {source}")]
    WarmStart {
        template_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("action {action_id} failed at step {step} for template {template_id}: {source}")]
    Action {
        template_id: String,
        step: usize,
        action_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("attack failed for template {template_id}: {source}")]
    Attack {
        template_id: String,
        #[source]
        source: Box<Error>,
    },

    /// Training loss went non-finite; the last finite state was preserved.
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    /// Dataset schema violation, naming the offending record and field.
    #[error("invalid dataset record {record_id}, field {field}: {message}")]
    Dataset {
        record_id: String,
        field: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    /// API misuse (e.g. requesting a ground-truth reward without ground truth).
    #[error("misuse: {0}")]
    Misuse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_warm_start(self, template_id: &str) -> Error {
        Error::WarmStart {
            template_id: template_id.to_string(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_action(self, template_id: &str, step: usize, action_id: usize) -> Error {
        Error::Action {
            template_id: template_id.to_string(),
            step,
            action_id,
            source: Box::new(self),
        }
    }
}
