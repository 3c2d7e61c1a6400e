//! Library surface of the command-line driver, so integration tests can run
//! commands in-process.

pub mod commands;
pub mod config;

pub use config::{BackendMode, RunConfig};

pub const EXIT_OK: i32 = 0;
/// Invalid configuration, dataset schema, unknown ids, missing API key.
pub const EXIT_CONFIG: i32 = 2;
/// Backend/transport failures, refusals that abort a run, divergence.
pub const EXIT_BACKEND: i32 = 3;

/// Maps errors to the documented exit codes.
pub fn exit_code_for(error: &promptlift_core::Error) -> i32 {
    use promptlift_core::Error as E;
    match error {
        E::Config(_) | E::Dataset { .. } | E::Checkpoint(_) | E::Misuse(_) => EXIT_CONFIG,
        E::Gateway(_)
        | E::Diverged { .. }
        | E::WarmStart { .. }
        | E::Action { .. }
        | E::Attack { .. }
        | E::DescriptionParse { .. }
        | E::Normalization { .. }
        | E::Io(_) => EXIT_BACKEND,
        E::Shape(_) | E::Numeric(_) | E::Degenerate(_) | E::StaleCache => EXIT_BACKEND,
    }
}
