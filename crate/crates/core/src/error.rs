use thiserror::Error;

/// Errors surfaced by the simulator library.
///
/// The CLI maps these onto process exit codes: configuration errors exit 2,
/// training divergence exits 3, an infeasible oracle instance exits 4.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid experiment configuration (bad fleet spec, empty dataset, unknown key, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A lookup into a device/power/action table failed.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A caller violated a documented precondition (negative time, mismatched lengths, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Local training produced a non-finite loss on the named device.
    #[error("training diverged on device {device}: loss is not finite")]
    TrainingDivergence { device: u32 },

    /// The oracle instance is too large to enumerate exhaustively.
    #[error("infeasible oracle instance: {0}; use the AutoFL policy instead")]
    InfeasibleOracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact (config, checkpoint, Q snapshot, records CSV) failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
