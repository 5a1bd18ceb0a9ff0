use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyInput: operation needs at least one element")]
    EmptyInput,

    #[error("DuplicateAbscissa: x = {0} appears twice")]
    DuplicateAbscissa(u64),

    #[error("InvalidThreshold: need 2 <= t <= n, got n = {n}, t = {t}")]
    InvalidThreshold { n: usize, t: usize },

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("UnknownParticipant: {0} is not a registered key or CSP identifier")]
    UnknownParticipant(u64),

    #[error("OutOfRange: {0}")]
    OutOfRange(String),

    #[error("NotEnoughAliveCsps: {alive} usable, {needed} needed")]
    NotEnoughAliveCsps { alive: usize, needed: usize },

    #[error("InnerSignatureMismatch: reconstruction group {rg:?} returned inconsistent shares{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    InnerSignatureMismatch { rg: Vec<usize>, context: Option<String> },

    #[error("MissingShare: CSP{csp} holds no share for key {pk} in {table}")]
    MissingShare { csp: usize, table: String, pk: u64 },

    #[error("CspUnavailable: CSP{0} is marked failed")]
    CspUnavailable(usize),

    #[error("DuplicateTable: {0}")]
    DuplicateTable(String),

    #[error("UnknownTable: {0}")]
    UnknownTable(String),

    #[error("UnknownRecordPosition: {table} has no record at position {position}")]
    UnknownRecordPosition { table: String, position: usize },

    #[error("UnknownRecord: {table} has no record with key {pk}")]
    UnknownRecord { table: String, pk: u64 },

    #[error("UnknownColumn: {0}")]
    UnknownColumn(String),

    #[error("NotIndexed: {table}.{column} has no Type II index")]
    NotIndexed { table: String, column: String },

    #[error("MissingTypeThreeColumn: {0} must be registered as a derived column")]
    MissingTypeThreeColumn(String),

    #[error("SchemaMismatch: {0}")]
    SchemaMismatch(String),

    #[error("SyntaxError at {pos}: {message}")]
    Syntax { pos: usize, message: String },

    #[error("UnsupportedFeature: {0}")]
    UnsupportedFeature(String),

    #[error("StoreFormat: {0}")]
    StoreFormat(String),

    #[error("StoreLocked: {0} is held by another invocation")]
    StoreLocked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Integrity,
    Availability,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InnerSignatureMismatch { .. } => ErrorClass::Integrity,
            Error::NotEnoughAliveCsps { .. } | Error::CspUnavailable(_) | Error::MissingShare { .. } => {
                ErrorClass::Availability
            }
            _ => ErrorClass::Usage,
        }
    }
}
