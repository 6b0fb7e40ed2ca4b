use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("type `{0}` is already registered")]
    DuplicateSchema(String),
    #[error("primary key `{pkey}` is not a dimension of `{name}`")]
    PrimaryKeyNotDimension { name: String, pkey: String },
    #[error("dimension `{dim}` declared twice in `{name}`")]
    DuplicateDimension { name: String, dim: String },
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("type `{0}` is not registered")]
    UnknownType(String),
    #[error("object does not conform to `{type_name}`: {detail}")]
    NonConforming { type_name: String, detail: String },

    #[error("no object {0}")]
    MissingObject(String),
    #[error("object {0} already exists")]
    ObjectExists(String),
    #[error("cannot compose {first} followed by {second} on {key}")]
    IncompatibleDeltas {
        key: String,
        first: &'static str,
        second: &'static str,
    },
    #[error("invalid delta for {key}: {detail}")]
    InvalidDelta { key: String, detail: String },

    #[error("unknown version `{0}`")]
    UnknownVersion(String),
    #[error("version `{0}` already exists")]
    DuplicateVersion(String),
    #[error("version `{version}` is not an ancestor of head `{head}`")]
    NotAncestor { version: String, head: String },

    #[error("snapshot has uncommitted changes")]
    StagedChanges,
    #[error("object handle is stale (snapshot was checked out since it was read)")]
    StaleHandle,
    #[error("primary key dimension `{0}` cannot be modified")]
    PrimaryKeyWrite(String),

    #[error("merge function failed: {0}")]
    Resolver(String),
    #[error("no remote configured")]
    NoRemote,
    #[error("network: {0}")]
    Network(String),
    #[error("peer replied with error {code}: {detail}")]
    Peer { code: String, detail: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("debug controller: {0}")]
    Gate(String),
    #[error("decode: {0}")]
    Decode(String),
}
