//! `miniwfl`: a desk-scale engine for declarative command-line-tool workflows.
//!
//! The pipeline is `document` (parse + resolve) → `validator` → `planner`
//! → `scheduler` (driving `runtime` attempts, backed by `cache` and
//! `provenance`). `upgrader` migrates documents between dialect versions and
//! `pipeline` wires everything together for the command-line front end.

pub mod cache;
pub mod digest;
pub mod document;
pub mod expression;
pub mod par;
pub mod pipeline;
pub mod planner;
pub mod provenance;
pub mod runtime;
pub mod scheduler;
pub mod upgrader;
pub mod validator;
pub mod value;

pub use document::{load_document, parse_document, resolve_references, Document};
pub use value::{DirectoryValue, FileValue, Value};

/// Engine version recorded in provenance.
pub const ENGINE_VERSION: &str = concat!("miniwfl/", env!("CARGO_PKG_VERSION"));
