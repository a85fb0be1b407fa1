//! Typed, version-tagged model of tool and workflow documents.
//!
//! Documents are built by [`parse_document`], have their external `run`
//! references inlined by [`resolve_references`], and are immutable after
//! that. [`canonical_json`] / [`canonical_digest`] give a serialization that
//! is independent of key order and of YAML vs JSON surface syntax.

mod canonical;
mod parse;
mod resolve;
mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

pub(crate) use canonical::clause_json;
pub use canonical::{canonical_digest, canonical_json, canonical_text, tool_digest};
pub use parse::{is_identifier, parse_document, parse_document_with_version};
pub use resolve::{load_document, resolve_references, DocumentLoader, FsLoader};
pub use types::{BaseType, DataType};

use crate::expression::{Expression, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Version {
    V1_0,
    V1_1,
    V1_2,
}

impl Version {
    pub const ALL: [Version; 3] = [Version::V1_0, Version::V1_1, Version::V1_2];

    pub fn as_str(self) -> &'static str {
        match self {
            Version::V1_0 => "v1.0",
            Version::V1_1 => "v1.1",
            Version::V1_2 => "v1.2",
        }
    }

    pub fn next(self) -> Option<Version> {
        match self {
            Version::V1_0 => Some(Version::V1_1),
            Version::V1_1 => Some(Version::V1_2),
            Version::V1_2 => None,
        }
    }

    /// Conditional steps (`when`) exist from v1.2 on.
    pub fn supports_when(self) -> bool {
        self >= Version::V1_2
    }

    /// The `WorkReuse` clause is recognized from v1.1 on.
    pub fn supports_work_reuse(self) -> bool {
        self >= Version::V1_1
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VersionError {
    #[error("malformed version string {0:?}; expected v<major>.<minor>")]
    Malformed(String),
    #[error("unknown version {0}")]
    Unknown(String),
}

impl FromStr for Version {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let well_formed = s.strip_prefix('v').and_then(|rest| rest.split_once('.')).is_some_and(|(maj, min)| {
            !maj.is_empty()
                && !min.is_empty()
                && maj.bytes().all(|b| b.is_ascii_digit())
                && min.bytes().all(|b| b.is_ascii_digit())
        });
        if !well_formed {
            return Err(VersionError::Malformed(s.to_string()));
        }
        match s {
            "v1.0" => Ok(Version::V1_0),
            "v1.1" => Ok(Version::V1_1),
            "v1.2" => Ok(Version::V1_2),
            other => Err(VersionError::Unknown(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub label: Option<String>,
    pub doc: Option<String>,
    pub author: Option<String>,
}

/// A parsed tool or workflow document.
#[derive(Debug, Clone)]
pub struct Document {
    pub version: Version,
    pub id: Option<String>,
    pub body: Body,
    /// Namespaced top-level keys (`prefix:name`), kept verbatim.
    pub extensions: BTreeMap<String, serde_json::Value>,
    /// `$namespaces` prefix table.
    pub namespaces: BTreeMap<String, String>,
    pub metadata: Metadata,
    /// Directory relative references are resolved against. Not part of the
    /// document's identity.
    pub base_dir: Option<PathBuf>,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.id == other.id
            && self.body == other.body
            && self.extensions == other.extensions
            && self.namespaces == other.namespaces
            && self.metadata == other.metadata
    }
}

impl Document {
    pub fn class_name(&self) -> &'static str {
        match self.body {
            Body::Tool(_) => "CommandLineTool",
            Body::Workflow(_) => "Workflow",
        }
    }

    pub fn as_tool(&self) -> Option<&ToolDescription> {
        match &self.body {
            Body::Tool(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_workflow(&self) -> Option<&WorkflowDescription> {
        match &self.body {
            Body::Workflow(w) => Some(w),
            _ => None,
        }
    }

    pub fn inputs(&self) -> &[InputParameter] {
        match &self.body {
            Body::Tool(t) => &t.inputs,
            Body::Workflow(w) => &w.inputs,
        }
    }

    pub fn outputs(&self) -> &[OutputParameter] {
        match &self.body {
            Body::Tool(t) => &t.outputs,
            Body::Workflow(w) => &w.outputs,
        }
    }

    pub fn requirements(&self) -> &[Clause] {
        match &self.body {
            Body::Tool(t) => &t.requirements,
            Body::Workflow(w) => &w.requirements,
        }
    }

    pub fn hints(&self) -> &[Clause] {
        match &self.body {
            Body::Tool(t) => &t.hints,
            Body::Workflow(w) => &w.hints,
        }
    }

    pub fn input(&self, id: &str) -> Option<&InputParameter> {
        self.inputs().iter().find(|p| p.id == id)
    }

    pub fn output(&self, id: &str) -> Option<&OutputParameter> {
        self.outputs().iter().find(|p| p.id == id)
    }

    /// True when every `run` reference below this document is inlined.
    pub fn is_resolved(&self) -> bool {
        match &self.body {
            Body::Tool(_) => true,
            Body::Workflow(w) => w.steps.iter().all(|s| match &s.run {
                RunRef::Path(_) => false,
                RunRef::Document(d) => d.is_resolved(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Tool(Box<ToolDescription>),
    Workflow(WorkflowDescription),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolDescription {
    pub base_command: Vec<String>,
    pub arguments: Vec<Argument>,
    pub inputs: Vec<InputParameter>,
    pub outputs: Vec<OutputParameter>,
    pub requirements: Vec<Clause>,
    pub hints: Vec<Clause>,
    /// File whose contents feed the tool's standard input.
    pub stdin: Option<Template>,
    pub stdout: Option<Template>,
    pub stderr: Option<Template>,
    pub success_codes: BTreeSet<i32>,
    /// Exit codes that signal a retryable failure.
    pub temporary_fail_codes: BTreeSet<i32>,
}

impl Default for ToolDescription {
    fn default() -> Self {
        ToolDescription {
            base_command: Vec::new(),
            arguments: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            requirements: Vec::new(),
            hints: Vec::new(),
            stdin: None,
            stdout: None,
            stderr: None,
            success_codes: BTreeSet::from([0]),
            temporary_fail_codes: BTreeSet::new(),
        }
    }
}

/// A fixed command-line argument, possibly computed from an expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Argument {
    pub position: Option<i64>,
    pub prefix: Option<String>,
    pub value: Template,
}

/// How an input contributes to the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandBinding {
    pub position: Option<i64>,
    pub prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputParameter {
    pub id: String,
    pub data_type: DataType,
    /// Only meaningful on tool inputs.
    pub binding: Option<CommandBinding>,
    pub default: Option<serde_json::Value>,
    pub format: Option<String>,
    pub streamable: bool,
    pub label: Option<String>,
    pub doc: Option<String>,
}

impl InputParameter {
    pub fn new(id: impl Into<String>, data_type: DataType) -> Self {
        InputParameter {
            id: id.into(),
            data_type,
            binding: None,
            default: None,
            format: None,
            streamable: false,
            label: None,
            doc: None,
        }
    }

    /// Can this input be left unbound?
    pub fn is_optional(&self) -> bool {
        self.data_type.optional || self.default.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputSource {
    /// Tool output located by a glob relative to the output directory.
    Glob(Template),
    /// Tool output capturing standard output.
    Stdout,
    /// Tool output capturing standard error.
    Stderr,
    /// Workflow output: `step/output` or a workflow input id.
    Workflow(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputParameter {
    pub id: String,
    pub data_type: DataType,
    pub source: OutputSource,
    pub format: Option<String>,
    pub streamable: bool,
    pub label: Option<String>,
    pub doc: Option<String>,
}

/// Dynamic or fixed resource quantity.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantity {
    Fixed(u64),
    Expr(Template),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResourceSpec {
    pub cores_min: Option<Quantity>,
    /// MiB.
    pub ram_min: Option<Quantity>,
    /// MiB.
    pub disk_min: Option<Quantity>,
    /// Seconds.
    pub wall_time_max: Option<Quantity>,
}

/// One `InitialWorkDir` listing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkDirEntry {
    /// Name inside the output directory; defaults to the basename of a
    /// file-valued entry.
    pub entryname: Option<Template>,
    pub entry: Template,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClauseKind {
    Container,
    Resource,
    EnvVars,
    InitialWorkDir,
    WorkReuse,
    /// Any other clause class, named as written.
    Extension(String),
}

impl fmt::Display for ClauseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClauseKind::Container => f.write_str("DockerRequirement"),
            ClauseKind::Resource => f.write_str("ResourceRequirement"),
            ClauseKind::EnvVars => f.write_str("EnvVarRequirement"),
            ClauseKind::InitialWorkDir => f.write_str("InitialWorkDirRequirement"),
            ClauseKind::WorkReuse => f.write_str("WorkReuse"),
            ClauseKind::Extension(name) => f.write_str(name),
        }
    }
}

/// A requirement or hint.
#[derive(Debug, Clone, PartialEq)]
pub enum Clause {
    Container { image: String },
    Resource(ResourceSpec),
    EnvVars(BTreeMap<String, Template>),
    InitialWorkDir(Vec<WorkDirEntry>),
    WorkReuse { enable: bool },
    Extension { class: String, payload: serde_json::Map<String, serde_json::Value> },
}

impl Clause {
    pub fn kind(&self) -> ClauseKind {
        match self {
            Clause::Container { .. } => ClauseKind::Container,
            Clause::Resource(_) => ClauseKind::Resource,
            Clause::EnvVars(_) => ClauseKind::EnvVars,
            Clause::InitialWorkDir(_) => ClauseKind::InitialWorkDir,
            Clause::WorkReuse { .. } => ClauseKind::WorkReuse,
            Clause::Extension { class, .. } => ClauseKind::Extension(class.clone()),
        }
    }
}

/// Merges clause lists, later lists overriding earlier ones per kind.
pub fn merge_clauses<'a>(layers: impl IntoIterator<Item = &'a [Clause]>) -> Vec<Clause> {
    let mut out: Vec<Clause> = Vec::new();
    for layer in layers {
        for clause in layer {
            let kind = clause.kind();
            out.retain(|c| c.kind() != kind);
            out.push(clause.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowDescription {
    pub inputs: Vec<InputParameter>,
    pub outputs: Vec<OutputParameter>,
    pub steps: Vec<Step>,
    /// Inherited by every step.
    pub requirements: Vec<Clause>,
    pub hints: Vec<Clause>,
}

impl WorkflowDescription {
    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunRef {
    /// Unresolved relative path or URI.
    Path(String),
    Document(Arc<Document>),
}

impl RunRef {
    pub fn document(&self) -> Option<&Arc<Document>> {
        match self {
            RunRef::Document(d) => Some(d),
            RunRef::Path(_) => None,
        }
    }
}

/// Where a step input gets its value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInput {
    pub source: Option<SourceRef>,
    /// Used when there is no source or the source value is null.
    pub default: Option<serde_json::Value>,
}

/// Reference to a workflow input (`name`) or a step output (`step/output`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceRef {
    Input(String),
    StepOutput { step: String, output: String },
}

impl SourceRef {
    pub fn parse(s: &str) -> SourceRef {
        let s = s.strip_prefix('#').unwrap_or(s);
        match s.split_once('/') {
            Some((step, output)) => SourceRef::StepOutput { step: step.into(), output: output.into() },
            None => SourceRef::Input(s.into()),
        }
    }
}

impl fmt::Display for SourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceRef::Input(id) => f.write_str(id),
            SourceRef::StepOutput { step, output } => write!(f, "{step}/{output}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub id: String,
    pub run: RunRef,
    pub in_map: BTreeMap<String, StepInput>,
    pub out: Vec<String>,
    /// Scattered input ids; dot-product semantics when more than one.
    pub scatter: Vec<String>,
    pub when: Option<Expression>,
    pub requirements: Vec<Clause>,
    pub hints: Vec<Clause>,
    pub label: Option<String>,
    pub doc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DocumentError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },
    #[error("type syntax error at {location}: cannot parse {text:?}: {message}")]
    TypeSyntax { location: String, text: String, message: String },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("include cycle: {}", .0.join(" -> "))]
    IncludeCycle(Vec<String>),
}

impl DocumentError {
    pub fn code(&self) -> &'static str {
        match self {
            DocumentError::Syntax(_) => "SyntaxError",
            DocumentError::Schema { .. } => "SchemaError",
            DocumentError::TypeSyntax { .. } => "TypeSyntaxError",
            DocumentError::NotFound(_) => "NotFound",
            DocumentError::IncludeCycle(_) => "IncludeCycle",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_parsing() {
        assert_eq!("v1.2".parse::<Version>().unwrap(), Version::V1_2);
        assert!(matches!("v2.0".parse::<Version>(), Err(VersionError::Unknown(_))));
        assert!(matches!("1.0".parse::<Version>(), Err(VersionError::Malformed(_))));
        assert!(matches!("v1".parse::<Version>(), Err(VersionError::Malformed(_))));
        assert!(Version::V1_0 < Version::V1_2);
    }

    #[test]
    fn later_clauses_override() {
        let a = [Clause::Container { image: "a".into() }, Clause::WorkReuse { enable: true }];
        let b = [Clause::Container { image: "b".into() }];
        let merged = merge_clauses([&a[..], &b[..]]);
        assert_eq!(merged.len(), 2);
        assert!(merged.contains(&Clause::Container { image: "b".into() }));
    }

    #[test]
    fn source_refs() {
        assert_eq!(
            SourceRef::parse("#grep/matches"),
            SourceRef::StepOutput { step: "grep".into(), output: "matches".into() }
        );
        assert_eq!(SourceRef::parse("pattern"), SourceRef::Input("pattern".into()));
    }
}
