//! Static checks over resolved documents.
//!
//! [`validate`] collects every problem it can find instead of stopping at the
//! first one. Errors block execution; warnings never do.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::document::{
    BaseType, Body, Clause, ClauseKind, DataType, Document, OutputSource, Quantity, RunRef, SourceRef, Step,
    ToolDescription, Version, WorkflowDescription,
};
use crate::expression::Template;
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Diagnostic codes emitted by the validator.
pub mod codes {
    pub const UNSUPPORTED_REQUIREMENT: &str = "UnsupportedRequirement";
    pub const UNSUPPORTED_HINT: &str = "UnsupportedHint";
    pub const UNSUPPORTED_VERSION: &str = "UnsupportedVersion";
    pub const UNSUPPORTED_FEATURE: &str = "UnsupportedFeature";
    pub const DANGLING_REFERENCE: &str = "DanglingReference";
    pub const DUPLICATE_ID: &str = "DuplicateId";
    pub const TYPE_MISMATCH: &str = "TypeMismatch";
    pub const FORMAT_MISMATCH: &str = "FormatMismatch";
    pub const RESOURCE_UNSATISFIABLE: &str = "ResourceUnsatisfiable";
    pub const CYCLE_DETECTED: &str = "CycleDetected";
    pub const MISSING_STEP_INPUT: &str = "MissingStepInput";
    pub const UNUSED_STEP_INPUT: &str = "UnusedStepInput";
    pub const EMPTY_COMMAND: &str = "EmptyCommand";
    pub const VERSION_SKEW: &str = "VersionSkew";
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(code: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, code: code.into(), location: location.into(), message: message.into() }
    }

    pub fn warning(code: &str, location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code: code.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("diagnostics serialize")
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.code, self.location, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

/// Machine capacity in cores and MiB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capacity {
    pub cores: u64,
    pub ram_mib: u64,
    pub disk_mib: u64,
}

impl Capacity {
    /// Capacity of the current host. Disk is measured on `disk_root`.
    pub fn detect(disk_root: &std::path::Path) -> Capacity {
        let cores = std::thread::available_parallelism().map(|n| n.get() as u64).unwrap_or(1);
        let ram_mib = std::fs::read_to_string("/proc/meminfo")
            .ok()
            .and_then(|text| {
                text.lines()
                    .find_map(|l| l.strip_prefix("MemTotal:"))
                    .and_then(|rest| rest.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
            })
            .map(|kb| kb / 1024)
            .unwrap_or(4096);
        Capacity { cores, ram_mib: ram_mib.max(1), disk_mib: free_disk_mib(disk_root).unwrap_or(10 * 1024).max(1) }
    }
}

fn free_disk_mib(path: &std::path::Path) -> Option<u64> {
    use std::ffi::CString;
    use std::os::unix::ffi::OsStrExt;
    let mut probe = path.to_path_buf();
    while !probe.exists() {
        probe = probe.parent()?.to_path_buf();
    }
    let c = CString::new(probe.as_os_str().as_bytes()).ok()?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is a valid NUL-terminated path and `st` is a properly
    // sized out-parameter.
    let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
    (rc == 0).then(|| (st.f_bavail as u64).saturating_mul(st.f_frsize as u64) / (1024 * 1024))
}

/// What this engine instance can execute.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportMatrix {
    pub requirement_kinds: BTreeSet<ClauseKind>,
    pub versions: BTreeSet<Version>,
    pub capacity: Capacity,
}

impl SupportMatrix {
    /// Everything the engine implements except containers.
    pub fn new(capacity: Capacity) -> Self {
        assert!(capacity.cores > 0 && capacity.ram_mib > 0 && capacity.disk_mib > 0, "capacities must be positive");
        let requirement_kinds = [
            ClauseKind::Resource,
            ClauseKind::EnvVars,
            ClauseKind::InitialWorkDir,
            ClauseKind::WorkReuse,
            // Upstream feature flags for constructs the engine always supports.
            ClauseKind::Extension("ScatterFeatureRequirement".into()),
            ClauseKind::Extension("SubworkflowFeatureRequirement".into()),
        ]
        .into_iter()
        .collect();
        SupportMatrix { requirement_kinds, versions: Version::ALL.into_iter().collect(), capacity }
    }

    pub fn with_containers(mut self, available: bool) -> Self {
        if available {
            self.requirement_kinds.insert(ClauseKind::Container);
        } else {
            self.requirement_kinds.remove(&ClauseKind::Container);
        }
        self
    }

    pub fn supports(&self, kind: &ClauseKind) -> bool {
        self.requirement_kinds.contains(kind)
    }
}

/// Validates a resolved document against `matrix`.
pub fn validate(doc: &Document, matrix: &SupportMatrix) -> Vec<Diagnostic> {
    let mut v = Validator { matrix, diags: Vec::new() };
    v.document(doc, "", None);
    v.diags
}

/// Validates many documents, in parallel when `mode` allows.
pub fn validate_many(docs: &[Document], matrix: &SupportMatrix, mode: ExecMode) -> Vec<Vec<Diagnostic>> {
    par::map(mode, docs, |d| validate(d, matrix))
}

struct Validator<'m> {
    matrix: &'m SupportMatrix,
    diags: Vec<Diagnostic>,
}

fn at(loc: &str, key: &str) -> String {
    if loc.is_empty() {
        key.to_string()
    } else {
        format!("{loc}/{key}")
    }
}

fn display_loc(loc: &str) -> String {
    if loc.is_empty() {
        "/".into()
    } else {
        loc.into()
    }
}

impl Validator<'_> {
    fn error(&mut self, code: &str, loc: &str, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(code, display_loc(loc), msg));
    }

    fn warning(&mut self, code: &str, loc: &str, msg: impl Into<String>) {
        self.diags.push(Diagnostic::warning(code, display_loc(loc), msg));
    }

    fn document(&mut self, doc: &Document, loc: &str, parent_version: Option<Version>) {
        if !self.matrix.versions.contains(&doc.version) {
            self.error(
                codes::UNSUPPORTED_VERSION,
                &at(loc, "cwlVersion"),
                format!("version {} is not supported", doc.version),
            );
        }
        if let Some(parent) = parent_version {
            if parent != doc.version {
                self.warning(
                    codes::VERSION_SKEW,
                    &at(loc, "cwlVersion"),
                    format!("embedded document is {} inside a {} document", doc.version, parent),
                );
            }
        }
        let input_ids: Vec<&str> = doc.inputs().iter().map(|p| p.id.as_str()).collect();
        self.unique(&input_ids, &at(loc, "inputs"));
        let output_ids: Vec<&str> = doc.outputs().iter().map(|p| p.id.as_str()).collect();
        self.unique(&output_ids, &at(loc, "outputs"));
        for p in doc.inputs() {
            if let Some(default) = &p.default {
                if !json_conforms(default, &p.data_type) {
                    self.error(
                        codes::TYPE_MISMATCH,
                        &at(&at(loc, "inputs"), &p.id),
                        format!("default value does not match type {}", p.data_type),
                    );
                }
            }
        }
        let known: BTreeSet<&str> = input_ids.iter().copied().collect();
        // Workflow-level clauses are evaluated in each step's tool context,
        // so their expression references are only checked on tools.
        let refs = doc.as_tool().map(|_| &known);
        self.clauses(doc.requirements(), false, &at(loc, "requirements"), refs);
        self.clauses(doc.hints(), true, &at(loc, "hints"), refs);
        match &doc.body {
            Body::Tool(t) => self.tool(t, loc, &known),
            Body::Workflow(w) => self.workflow(doc, w, loc),
        }
    }

    fn unique(&mut self, ids: &[&str], loc: &str) {
        let mut seen = BTreeSet::new();
        for id in ids {
            if !seen.insert(*id) {
                self.error(codes::DUPLICATE_ID, &at(loc, id), format!("identifier `{id}` is declared more than once"));
            }
        }
    }

    /// `inputs` is the set of ids expressions may reference; `None` skips
    /// reference checks (workflow-level clauses are evaluated per step).
    fn clauses(&mut self, clauses: &[Clause], hints: bool, loc: &str, inputs: Option<&BTreeSet<&str>>) {
        for clause in clauses {
            let kind = clause.kind();
            let cloc = at(loc, &kind.to_string());
            if !self.matrix.supports(&kind) {
                if hints {
                    self.warning(
                        codes::UNSUPPORTED_HINT,
                        &cloc,
                        format!("hint {kind} is not supported and will be ignored"),
                    );
                } else {
                    self.error(
                        codes::UNSUPPORTED_REQUIREMENT,
                        &cloc,
                        format!("requirement {kind} cannot be satisfied by this engine"),
                    );
                }
                continue;
            }
            if let Clause::Resource(spec) = clause {
                let cap = self.matrix.capacity;
                for (name, q, limit) in [
                    ("coresMin", &spec.cores_min, Some(cap.cores)),
                    ("ramMin", &spec.ram_min, Some(cap.ram_mib)),
                    ("diskMin", &spec.disk_min, Some(cap.disk_mib)),
                    ("wallTimeMax", &spec.wall_time_max, None),
                ] {
                    match (q, limit) {
                        (Some(Quantity::Fixed(n)), Some(limit)) if *n > limit => {
                            let msg = format!("{name} {n} exceeds machine capacity {limit}");
                            // An oversized hint is clamped at run time, so it
                            // only warrants a warning.
                            if hints {
                                self.warning(codes::RESOURCE_UNSATISFIABLE, &cloc, msg);
                            } else {
                                self.error(codes::RESOURCE_UNSATISFIABLE, &cloc, msg);
                            }
                        }
                        (Some(Quantity::Expr(t)), _) => self.template_refs(t, &at(&cloc, name), inputs),
                        _ => {}
                    }
                }
            }
            match clause {
                Clause::EnvVars(vars) => {
                    for (k, t) in vars {
                        self.template_refs(t, &at(&cloc, k), inputs);
                    }
                }
                Clause::InitialWorkDir(listing) => {
                    for (i, e) in listing.iter().enumerate() {
                        let eloc = at(&cloc, &i.to_string());
                        self.template_refs(&e.entry, &eloc, inputs);
                        if let Some(n) = &e.entryname {
                            self.template_refs(n, &eloc, inputs);
                        }
                    }
                }
                _ => {}
            }
        }
    }

    fn template_refs(&mut self, t: &Template, loc: &str, inputs: Option<&BTreeSet<&str>>) {
        let Some(inputs) = inputs else { return };
        for r in t.referenced_inputs() {
            if !inputs.contains(r.as_str()) {
                self.error(codes::DANGLING_REFERENCE, loc, format!("expression references unknown input `{r}`"));
            }
        }
    }

    fn tool(&mut self, t: &ToolDescription, loc: &str, inputs: &BTreeSet<&str>) {
        if t.base_command.is_empty() && t.arguments.is_empty() {
            self.error(codes::EMPTY_COMMAND, loc, "tool has neither baseCommand nor arguments");
        }
        for (i, a) in t.arguments.iter().enumerate() {
            self.template_refs(&a.value, &at(&at(loc, "arguments"), &i.to_string()), Some(inputs));
        }
        for (key, tpl) in [("stdin", &t.stdin), ("stdout", &t.stdout), ("stderr", &t.stderr)] {
            if let Some(tpl) = tpl {
                self.template_refs(tpl, &at(loc, key), Some(inputs));
            }
        }
        for o in &t.outputs {
            if let OutputSource::Glob(g) = &o.source {
                self.template_refs(g, &at(&at(loc, "outputs"), &o.id), Some(inputs));
            }
        }
    }

    fn workflow(&mut self, doc: &Document, wf: &WorkflowDescription, loc: &str) {
        let step_ids: Vec<&str> = wf.steps.iter().map(|s| s.id.as_str()).collect();
        self.unique(&step_ids, &at(loc, "steps"));
        let types = SourceTypes { wf };
        for step in &wf.steps {
            self.step(doc, step, &at(&at(loc, "steps"), &step.id), &types);
        }
        for out in &wf.outputs {
            let oloc = at(&at(loc, "outputs"), &out.id);
            let OutputSource::Workflow(src) = &out.source else {
                self.error(codes::DANGLING_REFERENCE, &oloc, "workflow output has no outputSource");
                continue;
            };
            let src = SourceRef::parse(src);
            match types.source(&src) {
                Err(msg) => self.error(codes::DANGLING_REFERENCE, &oloc, msg),
                Ok(found) => {
                    if !found.ty.assignable_to(out.data_type) {
                        self.error(
                            codes::TYPE_MISMATCH,
                            &oloc,
                            format!("source {src} has type {} which is not assignable to {}", found.ty, out.data_type),
                        );
                    }
                    self.formats(found.format.as_deref(), out.format.as_deref(), &src, &oloc);
                }
            }
        }
        self.diags.extend(check_acyclic_at(wf, loc));
    }

    fn step(&mut self, doc: &Document, step: &Step, sloc: &str, types: &SourceTypes<'_>) {
        let in_keys: BTreeSet<&str> = step.in_map.keys().map(String::as_str).collect();
        self.clauses(&step.requirements, false, &at(sloc, "requirements"), None);
        self.clauses(&step.hints, true, &at(sloc, "hints"), None);
        if let Some(when) = &step.when {
            for r in when.referenced_inputs() {
                if !in_keys.contains(r.as_str()) {
                    self.error(
                        codes::DANGLING_REFERENCE,
                        &at(sloc, "when"),
                        format!("`when` references `{r}`, which is not a step input"),
                    );
                }
            }
        }
        let out_ids: Vec<&str> = step.out.iter().map(String::as_str).collect();
        self.unique(&out_ids, &at(sloc, "out"));
        for s in &step.scatter {
            if !in_keys.contains(s.as_str()) {
                self.error(
                    codes::DANGLING_REFERENCE,
                    &at(sloc, "scatter"),
                    format!("scattered input `{s}` is not a step input"),
                );
            }
        }
        // Sources must exist whether or not the run document is available.
        for (id, input) in &step.in_map {
            if let Some(src) = &input.source {
                if let Err(msg) = types.source(src) {
                    self.error(codes::DANGLING_REFERENCE, &at(&at(sloc, "in"), id), msg);
                }
            }
        }
        let run = match &step.run {
            RunRef::Document(d) => d,
            RunRef::Path(p) => {
                self.error(codes::DANGLING_REFERENCE, &at(sloc, "run"), format!("run reference `{p}` is not resolved"));
                return;
            }
        };
        if !step.scatter.is_empty() && run.as_workflow().is_some() {
            self.error(
                codes::UNSUPPORTED_FEATURE,
                &at(sloc, "scatter"),
                "scatter over a sub-workflow step is not supported",
            );
        }
        let rloc = at(sloc, "run");
        self.document(run, &rloc, Some(doc.version));
        for out in &step.out {
            if run.output(out).is_none() {
                self.error(
                    codes::DANGLING_REFERENCE,
                    &at(sloc, "out"),
                    format!("`{out}` is not an output of the run document"),
                );
            }
        }
        for p in run.inputs() {
            if !step.in_map.contains_key(&p.id) && !p.is_optional() {
                self.error(
                    codes::MISSING_STEP_INPUT,
                    &at(sloc, "in"),
                    format!("required input `{}` is not connected", p.id),
                );
            }
        }
        let when_refs: BTreeSet<String> =
            step.when.as_ref().map(|w| w.referenced_inputs().into_iter().collect()).unwrap_or_default();
        for (id, input) in &step.in_map {
            let iloc = at(&at(sloc, "in"), id);
            let Some(param) = run.input(id) else {
                if !when_refs.contains(id) {
                    self.warning(
                        codes::UNUSED_STEP_INPUT,
                        &iloc,
                        format!("`{id}` is not an input of the run document"),
                    );
                }
                continue;
            };
            let scattered = step.scatter.iter().any(|s| s == id);
            let mut sink = param.data_type;
            if input.default.is_some() || param.default.is_some() {
                sink = sink.optional();
            }
            if scattered {
                match sink.array_of() {
                    Some(arr) => sink = arr,
                    None => {
                        self.error(
                            codes::TYPE_MISMATCH,
                            &iloc,
                            format!("cannot scatter into array-typed input {}", param.data_type),
                        );
                        continue;
                    }
                }
            }
            if let Some(default) = &input.default {
                let default_ty = if scattered { sink.required() } else { param.data_type };
                if !json_conforms(default, &default_ty) {
                    self.error(codes::TYPE_MISMATCH, &iloc, format!("default value does not match type {default_ty}"));
                }
            }
            let Some(src) = &input.source else {
                if input.default.is_none() && !param.is_optional() {
                    self.error(
                        codes::MISSING_STEP_INPUT,
                        &iloc,
                        format!("input `{id}` has neither a source nor a default"),
                    );
                }
                continue;
            };
            let Ok(found) = types.source(src) else { continue };
            if !found.ty.assignable_to(sink) && !(found.nullable_items && relaxed_assignable(found.ty, sink)) {
                self.error(
                    codes::TYPE_MISMATCH,
                    &iloc,
                    format!("source {src} has type {} which is not assignable to {}", found.ty, sink),
                );
            }
            self.formats(found.format.as_deref(), param.format.as_deref(), src, &iloc);
        }
    }

    fn formats(&mut self, source: Option<&str>, sink: Option<&str>, src: &SourceRef, loc: &str) {
        if let (Some(a), Some(b)) = (source, sink) {
            if a != b {
                self.error(
                    codes::FORMAT_MISMATCH,
                    loc,
                    format!("source {src} has format {a} but the sink expects {b}"),
                );
            }
        }
    }
}

/// Arrays from conditional scatters may hold nulls; their element
/// optionality is not expressible in the type subset, so only the shape is
/// compared.
fn relaxed_assignable(source: DataType, sink: DataType) -> bool {
    source.base == sink.base && source.array == sink.array && sink.optional
}

struct SourceType {
    ty: DataType,
    format: Option<String>,
    /// Array elements may be null (conditional scatter).
    nullable_items: bool,
}

struct SourceTypes<'a> {
    wf: &'a WorkflowDescription,
}

impl SourceTypes<'_> {
    fn source(&self, src: &SourceRef) -> Result<SourceType, String> {
        match src {
            SourceRef::Input(id) => {
                let p = self
                    .wf
                    .inputs
                    .iter()
                    .find(|p| &p.id == id)
                    .ok_or_else(|| format!("`{id}` is not a workflow input"))?;
                let mut ty = p.data_type;
                if p.default.is_some() && !json_is_null(p.default.as_ref()) {
                    ty = ty.required();
                }
                Ok(SourceType { ty, format: p.format.clone(), nullable_items: false })
            }
            SourceRef::StepOutput { step, output } => {
                let s = self.wf.step(step).ok_or_else(|| format!("no step named `{step}`"))?;
                if !s.out.iter().any(|o| o == output) {
                    return Err(format!("step `{step}` does not list `{output}` in its out"));
                }
                let Some(run) = s.run.document() else {
                    return Err(format!("step `{step}` has an unresolved run reference"));
                };
                let p = run.output(output).ok_or_else(|| format!("`{output}` is not an output of step `{step}`"))?;
                let mut ty = p.data_type;
                let conditional = s.when.is_some();
                if !s.scatter.is_empty() {
                    let Some(arr) = ty.array_of() else {
                        return Err(format!("scattering step `{step}` would nest arrays of {ty}"));
                    };
                    ty = arr;
                }
                if conditional && s.scatter.is_empty() {
                    ty = ty.optional();
                }
                Ok(SourceType { ty, format: p.format.clone(), nullable_items: conditional && !s.scatter.is_empty() })
            }
        }
    }
}

fn json_is_null(v: Option<&Json>) -> bool {
    matches!(v, None | Some(Json::Null))
}

/// Shallow type check of a literal (no file access).
pub fn json_conforms(v: &Json, ty: &DataType) -> bool {
    if v.is_null() {
        return ty.optional || ty.base == BaseType::Null;
    }
    if ty.array {
        return match v {
            Json::Array(items) => items.iter().all(|i| json_conforms(i, &ty.item())),
            _ => false,
        };
    }
    match ty.base {
        BaseType::String => v.is_string(),
        BaseType::Int => v.is_i64() || v.is_u64(),
        BaseType::Float => v.is_number(),
        BaseType::Boolean => v.is_boolean(),
        BaseType::Null => false,
        BaseType::File | BaseType::Directory => {
            let class = if ty.base == BaseType::File { "File" } else { "Directory" };
            match v {
                Json::String(_) => true,
                Json::Object(m) => {
                    m.get("class").and_then(Json::as_str) == Some(class)
                        && (m.get("path").is_some_and(Json::is_string)
                            || m.get("location").is_some_and(Json::is_string))
                }
                _ => false,
            }
        }
    }
}

/// `(producer, consumer)` pairs between steps, deduplicated and sorted.
pub fn step_edges(wf: &WorkflowDescription) -> Vec<(String, String)> {
    let ids: BTreeSet<&str> = wf.steps.iter().map(|s| s.id.as_str()).collect();
    let mut edges = BTreeSet::new();
    for s in &wf.steps {
        for input in s.in_map.values() {
            if let Some(SourceRef::StepOutput { step, .. }) = &input.source {
                if ids.contains(step.as_str()) {
                    edges.insert((step.clone(), s.id.clone()));
                }
            }
        }
    }
    edges.into_iter().collect()
}

/// Finds one directed cycle, returned as its node sequence without
/// repeating the first node. Nodes are explored in sorted order.
pub fn find_cycle(nodes: &[String], edges: &[(String, String)]) -> Option<Vec<String>> {
    let mut succ: BTreeMap<&str, Vec<&str>> = nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
    for (a, b) in edges {
        succ.entry(a.as_str()).or_default().push(b.as_str());
        succ.entry(b.as_str()).or_default();
    }
    for list in succ.values_mut() {
        list.sort_unstable();
        list.dedup();
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let mut color: BTreeMap<&str, Color> = succ.keys().map(|k| (*k, Color::White)).collect();
    let roots: Vec<&str> = succ.keys().copied().collect();
    for root in roots {
        if color[root] != Color::White {
            continue;
        }
        // Explicit stack of (node, next child index) keeps deep graphs off
        // the call stack.
        let mut path: Vec<(&str, usize)> = vec![(root, 0)];
        color.insert(root, Color::Grey);
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            let children = &succ[node];
            if *next < children.len() {
                let child = children[*next];
                *next += 1;
                match color[child] {
                    Color::White => {
                        color.insert(child, Color::Grey);
                        path.push((child, 0));
                    }
                    Color::Grey => {
                        let start = path.iter().position(|(n, _)| *n == child).expect("grey node is on the path");
                        return Some(path[start..].iter().map(|(n, _)| n.to_string()).collect());
                    }
                    Color::Black => {}
                }
            } else {
                color.insert(node, Color::Black);
                path.pop();
            }
        }
    }
    None
}

/// Empty iff the step dependency relation is acyclic; otherwise exactly one
/// `CycleDetected` naming one cycle.
pub fn check_acyclic(wf: &WorkflowDescription) -> Vec<Diagnostic> {
    check_acyclic_at(wf, "")
}

fn check_acyclic_at(wf: &WorkflowDescription, loc: &str) -> Vec<Diagnostic> {
    let nodes: Vec<String> = wf.steps.iter().map(|s| s.id.clone()).collect();
    match find_cycle(&nodes, &step_edges(wf)) {
        None => Vec::new(),
        Some(cycle) => {
            let mut shown = cycle.clone();
            shown.push(cycle[0].clone());
            vec![Diagnostic::error(
                codes::CYCLE_DETECTED,
                display_loc(&at(loc, "steps")),
                format!("steps form a cycle: [{}] ({})", cycle.join(", "), shown.join(" -> ")),
            )]
        }
    }
}

/// Longest-path layering of a DAG. Layer `k` holds the nodes whose longest
/// chain of predecessors has length `k`. Fails with the cycle if there is one.
pub fn layers_of(nodes: &[String], edges: &[(String, String)]) -> Result<Vec<BTreeSet<String>>, Vec<String>> {
    if let Some(cycle) = find_cycle(nodes, edges) {
        return Err(cycle);
    }
    let mut preds: BTreeMap<&str, Vec<&str>> = nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
    let mut succs: BTreeMap<&str, Vec<&str>> = nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
    for (a, b) in edges {
        preds.entry(b.as_str()).or_default().push(a.as_str());
        succs.entry(a.as_str()).or_default().push(b.as_str());
        preds.entry(a.as_str()).or_default();
        succs.entry(b.as_str()).or_default();
    }
    let mut indegree: BTreeMap<&str, usize> = preds.iter().map(|(k, v)| (*k, v.len())).collect();
    let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
    let mut queue: Vec<&str> = indegree.iter().filter(|(_, d)| **d == 0).map(|(k, _)| *k).collect();
    while let Some(n) = queue.pop() {
        let d = preds[n].iter().map(|p| depth[p] + 1).max().unwrap_or(0);
        depth.insert(n, d);
        for s in &succs[n] {
            let e = indegree.get_mut(s).expect("known node");
            *e -= 1;
            if *e == 0 {
                queue.push(s);
            }
        }
    }
    let mut layers: Vec<BTreeSet<String>> = Vec::new();
    for (n, d) in depth {
        if layers.len() <= d {
            layers.resize(d + 1, BTreeSet::new());
        }
        layers[d].insert(n.to_string());
    }
    Ok(layers)
}

/// Layers of a workflow's steps (see [`layers_of`]).
pub fn layering(wf: &WorkflowDescription) -> Result<Vec<BTreeSet<String>>, Diagnostic> {
    let nodes: Vec<String> = wf.steps.iter().map(|s| s.id.clone()).collect();
    layers_of(&nodes, &step_edges(wf)).map_err(|_| check_acyclic(wf).remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_document;

    fn matrix(cores: u64) -> SupportMatrix {
        SupportMatrix::new(Capacity { cores, ram_mib: 4096, disk_mib: 10_000 })
    }

    fn tool_with(section: &str, clause: &str) -> Document {
        let text =
            format!("cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [\"true\"]\n{section}:\n  {clause}\n");
        parse_document(&text, None).unwrap()
    }

    #[test]
    fn unknown_hint_warns_unknown_requirement_errors() {
        let d = validate(&tool_with("hints", "GPURequirement: {count: 1}"), &matrix(2));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
        assert_eq!(d[0].code, codes::UNSUPPORTED_HINT);
        let d = validate(&tool_with("requirements", "GPURequirement: {count: 1}"), &matrix(2));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, codes::UNSUPPORTED_REQUIREMENT);
        assert!(d[0].is_error());
    }

    #[test]
    fn oversized_requirement_is_unsatisfiable() {
        let d = validate(&tool_with("requirements", "ResourceRequirement: {coresMin: 4}"), &matrix(2));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, codes::RESOURCE_UNSATISFIABLE);
        assert!(d[0].is_error());
        let d = validate(&tool_with("hints", "ResourceRequirement: {coresMin: 4}"), &matrix(2));
        assert!(!has_errors(&d));
    }

    #[test]
    fn container_support_follows_the_matrix() {
        let doc = tool_with("requirements", "DockerRequirement: {dockerPull: 'alpine:3'}");
        assert!(has_errors(&validate(&doc, &matrix(2))));
        assert!(!has_errors(&validate(&doc, &matrix(2).with_containers(true))));
    }

    #[test]
    fn json_lines() {
        let d = Diagnostic::error(codes::CYCLE_DETECTED, "steps", "x");
        assert_eq!(d.to_json_line(), r#"{"severity":"error","code":"CycleDetected","location":"steps","message":"x"}"#);
    }

    #[test]
    fn cycle_is_reported_once_in_order() {
        let nodes = vec!["A".to_string(), "B".to_string()];
        let edges = vec![("A".to_string(), "B".to_string()), ("B".to_string(), "A".to_string())];
        assert_eq!(find_cycle(&nodes, &edges), Some(vec!["A".to_string(), "B".to_string()]));
        assert_eq!(find_cycle(&nodes, &edges[..1]), None);
        let self_loop = vec![("A".to_string(), "A".to_string())];
        assert_eq!(find_cycle(&nodes, &self_loop), Some(vec!["A".to_string()]));
    }

    #[test]
    fn chain_layers() {
        let nodes: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let edges: Vec<_> = (0..4).map(|i| (format!("s{i}"), format!("s{}", i + 1))).collect();
        let layers = layers_of(&nodes, &edges).unwrap();
        assert_eq!(layers.len(), 5);
        assert!(layers.iter().all(|l| l.len() == 1));
        assert_eq!(layers_of(&nodes[..1], &[]).unwrap().len(), 1);
    }

    #[test]
    fn defaults_are_type_checked() {
        let doc = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [\"true\"]\ninputs: {n: {type: int, default: 'x'}}\n",
            None,
        )
        .unwrap();
        let d = validate(&doc, &matrix(1));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, codes::TYPE_MISMATCH);
    }
}
