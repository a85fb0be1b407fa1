//! Turns a validated workflow and a job order into a [`DataflowGraph`].
//!
//! Sub-workflows are inlined with `parent/child` task ids. Scatter width is
//! data dependent, so scattered nodes are expanded into instances
//! (`step[i]`) only once their inputs are known; node and edge sets never
//! change after planning.

mod dot;
mod exec;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value as Json;

use crate::document::{
    merge_clauses, Body, Clause, ClauseKind, DataType, Document, InputParameter, OutputParameter, OutputSource,
    Quantity, RunRef, SourceRef, Step, ToolDescription, WorkflowDescription,
};
use crate::expression::{EvalContext, ExprError, Expression, RuntimeContext};
use crate::par::{self, ExecMode};
use crate::validator::layers_of;
use crate::value::{FileValue, Value, ValueError};

pub use dot::to_dot;
pub use exec::{Event, Execution, NodeState, Task, TaskState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("missing required input `{0}`")]
    MissingInput(String),
    #[error("invalid value for input `{input}`: {source}")]
    InvalidInput { input: String, source: ValueError },
    #[error("job order is malformed: {0}")]
    JobSyntax(String),
    #[error("invalid default at {location}: {message}")]
    InvalidDefault { location: String, message: String },
    #[error("step `{0}` has an unresolved run reference")]
    UnresolvedRun(String),
    #[error("cannot resolve source `{reference}` for `{location}`")]
    UnresolvableSource { location: String, reference: String },
    #[error("steps form a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("scatter over sub-workflow step `{0}` is not supported")]
    ScatterSubworkflow(String),
    #[error("scattered inputs of `{task}` have unequal lengths {lengths:?}")]
    ScatterLengthMismatch { task: String, lengths: Vec<usize> },
    #[error("scattered input `{input}` of `{task}` is not an array")]
    ScatterNotArray { task: String, input: String },
}

/// Concrete input values for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobOrder {
    pub values: BTreeMap<String, Value>,
}

impl JobOrder {
    /// Loads a job order for `doc` from YAML/JSON text. Relative file paths
    /// resolve against `base_dir`. Every file is checksummed here.
    pub fn parse(doc: &Document, text: &str, base_dir: &Path, mode: ExecMode) -> Result<JobOrder, PlanError> {
        let json: Json = if text.trim().is_empty() {
            Json::Object(Default::default())
        } else {
            match serde_json::from_str(text) {
                Ok(v) => v,
                Err(_) => serde_yaml::from_str(text).map_err(|e| PlanError::JobSyntax(e.to_string()))?,
            }
        };
        let json = match json {
            Json::Null => Json::Object(Default::default()),
            other => other,
        };
        Self::from_json(doc, &json, base_dir, mode)
    }

    pub fn from_json(doc: &Document, json: &Json, base_dir: &Path, mode: ExecMode) -> Result<JobOrder, PlanError> {
        let Json::Object(map) = json else {
            return Err(PlanError::JobSyntax("expected a mapping of input ids to values".into()));
        };
        for key in map.keys() {
            if doc.input(key).is_none() {
                log::warn!("job order entry `{key}` is not a workflow input; ignored");
            }
        }
        let doc_base = doc.base_dir.clone().unwrap_or_else(|| base_dir.to_path_buf());
        let pending: Vec<(&InputParameter, Option<&Json>)> =
            doc.inputs().iter().map(|p| (p, map.get(&p.id).filter(|v| !v.is_null()))).collect();
        for (p, given) in &pending {
            if given.is_none() && p.default.as_ref().is_none_or(Json::is_null) && !p.data_type.optional {
                return Err(PlanError::MissingInput(p.id.clone()));
            }
        }
        // Checksumming dominates load time; inputs are independent.
        let values = par::try_map(mode, &pending, |(p, given)| {
            let value = match (given, &p.default) {
                (Some(v), _) => Value::from_json(v, &p.data_type, base_dir, ExecMode::Sequential),
                (None, Some(d)) => Value::from_json(d, &p.data_type, &doc_base, ExecMode::Sequential),
                (None, None) => Ok(Value::Null),
            };
            let value = value.map_err(|source| PlanError::InvalidInput { input: p.id.clone(), source })?;
            Ok::<_, PlanError>((p.id.clone(), with_declared_format(value, p.format.as_deref())))
        })?;
        Ok(JobOrder { values: values.into_iter().collect() })
    }
}

/// Files without an explicit format take the parameter's declared one.
fn with_declared_format(value: Value, format: Option<&str>) -> Value {
    let Some(format) = format else { return value };
    match value {
        Value::File(mut f) => {
            if f.format.is_none() {
                f.format = Some(format.to_string());
            }
            Value::File(f)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|v| with_declared_format(v, Some(format))).collect()),
        other => other,
    }
}

/// Where a binding's primary value comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Literal(Value),
    Port { node: String, output: String },
}

/// A primary source plus defaults tried in order when it yields null.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub source: Source,
    pub fallbacks: Vec<Value>,
}

impl Binding {
    pub fn literal(v: Value) -> Self {
        Binding { source: Source::Literal(v), fallbacks: Vec::new() }
    }

    pub fn port(&self) -> Option<(&str, &str)> {
        match &self.source {
            Source::Port { node, output } => Some((node, output)),
            Source::Literal(_) => None,
        }
    }

    /// `None` while the primary port is unpublished.
    pub fn resolve<'a>(&'a self, published: impl Fn(&str, &str) -> Option<&'a Value>) -> Option<Value> {
        let primary = match &self.source {
            Source::Literal(v) => v,
            Source::Port { node, output } => published(node, output)?,
        };
        if !primary.is_null() {
            return Some(primary.clone());
        }
        Some(self.fallbacks.iter().find(|v| !v.is_null()).cloned().unwrap_or(Value::Null))
    }
}

/// A `when` inherited from an enclosing sub-workflow step.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    /// Task-id path of the guarded sub-workflow step.
    pub origin: String,
    pub expr: Expression,
    pub bindings: BTreeMap<String, Binding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub id: String,
    pub tool: Arc<Document>,
    /// Effective requirements after inheritance (most specific wins).
    pub requirements: Vec<Clause>,
    /// Effective hints, minus kinds already required.
    pub hints: Vec<Clause>,
    /// Keyed by step input id; includes inputs only the guard reads.
    pub bindings: BTreeMap<String, Binding>,
    pub scatter: Vec<String>,
    pub guard: Option<Expression>,
    pub outer_guards: Vec<Guard>,
    pub outputs: Vec<String>,
    pub layer: usize,
}

impl TaskNode {
    pub fn tool(&self) -> &ToolDescription {
        self.tool.as_tool().expect("task nodes run tools")
    }

    pub fn is_scattered(&self) -> bool {
        !self.scatter.is_empty()
    }

    /// Ports this node waits for, guards included.
    pub fn dependencies(&self) -> BTreeSet<(String, String)> {
        self.bindings
            .values()
            .chain(self.outer_guards.iter().flat_map(|g| g.bindings.values()))
            .filter_map(|b| b.port().map(|(n, o)| (n.to_string(), o.to_string())))
            .collect()
    }

    /// The effective clause of `kind` and whether it is a requirement.
    pub fn clause(&self, kind: &ClauseKind) -> Option<(&Clause, bool)> {
        self.requirements
            .iter()
            .find(|c| &c.kind() == kind)
            .map(|c| (c, true))
            .or_else(|| self.hints.iter().find(|c| &c.kind() == kind).map(|c| (c, false)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub producer: String,
    pub output: String,
    pub consumer: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataflowGraph {
    pub nodes: BTreeMap<String, TaskNode>,
    pub edges: BTreeSet<Edge>,
    pub workflow_outputs: BTreeMap<String, Binding>,
    /// Declared types of the workflow outputs.
    pub output_types: BTreeMap<String, DataType>,
}

impl DataflowGraph {
    /// Node ids in (layer, id) order.
    pub fn ordered_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&TaskNode> = self.nodes.values().collect();
        ids.sort_by(|a, b| (a.layer, &a.id).cmp(&(b.layer, &b.id)));
        ids.into_iter().map(|n| n.id.as_str()).collect()
    }

    pub fn layers(&self) -> Vec<Vec<&str>> {
        let mut out: Vec<Vec<&str>> = Vec::new();
        for id in self.ordered_ids() {
            let layer = self.nodes[id].layer;
            if out.len() <= layer {
                out.resize(layer + 1, Vec::new());
            }
            out[layer].push(id);
        }
        out
    }
}

/// Wraps a bare tool as a one-step workflow so tools run like workflows.
pub fn as_workflow_document(doc: &Document) -> Document {
    let Body::Tool(tool) = &doc.body else { return doc.clone() };
    let step_id = doc.id.as_deref().filter(|id| crate::document::is_identifier(id)).unwrap_or("tool").to_string();
    let inputs: Vec<InputParameter> =
        tool.inputs.iter().map(|p| InputParameter { binding: None, streamable: false, ..p.clone() }).collect();
    let outputs: Vec<OutputParameter> = tool
        .outputs
        .iter()
        .map(|o| OutputParameter {
            source: OutputSource::Workflow(format!("{step_id}/{}", o.id)),
            streamable: false,
            ..o.clone()
        })
        .collect();
    let step = Step {
        id: step_id,
        run: RunRef::Document(Arc::new(doc.clone())),
        in_map: tool
            .inputs
            .iter()
            .map(|p| {
                (
                    p.id.clone(),
                    crate::document::StepInput { source: Some(SourceRef::Input(p.id.clone())), default: None },
                )
            })
            .collect(),
        out: tool.outputs.iter().map(|o| o.id.clone()).collect(),
        scatter: Vec::new(),
        when: None,
        requirements: Vec::new(),
        hints: Vec::new(),
        label: None,
        doc: None,
    };
    Document {
        body: Body::Workflow(WorkflowDescription {
            inputs,
            outputs,
            steps: vec![step],
            requirements: Vec::new(),
            hints: Vec::new(),
        }),
        ..doc.clone()
    }
}

/// Plans `doc` (a workflow, or a tool wrapped as one) against `job`.
pub fn plan(doc: &Document, job: &JobOrder) -> Result<DataflowGraph, PlanError> {
    Planner { lenient: false }.plan(doc, |id| job.values.get(id).cloned().unwrap_or(Value::Null))
}

/// Plans the graph shape without a job order (for graph export). Defaults
/// that cannot be loaded become null.
pub fn plan_shape(doc: &Document) -> Result<DataflowGraph, PlanError> {
    Planner { lenient: true }.plan(doc, |_| Value::Null)
}

struct Planner {
    lenient: bool,
}

struct Scope<'a> {
    prefix: String,
    inputs: BTreeMap<String, Binding>,
    requirements: Vec<Clause>,
    hints: Vec<Clause>,
    guards: Vec<Guard>,
    base_dir: Option<&'a Path>,
}

impl Planner {
    fn plan(&self, doc: &Document, job_value: impl Fn(&str) -> Value) -> Result<DataflowGraph, PlanError> {
        let wrapped = as_workflow_document(doc);
        let wf = wrapped.as_workflow().expect("wrapped document is a workflow");
        let scope = Scope {
            prefix: String::new(),
            inputs: wf.inputs.iter().map(|p| (p.id.clone(), Binding::literal(job_value(&p.id)))).collect(),
            requirements: Vec::new(),
            hints: Vec::new(),
            guards: Vec::new(),
            base_dir: wrapped.base_dir.as_deref(),
        };
        let mut nodes = BTreeMap::new();
        let outputs = self.inline(&wrapped, &scope, &mut nodes)?;
        let mut edges = BTreeSet::new();
        for node in nodes.values() {
            for (input, b) in &node.bindings {
                if let Some((producer, output)) = b.port() {
                    edges.insert(Edge {
                        producer: producer.into(),
                        output: output.into(),
                        consumer: node.id.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        let ids: Vec<String> = nodes.keys().cloned().collect();
        let deps: Vec<(String, String)> =
            nodes.values().flat_map(|n| n.dependencies().into_iter().map(move |(p, _)| (p, n.id.clone()))).collect();
        let layers = layers_of(&ids, &deps).map_err(PlanError::Cycle)?;
        for (k, layer) in layers.iter().enumerate() {
            for id in layer {
                nodes.get_mut(id).expect("layered node exists").layer = k;
            }
        }
        let output_types = wf.outputs.iter().map(|o| (o.id.clone(), o.data_type)).collect();
        Ok(DataflowGraph { nodes, edges, workflow_outputs: outputs, output_types })
    }

    fn value_of(
        &self,
        json: &Json,
        ty: Option<DataType>,
        base: Option<&Path>,
        location: &str,
    ) -> Result<Value, PlanError> {
        let base = base.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let result = match ty {
            Some(ty) => Value::from_json(json, &ty, &base, ExecMode::Sequential).map_err(|e| e.to_string()),
            None => infer_value(json, &base),
        };
        match result {
            Ok(v) => Ok(v),
            Err(_) if self.lenient => Ok(Value::Null),
            Err(message) => Err(PlanError::InvalidDefault { location: location.to_string(), message }),
        }
    }

    /// Inlines `doc`'s steps into `nodes`; returns its output bindings.
    fn inline(
        &self,
        doc: &Document,
        scope: &Scope<'_>,
        nodes: &mut BTreeMap<String, TaskNode>,
    ) -> Result<BTreeMap<String, Binding>, PlanError> {
        let wf = doc.as_workflow().expect("inline is only called on workflows");
        let requirements = merge_clauses([&scope.requirements[..], &wf.requirements[..]]);
        let hints = merge_clauses([&scope.hints[..], &wf.hints[..]]);
        let step_ids: Vec<String> = wf.steps.iter().map(|s| s.id.clone()).collect();
        let order = layers_of(&step_ids, &crate::validator::step_edges(wf)).map_err(PlanError::Cycle)?;
        let mut step_outputs: BTreeMap<(String, String), Binding> = BTreeMap::new();
        for step_id in order.iter().flatten() {
            let step = wf.step(step_id).expect("layered step exists");
            let path = format!("{}{}", scope.prefix, step.id);
            let run = step.run.document().ok_or_else(|| PlanError::UnresolvedRun(path.clone()))?;
            let mut bindings = BTreeMap::new();
            for (id, input) in &step.in_map {
                let location = format!("{path}/in/{id}");
                let mut binding = match &input.source {
                    None => Binding::literal(Value::Null),
                    Some(SourceRef::Input(x)) => scope.inputs.get(x).cloned().ok_or_else(|| {
                        PlanError::UnresolvableSource { location: location.clone(), reference: x.clone() }
                    })?,
                    Some(src @ SourceRef::StepOutput { step: s, output: o }) => {
                        step_outputs.get(&(s.clone(), o.clone())).cloned().ok_or_else(|| {
                            PlanError::UnresolvableSource { location: location.clone(), reference: src.to_string() }
                        })?
                    }
                };
                if let Some(default) = &input.default {
                    let declared = run.input(id).map(|p| {
                        if step.scatter.contains(id) {
                            p.data_type.array_of().unwrap_or(p.data_type)
                        } else {
                            p.data_type
                        }
                    });
                    binding.fallbacks.push(self.value_of(default, declared, scope.base_dir, &location)?);
                }
                bindings.insert(id.clone(), binding);
            }
            for p in run.inputs() {
                let location = format!("{path}/run/inputs/{}", p.id);
                let default = match &p.default {
                    Some(d) => Some(self.value_of(
                        d,
                        Some(p.data_type),
                        run.base_dir.as_deref().or(scope.base_dir),
                        &location,
                    )?),
                    None => None,
                };
                let binding = bindings.entry(p.id.clone()).or_insert_with(|| Binding::literal(Value::Null));
                binding.fallbacks.extend(default);
                if let (Some(format), Source::Literal(v)) = (&p.format, &mut binding.source) {
                    *v = with_declared_format(std::mem::replace(v, Value::Null), Some(format));
                }
            }
            let step_requirements = merge_clauses([&requirements[..], &step.requirements[..]]);
            let step_hints = merge_clauses([&hints[..], &step.hints[..]]);
            match &run.body {
                Body::Tool(tool) => {
                    let reqs = merge_clauses([&step_requirements[..], &tool.requirements[..]]);
                    let mut node_hints = merge_clauses([&step_hints[..], &tool.hints[..]]);
                    node_hints.retain(|h| !reqs.iter().any(|r| r.kind() == h.kind()));
                    for out in &step.out {
                        step_outputs.insert(
                            (step.id.clone(), out.clone()),
                            Binding {
                                source: Source::Port { node: path.clone(), output: out.clone() },
                                fallbacks: Vec::new(),
                            },
                        );
                    }
                    nodes.insert(
                        path.clone(),
                        TaskNode {
                            id: path,
                            tool: run.clone(),
                            requirements: reqs,
                            hints: node_hints,
                            bindings,
                            scatter: step.scatter.clone(),
                            guard: step.when.clone(),
                            outer_guards: scope.guards.clone(),
                            outputs: step.out.clone(),
                            layer: 0,
                        },
                    );
                }
                Body::Workflow(_) => {
                    if !step.scatter.is_empty() {
                        return Err(PlanError::ScatterSubworkflow(path));
                    }
                    let mut guards = scope.guards.clone();
                    if let Some(when) = &step.when {
                        guards.push(Guard { origin: path.clone(), expr: when.clone(), bindings: bindings.clone() });
                    }
                    let child = Scope {
                        prefix: format!("{path}/"),
                        inputs: run.inputs().iter().map(|p| (p.id.clone(), bindings[&p.id].clone())).collect(),
                        requirements: step_requirements,
                        hints: step_hints,
                        guards,
                        base_dir: run.base_dir.as_deref().or(scope.base_dir),
                    };
                    let outs = self.inline(run, &child, nodes)?;
                    for out in &step.out {
                        let b = outs.get(out).cloned().ok_or_else(|| PlanError::UnresolvableSource {
                            location: path.clone(),
                            reference: out.clone(),
                        })?;
                        step_outputs.insert((step.id.clone(), out.clone()), b);
                    }
                }
            }
        }
        let mut outputs = BTreeMap::new();
        for out in &wf.outputs {
            let OutputSource::Workflow(src) = &out.source else { continue };
            let location = format!("{}outputs/{}", scope.prefix, out.id);
            let b = match SourceRef::parse(src) {
                SourceRef::Input(x) => scope.inputs.get(&x).cloned(),
                SourceRef::StepOutput { step, output } => step_outputs.get(&(step, output)).cloned(),
            }
            .ok_or_else(|| PlanError::UnresolvableSource { location, reference: src.clone() })?;
            outputs.insert(out.id.clone(), b);
        }
        Ok(outputs)
    }
}

/// Converts an untyped literal (e.g. a guard-only step input default).
fn infer_value(json: &Json, base: &Path) -> Result<Value, String> {
    Ok(match json {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64().unwrap_or_default()),
        },
        Json::String(s) => Value::String(s.clone()),
        Json::Array(items) => Value::Array(items.iter().map(|i| infer_value(i, base)).collect::<Result<_, _>>()?),
        Json::Object(m) => match m.get("class").and_then(Json::as_str) {
            Some(class @ ("File" | "Directory")) => {
                let ty: DataType = class.parse().expect("base type");
                Value::from_json(json, &ty, base, ExecMode::Sequential).map_err(|e| e.to_string())?
            }
            _ => return Err("records are not supported".into()),
        },
    })
}

/// Dot-product expansion of scattered inputs into per-instance input maps.
pub fn expand_scatter(
    task: &str,
    scatter: &[String],
    bound: &BTreeMap<String, Value>,
) -> Result<Vec<BTreeMap<String, Value>>, PlanError> {
    let mut columns = Vec::with_capacity(scatter.len());
    for id in scatter {
        match bound.get(id) {
            Some(Value::Array(items)) => columns.push((id, items)),
            _ => return Err(PlanError::ScatterNotArray { task: task.into(), input: id.clone() }),
        }
    }
    let lengths: Vec<usize> = columns.iter().map(|(_, c)| c.len()).collect();
    if lengths.windows(2).any(|w| w[0] != w[1]) {
        return Err(PlanError::ScatterLengthMismatch { task: task.into(), lengths });
    }
    let width = lengths.first().copied().unwrap_or(0);
    Ok((0..width)
        .map(|i| {
            let mut inputs = bound.clone();
            for (id, items) in &columns {
                inputs.insert((*id).clone(), items[i].clone());
            }
            inputs
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardDecision {
    Proceed,
    Skip,
}

/// Evaluates a `when` expression. Non-boolean results are type errors.
pub fn apply_guard(expr: &Expression, ctx: &EvalContext) -> Result<GuardDecision, ExprError> {
    match expr.eval(ctx)? {
        Value::Bool(true) => Ok(GuardDecision::Proceed),
        Value::Bool(false) => Ok(GuardDecision::Skip),
        other => Err(ExprError::Type(format!("`when` must yield a boolean, got {}", other.type_name()))),
    }
}

/// Resource minima for one task, after expression evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Resources {
    pub cores: u64,
    pub ram_mib: u64,
    pub disk_mib: u64,
    pub wall_time_secs: Option<u64>,
    /// True when the figures come from a requirement rather than a hint.
    pub required: bool,
}

impl Default for Resources {
    fn default() -> Self {
        Resources { cores: 1, ram_mib: 256, disk_mib: 0, wall_time_secs: None, required: false }
    }
}

/// Resolves the effective resource clause of `node` for the given inputs.
pub fn resolve_resources(node: &TaskNode, inputs: &BTreeMap<String, Value>) -> Result<Resources, ExprError> {
    let mut r = Resources::default();
    let Some((Clause::Resource(spec), required)) = node.clause(&ClauseKind::Resource) else {
        return Ok(r);
    };
    r.required = required;
    let ctx = EvalContext::new(inputs.clone(), RuntimeContext::default());
    let eval = |q: &Option<Quantity>| -> Result<Option<u64>, ExprError> {
        match q {
            None => Ok(None),
            Some(Quantity::Fixed(n)) => Ok(Some(*n)),
            Some(Quantity::Expr(t)) => match t.eval(&ctx)? {
                Value::Int(i) if i >= 0 => Ok(Some(i as u64)),
                Value::Float(f) if f >= 0.0 => Ok(Some(f.ceil() as u64)),
                other => Err(ExprError::Type(format!("resource quantity must be a nonnegative number, got {other}"))),
            },
        }
    };
    if let Some(c) = eval(&spec.cores_min)? {
        r.cores = c;
    }
    if let Some(m) = eval(&spec.ram_min)? {
        r.ram_mib = m;
    }
    if let Some(d) = eval(&spec.disk_min)? {
        r.disk_mib = d;
    }
    r.wall_time_secs = eval(&spec.wall_time_max)?;
    Ok(r)
}

/// Copies `format` and `streamable` from an output declaration onto a
/// produced file value.
pub(crate) fn annotate_output(value: Value, param: &OutputParameter) -> Value {
    match value {
        Value::File(f) => {
            Value::File(FileValue { format: param.format.clone().or(f.format), streamable: param.streamable, ..f })
        }
        Value::Array(items) => Value::Array(items.into_iter().map(|v| annotate_output(v, param)).collect()),
        other => other,
    }
}
