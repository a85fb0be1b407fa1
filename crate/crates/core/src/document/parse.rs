use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde_json::{Map, Value as Json};

use super::*;
use crate::expression::{parse_expr, Template};

type Result<T> = std::result::Result<T, DocumentError>;

fn schema(location: &str, message: impl Into<String>) -> DocumentError {
    DocumentError::Schema { location: display_loc(location), message: message.into() }
}

fn display_loc(location: &str) -> String {
    if location.is_empty() {
        "/".to_string()
    } else {
        location.to_string()
    }
}

fn join(loc: &str, key: &str) -> String {
    if loc.is_empty() {
        key.to_string()
    } else {
        format!("{loc}/{key}")
    }
}

/// `[A-Za-z_][A-Za-z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_id(id: &str, loc: &str) -> Result<()> {
    if is_identifier(id) {
        Ok(())
    } else {
        Err(schema(loc, format!("invalid identifier {id:?}")))
    }
}

/// Cursor over a JSON object that remembers which keys were consumed.
struct Obj<'a> {
    map: &'a Map<String, Json>,
    loc: String,
    used: BTreeSet<&'a str>,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Json, loc: &str) -> Result<Obj<'a>> {
        match value {
            Json::Object(map) => Ok(Obj { map, loc: loc.to_string(), used: BTreeSet::new() }),
            _ => Err(schema(loc, "expected a mapping")),
        }
    }

    fn take(&mut self, key: &str) -> Option<&'a Json> {
        let (k, v) = self.map.get_key_value(key)?;
        self.used.insert(k.as_str());
        if v.is_null() {
            None
        } else {
            Some(v)
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Json::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(schema(&join(&self.loc, key), "expected a string")),
        }
    }

    /// A version tag; numbers (`1.0` unquoted in YAML) come back as text so
    /// they can be reported as malformed.
    fn version_text(&mut self, key: &str) -> Option<String> {
        self.take(key).map(|v| match v {
            Json::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    /// `doc` may be a string or a list of lines.
    fn text(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Json::String(s)) => Ok(Some(s.clone())),
            Some(Json::Array(items)) => {
                let lines: Option<Vec<&str>> = items.iter().map(|v| v.as_str()).collect();
                lines
                    .map(|l| Some(l.join("\n")))
                    .ok_or_else(|| schema(&join(&self.loc, key), "expected a string or list of strings"))
            }
            Some(_) => Err(schema(&join(&self.loc, key), "expected a string")),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Json::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(schema(&join(&self.loc, key), "expected a boolean")),
        }
    }

    fn int(&mut self, key: &str) -> Result<Option<i64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Json::Number(n)) if n.is_i64() => Ok(n.as_i64()),
            Some(_) => Err(schema(&join(&self.loc, key), "expected an integer")),
        }
    }

    fn template(&mut self, key: &str) -> Result<Option<Template>> {
        let loc = join(&self.loc, key);
        self.string(key)?.map(|s| template(&s, &loc)).transpose()
    }

    /// Rejects unconsumed keys unless namespaced. Namespaced leftovers are
    /// handed to `sink` when given.
    fn finish(self, mut sink: Option<&mut BTreeMap<String, Json>>) -> Result<()> {
        for (k, v) in self.map {
            if self.used.contains(k.as_str()) {
                continue;
            }
            if is_namespaced(k) {
                if let Some(sink) = sink.as_deref_mut() {
                    sink.insert(k.clone(), v.clone());
                }
                continue;
            }
            return Err(schema(&join(&self.loc, k), format!("unknown key `{k}`")));
        }
        Ok(())
    }
}

fn is_namespaced(key: &str) -> bool {
    matches!(key.split_once(':'), Some((prefix, name)) if !prefix.is_empty() && !name.is_empty())
}

fn template(s: &str, loc: &str) -> Result<Template> {
    Template::parse(s).map_err(|e| schema(loc, format!("invalid expression: {e}")))
}

fn strip_hash(s: &str) -> &str {
    s.strip_prefix('#').unwrap_or(s)
}

/// Parses YAML or JSON document text. Relative references resolve against
/// `base_dir`.
pub fn parse_document(text: &str, base_dir: Option<&Path>) -> Result<Document> {
    let json = parse_text(text)?;
    parse_document_with_version(&json, base_dir, None)
}

pub(crate) fn parse_text(text: &str) -> Result<Json> {
    if let Ok(v) = serde_json::from_str::<Json>(text) {
        return Ok(v);
    }
    serde_yaml::from_str::<Json>(text).map_err(|e| DocumentError::Syntax(e.to_string()))
}

/// Parses an already-decoded document tree. `inherited` supplies the version
/// for embedded documents that omit `cwlVersion`.
pub fn parse_document_with_version(
    json: &Json,
    base_dir: Option<&Path>,
    inherited: Option<Version>,
) -> Result<Document> {
    parse_doc(json, base_dir, inherited, "")
}

fn parse_doc(json: &Json, base_dir: Option<&Path>, inherited: Option<Version>, loc: &str) -> Result<Document> {
    let mut top = Obj::new(json, loc)?;
    let version = match top.version_text("cwlVersion") {
        Some(v) => v.parse::<Version>().map_err(|e| schema(&join(loc, "cwlVersion"), e.to_string()))?,
        None => inherited.ok_or_else(|| schema(loc, "missing cwlVersion"))?,
    };
    let class = top.string("class")?.ok_or_else(|| schema(loc, "missing class"))?;
    let id = top.string("id")?.map(|s| strip_hash(&s).to_string());
    let metadata = Metadata { label: top.string("label")?, doc: top.text("doc")?, author: top.string("author")? };
    let mut namespaces = BTreeMap::new();
    if let Some(ns) = top.take("$namespaces") {
        let Json::Object(m) = ns else {
            return Err(schema(&join(loc, "$namespaces"), "expected a mapping"));
        };
        for (k, v) in m {
            let iri = v.as_str().ok_or_else(|| schema(&join(loc, "$namespaces"), "expected string values"))?;
            namespaces.insert(k.clone(), iri.to_string());
        }
    }
    let requirements = parse_clauses(top.take("requirements"), version, &join(loc, "requirements"))?;
    let hints = parse_clauses(top.take("hints"), version, &join(loc, "hints"))?;
    let body = match class.as_str() {
        "CommandLineTool" => {
            let inputs = parse_inputs(top.take("inputs"), true, &join(loc, "inputs"))?;
            let outputs = parse_tool_outputs(top.take("outputs"), &join(loc, "outputs"))?;
            let base_command = match top.take("baseCommand") {
                None => Vec::new(),
                Some(Json::String(s)) => vec![s.clone()],
                Some(v) => string_list(v, &join(loc, "baseCommand"))?,
            };
            let arguments = parse_arguments(top.take("arguments"), &join(loc, "arguments"))?;
            let success_codes = match top.take("successCodes") {
                None => BTreeSet::from([0]),
                Some(v) => int_set(v, &join(loc, "successCodes"))?,
            };
            let temporary_fail_codes = match top.take("temporaryFailCodes") {
                None => BTreeSet::new(),
                Some(v) => int_set(v, &join(loc, "temporaryFailCodes"))?,
            };
            Body::Tool(Box::new(ToolDescription {
                base_command,
                arguments,
                inputs,
                outputs,
                requirements,
                hints,
                stdin: top.template("stdin")?,
                stdout: top.template("stdout")?,
                stderr: top.template("stderr")?,
                success_codes,
                temporary_fail_codes,
            }))
        }
        "Workflow" => {
            let inputs = parse_inputs(top.take("inputs"), false, &join(loc, "inputs"))?;
            let outputs = parse_workflow_outputs(top.take("outputs"), &join(loc, "outputs"))?;
            let steps = parse_steps(top.take("steps"), version, base_dir, &join(loc, "steps"))?;
            Body::Workflow(WorkflowDescription { inputs, outputs, steps, requirements, hints })
        }
        other => return Err(schema(&join(loc, "class"), format!("unknown class `{other}`"))),
    };
    let mut extensions = BTreeMap::new();
    top.finish(Some(&mut extensions))?;
    Ok(Document { version, id, body, extensions, namespaces, metadata, base_dir: base_dir.map(Path::to_path_buf) })
}

fn string_list(v: &Json, loc: &str) -> Result<Vec<String>> {
    match v {
        Json::Array(items) => items
            .iter()
            .map(|i| i.as_str().map(str::to_string).ok_or_else(|| schema(loc, "expected a list of strings")))
            .collect(),
        _ => Err(schema(loc, "expected a list of strings")),
    }
}

fn int_set(v: &Json, loc: &str) -> Result<BTreeSet<i32>> {
    let Json::Array(items) = v else {
        return Err(schema(loc, "expected a list of integers"));
    };
    items
        .iter()
        .map(|i| {
            i.as_i64().and_then(|n| i32::try_from(n).ok()).ok_or_else(|| schema(loc, "expected a list of integers"))
        })
        .collect()
}

/// Normalizes list-form and map-form parameter collections into
/// `(id, fields)` pairs. Map-form values may be a bare type.
fn entries(v: Option<&Json>, loc: &str, shorthand_key: &str) -> Result<Vec<(String, Map<String, Json>)>> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    match v {
        Json::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let Json::Object(m) = item else {
                    return Err(schema(&join(loc, &i.to_string()), "expected a mapping with an `id`"));
                };
                let id = m
                    .get("id")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| schema(&join(loc, &i.to_string()), "missing `id`"))?;
                let id = strip_hash(id).to_string();
                let mut fields = m.clone();
                fields.remove("id");
                out.push((id, fields));
            }
        }
        Json::Object(m) => {
            for (id, value) in m {
                let fields = match value {
                    Json::Object(f) => {
                        let mut f = f.clone();
                        if let Some(inner) = f.remove("id") {
                            if inner.as_str().map(strip_hash) != Some(id.as_str()) {
                                return Err(schema(&join(loc, id), "`id` disagrees with the mapping key"));
                            }
                        }
                        f
                    }
                    other => {
                        let mut f = Map::new();
                        f.insert(shorthand_key.to_string(), other.clone());
                        f
                    }
                };
                out.push((strip_hash(id).to_string(), fields));
            }
        }
        _ => return Err(schema(loc, "expected a list or a mapping")),
    }
    for (id, _) in &out {
        check_id(id, &join(loc, id))?;
    }
    Ok(out)
}

fn parse_type(v: Option<&Json>, loc: &str) -> Result<DataType> {
    let v = v.ok_or_else(|| schema(loc, "missing `type`"))?;
    let type_err = |text: String, message: &str| DocumentError::TypeSyntax {
        location: loc.to_string(),
        text,
        message: message.to_string(),
    };
    match v {
        Json::String(s) => s.parse::<DataType>().map_err(|m| type_err(s.clone(), &m)),
        Json::Array(items) => {
            // ["null", T] is the long form of T?.
            let names: Option<Vec<&str>> = items.iter().map(|i| i.as_str()).collect();
            let rendered = serde_json::to_string(v).unwrap_or_default();
            let names = names.ok_or_else(|| type_err(rendered.clone(), "unions must list type names"))?;
            let non_null: Vec<&str> = names.iter().copied().filter(|n| *n != "null").collect();
            match (names.contains(&"null"), non_null.as_slice()) {
                (true, [one]) => {
                    let t = one.parse::<DataType>().map_err(|m| type_err(rendered.clone(), &m))?;
                    if t.optional {
                        return Err(type_err(rendered, "optional member inside a union"));
                    }
                    Ok(t.optional())
                }
                _ => Err(type_err(rendered, "only [\"null\", T] unions are supported")),
            }
        }
        Json::Object(m) => {
            let rendered = serde_json::to_string(v).unwrap_or_default();
            match (m.get("type").and_then(|t| t.as_str()), m.get("items").and_then(|t| t.as_str()), m.len()) {
                (Some("array"), Some(items), 2) => {
                    let item = items.parse::<DataType>().map_err(|msg| type_err(rendered.clone(), &msg))?;
                    if item.array || item.optional {
                        return Err(type_err(rendered, "array items must be a plain base type"));
                    }
                    Ok(item.array_of().expect("item is not an array"))
                }
                _ => Err(type_err(rendered, "record, enum and map types are not supported")),
            }
        }
        _ => Err(type_err(v.to_string(), "expected a type string")),
    }
}

fn parse_inputs(v: Option<&Json>, is_tool: bool, loc: &str) -> Result<Vec<InputParameter>> {
    let mut out = Vec::new();
    for (id, fields) in entries(v, loc, "type")? {
        let ploc = join(loc, &id);
        let fields = Json::Object(fields);
        let mut o = Obj::new(&fields, &ploc)?;
        let data_type = parse_type(o.take("type"), &join(&ploc, "type"))?;
        let binding = match o.take("inputBinding") {
            None => None,
            Some(b) => {
                if !is_tool {
                    return Err(schema(&join(&ploc, "inputBinding"), "inputBinding is only valid on tool inputs"));
                }
                let mut bo = Obj::new(b, &join(&ploc, "inputBinding"))?;
                let binding = CommandBinding { position: bo.int("position")?, prefix: bo.string("prefix")? };
                bo.finish(None)?;
                Some(binding)
            }
        };
        let streamable = o.boolean("streamable")?.unwrap_or(false);
        if streamable && (data_type.base != BaseType::File || data_type.array) {
            return Err(schema(&join(&ploc, "streamable"), "streamable is only valid on File inputs"));
        }
        let param = InputParameter {
            id,
            data_type,
            binding,
            default: o.take("default").cloned(),
            format: o.string("format")?,
            streamable,
            label: o.string("label")?,
            doc: o.text("doc")?,
        };
        o.finish(None)?;
        out.push(param);
    }
    Ok(out)
}

fn parse_tool_outputs(v: Option<&Json>, loc: &str) -> Result<Vec<OutputParameter>> {
    let mut out = Vec::new();
    for (id, fields) in entries(v, loc, "type")? {
        let ploc = join(loc, &id);
        let fields = Json::Object(fields);
        let mut o = Obj::new(&fields, &ploc)?;
        let type_json = o.take("type");
        let capture = match type_json.and_then(|t| t.as_str()) {
            Some("stdout") => Some(OutputSource::Stdout),
            Some("stderr") => Some(OutputSource::Stderr),
            _ => None,
        };
        let (data_type, source) = match capture {
            Some(src) => {
                if o.take("outputBinding").is_some() {
                    return Err(schema(&ploc, "stdout/stderr outputs take no outputBinding"));
                }
                (DataType::new(BaseType::File), src)
            }
            None => {
                let data_type = parse_type(type_json, &join(&ploc, "type"))?;
                let binding = o
                    .take("outputBinding")
                    .ok_or_else(|| schema(&ploc, "tool outputs need outputBinding.glob or a stdout/stderr type"))?;
                let mut bo = Obj::new(binding, &join(&ploc, "outputBinding"))?;
                let glob =
                    bo.template("glob")?.ok_or_else(|| schema(&join(&ploc, "outputBinding"), "missing `glob`"))?;
                bo.finish(None)?;
                (data_type, OutputSource::Glob(glob))
            }
        };
        let streamable = o.boolean("streamable")?.unwrap_or(false);
        if streamable && data_type.base != BaseType::File {
            return Err(schema(&join(&ploc, "streamable"), "streamable is only valid on File outputs"));
        }
        let param = OutputParameter {
            id,
            data_type,
            source,
            format: o.string("format")?,
            streamable,
            label: o.string("label")?,
            doc: o.text("doc")?,
        };
        o.finish(None)?;
        out.push(param);
    }
    Ok(out)
}

fn parse_workflow_outputs(v: Option<&Json>, loc: &str) -> Result<Vec<OutputParameter>> {
    let mut out = Vec::new();
    for (id, fields) in entries(v, loc, "type")? {
        let ploc = join(loc, &id);
        let fields = Json::Object(fields);
        let mut o = Obj::new(&fields, &ploc)?;
        let data_type = parse_type(o.take("type"), &join(&ploc, "type"))?;
        let source = match o.take("outputSource") {
            Some(Json::String(s)) => strip_hash(s).to_string(),
            Some(Json::Array(items)) if items.len() == 1 && items[0].is_string() => {
                strip_hash(items[0].as_str().unwrap_or_default()).to_string()
            }
            Some(_) => return Err(schema(&join(&ploc, "outputSource"), "expected a single source reference")),
            None => return Err(schema(&ploc, "workflow outputs need an outputSource")),
        };
        let param = OutputParameter {
            id,
            data_type,
            source: OutputSource::Workflow(source),
            format: o.string("format")?,
            streamable: false,
            label: o.string("label")?,
            doc: o.text("doc")?,
        };
        o.finish(None)?;
        out.push(param);
    }
    Ok(out)
}

fn parse_arguments(v: Option<&Json>, loc: &str) -> Result<Vec<Argument>> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let Json::Array(items) = v else {
        return Err(schema(loc, "expected a list"));
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let aloc = join(loc, &i.to_string());
            match item {
                Json::String(s) => Ok(Argument { position: None, prefix: None, value: template(s, &aloc)? }),
                Json::Object(_) => {
                    let mut o = Obj::new(item, &aloc)?;
                    let value = o.template("valueFrom")?.ok_or_else(|| schema(&aloc, "missing `valueFrom`"))?;
                    let arg = Argument { position: o.int("position")?, prefix: o.string("prefix")?, value };
                    o.finish(None)?;
                    Ok(arg)
                }
                _ => Err(schema(&aloc, "expected a string or a mapping")),
            }
        })
        .collect()
}

fn quantity(o: &mut Obj<'_>, key: &str) -> Result<Option<Quantity>> {
    let loc = join(&o.loc, key);
    match o.take(key) {
        None => Ok(None),
        Some(Json::Number(n)) => {
            let fixed = n
                .as_u64()
                .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0).map(|f| f as u64))
                .ok_or_else(|| schema(&loc, "expected a nonnegative integer"))?;
            Ok(Some(Quantity::Fixed(fixed)))
        }
        Some(Json::String(s)) => {
            let t = template(s, &loc)?;
            if t.is_literal() {
                return Err(schema(&loc, "expected a nonnegative integer or an expression"));
            }
            Ok(Some(Quantity::Expr(t)))
        }
        Some(_) => Err(schema(&loc, "expected a nonnegative integer or an expression")),
    }
}

fn parse_clauses(v: Option<&Json>, version: Version, loc: &str) -> Result<Vec<Clause>> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let mut raw: Vec<(String, Map<String, Json>, String)> = Vec::new();
    match v {
        Json::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                let cloc = join(loc, &i.to_string());
                let Json::Object(m) = item else {
                    return Err(schema(&cloc, "expected a mapping with a `class`"));
                };
                let class = m.get("class").and_then(|c| c.as_str()).ok_or_else(|| schema(&cloc, "missing `class`"))?;
                let mut payload = m.clone();
                payload.remove("class");
                raw.push((class.to_string(), payload, cloc));
            }
        }
        Json::Object(m) => {
            for (class, payload) in m {
                let cloc = join(loc, class);
                let payload = match payload {
                    Json::Null => Map::new(),
                    Json::Object(p) => {
                        let mut p = p.clone();
                        p.remove("class");
                        p
                    }
                    _ => return Err(schema(&cloc, "expected a mapping")),
                };
                raw.push((class.clone(), payload, cloc));
            }
        }
        _ => return Err(schema(loc, "expected a list or a mapping")),
    }
    raw.into_iter().map(|(class, payload, cloc)| parse_clause(&class, payload, version, &cloc)).collect()
}

fn parse_clause(class: &str, payload: Map<String, Json>, version: Version, loc: &str) -> Result<Clause> {
    let json = Json::Object(payload);
    let mut o = Obj::new(&json, loc)?;
    let clause = match class {
        "DockerRequirement" => {
            let image = o.string("dockerPull")?.ok_or_else(|| schema(loc, "missing `dockerPull`"))?;
            Clause::Container { image }
        }
        "ResourceRequirement" => Clause::Resource(ResourceSpec {
            cores_min: quantity(&mut o, "coresMin")?,
            ram_min: quantity(&mut o, "ramMin")?,
            disk_min: quantity(&mut o, "diskMin")?,
            wall_time_max: quantity(&mut o, "wallTimeMax")?,
        }),
        "EnvVarRequirement" => {
            let mut vars = BTreeMap::new();
            let eloc = join(loc, "envDef");
            match o.take("envDef") {
                None => {}
                Some(Json::Object(m)) => {
                    for (k, v) in m {
                        let s = v.as_str().ok_or_else(|| schema(&eloc, "expected string values"))?;
                        vars.insert(k.clone(), template(s, &join(&eloc, k))?);
                    }
                }
                Some(Json::Array(items)) => {
                    for item in items {
                        let mut eo = Obj::new(item, &eloc)?;
                        let name = eo.string("envName")?.ok_or_else(|| schema(&eloc, "missing `envName`"))?;
                        let value = eo.template("envValue")?.ok_or_else(|| schema(&eloc, "missing `envValue`"))?;
                        eo.finish(None)?;
                        vars.insert(name, value);
                    }
                }
                Some(_) => return Err(schema(&eloc, "expected a mapping or a list")),
            }
            Clause::EnvVars(vars)
        }
        "InitialWorkDirRequirement" => {
            let lloc = join(loc, "listing");
            let mut listing = Vec::new();
            match o.take("listing") {
                None => {}
                Some(Json::Array(items)) => {
                    for (i, item) in items.iter().enumerate() {
                        let iloc = join(&lloc, &i.to_string());
                        match item {
                            Json::String(s) => {
                                listing.push(WorkDirEntry { entryname: None, entry: template(s, &iloc)? })
                            }
                            Json::Object(_) => {
                                let mut io = Obj::new(item, &iloc)?;
                                let entry = io.template("entry")?.ok_or_else(|| schema(&iloc, "missing `entry`"))?;
                                let entryname = io.template("entryname")?;
                                io.finish(None)?;
                                listing.push(WorkDirEntry { entryname, entry });
                            }
                            _ => return Err(schema(&iloc, "expected a string or a mapping")),
                        }
                    }
                }
                Some(_) => return Err(schema(&lloc, "expected a list")),
            }
            Clause::InitialWorkDir(listing)
        }
        "WorkReuse" if version.supports_work_reuse() => {
            Clause::WorkReuse { enable: o.boolean("enableReuse")?.unwrap_or(true) }
        }
        other => {
            // Unknown clause classes are carried verbatim; whether they are
            // acceptable is the validator's call (hints vs requirements).
            return Ok(Clause::Extension {
                class: other.to_string(),
                payload: json.as_object().cloned().unwrap_or_default(),
            });
        }
    };
    o.finish(None)?;
    Ok(clause)
}

fn parse_steps(v: Option<&Json>, version: Version, base_dir: Option<&Path>, loc: &str) -> Result<Vec<Step>> {
    let mut out = Vec::new();
    for (id, fields) in entries(v, loc, "run")? {
        let sloc = join(loc, &id);
        let fields = Json::Object(fields);
        let mut o = Obj::new(&fields, &sloc)?;
        let run = match o.take("run") {
            Some(Json::String(path)) => RunRef::Path(path.clone()),
            Some(inline @ Json::Object(_)) => {
                RunRef::Document(Arc::new(parse_doc(inline, base_dir, Some(version), &join(&sloc, "run"))?))
            }
            Some(_) => return Err(schema(&join(&sloc, "run"), "expected a path or an inline document")),
            None => return Err(schema(&sloc, "missing `run`")),
        };
        let in_map = parse_step_inputs(o.take("in"), &join(&sloc, "in"))?;
        let out_ids = match o.take("out") {
            None => Vec::new(),
            Some(Json::Array(items)) => items
                .iter()
                .map(|i| match i {
                    Json::String(s) => Ok(strip_hash(s).to_string()),
                    Json::Object(m) => m
                        .get("id")
                        .and_then(|v| v.as_str())
                        .map(|s| strip_hash(s).to_string())
                        .ok_or_else(|| schema(&join(&sloc, "out"), "missing `id`")),
                    _ => Err(schema(&join(&sloc, "out"), "expected output ids")),
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(schema(&join(&sloc, "out"), "expected a list")),
        };
        for oid in &out_ids {
            check_id(oid, &join(&sloc, "out"))?;
        }
        let scatter = match o.take("scatter") {
            None => Vec::new(),
            Some(Json::String(s)) => vec![strip_hash(s).to_string()],
            Some(v) => string_list(v, &join(&sloc, "scatter"))?.iter().map(|s| strip_hash(s).to_string()).collect(),
        };
        match o.string("scatterMethod")?.as_deref() {
            None | Some("dotproduct") => {}
            Some(other) => {
                return Err(schema(
                    &join(&sloc, "scatterMethod"),
                    format!("scatter method `{other}` is not supported; only dotproduct"),
                ))
            }
        }
        let when = match o.string("when")? {
            None => None,
            Some(src) => {
                if !version.supports_when() {
                    return Err(schema(&join(&sloc, "when"), format!("`when` requires v1.2; document is {version}")));
                }
                Some(parse_expr(&src).map_err(|e| schema(&join(&sloc, "when"), format!("invalid expression: {e}")))?)
            }
        };
        let step = Step {
            id,
            run,
            in_map,
            out: out_ids,
            scatter,
            when,
            requirements: parse_clauses(o.take("requirements"), version, &join(&sloc, "requirements"))?,
            hints: parse_clauses(o.take("hints"), version, &join(&sloc, "hints"))?,
            label: o.string("label")?,
            doc: o.text("doc")?,
        };
        o.finish(None)?;
        out.push(step);
    }
    Ok(out)
}

fn parse_step_inputs(v: Option<&Json>, loc: &str) -> Result<BTreeMap<String, StepInput>> {
    let mut out = BTreeMap::new();
    for (id, fields) in entries(v, loc, "source")? {
        let iloc = join(loc, &id);
        let fields = Json::Object(fields);
        let mut o = Obj::new(&fields, &iloc)?;
        let source = match o.take("source") {
            None => None,
            Some(Json::String(s)) => Some(SourceRef::parse(s)),
            Some(Json::Array(items)) if items.len() == 1 && items[0].is_string() => {
                Some(SourceRef::parse(items[0].as_str().unwrap_or_default()))
            }
            Some(_) => return Err(schema(&join(&iloc, "source"), "expected a single source reference")),
        };
        let input = StepInput { source, default: o.take("default").cloned() };
        o.finish(None)?;
        if out.insert(id.clone(), input).is_some() {
            return Err(schema(&iloc, "duplicate step input"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GREP_TOOL: &str = r#"
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [grep, -c]
inputs:
  pattern:
    type: string
    inputBinding: {position: 1}
  file_to_search:
    type: File
    inputBinding: {position: 2}
outputs:
  count:
    type: stdout
stdout: count.txt
"#;

    #[test]
    fn empty_tool() {
        let doc = parse_document("cwlVersion: v1.0\nclass: CommandLineTool\ninputs: []\noutputs: []\n", None).unwrap();
        let tool = doc.as_tool().unwrap();
        assert!(tool.inputs.is_empty());
        assert!(tool.outputs.is_empty());
        assert_eq!(tool.success_codes, BTreeSet::from([0]));
    }

    #[test]
    fn map_form_inputs_normalize() {
        let doc = parse_document(GREP_TOOL, None).unwrap();
        let tool = doc.as_tool().unwrap();
        assert_eq!(tool.base_command, vec!["grep", "-c"]);
        let ids: Vec<_> = tool.inputs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["file_to_search", "pattern"]);
        assert_eq!(tool.inputs[1].binding.as_ref().unwrap().position, Some(1));
        assert_eq!(tool.outputs[0].source, OutputSource::Stdout);
        let short =
            parse_document("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: string}\noutputs: {}\n", None)
                .unwrap();
        assert_eq!(short.inputs()[0].data_type.to_string(), "string");
    }

    #[test]
    fn external_run_references_stay_unresolved() {
        let wf = r#"
cwlVersion: v1.2
class: Workflow
inputs:
  pattern: string
  file_to_search: File
outputs:
  count:
    type: File
    outputSource: wc/count
steps:
  grep:
    run: grep.cwl
    in: {pattern: pattern, file_to_search: file_to_search}
    out: [matches]
  wc:
    run: wc.cwl
    in: {file: grep/matches}
    out: [count]
"#;
        let doc = parse_document(wf, None).unwrap();
        let w = doc.as_workflow().unwrap();
        let runs: Vec<_> = w.steps.iter().map(|s| s.run.clone()).collect();
        assert_eq!(runs, vec![RunRef::Path("grep.cwl".into()), RunRef::Path("wc.cwl".into())]);
        assert!(!doc.is_resolved());
        assert_eq!(
            w.steps[1].in_map["file"].source,
            Some(SourceRef::StepOutput { step: "grep".into(), output: "matches".into() })
        );
    }

    #[test]
    fn schema_errors() {
        let cases = [
            ("class: CommandLineTool\n", "missing cwlVersion"),
            ("cwlVersion: v1.2\nclass: ExpressionTool\n", "unknown class"),
            ("cwlVersion: v1.2\nclass: CommandLineTool\nbogus: 1\n", "unknown key"),
            ("cwlVersion: v9.9\nclass: CommandLineTool\n", "unknown version"),
            ("cwlVersion: 1.0\nclass: CommandLineTool\n", "malformed version"),
            ("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: {inputBinding: {}}}\n", "missing `type`"),
            ("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {1x: string}\n", "invalid identifier"),
            ("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: {type: string, streamable: true}}\n", "streamable"),
            (
                "cwlVersion: v1.2\nclass: Workflow\ninputs: {x: {type: string, inputBinding: {position: 1}}}\n",
                "only valid on tool inputs",
            ),
        ];
        for (text, needle) in cases {
            match parse_document(text, None) {
                Err(DocumentError::Schema { message, .. }) => assert!(message.contains(needle), "{text}: {message}"),
                other => panic!("{text}: expected schema error, got {other:?}"),
            }
        }
    }

    #[test]
    fn namespaced_keys_become_extensions() {
        let doc = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\n$namespaces: {s: https://schema.org/}\ns:license: MIT\n",
            None,
        )
        .unwrap();
        assert_eq!(doc.extensions["s:license"], Json::String("MIT".into()));
        assert_eq!(doc.namespaces["s"], "https://schema.org/");
    }

    #[test]
    fn type_syntax_errors() {
        let err =
            parse_document("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: 'File[][]'}\n", None).unwrap_err();
        assert_eq!(err.code(), "TypeSyntaxError");
        let err =
            parse_document("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: [int, string]}\n", None).unwrap_err();
        assert_eq!(err.code(), "TypeSyntaxError");
        let ok =
            parse_document("cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: ['null', File]}\n", None).unwrap();
        assert_eq!(ok.inputs()[0].data_type.to_string(), "File?");
        let ok = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {x: {type: {type: array, items: string}}}\n",
            None,
        )
        .unwrap();
        assert_eq!(ok.inputs()[0].data_type.to_string(), "string[]");
    }

    #[test]
    fn malformed_text_is_a_syntax_error() {
        let err = parse_document("cwlVersion: [unclosed\n", None).unwrap_err();
        assert_eq!(err.code(), "SyntaxError");
    }

    #[test]
    fn when_is_gated_on_v1_2() {
        let wf = |v: &str| {
            format!(
                "cwlVersion: {v}\nclass: Workflow\ninputs: {{go: boolean}}\noutputs: {{}}\nsteps:\n  s:\n    run: t.cwl\n    when: $(inputs.go)\n    in: {{go: go}}\n    out: []\n"
            )
        };
        assert!(parse_document(&wf("v1.2"), None).is_ok());
        let err = parse_document(&wf("v1.0"), None).unwrap_err();
        assert!(matches!(err, DocumentError::Schema { ref message, .. } if message.contains("requires v1.2")), "{err}");
    }

    #[test]
    fn unknown_clause_classes_are_extensions() {
        let doc = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\nhints: {GPURequirement: {count: 1}}\nrequirements: [{class: 'acme:Fpga'}]\n",
            None,
        )
        .unwrap();
        assert_eq!(doc.hints()[0].kind(), ClauseKind::Extension("GPURequirement".into()));
        assert_eq!(doc.requirements()[0].kind(), ClauseKind::Extension("acme:Fpga".into()));
    }

    #[test]
    fn work_reuse_is_recognized_from_v1_1() {
        let text = |v: &str| {
            format!("cwlVersion: {v}\nclass: CommandLineTool\nhints: {{WorkReuse: {{enableReuse: false}}}}\n")
        };
        let d11 = parse_document(&text("v1.1"), None).unwrap();
        assert_eq!(d11.hints()[0], Clause::WorkReuse { enable: false });
        let d10 = parse_document(&text("v1.0"), None).unwrap();
        assert_eq!(d10.hints()[0].kind(), ClauseKind::Extension("WorkReuse".into()));
    }

    #[test]
    fn cross_product_scatter_is_rejected() {
        let text = "cwlVersion: v1.2\nclass: Workflow\ninputs: {a: 'string[]'}\noutputs: {}\nsteps:\n  s:\n    run: t.cwl\n    scatter: [a]\n    scatterMethod: flat_crossproduct\n    in: {a: a}\n    out: []\n";
        assert_eq!(parse_document(text, None).unwrap_err().code(), "SchemaError");
    }

    #[test]
    fn resource_quantities() {
        let doc = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\ninputs: {threads: int}\nhints:\n  ResourceRequirement: {coresMin: $(inputs.threads), ramMin: 512}\n",
            None,
        )
        .unwrap();
        let Clause::Resource(spec) = &doc.hints()[0] else { panic!() };
        assert_eq!(spec.ram_min, Some(Quantity::Fixed(512)));
        assert!(matches!(spec.cores_min, Some(Quantity::Expr(_))));
        let err = parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\nhints: {ResourceRequirement: {coresMin: -1}}\n",
            None,
        );
        assert!(err.is_err());
    }
}
