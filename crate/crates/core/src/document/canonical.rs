use serde_json::{json, Map, Value as Json};

use super::*;
use crate::digest;

/// Canonical JSON tree of a document. List forms throughout, defaults
/// elided, resolved `run` documents inlined.
pub fn canonical_json(doc: &Document) -> Json {
    let mut m = Map::new();
    m.insert("cwlVersion".into(), json!(doc.version.as_str()));
    m.insert("class".into(), json!(doc.class_name()));
    put_opt(&mut m, "id", &doc.id);
    put_opt(&mut m, "label", &doc.metadata.label);
    put_opt(&mut m, "doc", &doc.metadata.doc);
    put_opt(&mut m, "author", &doc.metadata.author);
    if !doc.namespaces.is_empty() {
        m.insert("$namespaces".into(), json!(doc.namespaces));
    }
    for (k, v) in &doc.extensions {
        m.insert(k.clone(), v.clone());
    }
    match &doc.body {
        Body::Tool(t) => tool_fields(t, &mut m),
        Body::Workflow(w) => {
            m.insert("inputs".into(), Json::Array(w.inputs.iter().map(input_json).collect()));
            m.insert("outputs".into(), Json::Array(w.outputs.iter().map(output_json).collect()));
            put_clauses(&mut m, "requirements", &w.requirements);
            put_clauses(&mut m, "hints", &w.hints);
            m.insert("steps".into(), Json::Array(w.steps.iter().map(step_json).collect()));
        }
    }
    Json::Object(m)
}

/// Compact canonical serialization (sorted keys, no whitespace).
pub fn canonical_text(doc: &Document) -> String {
    digest::canonical_json(&canonical_json(doc))
}

/// 64-hex SHA-256 of [`canonical_text`].
pub fn canonical_digest(doc: &Document) -> String {
    digest::sha256_hex(canonical_text(doc).as_bytes())
}

/// Digest of a tool's executable content. Identity and documentation
/// fields (`id`, `label`, `doc`) do not contribute, so the same tool
/// embedded in two workflows digests equally.
pub fn tool_digest(tool: &ToolDescription) -> String {
    let mut m = Map::new();
    tool_fields(tool, &mut m);
    strip_docs(&mut m);
    digest::json_digest(&Json::Object(m))
}

fn strip_docs(m: &mut Map<String, Json>) {
    for key in ["inputs", "outputs"] {
        if let Some(Json::Array(params)) = m.get_mut(key) {
            for p in params {
                if let Json::Object(p) = p {
                    p.remove("label");
                    p.remove("doc");
                }
            }
        }
    }
}

fn put_opt(m: &mut Map<String, Json>, key: &str, v: &Option<String>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

fn put_clauses(m: &mut Map<String, Json>, key: &str, clauses: &[Clause]) {
    if !clauses.is_empty() {
        m.insert(key.into(), Json::Array(clauses.iter().map(clause_json).collect()));
    }
}

fn tool_fields(t: &ToolDescription, m: &mut Map<String, Json>) {
    if !t.base_command.is_empty() {
        m.insert("baseCommand".into(), json!(t.base_command));
    }
    if !t.arguments.is_empty() {
        let args = t
            .arguments
            .iter()
            .map(|a| {
                let mut o = Map::new();
                if let Some(p) = a.position {
                    o.insert("position".into(), json!(p));
                }
                if let Some(p) = &a.prefix {
                    o.insert("prefix".into(), json!(p));
                }
                o.insert("valueFrom".into(), json!(a.value.source()));
                Json::Object(o)
            })
            .collect();
        m.insert("arguments".into(), Json::Array(args));
    }
    m.insert("inputs".into(), Json::Array(t.inputs.iter().map(input_json).collect()));
    m.insert("outputs".into(), Json::Array(t.outputs.iter().map(output_json).collect()));
    put_clauses(m, "requirements", &t.requirements);
    put_clauses(m, "hints", &t.hints);
    for (key, v) in [("stdin", &t.stdin), ("stdout", &t.stdout), ("stderr", &t.stderr)] {
        if let Some(v) = v {
            m.insert(key.into(), json!(v.source()));
        }
    }
    if t.success_codes != BTreeSet::from([0]) {
        m.insert("successCodes".into(), json!(t.success_codes));
    }
    if !t.temporary_fail_codes.is_empty() {
        m.insert("temporaryFailCodes".into(), json!(t.temporary_fail_codes));
    }
}

fn input_json(p: &InputParameter) -> Json {
    let mut o = Map::new();
    o.insert("id".into(), json!(p.id));
    o.insert("type".into(), json!(p.data_type.to_string()));
    if let Some(b) = &p.binding {
        let mut bo = Map::new();
        if let Some(pos) = b.position {
            bo.insert("position".into(), json!(pos));
        }
        if let Some(prefix) = &b.prefix {
            bo.insert("prefix".into(), json!(prefix));
        }
        o.insert("inputBinding".into(), Json::Object(bo));
    }
    if let Some(d) = &p.default {
        o.insert("default".into(), d.clone());
    }
    put_opt(&mut o, "format", &p.format);
    if p.streamable {
        o.insert("streamable".into(), json!(true));
    }
    put_opt(&mut o, "label", &p.label);
    put_opt(&mut o, "doc", &p.doc);
    Json::Object(o)
}

fn output_json(p: &OutputParameter) -> Json {
    let mut o = Map::new();
    o.insert("id".into(), json!(p.id));
    match &p.source {
        OutputSource::Stdout => {
            o.insert("type".into(), json!("stdout"));
        }
        OutputSource::Stderr => {
            o.insert("type".into(), json!("stderr"));
        }
        OutputSource::Glob(g) => {
            o.insert("type".into(), json!(p.data_type.to_string()));
            o.insert("outputBinding".into(), json!({ "glob": g.source() }));
        }
        OutputSource::Workflow(src) => {
            o.insert("type".into(), json!(p.data_type.to_string()));
            o.insert("outputSource".into(), json!(src));
        }
    }
    put_opt(&mut o, "format", &p.format);
    if p.streamable {
        o.insert("streamable".into(), json!(true));
    }
    put_opt(&mut o, "label", &p.label);
    put_opt(&mut o, "doc", &p.doc);
    Json::Object(o)
}

fn quantity_json(q: &Quantity) -> Json {
    match q {
        Quantity::Fixed(n) => json!(n),
        Quantity::Expr(t) => json!(t.source()),
    }
}

pub(crate) fn clause_json(c: &Clause) -> Json {
    let mut o = Map::new();
    o.insert("class".into(), json!(c.kind().to_string()));
    match c {
        Clause::Container { image } => {
            o.insert("dockerPull".into(), json!(image));
        }
        Clause::Resource(spec) => {
            for (key, q) in [
                ("coresMin", &spec.cores_min),
                ("ramMin", &spec.ram_min),
                ("diskMin", &spec.disk_min),
                ("wallTimeMax", &spec.wall_time_max),
            ] {
                if let Some(q) = q {
                    o.insert(key.into(), quantity_json(q));
                }
            }
        }
        Clause::EnvVars(vars) => {
            let defs: Map<String, Json> = vars.iter().map(|(k, v)| (k.clone(), json!(v.source()))).collect();
            o.insert("envDef".into(), Json::Object(defs));
        }
        Clause::InitialWorkDir(listing) => {
            let entries = listing
                .iter()
                .map(|e| {
                    let mut eo = Map::new();
                    if let Some(name) = &e.entryname {
                        eo.insert("entryname".into(), json!(name.source()));
                    }
                    eo.insert("entry".into(), json!(e.entry.source()));
                    Json::Object(eo)
                })
                .collect();
            o.insert("listing".into(), Json::Array(entries));
        }
        Clause::WorkReuse { enable } => {
            o.insert("enableReuse".into(), json!(enable));
        }
        Clause::Extension { payload, .. } => {
            for (k, v) in payload {
                o.insert(k.clone(), v.clone());
            }
        }
    }
    Json::Object(o)
}

fn step_json(s: &Step) -> Json {
    let mut o = Map::new();
    o.insert("id".into(), json!(s.id));
    let run = match &s.run {
        RunRef::Path(p) => json!(p),
        RunRef::Document(d) => canonical_json(d),
    };
    o.insert("run".into(), run);
    let ins = s
        .in_map
        .iter()
        .map(|(id, input)| {
            let mut io = Map::new();
            io.insert("id".into(), json!(id));
            if let Some(src) = &input.source {
                io.insert("source".into(), json!(src.to_string()));
            }
            if let Some(d) = &input.default {
                io.insert("default".into(), d.clone());
            }
            Json::Object(io)
        })
        .collect();
    o.insert("in".into(), Json::Array(ins));
    o.insert("out".into(), json!(s.out));
    if !s.scatter.is_empty() {
        o.insert("scatter".into(), json!(s.scatter));
        if s.scatter.len() > 1 {
            o.insert("scatterMethod".into(), json!("dotproduct"));
        }
    }
    if let Some(w) = &s.when {
        o.insert("when".into(), json!(w.source()));
    }
    put_clauses(&mut o, "requirements", &s.requirements);
    put_clauses(&mut o, "hints", &s.hints);
    put_opt(&mut o, "label", &s.label);
    put_opt(&mut o, "doc", &s.doc);
    Json::Object(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOOL_YAML: &str = r#"
cwlVersion: v1.2
class: CommandLineTool
baseCommand: [wc, -l]
stdin: $(inputs.file.path)
inputs:
  file: {type: File, format: "edam:format_1964"}
outputs:
  count: stdout
hints:
  ResourceRequirement: {coresMin: 1, ramMin: 64}
"#;

    #[test]
    fn round_trip_and_stability() {
        let doc = parse_document(TOOL_YAML, None).unwrap();
        let text = canonical_text(&doc);
        let again = parse_document(&text, None).unwrap();
        assert_eq!(again, doc);
        assert_eq!(canonical_text(&again), text);
        assert_eq!(canonical_digest(&doc).len(), 64);
    }

    #[test]
    fn key_order_does_not_matter() {
        let a = r#"{"class":"CommandLineTool","cwlVersion":"v1.2","baseCommand":"true","inputs":[],"outputs":[]}"#;
        let b = r#"{"outputs":[],"inputs":[],"baseCommand":["true"],"cwlVersion":"v1.2","class":"CommandLineTool"}"#;
        let da = parse_document(a, None).unwrap();
        let db = parse_document(b, None).unwrap();
        assert_eq!(canonical_digest(&da), canonical_digest(&db));
    }

    #[test]
    fn base_command_changes_digest() {
        let a = parse_document("cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [cat]\n", None).unwrap();
        let b = parse_document("cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [tac]\n", None).unwrap();
        assert_ne!(canonical_digest(&a), canonical_digest(&b));
        assert_ne!(tool_digest(a.as_tool().unwrap()), tool_digest(b.as_tool().unwrap()));
    }

    #[test]
    fn tool_digest_ignores_labels() {
        let a =
            parse_document("cwlVersion: v1.2\nclass: CommandLineTool\nid: one\nlabel: x\nbaseCommand: [cat]\n", None)
                .unwrap();
        let b = parse_document("cwlVersion: v1.1\nclass: CommandLineTool\nbaseCommand: [cat]\n", None).unwrap();
        assert_eq!(tool_digest(a.as_tool().unwrap()), tool_digest(b.as_tool().unwrap()));
    }
}
