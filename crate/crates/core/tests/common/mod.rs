//! Shared helpers for the integration tests and the acceptance runner: the
//! golden corpus loader, fixed engine options and output normalization.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value as Json};
use sha2::{Digest, Sha256};

use miniwfl::document::Document;
use miniwfl::pipeline::{self, EngineOptions, PipelineError, RunOutcome};
use miniwfl::runtime::{ProcessLauncher, SystemLauncher};
use miniwfl::validator::Capacity;

/// Every corpus run uses this machine so resource checks are host-independent.
pub const MACHINE: Capacity = Capacity { cores: 4, ram_mib: 8192, disk_mib: 100_000 };

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("corpus")
}

/// One golden case: `workflow.cwl`, optional `job.yml`, `expected.json`.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub dir: PathBuf,
    pub expected: Json,
}

impl Case {
    pub fn workflow(&self) -> PathBuf {
        self.dir.join("workflow.cwl")
    }

    /// The job text with `${CORPUS_TMP}` replaced by `tmp`.
    pub fn job_text(&self, tmp: &Path) -> String {
        fs::read_to_string(self.dir.join("job.yml"))
            .unwrap_or_default()
            .replace("${CORPUS_TMP}", &tmp.to_string_lossy())
    }

    pub fn expected_exit(&self) -> u8 {
        self.expected["exit"].as_u64().unwrap_or(0) as u8
    }

    pub fn parallelism(&self) -> usize {
        self.expected["config"]["parallel"].as_u64().unwrap_or(2) as usize
    }

    pub fn retries(&self) -> u32 {
        self.expected["config"]["retries"].as_u64().unwrap_or(0) as u32
    }

    /// False for cases that opt out of result reuse.
    pub fn reusable(&self) -> bool {
        self.expected["reusable"].as_bool().unwrap_or(true)
    }

    pub fn is_v1_0(&self) -> bool {
        fs::read_to_string(self.workflow()).map(|t| t.contains("cwlVersion: v1.0")).unwrap_or(false)
    }
}

/// All cases in name order.
pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();
    for entry in fs::read_dir(corpus_dir()).expect("corpus directory exists") {
        let dir = entry.expect("readable corpus entry").path();
        let expected_path = dir.join("expected.json");
        if !expected_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&expected_path).expect("readable expected.json");
        let expected = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", expected_path.display()));
        let name = dir.file_name().expect("case dir name").to_string_lossy().into_owned();
        out.push(Case { name, dir, expected });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Engine options for a test run rooted at `scratch`.
pub fn options(scratch: &Path, parallelism: usize, retries: u32, cache: Option<&Path>) -> EngineOptions {
    let mut opts = EngineOptions::new(scratch.join("out"));
    opts.parallelism = parallelism;
    opts.retries = retries;
    opts.machine = MACHINE;
    opts.cache_dir = cache.map(Path::to_path_buf);
    opts.enable_reuse = cache.is_some();
    opts.use_containers = false;
    opts.launcher = Arc::new(SystemLauncher);
    opts
}

pub fn with_launcher(mut opts: EngineOptions, launcher: Arc<dyn ProcessLauncher>) -> EngineOptions {
    opts.launcher = launcher;
    opts
}

/// What a run produced, reduced to what the golden files describe.
#[derive(Debug)]
pub struct CaseRun {
    pub exit: u8,
    pub error: Option<String>,
    pub diagnostics: Vec<String>,
    pub outcome: Option<RunOutcome>,
}

impl CaseRun {
    /// Published outputs with host paths removed, as canonical JSON text.
    pub fn outputs_text(&self) -> String {
        self.outcome.as_ref().map(|o| strip_paths(&o.output_json()).to_string()).unwrap_or_default()
    }
}

/// Runs an already loaded document the way the command-line front end
/// would, mapping the result to its exit code.
pub fn run_loaded(doc: &Document, case: &Case, tmp: &Path, opts: &EngineOptions) -> CaseRun {
    match pipeline::run_document(doc, &case.job_text(tmp), &case.dir, opts) {
        Ok(outcome) => CaseRun {
            exit: if outcome.succeeded() { 0 } else { 2 },
            error: None,
            diagnostics: outcome.warnings.iter().map(|d| d.code.clone()).collect(),
            outcome: Some(outcome),
        },
        Err(e) => {
            let exit = if matches!(e, PipelineError::Io(_)) { 2 } else { 1 };
            let diagnostics = match &e {
                PipelineError::Invalid(d) => d.iter().map(|d| d.code.clone()).collect(),
                _ => Vec::new(),
            };
            CaseRun { exit, error: Some(e.to_string()), diagnostics, outcome: None }
        }
    }
}

pub fn run_case(case: &Case, tmp: &Path, opts: &EngineOptions) -> CaseRun {
    match pipeline::load(&case.workflow()) {
        Ok(doc) => run_loaded(&doc, case, tmp, opts),
        Err(e) => CaseRun { exit: 1, error: Some(e.to_string()), diagnostics: Vec::new(), outcome: None },
    }
}

/// `sha256$<hex>` computed directly, independent of the engine's digests.
pub fn sha256_of(bytes: &[u8]) -> String {
    format!("sha256${}", hex::encode(Sha256::digest(bytes)))
}

/// Drops `path` from every File and Directory object.
pub fn strip_paths(v: &Json) -> Json {
    match v {
        Json::Object(m) => {
            let is_fs = matches!(m.get("class").and_then(Json::as_str), Some("File" | "Directory"));
            Json::Object(
                m.iter()
                    .filter(|(k, _)| !(is_fs && k.as_str() == "path"))
                    .map(|(k, v)| (k.clone(), strip_paths(v)))
                    .collect(),
            )
        }
        Json::Array(items) => Json::Array(items.iter().map(strip_paths).collect()),
        other => other.clone(),
    }
}

/// Replaces `contents` in expected File objects by checksum and size.
pub fn expand_expected(v: &Json) -> Json {
    match v {
        Json::Object(m) => {
            let mut out = Map::new();
            for (k, v) in m {
                if k == "contents" {
                    let text = v.as_str().expect("contents is a string");
                    out.insert("checksum".into(), json!(sha256_of(text.as_bytes())));
                    out.insert("size".into(), json!(text.len()));
                } else {
                    out.insert(k.clone(), expand_expected(v));
                }
            }
            Json::Object(out)
        }
        Json::Array(items) => Json::Array(items.iter().map(expand_expected).collect()),
        other => other.clone(),
    }
}

/// Compares one run against the case's expectations.
pub fn check(case: &Case, run: &CaseRun) -> Result<(), String> {
    let e = &case.expected;
    if run.exit != case.expected_exit() {
        return Err(format!("exit {} (expected {}); error: {:?}", run.exit, case.expected_exit(), run.error));
    }
    if let Some(code) = e["diagnostic"].as_str() {
        if !run.diagnostics.iter().any(|d| d == code) {
            return Err(format!("missing diagnostic {code}; got {:?}", run.diagnostics));
        }
    }
    if let Some(needle) = e["error_contains"].as_str() {
        let msg = run.error.as_deref().unwrap_or_default();
        if !msg.contains(needle) {
            return Err(format!("error {msg:?} does not mention {needle:?}"));
        }
    }
    for code in e["warnings"].as_array().into_iter().flatten() {
        let code = code.as_str().expect("warning codes are strings");
        if !run.diagnostics.iter().any(|d| d == code) {
            return Err(format!("missing warning {code}; got {:?}", run.diagnostics));
        }
    }
    if let Some(expected) = e.get("outputs") {
        let want = expand_expected(expected).to_string();
        let got = run.outputs_text();
        if want != got {
            return Err(format!("outputs differ\n  expected: {want}\n  actual:   {got}"));
        }
    }
    let Some(outcome) = &run.outcome else { return Ok(()) };
    for (node, state) in e["states"].as_object().into_iter().flatten() {
        let tasks: Vec<_> = outcome.result.tasks.iter().filter(|t| &t.node == node).collect();
        if tasks.is_empty() || tasks.iter().any(|t| Some(t.state.to_string().as_str()) != state.as_str()) {
            let got: Vec<String> = tasks.iter().map(|t| t.state.to_string()).collect();
            return Err(format!("node {node}: states {got:?}, expected {state}"));
        }
    }
    for (node, n) in e["attempts"].as_object().into_iter().flatten() {
        let got: Vec<usize> =
            outcome.result.tasks.iter().filter(|t| &t.node == node).map(|t| t.attempts.len()).collect();
        if got != [n.as_u64().unwrap_or(0) as usize] {
            return Err(format!("node {node}: attempts {got:?}, expected {n}"));
        }
    }
    if let Some(limit) = e["peak_running"].as_u64() {
        let peak = peak_running(&outcome.result.event_log);
        if peak as u64 > limit {
            return Err(format!("{peak} tasks ran at once, expected at most {limit}"));
        }
    }
    Ok(())
}

/// Highest number of tasks simultaneously in `Running`, from an event log.
pub fn peak_running(events: &[miniwfl::planner::Event]) -> usize {
    let mut running = std::collections::BTreeSet::new();
    let mut peak = 0;
    for e in events {
        if e.to == miniwfl::planner::TaskState::Running {
            running.insert(e.task.clone());
        } else {
            running.remove(&e.task);
        }
        peak = peak.max(running.len());
    }
    peak
}

/// A directed graph over nodes `0..n`. Generated graphs only have edges
/// from lower to higher indices, so they are acyclic by construction.
#[derive(Debug, Clone)]
pub struct Graph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
}

/// A random DAG with `1..=max_nodes` nodes and in-degree at most 3.
pub fn random_dag(rng: &mut impl rand::Rng, max_nodes: usize) -> Graph {
    let n = rng.random_range(1..=max_nodes);
    let mut edges = Vec::new();
    for v in 1..n {
        let k = rng.random_range(0..=3.min(v));
        let mut preds: Vec<usize> = rand::seq::index::sample(rng, v, k).into_iter().collect();
        preds.sort_unstable();
        edges.extend(preds.into_iter().map(|u| (u, v)));
    }
    Graph { n, edges }
}

impl Graph {
    /// Adds one edge that closes a cycle: from a node back to one of its
    /// ancestors, or a self loop when the graph has no edges.
    pub fn with_back_edge(&self, rng: &mut impl rand::Rng) -> Graph {
        let mut out = self.clone();
        let back = if self.edges.is_empty() {
            let v = rng.random_range(0..self.n);
            (v, v)
        } else {
            let (u, v) = self.edges[rng.random_range(0..self.edges.len())];
            (v, u)
        };
        out.edges.push(back);
        out
    }

    /// Three-colour depth-first search.
    pub fn has_cycle(&self) -> bool {
        #[derive(Clone, Copy, PartialEq)]
        enum Colour {
            White,
            Grey,
            Black,
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        let mut colour = vec![Colour::White; self.n];
        fn visit(u: usize, adj: &[Vec<usize>], colour: &mut [Colour]) -> bool {
            colour[u] = Colour::Grey;
            for &v in &adj[u] {
                if colour[v] == Colour::Grey || (colour[v] == Colour::White && visit(v, adj, colour)) {
                    return true;
                }
            }
            colour[u] = Colour::Black;
            false
        }
        (0..self.n).any(|u| colour[u] == Colour::White && visit(u, &adj, &mut colour))
    }

    /// A workflow with one step `n<i>` per node. Each step prints the last
    /// line of each input followed by its own name, so every edge is a real
    /// data dependency.
    pub fn workflow(&self) -> String {
        let mut text = String::from("cwlVersion: v1.2\nclass: Workflow\ninputs: {}\noutputs:\n");
        for i in 0..self.n {
            text.push_str(&format!("  o{i}:\n    type: File\n    outputSource: n{i}/out\n"));
        }
        text.push_str("steps:\n");
        for v in 0..self.n {
            let preds: Vec<usize> = self.edges.iter().filter(|e| e.1 == v).map(|e| e.0).collect();
            text.push_str(&format!("  n{v}:\n    run:\n      class: CommandLineTool\n"));
            text.push_str(&format!(
                "      baseCommand: [sh, -c, 'for f in \"$@\"; do tail -n 1 \"$f\"; done; echo n{v}', sh]\n      inputs:\n"
            ));
            if preds.is_empty() {
                text.push_str("        {}\n");
            }
            for k in 0..preds.len() {
                text.push_str(&format!(
                    "        i{k}:\n          type: File\n          inputBinding: {{position: {}}}\n",
                    k + 1
                ));
            }
            text.push_str("      outputs:\n        out: stdout\n      stdout: out.txt\n    in:\n");
            if preds.is_empty() {
                text.push_str("      {}\n");
            }
            for (k, u) in preds.iter().enumerate() {
                text.push_str(&format!("      i{k}: n{u}/out\n"));
            }
            text.push_str("    out: [out]\n");
        }
        text
    }

    /// What node `v` prints: its predecessors' names in input order, then
    /// its own name.
    pub fn expected_output(&self, v: usize) -> String {
        let mut out = String::new();
        for &(u, w) in &self.edges {
            if w == v {
                out.push_str(&format!("n{u}\n"));
            }
        }
        out.push_str(&format!("n{v}\n"));
        out
    }
}

/// `(producer completion seq, consumer start seq)` violations in an event
/// log, where task ids equal step ids.
pub fn ordering_violations(graph: &Graph, events: &[miniwfl::planner::Event]) -> Vec<String> {
    use miniwfl::planner::TaskState;
    let done = |i: usize| {
        events
            .iter()
            .find(|e| e.task == format!("n{i}") && matches!(e.to, TaskState::Succeeded | TaskState::Cached))
            .map(|e| e.seq)
    };
    let started =
        |i: usize| events.iter().find(|e| e.task == format!("n{i}") && e.to == TaskState::Running).map(|e| e.seq);
    let mut bad = Vec::new();
    for &(u, v) in &graph.edges {
        match (done(u), started(v)) {
            (Some(d), Some(s)) if d < s => {}
            (d, s) => bad.push(format!("n{u} done {d:?}, n{v} started {s:?}")),
        }
    }
    bad
}
