//! Drives a planned graph to completion.
//!
//! One coordinator (the calling thread) owns the [`Execution`]; each admitted
//! task runs on its own worker thread, retries included, and reports back
//! through a channel. Workers never touch shared run state.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::cache::{cache_key, republish, Cache, CacheKey};
use crate::document::tool_digest;
use crate::par::ExecMode;
use crate::planner::{DataflowGraph, Event, Execution, Resources, TaskState};
use crate::runtime::{safe_name, AttemptPlan, FailureClass, Outcome, Runtime, RuntimeError, TaskAttempt};
use crate::validator::Capacity;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    /// Admit nothing new after the first failure; running tasks drain.
    #[default]
    Stop,
    /// Keep running everything that does not depend on a failure.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub parallelism: usize,
    pub retries: u32,
    pub machine: Capacity,
    pub enable_reuse: bool,
    pub on_error: OnError,
    #[serde(skip)]
    pub exec_mode: ExecMode,
}

impl RunConfig {
    pub fn new(parallelism: usize, machine: Capacity) -> Self {
        RunConfig {
            parallelism: parallelism.max(1),
            retries: 0,
            machine,
            enable_reuse: true,
            on_error: OnError::Stop,
            exec_mode: ExecMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Success,
    PermanentFail,
}

/// Everything that happened to one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: String,
    pub node: String,
    pub state: TaskState,
    pub tool_digest: String,
    pub inputs: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, Value>,
    pub resources: Resources,
    pub cached: bool,
    pub cache_key: Option<String>,
    pub attempts: Vec<TaskAttempt>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    pub outputs: BTreeMap<String, Value>,
    pub event_log: Vec<Event>,
    pub tasks: Vec<TaskRecord>,
    pub started_at: String,
    pub finished_at: String,
    pub config: RunConfig,
    /// Filled in by callers that know the source document.
    pub workflow_digest: Option<String>,
    pub job_order: BTreeMap<String, Value>,
}

/// Services a run draws on.
#[derive(Debug, Clone)]
pub struct Services {
    pub runtime: Runtime,
    pub cache: Option<Cache>,
}

/// Admitted resources currently in use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ledger {
    pub running: usize,
    pub cores: u64,
    pub ram_mib: u64,
    pub disk_mib: u64,
}

impl Ledger {
    fn fits(&self, r: &Resources, cfg: &RunConfig) -> bool {
        self.running < cfg.parallelism
            && self.cores + r.cores <= cfg.machine.cores
            && self.ram_mib + r.ram_mib <= cfg.machine.ram_mib
            && self.disk_mib + r.disk_mib <= cfg.machine.disk_mib
    }

    fn add(&mut self, r: &Resources) {
        self.running += 1;
        self.cores += r.cores;
        self.ram_mib += r.ram_mib;
        self.disk_mib += r.disk_mib;
    }

    fn remove(&mut self, r: &Resources) {
        self.running -= 1;
        self.cores -= r.cores;
        self.ram_mib -= r.ram_mib;
        self.disk_mib -= r.disk_mib;
    }
}

/// Hints larger than the machine are clamped to it; requirements are not.
pub fn effective_resources(r: &Resources, machine: &Capacity) -> Resources {
    if r.required {
        return *r;
    }
    Resources {
        cores: r.cores.min(machine.cores),
        ram_mib: r.ram_mib.min(machine.ram_mib),
        disk_mib: r.disk_mib.min(machine.disk_mib),
        ..*r
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Admission {
    pub start: Vec<String>,
    /// Tasks that could never fit, even on an idle machine.
    pub too_large: Vec<String>,
}

/// First-fit over `ready` (already in dispatch order): each task is
/// admitted if it still fits next to everything admitted before it.
pub fn admission(ready: &[(String, Resources)], running: &Ledger, cfg: &RunConfig) -> Admission {
    let mut ledger = *running;
    let mut out = Admission::default();
    for (id, r) in ready {
        if r.cores > cfg.machine.cores || r.ram_mib > cfg.machine.ram_mib || r.disk_mib > cfg.machine.disk_mib {
            out.too_large.push(id.clone());
        } else if ledger.fits(r, cfg) {
            ledger.add(r);
            out.start.push(id.clone());
        }
    }
    out
}

/// Decision table for failed attempts.
pub fn classify_failure(attempt: &TaskAttempt, cause: &RuntimeError) -> FailureClass {
    match attempt.outcome {
        Outcome::TemporaryFailure => FailureClass::Temporary,
        Outcome::PermanentFailure => FailureClass::Permanent,
        Outcome::Success => cause.class(),
    }
}

enum Message {
    Retry { task: String, attempt: u32, reason: String },
    Done { task: String, attempts: Vec<TaskAttempt>, result: Result<BTreeMap<String, Value>, String> },
}

struct Job {
    task: String,
    node: String,
    inputs: BTreeMap<String, Value>,
    resources: Resources,
    key: Option<CacheKey>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// Runs `graph` to completion under `cfg`.
pub fn run(graph: Arc<DataflowGraph>, cfg: &RunConfig, services: &Services) -> RunResult {
    let run_id = uuid::Uuid::new_v4().to_string();
    let started_at = now();
    let mut exec = Execution::new(Arc::clone(&graph));
    let mut attempts: BTreeMap<String, Vec<TaskAttempt>> = BTreeMap::new();
    let mut keys: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut cached: BTreeMap<String, bool> = BTreeMap::new();
    let mut in_use: BTreeMap<String, Resources> = BTreeMap::new();
    let mut ledger = Ledger::default();
    let mut stopping = false;
    let (tx, rx) = mpsc::channel::<Message>();
    let reuse = cfg.enable_reuse && services.cache.is_some();

    std::thread::scope(|scope| loop {
        exec.advance();
        if cfg.on_error == OnError::Stop && exec.tasks().any(|t| t.state == TaskState::Failed) {
            stopping = true;
        }
        if !stopping {
            let ready: Vec<(String, String, BTreeMap<String, Value>, Resources)> = exec
                .ready_tasks()
                .iter()
                .map(|t| (t.id.clone(), t.node.clone(), t.inputs.clone(), t.resources))
                .collect();

            let mut pending_keys: BTreeMap<String, CacheKey> = BTreeMap::new();
            for (id, node, inputs, _) in &ready {
                if reuse && !keys.contains_key(id) {
                    let key = cache_key(&graph.nodes[node], inputs);
                    keys.insert(id.clone(), key.hex());
                    if key.hex().is_some() {
                        pending_keys.insert(id.clone(), key);
                    }
                }
            }
            if !pending_keys.is_empty() {
                let cache = services.cache.as_ref().expect("reuse implies a cache");
                let ids: Vec<&String> = pending_keys.keys().collect();
                let list: Vec<CacheKey> = pending_keys.values().cloned().collect();
                let hits = cache.lookup_many(&list, cfg.exec_mode);
                let mut any = false;
                for (id, hit) in ids.into_iter().zip(hits) {
                    let Some(entry) = hit else { continue };
                    let dest = services.runtime.work_root.join(safe_name(id)).join("cached");
                    match republish(&entry, &dest) {
                        Ok(outputs) => {
                            log::info!("{id}: reusing cached result {}", entry.key);
                            cached.insert(id.clone(), true);
                            exec.cached(id, outputs);
                            any = true;
                        }
                        Err(e) => log::warn!("{id}: cache hit could not be republished: {e}"),
                    }
                }
                if any {
                    continue;
                }
            }

            let ready: Vec<(String, Resources)> = exec
                .ready_tasks()
                .iter()
                .map(|t| (t.id.clone(), effective_resources(&t.resources, &cfg.machine)))
                .collect();
            let admitted = admission(&ready, &ledger, cfg);
            for id in &admitted.too_large {
                let r = exec.task(id).expect("ready task").resources;
                exec.fail(
                    id,
                    format!(
                        "resource requirement ({} cores, {} MiB RAM, {} MiB disk) exceeds machine capacity",
                        r.cores, r.ram_mib, r.disk_mib
                    ),
                );
            }
            if !admitted.too_large.is_empty() {
                continue;
            }
            for id in admitted.start {
                let r = ready.iter().find(|(t, _)| *t == id).expect("admitted from ready").1;
                let task = exec.task(&id).expect("ready task");
                let job = Job {
                    task: id.clone(),
                    node: task.node.clone(),
                    inputs: task.inputs.clone(),
                    resources: r,
                    key: if reuse { Some(cache_key(&graph.nodes[&task.node], &task.inputs)) } else { None },
                };
                exec.start(&id);
                ledger.add(&r);
                in_use.insert(id.clone(), r);
                let tx = tx.clone();
                let graph = Arc::clone(&graph);
                let run_id = run_id.clone();
                scope.spawn(move || work(job, &graph, cfg, services, &run_id, tx));
            }
        }

        if ledger.running == 0 {
            break;
        }
        match rx.recv().expect("workers hold senders while running") {
            Message::Retry { task, attempt, reason } => exec.retry(&task, attempt, reason),
            Message::Done { task, attempts: list, result } => {
                let r = in_use.remove(&task).expect("running task");
                ledger.remove(&r);
                attempts.insert(task.clone(), list);
                match result {
                    Ok(outputs) => exec.succeed(&task, outputs),
                    Err(reason) => exec.fail(&task, reason),
                }
            }
        }
    });

    let status = if exec.succeeded() { RunStatus::Success } else { RunStatus::PermanentFail };
    let mut tasks: Vec<TaskRecord> = exec
        .tasks()
        .map(|t| {
            let node = &graph.nodes[&t.node];
            TaskRecord {
                task_id: t.id.clone(),
                node: t.node.clone(),
                state: t.state,
                tool_digest: tool_digest(node.tool()),
                inputs: t.inputs.clone(),
                outputs: t.outputs.clone(),
                resources: t.resources,
                cached: cached.get(&t.id).copied().unwrap_or(false),
                cache_key: keys.get(&t.id).cloned().flatten(),
                attempts: attempts.remove(&t.id).unwrap_or_default(),
                failure: t.failure.clone(),
            }
        })
        .collect();
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    RunResult {
        run_id,
        status,
        outputs: exec.workflow_outputs(),
        event_log: exec.events().to_vec(),
        tasks,
        started_at,
        finished_at: now(),
        config: cfg.clone(),
        workflow_digest: None,
        job_order: BTreeMap::new(),
    }
}

/// Worker body: attempts with fresh staging until success, a permanent
/// failure, or the retry budget runs out.
fn work(
    job: Job,
    graph: &DataflowGraph,
    cfg: &RunConfig,
    services: &Services,
    run_id: &str,
    tx: mpsc::Sender<Message>,
) {
    let node = &graph.nodes[&job.node];
    let mut list = Vec::new();
    let mut attempt = 1;
    let result = loop {
        let res = services.runtime.run_attempt(AttemptPlan {
            task_id: &job.task,
            attempt,
            node,
            inputs: &job.inputs,
            resources: &job.resources,
        });
        list.push(res.attempt.clone());
        match res.outputs {
            Ok(outputs) => {
                if let (Some(cache), Some(key)) = (&services.cache, &job.key) {
                    if let Err(e) = cache.store(key, &outputs, run_id) {
                        log::warn!("{}: could not store result in cache: {e}", job.task);
                    }
                }
                break Ok(outputs);
            }
            Err(e) => {
                let class = classify_failure(&res.attempt, &e);
                if class == FailureClass::Temporary && attempt <= cfg.retries {
                    attempt += 1;
                    let reason = format!("attempt {} failed temporarily: {e}", attempt - 1);
                    log::warn!("{}: {reason}", job.task);
                    let _ = tx.send(Message::Retry { task: job.task.clone(), attempt, reason });
                    continue;
                }
                let kind = match class {
                    FailureClass::Temporary => "temporary failure, retries exhausted",
                    FailureClass::Permanent => "permanent failure",
                };
                break Err(format!("{kind}: {e}"));
            }
        }
    };
    let _ = tx.send(Message::Done { task: job.task, attempts: list, result });
}
