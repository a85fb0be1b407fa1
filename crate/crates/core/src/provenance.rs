//! Per-run provenance: one JSON document plus the event log as JSON lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value as Json};

use crate::planner::Event;
use crate::scheduler::{RunResult, RunStatus, TaskRecord};
use crate::value::Value;
use crate::ENGINE_VERSION;

fn content(map: &BTreeMap<String, Value>) -> Json {
    Json::Object(map.iter().map(|(k, v)| (k.clone(), v.content_json())).collect())
}

fn task_json(t: &TaskRecord) -> Json {
    let attempts: Vec<Json> = t
        .attempts
        .iter()
        .map(|a| {
            json!({
                "attempt": a.attempt,
                "argv": a.argv,
                "env": a.env,
                "startTime": a.start_time,
                "endTime": a.end_time,
                "durationMs": a.duration_ms,
                "exitCode": a.exit_code,
                "outcome": a.outcome,
                "error": a.error,
                "container": a.container,
                "workdir": a.workdir,
            })
        })
        .collect();
    json!({
        "taskId": t.task_id,
        "step": t.node,
        "toolDigest": t.tool_digest,
        "state": t.state,
        "cached": t.cached,
        "cacheKey": t.cache_key,
        "resources": {
            "coresMin": t.resources.cores,
            "ramMin": t.resources.ram_mib,
            "diskMin": t.resources.disk_mib,
            "wallTimeMax": t.resources.wall_time_secs,
        },
        "inputs": content(&t.inputs),
        "outputs": content(&t.outputs),
        "attempts": attempts,
        "failure": t.failure,
    })
}

/// The provenance record of a finished run.
pub fn provenance_json(result: &RunResult) -> Json {
    let status = match result.status {
        RunStatus::Success => "Success",
        RunStatus::PermanentFail => "PermanentFail",
    };
    json!({
        "runId": result.run_id,
        "engineVersion": ENGINE_VERSION,
        "status": status,
        "startedAt": result.started_at,
        "finishedAt": result.finished_at,
        "workflowDigest": result.workflow_digest,
        "jobOrder": content(&result.job_order),
        "config": {
            "parallelism": result.config.parallelism,
            "retries": result.config.retries,
            "enableReuse": result.config.enable_reuse,
            "onError": result.config.on_error,
            "machine": {
                "cores": result.config.machine.cores,
                "ramMiB": result.config.machine.ram_mib,
                "diskMiB": result.config.machine.disk_mib,
            },
            "resourceDefaults": {"coresMin": 1, "ramMin": 256, "diskMin": 0},
        },
        "tasks": result.tasks.iter().map(task_json).collect::<Vec<_>>(),
        "outputs": content(&result.outputs),
    })
}

/// Writes `<sink>/<runId>.json` and `<sink>/<runId>.events.jsonl`.
pub fn write_provenance(result: &RunResult, sink: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(sink)?;
    let path = sink.join(format!("{}.json", result.run_id));
    let mut text = serde_json::to_string_pretty(&provenance_json(result)).expect("provenance serializes");
    text.push('\n');
    fs::write(&path, text)?;
    write_event_log(&result.event_log, &sink.join(format!("{}.events.jsonl", result.run_id)))?;
    Ok(path)
}

/// One `{ts, task, transition, attempt}` object per line.
pub fn event_lines(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        let mut line = json!({"ts": e.ts, "task": e.task, "transition": e.transition, "attempt": e.attempt});
        if let Some(d) = &e.detail {
            line["detail"] = json!(d);
        }
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn write_event_log(events: &[Event], path: &Path) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(event_lines(events).as_bytes())
}
