//! Executing one task attempt: staging, process launch, output capture.

mod collect;
mod command;
mod process;
mod stage;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

pub use collect::{collect_outputs, glob_outdir};
pub use command::build_command_line;
pub use process::{
    ContainerRuntime, CountingLauncher, LaunchSpec, ProcessLauncher, SystemLauncher, CONTAINER_LAUNCH_CODES,
};
pub use stage::{stage, StagedDirectory, StagedFile, CONTAINER_INPUTS, CONTAINER_OUTDIR, CONTAINER_TMPDIR};

pub(crate) use stage::{copy_tree, safe_name};

use crate::document::{Clause, ClauseKind, ToolDescription};
use crate::expression::{EvalContext, ExprError, RuntimeContext};
use crate::par::ExecMode;
use crate::planner::{Resources, TaskNode};
use crate::value::Value;
use process::{container_client_env, host_path, path_str, wait_with_limit, WaitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureClass {
    Temporary,
    Permanent,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("staging failed: {0}")]
    Staging(String),
    #[error("expression error: {0}")]
    Expression(#[from] ExprError),
    #[error("empty command line")]
    EmptyCommand,
    #[error("cannot launch {program}: {message}")]
    Launch { program: String, message: String, permanent: bool },
    #[error("wall time limit of {secs}s exceeded; process killed")]
    Timeout { secs: u64 },
    #[error("exit code {code} is not a success code")]
    ExitCode { code: i32, temporary: bool },
    #[error("output {output}: glob {glob:?} matched nothing")]
    OutputMissing { output: String, glob: String },
    #[error("output {output}: glob {glob:?} matched {count} entries, expected one")]
    OutputAmbiguous { output: String, glob: String, count: usize },
    #[error("output collection failed: {0}")]
    Output(String),
    #[error("tool modified read-only inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    InputModified(Vec<PathBuf>),
    #[error("container image {0} required but containers are disabled")]
    ContainerDisabled(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl RuntimeError {
    /// Timeouts, launch races and infrastructure I/O are worth retrying;
    /// everything the tool or the document is responsible for is not.
    pub fn class(&self) -> FailureClass {
        match self {
            RuntimeError::Timeout { .. } | RuntimeError::Io(_) => FailureClass::Temporary,
            RuntimeError::Launch { permanent, .. } => {
                if *permanent {
                    FailureClass::Permanent
                } else {
                    FailureClass::Temporary
                }
            }
            RuntimeError::ExitCode { temporary: true, .. } => FailureClass::Temporary,
            _ => FailureClass::Permanent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Success,
    TemporaryFailure,
    PermanentFailure,
}

/// Record of one process execution (or of a failure to get that far).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAttempt {
    pub task_id: String,
    pub attempt: u32,
    pub argv: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub start_time: String,
    pub end_time: String,
    pub duration_ms: u64,
    pub exit_code: Option<i32>,
    pub stdout_path: Option<PathBuf>,
    pub stderr_path: Option<PathBuf>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
    pub workdir: PathBuf,
}

/// An attempt record plus what it produced.
#[derive(Debug)]
pub struct AttemptResult {
    pub attempt: TaskAttempt,
    pub outputs: Result<BTreeMap<String, Value>, RuntimeError>,
}

/// What one attempt should run.
#[derive(Debug, Clone, Copy)]
pub struct AttemptPlan<'a> {
    pub task_id: &'a str,
    pub attempt: u32,
    pub node: &'a TaskNode,
    pub inputs: &'a BTreeMap<String, Value>,
    pub resources: &'a Resources,
}

/// Executes attempts below `work_root`.
#[derive(Clone)]
pub struct Runtime {
    pub work_root: PathBuf,
    pub launcher: Arc<dyn ProcessLauncher>,
    /// `None` runs container-hinted tools directly.
    pub container: Option<ContainerRuntime>,
    pub streaming: bool,
    pub mode: ExecMode,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("work_root", &self.work_root)
            .field("container", &self.container)
            .field("streaming", &self.streaming)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

fn now() -> (DateTime<Utc>, Instant) {
    (Utc::now(), Instant::now())
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// Resolves a capture-file name against the output directory.
fn capture_path(name: Option<String>, outdir: &Path, fallback: PathBuf) -> Result<PathBuf, RuntimeError> {
    match name {
        None => Ok(fallback),
        Some(n) if n.is_empty() || n.contains('/') || n == "." || n == ".." => {
            Err(RuntimeError::Staging(format!("invalid capture file name {n:?}")))
        }
        Some(n) => Ok(outdir.join(n)),
    }
}

impl Runtime {
    /// A host runtime with the system launcher and no containers.
    pub fn local(work_root: impl Into<PathBuf>) -> Self {
        Runtime {
            work_root: work_root.into(),
            launcher: Arc::new(SystemLauncher),
            container: None,
            streaming: false,
            mode: ExecMode::default(),
        }
    }

    /// Stages, runs and collects one attempt. Never panics on tool failure;
    /// everything is reported in the result.
    pub fn run_attempt(&self, plan: AttemptPlan<'_>) -> AttemptResult {
        let (start_wall, start) = now();
        let mut record = TaskAttempt {
            task_id: plan.task_id.to_string(),
            attempt: plan.attempt,
            argv: Vec::new(),
            env: BTreeMap::new(),
            start_time: stamp(start_wall),
            end_time: String::new(),
            duration_ms: 0,
            exit_code: None,
            stdout_path: None,
            stderr_path: None,
            outcome: Outcome::Success,
            error: None,
            container: None,
            workdir: PathBuf::new(),
        };
        let outputs = self.attempt_inner(plan, &mut record);
        record.end_time = stamp(Utc::now());
        record.duration_ms = start.elapsed().as_millis() as u64;
        if let Err(e) = &outputs {
            record.outcome = match e.class() {
                FailureClass::Temporary => Outcome::TemporaryFailure,
                FailureClass::Permanent => Outcome::PermanentFailure,
            };
            record.error = Some(e.to_string());
        }
        AttemptResult { attempt: record, outputs }
    }

    fn container_image(&self, node: &TaskNode) -> Result<Option<String>, RuntimeError> {
        match node.clause(&ClauseKind::Container) {
            Some((Clause::Container { image }, required)) => match (&self.container, required) {
                (Some(_), _) => Ok(Some(image.clone())),
                (None, true) => Err(RuntimeError::ContainerDisabled(image.clone())),
                (None, false) => Ok(None),
            },
            _ => Ok(None),
        }
    }

    fn attempt_inner(
        &self,
        plan: AttemptPlan<'_>,
        record: &mut TaskAttempt,
    ) -> Result<BTreeMap<String, Value>, RuntimeError> {
        let tool: &ToolDescription = plan.node.tool();
        let image = self.container_image(plan.node)?;
        record.container = image.clone();
        let mut staged =
            stage(plan.task_id, plan.attempt, tool, plan.inputs, &self.work_root, self.streaming, self.mode)?;
        record.workdir = staged.root.clone();
        let result = self.run_staged(plan, tool, image.as_deref(), &mut staged, record);
        staged.finish_streams();
        result
    }

    fn run_staged(
        &self,
        plan: AttemptPlan<'_>,
        tool: &ToolDescription,
        image: Option<&str>,
        staged: &mut StagedDirectory,
        record: &mut TaskAttempt,
    ) -> Result<BTreeMap<String, Value>, RuntimeError> {
        let mut inputs: BTreeMap<String, Value> = tool.inputs.iter().map(|p| (p.id.clone(), Value::Null)).collect();
        inputs.extend(staged.inputs.clone());
        let runtime = RuntimeContext {
            cores: plan.resources.cores as i64,
            ram: plan.resources.ram_mib as i64,
            outdir: path_str(&staged.outdir),
        };
        let ctx = EvalContext::new(inputs, runtime);

        if let Some((Clause::InitialWorkDir(listing), _)) = plan.node.clause(&ClauseKind::InitialWorkDir) {
            staged.materialize(listing, &ctx)?;
        }

        let mut env = BTreeMap::new();
        if let Some((Clause::EnvVars(vars), _)) = plan.node.clause(&ClauseKind::EnvVars) {
            for (k, t) in vars {
                env.insert(k.clone(), t.eval_string(&ctx)?);
            }
        }
        let in_container = image.is_some();
        let (home, tmp) = if in_container {
            (CONTAINER_OUTDIR.to_string(), CONTAINER_TMPDIR.to_string())
        } else {
            (path_str(&staged.outdir), path_str(&staged.tmpdir))
        };
        env.insert("HOME".into(), home);
        env.insert("TMPDIR".into(), tmp);
        if !in_container {
            env.insert("PATH".into(), host_path());
        }

        let argv = build_command_line(tool, &ctx)?;
        if argv.is_empty() {
            return Err(RuntimeError::EmptyCommand);
        }
        let eval_name = |t: &Option<crate::expression::Template>| t.as_ref().map(|t| t.eval_string(&ctx)).transpose();
        let stdout = capture_path(eval_name(&tool.stdout)?, &staged.outdir, staged.root.join("stdout.log"))?;
        let stderr = capture_path(eval_name(&tool.stderr)?, &staged.outdir, staged.root.join("stderr.log"))?;
        let stdin = eval_name(&tool.stdin)?.filter(|s| !s.is_empty()).map(PathBuf::from);
        record.stdout_path = Some(stdout.clone());
        record.stderr_path = Some(stderr.clone());

        let spec = match (image, &self.container) {
            (Some(image), Some(rt)) => {
                let map = ContainerRuntime::path_map(staged);
                record.argv = argv.iter().map(|w| ContainerRuntime::rewrite(w, &map)).collect();
                record.env = env.iter().map(|(k, v)| (k.clone(), ContainerRuntime::rewrite(v, &map))).collect();
                LaunchSpec {
                    program: rt.program.clone(),
                    args: rt.run_args(image, &argv, &env, staged, stdin.is_some()),
                    env: container_client_env(),
                    cwd: staged.outdir.clone(),
                    stdin,
                    stdout: stdout.clone(),
                    stderr: stderr.clone(),
                }
            }
            _ => {
                record.argv = argv.clone();
                record.env = env.clone();
                LaunchSpec {
                    program: argv[0].clone(),
                    args: argv[1..].to_vec(),
                    env,
                    cwd: staged.outdir.clone(),
                    stdin,
                    stdout: stdout.clone(),
                    stderr: stderr.clone(),
                }
            }
        };

        let mut child = self.launcher.spawn(&spec).map_err(|e| {
            let permanent = matches!(e.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied);
            RuntimeError::Launch { program: spec.program.clone(), message: e.to_string(), permanent }
        })?;
        let limit = plan.resources.wall_time_secs.map(Duration::from_secs);
        let code = match wait_with_limit(&mut child, limit).map_err(|e| RuntimeError::Io(e.to_string()))? {
            WaitResult::TimedOut => {
                return Err(RuntimeError::Timeout { secs: plan.resources.wall_time_secs.unwrap_or(0) });
            }
            WaitResult::Exited(code) => code,
        };
        record.exit_code = Some(code);
        staged.finish_streams();

        let modified = staged.modified_inputs();
        if !modified.is_empty() {
            return Err(RuntimeError::InputModified(modified));
        }
        if !tool.success_codes.contains(&code) {
            if in_container && CONTAINER_LAUNCH_CODES.contains(&code) {
                let message = std::fs::read_to_string(&stderr).unwrap_or_default().trim().to_string();
                return Err(RuntimeError::Launch { program: spec.program.clone(), message, permanent: true });
            }
            return Err(RuntimeError::ExitCode { code, temporary: tool.temporary_fail_codes.contains(&code) });
        }
        collect_outputs(tool, &staged.outdir, &stdout, &stderr, &ctx, self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_document;
    use crate::planner::{plan, JobOrder};
    use std::fs;

    fn node_of(tool: &str) -> TaskNode {
        let doc = parse_document(tool, None).unwrap();
        let graph = plan(&doc, &JobOrder::default()).unwrap();
        graph.nodes.into_values().next().unwrap()
    }

    fn run(rt: &Runtime, node: &TaskNode, inputs: BTreeMap<String, Value>, resources: Resources) -> AttemptResult {
        rt.run_attempt(AttemptPlan { task_id: &node.id, attempt: 1, node, inputs: &inputs, resources: &resources })
    }

    #[test]
    fn true_and_false() {
        let work = tempfile::tempdir().unwrap();
        let rt = Runtime::local(work.path());
        let ok = node_of(
            "cwlVersion: v1.2\nid: t\nclass: CommandLineTool\nbaseCommand: [\"true\"]\ninputs: {}\noutputs: {}\n",
        );
        let r = run(&rt, &ok, BTreeMap::new(), Resources::default());
        assert_eq!((r.attempt.exit_code, r.attempt.outcome), (Some(0), Outcome::Success));
        let bad = node_of(
            "cwlVersion: v1.2\nid: f\nclass: CommandLineTool\nbaseCommand: [\"false\"]\ninputs: {}\noutputs: {}\n",
        );
        let r = run(&rt, &bad, BTreeMap::new(), Resources::default());
        assert_eq!((r.attempt.exit_code, r.attempt.outcome), (Some(1), Outcome::PermanentFailure));
    }

    #[test]
    fn hermetic_environment() {
        let work = tempfile::tempdir().unwrap();
        let rt = Runtime::local(work.path());
        let node = node_of("cwlVersion: v1.2\nid: e\nclass: CommandLineTool\nbaseCommand: [env]\nrequirements: [{class: EnvVarRequirement, envDef: {GREETING: hello}}]\ninputs: {}\noutputs: {o: stdout}\n");
        let r = run(&rt, &node, BTreeMap::new(), Resources::default());
        let Ok(outs) = r.outputs else { panic!("{:?}", r.attempt) };
        let Value::File(f) = &outs["o"] else { panic!() };
        let mut keys: Vec<String> =
            fs::read_to_string(&f.path).unwrap().lines().map(|l| l.split('=').next().unwrap().to_string()).collect();
        keys.sort();
        assert_eq!(keys, ["GREETING", "HOME", "PATH", "TMPDIR"]);
    }

    #[test]
    fn missing_binary_is_permanent() {
        let work = tempfile::tempdir().unwrap();
        let rt = Runtime::local(work.path());
        let node = node_of("cwlVersion: v1.2\nid: m\nclass: CommandLineTool\nbaseCommand: [definitely-not-a-binary-xyz]\ninputs: {}\noutputs: {}\n");
        let r = run(&rt, &node, BTreeMap::new(), Resources::default());
        assert_eq!(r.attempt.outcome, Outcome::PermanentFailure);
        assert!(matches!(r.outputs, Err(RuntimeError::Launch { permanent: true, .. })));
    }

    #[test]
    fn timeout_is_temporary() {
        let work = tempfile::tempdir().unwrap();
        let rt = Runtime::local(work.path());
        let node = node_of(
            "cwlVersion: v1.2\nid: s\nclass: CommandLineTool\nbaseCommand: [sleep, '5']\ninputs: {}\noutputs: {}\n",
        );
        let res = Resources { wall_time_secs: Some(1), ..Resources::default() };
        let r = run(&rt, &node, BTreeMap::new(), res);
        assert_eq!(r.attempt.outcome, Outcome::TemporaryFailure);
        assert!(r.attempt.duration_ms < 3000);
    }

    #[test]
    fn writing_an_input_fails_and_source_survives() {
        let work = tempfile::tempdir().unwrap();
        let src = tempfile::tempdir().unwrap();
        let file = src.path().join("data.txt");
        fs::write(&file, "original").unwrap();
        let before = crate::digest::checksum_file(&file).unwrap();
        let rt = Runtime::local(work.path());
        let node = node_of("cwlVersion: v1.2\nid: w\nclass: CommandLineTool\nbaseCommand: [sh, -c, 'chmod u+w \"$0\"; echo tampered > \"$0\"']\ninputs: {f: {type: File, inputBinding: {position: 1}}}\noutputs: {}\n");
        let inputs = BTreeMap::from([("f".to_string(), Value::File(crate::value::FileValue::capture(&file).unwrap()))]);
        let r = run(&rt, &node, inputs, Resources::default());
        assert_eq!(r.attempt.outcome, Outcome::PermanentFailure);
        assert!(matches!(r.outputs, Err(RuntimeError::InputModified(_))));
        assert_eq!(crate::digest::checksum_file(&file).unwrap(), before);
    }

    #[test]
    fn grep_count_via_stdout() {
        let work = tempfile::tempdir().unwrap();
        let src = tempfile::tempdir().unwrap();
        let file = src.path().join("log.txt");
        fs::write(&file, "error a\nok\nerror b\nerror c\n").unwrap();
        let rt = Runtime::local(work.path());
        let node = node_of("cwlVersion: v1.2\nid: g\nclass: CommandLineTool\nbaseCommand: [grep, -c]\ninputs:\n  pattern: {type: string, inputBinding: {position: 1}}\n  file: {type: File, inputBinding: {position: 2}}\noutputs: {n: stdout}\nstdout: n.txt\n");
        let inputs = BTreeMap::from([
            ("pattern".to_string(), Value::String("error".into())),
            ("file".to_string(), Value::File(crate::value::FileValue::capture(&file).unwrap())),
        ]);
        let r = run(&rt, &node, inputs, Resources::default());
        let Value::File(f) = &r.outputs.unwrap()["n"] else { panic!() };
        assert_eq!(fs::read_to_string(&f.path).unwrap(), "3\n");
    }
}
