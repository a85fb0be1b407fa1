//! End-to-end wiring: load, validate, plan, run, publish, record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value as Json;

use crate::cache::Cache;
use crate::document::{canonical_digest, load_document, Body, Clause, Document, DocumentError, FsLoader, RunRef};
use crate::par::ExecMode;
use crate::planner::{plan, JobOrder, PlanError};
use crate::provenance::write_provenance;
use crate::runtime::{copy_tree, ContainerRuntime, ProcessLauncher, Runtime, SystemLauncher};
use crate::scheduler::{self, OnError, RunConfig, RunResult, RunStatus, Services};
use crate::validator::{has_errors, validate, Capacity, Diagnostic, SupportMatrix};
use crate::value::{DirectoryValue, FileValue, Value};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error("validation failed with {} error(s)", .0.iter().filter(|d| d.is_error()).count())]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("I/O error: {0}")]
    Io(String),
}

/// Everything a run can be configured with.
#[derive(Clone)]
pub struct EngineOptions {
    pub parallelism: usize,
    pub retries: u32,
    pub machine: Capacity,
    pub enable_reuse: bool,
    pub on_error: OnError,
    pub cache_dir: Option<PathBuf>,
    pub outdir: PathBuf,
    /// Attempt directories go here and are kept; by default a temporary
    /// directory is used and removed after the run.
    pub work_dir: Option<PathBuf>,
    /// Use a container runtime when one is available.
    pub use_containers: bool,
    pub container_runtime: ContainerRuntime,
    pub streaming: bool,
    pub exec_mode: ExecMode,
    pub launcher: Arc<dyn ProcessLauncher>,
    pub write_provenance: bool,
}

impl std::fmt::Debug for EngineOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineOptions")
            .field("parallelism", &self.parallelism)
            .field("retries", &self.retries)
            .field("machine", &self.machine)
            .field("enable_reuse", &self.enable_reuse)
            .field("cache_dir", &self.cache_dir)
            .field("outdir", &self.outdir)
            .finish_non_exhaustive()
    }
}

impl EngineOptions {
    /// Defaults for this host: parallelism equals the core count.
    pub fn new(outdir: impl Into<PathBuf>) -> Self {
        let outdir = outdir.into();
        let machine = Capacity::detect(&std::env::temp_dir());
        EngineOptions {
            parallelism: machine.cores as usize,
            retries: 0,
            machine,
            enable_reuse: true,
            on_error: OnError::Stop,
            cache_dir: None,
            outdir,
            work_dir: None,
            use_containers: true,
            container_runtime: ContainerRuntime::default(),
            streaming: false,
            exec_mode: ExecMode::default(),
            launcher: Arc::new(SystemLauncher),
            write_provenance: true,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            parallelism: self.parallelism.max(1),
            retries: self.retries,
            machine: self.machine,
            enable_reuse: self.enable_reuse && self.cache_dir.is_some(),
            on_error: self.on_error,
            exec_mode: self.exec_mode,
        }
    }
}

/// True if any clause anywhere in `doc` names a container image.
pub fn mentions_containers(doc: &Document) -> bool {
    let has = |cs: &[Clause]| cs.iter().any(|c| matches!(c, Clause::Container { .. }));
    match &doc.body {
        Body::Tool(t) => has(&t.requirements) || has(&t.hints),
        Body::Workflow(w) => {
            has(&w.requirements)
                || has(&w.hints)
                || w.steps.iter().any(|s| {
                    has(&s.requirements)
                        || has(&s.hints)
                        || matches!(&s.run, RunRef::Document(d) if mentions_containers(d))
                })
        }
    }
}

/// Whether containers will actually be used for `doc`.
pub fn containers_enabled(doc: &Document, opts: &EngineOptions) -> bool {
    opts.use_containers && mentions_containers(doc) && opts.container_runtime.available()
}

pub fn support_matrix(opts: &EngineOptions, containers: bool) -> SupportMatrix {
    SupportMatrix::new(opts.machine).with_containers(containers)
}

/// Parses a file and resolves everything it references.
pub fn load(path: &Path) -> Result<Document, PipelineError> {
    Ok(load_document(path, &FsLoader)?)
}

/// Validation that fails on errors and hands back the warnings.
pub fn check(doc: &Document, matrix: &SupportMatrix) -> Result<Vec<Diagnostic>, PipelineError> {
    let diags = validate(doc, matrix);
    if has_errors(&diags) {
        Err(PipelineError::Invalid(diags))
    } else {
        Ok(diags)
    }
}

/// A finished run whose outputs were copied to the output directory.
#[derive(Debug)]
pub struct RunOutcome {
    pub result: RunResult,
    /// Workflow outputs with paths inside the output directory.
    pub outputs: BTreeMap<String, Value>,
    pub warnings: Vec<Diagnostic>,
    pub provenance: Option<PathBuf>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.result.status == RunStatus::Success
    }

    /// The output object printed by the command-line front end.
    pub fn output_json(&self) -> Json {
        Json::Object(self.outputs.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
    }
}

/// Runs a workflow file with an optional job file.
pub fn run_file(workflow: &Path, job: Option<&Path>, opts: &EngineOptions) -> Result<RunOutcome, PipelineError> {
    let doc = load(workflow)?;
    let (text, base) = match job {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| PipelineError::Io(format!("{}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None => (String::new(), std::env::current_dir().unwrap_or_default()),
    };
    run_document(&doc, &text, &base, opts)
}

/// Validates, plans and runs an already loaded document.
pub fn run_document(
    doc: &Document,
    job_text: &str,
    job_base: &Path,
    opts: &EngineOptions,
) -> Result<RunOutcome, PipelineError> {
    let containers = containers_enabled(doc, opts);
    let warnings = check(doc, &support_matrix(opts, containers))?;
    let job = JobOrder::parse(doc, job_text, job_base, opts.exec_mode)?;
    let graph = Arc::new(plan(doc, &job)?);

    let io = |e: std::io::Error| PipelineError::Io(e.to_string());
    let temp;
    let work_root = match &opts.work_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(io)?;
            tempfile::Builder::new().prefix("run-").tempdir_in(d).map_err(io)?.keep()
        }
        None => {
            temp = tempfile::Builder::new().prefix("miniwfl-").tempdir().map_err(io)?;
            temp.path().to_path_buf()
        }
    };
    let cache = match (&opts.cache_dir, opts.enable_reuse) {
        (Some(dir), true) => match Cache::open(dir) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("cache disabled: {e}");
                None
            }
        },
        _ => None,
    };
    let services = Services {
        runtime: Runtime {
            work_root,
            launcher: Arc::clone(&opts.launcher),
            container: containers.then(|| opts.container_runtime.clone()),
            streaming: opts.streaming,
            mode: opts.exec_mode,
        },
        cache,
    };
    let mut result = scheduler::run(graph, &opts.run_config(), &services);
    result.workflow_digest = Some(canonical_digest(doc));
    result.job_order = job.values.clone();

    fs::create_dir_all(&opts.outdir).map_err(io)?;
    let outdir = fs::canonicalize(&opts.outdir).map_err(io)?;
    let outputs = publish_outputs(&result.outputs, &outdir).map_err(io)?;
    let provenance = if opts.write_provenance {
        Some(write_provenance(&result, &outdir.join("provenance")).map_err(io)?)
    } else {
        None
    };
    Ok(RunOutcome { result, outputs, warnings, provenance })
}

/// Copies every file and directory in `outputs` into `outdir`. Outputs of
/// the same run that share a basename are renamed (`name_2.ext`, ...).
pub fn publish_outputs(outputs: &BTreeMap<String, Value>, outdir: &Path) -> std::io::Result<BTreeMap<String, Value>> {
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut out = BTreeMap::new();
    for (k, v) in outputs {
        out.insert(k.clone(), publish(v, outdir, &mut taken)?);
    }
    Ok(out)
}

fn free_name(basename: &str, taken: &mut BTreeSet<String>) -> String {
    let (stem, ext) = match basename.rfind('.') {
        Some(i) if i > 0 => (&basename[..i], &basename[i..]),
        _ => (basename, ""),
    };
    let mut n = 1;
    loop {
        let name = if n == 1 { basename.to_string() } else { format!("{stem}_{n}{ext}") };
        if !taken.contains(&name) {
            taken.insert(name.clone());
            return name;
        }
        n += 1;
    }
}

/// Earlier runs' results in the same output directory are replaced.
fn remove_existing(path: &Path) -> std::io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(_) => Ok(()),
    }
}

fn publish(v: &Value, outdir: &Path, taken: &mut BTreeSet<String>) -> std::io::Result<Value> {
    Ok(match v {
        Value::File(f) => {
            let dst = outdir.join(free_name(&f.basename, taken));
            remove_existing(&dst)?;
            fs::copy(&f.path, &dst)?;
            fs::set_permissions(&dst, fs::Permissions::from_mode(0o644))?;
            Value::File(FileValue { path: dst.clone(), basename: crate::value::basename_of(&dst), ..f.clone() })
        }
        Value::Directory(d) => {
            let dst = outdir.join(free_name(&d.basename, taken));
            remove_existing(&dst)?;
            copy_tree(&d.path, &dst)?;
            Value::Directory(DirectoryValue {
                path: dst.clone(),
                basename: crate::value::basename_of(&dst),
                ..d.clone()
            })
        }
        Value::Array(items) => Value::Array(items.iter().map(|i| publish(i, outdir, taken)).collect::<Result<_, _>>()?),
        other => other.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collisions_get_suffixes() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mk = |sub: &str| {
            let d = src.path().join(sub);
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("r.txt"), sub).unwrap();
            Value::File(FileValue::capture(&d.join("r.txt")).unwrap())
        };
        let outputs = BTreeMap::from([("a".to_string(), mk("1")), ("b".to_string(), mk("2"))]);
        let published = publish_outputs(&outputs, out.path()).unwrap();
        let names: Vec<String> =
            published.values().map(|v| v.to_json()["basename"].as_str().unwrap().to_string()).collect();
        assert_eq!(names, ["r.txt", "r_2.txt"]);
        assert_eq!(fs::read_to_string(out.path().join("r_2.txt")).unwrap(), "2");
    }
}
