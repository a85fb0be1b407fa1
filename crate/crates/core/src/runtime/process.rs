use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::stage::{StagedDirectory, CONTAINER_OUTDIR, CONTAINER_TMPDIR};

/// Everything needed to start one process.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchSpec {
    pub program: String,
    pub args: Vec<String>,
    /// The complete environment; nothing is inherited.
    pub env: BTreeMap<String, String>,
    pub cwd: PathBuf,
    pub stdin: Option<PathBuf>,
    pub stdout: PathBuf,
    pub stderr: PathBuf,
}

/// Starts processes. Swappable so tests can observe or fake launches.
pub trait ProcessLauncher: Send + Sync {
    fn spawn(&self, spec: &LaunchSpec) -> io::Result<Child>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemLauncher;

impl ProcessLauncher for SystemLauncher {
    fn spawn(&self, spec: &LaunchSpec) -> io::Result<Child> {
        let stdin = match &spec.stdin {
            Some(p) => Stdio::from(File::open(p)?),
            None => Stdio::null(),
        };
        Command::new(&spec.program)
            .args(&spec.args)
            .env_clear()
            .envs(&spec.env)
            .current_dir(&spec.cwd)
            .stdin(stdin)
            .stdout(File::create(&spec.stdout)?)
            .stderr(File::create(&spec.stderr)?)
            .spawn()
    }
}

/// Counts launches before delegating.
#[derive(Clone)]
pub struct CountingLauncher {
    inner: Arc<dyn ProcessLauncher>,
    count: Arc<AtomicUsize>,
}

impl CountingLauncher {
    pub fn new(inner: Arc<dyn ProcessLauncher>) -> Self {
        CountingLauncher { inner, count: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::SeqCst);
    }
}

impl std::fmt::Debug for CountingLauncher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CountingLauncher").field("count", &self.count()).finish()
    }
}

impl ProcessLauncher for CountingLauncher {
    fn spawn(&self, spec: &LaunchSpec) -> io::Result<Child> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.spawn(spec)
    }
}

pub(crate) enum WaitResult {
    Exited(i32),
    TimedOut,
}

/// Waits for `child`, killing it once `limit` has passed.
pub(crate) fn wait_with_limit(child: &mut Child, limit: Option<Duration>) -> io::Result<WaitResult> {
    let Some(limit) = limit else {
        return child.wait().map(|s| WaitResult::Exited(exit_code(s)));
    };
    let start = Instant::now();
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(WaitResult::Exited(exit_code(status)));
        }
        if start.elapsed() >= limit {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(WaitResult::TimedOut);
        }
        std::thread::sleep(pause.min(limit.saturating_sub(start.elapsed())));
        pause = (pause * 2).min(Duration::from_millis(50));
    }
}

/// Shell convention: death by signal `n` reads as 128 + n.
fn exit_code(status: std::process::ExitStatus) -> i32 {
    status.code().or_else(|| status.signal().map(|s| 128 + s)).unwrap_or(-1)
}

/// Adapter for a docker-compatible container CLI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerRuntime {
    pub program: String,
}

impl Default for ContainerRuntime {
    fn default() -> Self {
        ContainerRuntime { program: "docker".into() }
    }
}

/// Exit statuses the docker CLI uses for its own failures.
pub const CONTAINER_LAUNCH_CODES: [i32; 3] = [125, 126, 127];

impl ContainerRuntime {
    /// True when the CLI exists and can reach its daemon.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("info")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    }

    /// Host-to-container path pairs, longest host prefix first.
    pub fn path_map(staged: &StagedDirectory) -> Vec<(String, String)> {
        let mut map: Vec<(String, String)> =
            staged.files.iter().map(|f| (f.staged.to_string_lossy().into_owned(), f.container_path.clone())).collect();
        map.push((staged.outdir.to_string_lossy().into_owned(), CONTAINER_OUTDIR.into()));
        map.push((staged.tmpdir.to_string_lossy().into_owned(), CONTAINER_TMPDIR.into()));
        map.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        map
    }

    /// Replaces a leading host path with its in-container equivalent.
    pub fn rewrite(word: &str, map: &[(String, String)]) -> String {
        for (host, inner) in map {
            if let Some(rest) = word.strip_prefix(host.as_str()) {
                if rest.is_empty() || rest.starts_with('/') {
                    return format!("{inner}{rest}");
                }
            }
            if let Some(pos) = word.find(&format!("={host}")) {
                let (head, tail) = word.split_at(pos + 1);
                return format!("{head}{}", Self::rewrite(tail, map));
            }
        }
        word.to_string()
    }

    /// The full `docker run` argument list (program excluded).
    pub fn run_args(
        &self,
        image: &str,
        argv: &[String],
        env: &BTreeMap<String, String>,
        staged: &StagedDirectory,
        interactive: bool,
    ) -> Vec<String> {
        let map = Self::path_map(staged);
        let mut args: Vec<String> = vec!["run".into(), "--rm".into()];
        if interactive {
            args.push("-i".into());
        }
        args.extend(["--workdir".into(), CONTAINER_OUTDIR.into()]);
        for f in &staged.files {
            args.push("-v".into());
            args.push(format!("{}:{}:ro", f.staged.display(), f.container_path));
        }
        args.push("-v".into());
        args.push(format!("{}:{CONTAINER_OUTDIR}:rw", staged.outdir.display()));
        args.push("-v".into());
        args.push(format!("{}:{CONTAINER_TMPDIR}:rw", staged.tmpdir.display()));
        for (k, v) in env {
            args.push("--env".into());
            args.push(format!("{k}={}", Self::rewrite(v, &map)));
        }
        args.push(image.to_string());
        args.extend(argv.iter().map(|w| Self::rewrite(w, &map)));
        args
    }
}

/// Environment for the container CLI process itself (not the tool).
pub(crate) fn container_client_env() -> BTreeMap<String, String> {
    std::env::vars()
        .filter(|(k, _)| k == "PATH" || k == "HOME" || k.starts_with("DOCKER_") || k == "XDG_RUNTIME_DIR")
        .collect()
}

pub(crate) fn host_path() -> String {
    std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into())
}

pub(crate) fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
