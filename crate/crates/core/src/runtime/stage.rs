use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use super::RuntimeError;
use crate::digest;
use crate::document::{ToolDescription, WorkDirEntry};
use crate::expression::EvalContext;
use crate::par::{self, ExecMode};
use crate::value::{DirectoryValue, FileValue, Value};

/// In-container locations of staged data.
pub const CONTAINER_INPUTS: &str = "/miniwfl/inputs";
pub const CONTAINER_OUTDIR: &str = "/miniwfl/outdir";
pub const CONTAINER_TMPDIR: &str = "/tmp";

#[derive(Debug, Clone, PartialEq)]
pub struct StagedFile {
    pub source: PathBuf,
    pub staged: PathBuf,
    pub container_path: String,
    pub checksum: String,
    pub is_dir: bool,
    /// Fed through a named pipe; cannot be re-verified afterwards.
    pub streamed: bool,
}

/// A fresh, private directory tree for one attempt.
#[derive(Debug)]
pub struct StagedDirectory {
    pub root: PathBuf,
    pub outdir: PathBuf,
    pub tmpdir: PathBuf,
    /// Tool input values with paths pointing at the staged copies.
    pub inputs: BTreeMap<String, Value>,
    pub files: Vec<StagedFile>,
    feeders: Vec<(PathBuf, JoinHandle<io::Result<()>>)>,
}

pub(crate) fn safe_name(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Pending {
    source: PathBuf,
    staged: PathBuf,
    container_path: String,
    checksum: String,
    is_dir: bool,
    stream: bool,
}

/// Creates `<work_root>/<task>/attempt-<n>` (which must not exist yet) and
/// copies every file-valued tool input into `inputs/<k>/<basename>`,
/// re-verifying checksums on the way.
pub fn stage(
    task_id: &str,
    attempt: u32,
    tool: &ToolDescription,
    inputs: &BTreeMap<String, Value>,
    work_root: &Path,
    streaming: bool,
    mode: ExecMode,
) -> Result<StagedDirectory, RuntimeError> {
    let staging = |m: String| RuntimeError::Staging(m);
    let task_dir = work_root.join(safe_name(task_id));
    fs::create_dir_all(&task_dir).map_err(|e| staging(format!("cannot create {}: {e}", task_dir.display())))?;
    let root = task_dir.join(format!("attempt-{attempt}"));
    fs::create_dir(&root).map_err(|e| staging(format!("cannot create fresh directory {}: {e}", root.display())))?;
    let outdir = root.join("outdir");
    let tmpdir = root.join("tmp");
    let inputs_root = root.join("inputs");
    for d in [&outdir, &tmpdir, &inputs_root] {
        fs::create_dir(d).map_err(|e| staging(format!("cannot create {}: {e}", d.display())))?;
    }

    let mut counter = 0usize;
    let mut pending = Vec::new();
    let mut staged_inputs = BTreeMap::new();
    for param in &tool.inputs {
        let Some(value) = inputs.get(&param.id) else { continue };
        let stream = streaming && param.streamable;
        let staged = relocate(value, &inputs_root, &mut counter, stream, &mut pending);
        staged_inputs.insert(param.id.clone(), staged);
    }

    let copies: Vec<&Pending> = pending.iter().filter(|p| !(p.stream && !p.is_dir)).collect();
    par::try_map(mode, &copies, |p| copy_verified(p))?;

    let mut feeders = Vec::new();
    for p in pending.iter().filter(|p| p.stream && !p.is_dir) {
        feeders.push((p.staged.clone(), spawn_feeder(&p.source, &p.staged)?));
    }

    let files = pending
        .into_iter()
        .map(|p| StagedFile {
            source: p.source,
            staged: p.staged,
            container_path: p.container_path,
            checksum: p.checksum,
            is_dir: p.is_dir,
            streamed: p.stream && !p.is_dir,
        })
        .collect();
    Ok(StagedDirectory { root, outdir, tmpdir, inputs: staged_inputs, files, feeders })
}

/// Assigns staged locations to every file or directory inside `value`.
fn relocate(value: &Value, inputs_root: &Path, counter: &mut usize, stream: bool, pending: &mut Vec<Pending>) -> Value {
    let mut place = |basename: &str| {
        let k = *counter;
        *counter += 1;
        (inputs_root.join(k.to_string()).join(basename), format!("{CONTAINER_INPUTS}/{k}/{basename}"))
    };
    match value {
        Value::File(f) => {
            let (staged, container_path) = place(&f.basename);
            let stream = stream && f.streamable;
            pending.push(Pending {
                source: f.path.clone(),
                staged: staged.clone(),
                container_path,
                checksum: f.checksum.clone(),
                is_dir: false,
                stream,
            });
            Value::File(FileValue { path: staged, ..f.clone() })
        }
        Value::Directory(d) => {
            let (staged, container_path) = place(&d.basename);
            pending.push(Pending {
                source: d.path.clone(),
                staged: staged.clone(),
                container_path,
                checksum: d.checksum.clone(),
                is_dir: true,
                stream: false,
            });
            Value::Directory(DirectoryValue { path: staged, ..d.clone() })
        }
        Value::Array(items) => {
            Value::Array(items.iter().map(|i| relocate(i, inputs_root, counter, stream, pending)).collect())
        }
        other => other.clone(),
    }
}

fn copy_verified(p: &Pending) -> Result<(), RuntimeError> {
    let parent = p.staged.parent().expect("staged paths have a parent");
    fs::create_dir_all(parent).map_err(|e| RuntimeError::Staging(format!("{}: {e}", parent.display())))?;
    if p.is_dir {
        copy_tree(&p.source, &p.staged).map_err(|e| RuntimeError::Staging(format!("{}: {e}", p.source.display())))?;
        let now = DirectoryValue::capture(&p.staged).map_err(|e| RuntimeError::Staging(e.to_string()))?;
        if now.checksum != p.checksum {
            return Err(RuntimeError::Staging(format!("input changed during run: {}", p.source.display())));
        }
        set_readonly_tree(&p.staged);
        return Ok(());
    }
    let (sum, _) = digest::copy_and_checksum(&p.source, &p.staged)
        .map_err(|e| RuntimeError::Staging(format!("missing or unreadable input {}: {e}", p.source.display())))?;
    if sum != p.checksum {
        return Err(RuntimeError::Staging(format!("input changed during run: {}", p.source.display())));
    }
    let _ = fs::set_permissions(&p.staged, fs::Permissions::from_mode(0o444));
    Ok(())
}

pub(crate) fn copy_tree(src: &Path, dst: &Path) -> io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let target = dst.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn set_readonly_tree(path: &Path) {
    if let Ok(entries) = fs::read_dir(path) {
        for e in entries.flatten() {
            if e.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                set_readonly_tree(&e.path());
            } else {
                let _ = fs::set_permissions(e.path(), fs::Permissions::from_mode(0o444));
            }
        }
    }
    let _ = fs::set_permissions(path, fs::Permissions::from_mode(0o555));
}

/// Creates a named pipe at `fifo` and a thread that feeds `source` into it.
fn spawn_feeder(source: &Path, fifo: &Path) -> Result<JoinHandle<io::Result<()>>, RuntimeError> {
    use std::ffi::CString;
    use std::os::unix::ffi::OsStrExt;
    let parent = fifo.parent().expect("fifo has a parent");
    fs::create_dir_all(parent).map_err(|e| RuntimeError::Staging(e.to_string()))?;
    let c = CString::new(fifo.as_os_str().as_bytes()).map_err(|e| RuntimeError::Staging(e.to_string()))?;
    // SAFETY: `c` is a valid NUL-terminated path.
    if unsafe { libc::mkfifo(c.as_ptr(), 0o444) } != 0 {
        return Err(RuntimeError::Staging(format!("mkfifo {}: {}", fifo.display(), io::Error::last_os_error())));
    }
    let mut src = File::open(source).map_err(|e| RuntimeError::Staging(format!("{}: {e}", source.display())))?;
    let fifo = fifo.to_path_buf();
    Ok(std::thread::spawn(move || {
        let mut sink = OpenOptions::new().write(true).open(&fifo)?;
        match io::copy(&mut src, &mut sink) {
            Ok(_) => Ok(()),
            // The reader may legitimately stop early.
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            Err(e) => Err(e),
        }
    }))
}

impl StagedDirectory {
    /// Unblocks and joins pipe feeders whose reader never showed up.
    pub fn finish_streams(&mut self) {
        for (fifo, handle) in self.feeders.drain(..) {
            if !handle.is_finished() {
                // Opening the read end lets a writer blocked in open()
                // proceed; dropping it then breaks the pipe.
                let _ = OpenOptions::new().read(true).custom_flags(libc::O_NONBLOCK).open(&fifo);
            }
            match handle.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => log::warn!("streaming {} failed: {e}", fifo.display()),
                Err(_) => log::warn!("streaming thread for {} panicked", fifo.display()),
            }
        }
    }

    /// Staged inputs whose content no longer matches.
    pub fn modified_inputs(&self) -> Vec<PathBuf> {
        self.files
            .iter()
            .filter(|f| !f.streamed)
            .filter(|f| {
                let now = if f.is_dir {
                    DirectoryValue::capture(&f.staged).map(|d| d.checksum)
                } else {
                    digest::checksum_file(&f.staged).map(|(s, _)| s)
                };
                now.map(|s| s != f.checksum).unwrap_or(true)
            })
            .map(|f| f.staged.clone())
            .collect()
    }

    /// Materializes InitialWorkDir entries in the output directory.
    pub fn materialize(&self, listing: &[WorkDirEntry], ctx: &EvalContext) -> Result<(), RuntimeError> {
        let mut taken = BTreeSet::new();
        for entry in listing {
            let value = entry.entry.eval(ctx).map_err(RuntimeError::Expression)?;
            let name = match &entry.entryname {
                Some(n) => Some(n.eval_string(ctx).map_err(RuntimeError::Expression)?),
                None => None,
            };
            let mut items: Vec<(String, Value)> = Vec::new();
            match (&value, name) {
                (Value::Array(vs), None) => {
                    for v in vs {
                        items.push((value_basename(v)?, v.clone()));
                    }
                }
                (v, Some(n)) => items.push((n, v.clone())),
                (v, None) => items.push((value_basename(v)?, v.clone())),
            }
            for (name, v) in items {
                if name.is_empty() || name.contains('/') || name == "." || name == ".." {
                    return Err(RuntimeError::Staging(format!("invalid work directory entry name {name:?}")));
                }
                if !taken.insert(name.clone()) || self.outdir.join(&name).exists() {
                    return Err(RuntimeError::Staging(format!("basename collision in working directory: {name}")));
                }
                let target = self.outdir.join(&name);
                let result = match &v {
                    Value::File(f) => fs::copy(&f.path, &target).map(|_| ()),
                    Value::Directory(d) => copy_tree(&d.path, &target),
                    Value::Null => continue,
                    other => fs::write(&target, other.interpolate()),
                };
                result.map_err(|e| RuntimeError::Staging(format!("cannot materialize {name}: {e}")))?;
                if matches!(v, Value::File(_)) {
                    let _ = fs::set_permissions(&target, fs::Permissions::from_mode(0o644));
                }
            }
        }
        Ok(())
    }
}

fn value_basename(v: &Value) -> Result<String, RuntimeError> {
    match v {
        Value::File(f) => Ok(f.basename.clone()),
        Value::Directory(d) => Ok(d.basename.clone()),
        _ => Err(RuntimeError::Staging("literal work directory entries need an entryname".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_document;
    use crate::expression::Template;

    fn tool() -> ToolDescription {
        parse_document(
            "cwlVersion: v1.2\nclass: CommandLineTool\nbaseCommand: [cat]\ninputs: {a: File, b: File}\n",
            None,
        )
        .unwrap()
        .as_tool()
        .unwrap()
        .clone()
    }

    fn file(dir: &Path, name: &str, body: &str) -> Value {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        Value::File(FileValue::capture(&p).unwrap())
    }

    #[test]
    fn stages_copies_read_only() {
        let src = tempfile::tempdir().unwrap();
        let work = tempfile::tempdir().unwrap();
        let inputs = BTreeMap::from([
            ("a".to_string(), file(src.path(), "x.txt", "1")),
            ("b".to_string(), file(src.path(), "y.txt", "2")),
        ]);
        let staged = stage("t", 1, &tool(), &inputs, work.path(), false, ExecMode::Sequential).unwrap();
        assert_eq!(staged.files.len(), 2);
        for f in &staged.files {
            assert!(f.staged.starts_with(&staged.root));
            let mode = fs::metadata(&f.staged).unwrap().permissions().mode();
            assert_eq!(mode & 0o222, 0);
        }
        assert!(staged.modified_inputs().is_empty());
        assert!(stage("t", 1, &tool(), &inputs, work.path(), false, ExecMode::Sequential).is_err());
    }

    #[test]
    fn drift_since_load_is_detected() {
        let src = tempfile::tempdir().unwrap();
        let work = tempfile::tempdir().unwrap();
        let a = file(src.path(), "x.txt", "1");
        fs::write(src.path().join("x.txt"), "changed").unwrap();
        let inputs = BTreeMap::from([("a".to_string(), a)]);
        let err = stage("t", 1, &tool(), &inputs, work.path(), false, ExecMode::Sequential).unwrap_err();
        assert!(err.to_string().contains("input changed during run"), "{err}");
    }

    #[test]
    fn work_dir_collisions() {
        let src = tempfile::tempdir().unwrap();
        let work = tempfile::tempdir().unwrap();
        let inputs = BTreeMap::from([
            ("a".to_string(), file(src.path(), "same.txt", "1")),
            ("b".to_string(), file(src.path(), "other.txt", "2")),
        ]);
        let staged = stage("t", 1, &tool(), &inputs, work.path(), false, ExecMode::Sequential).unwrap();
        let ctx = EvalContext { inputs: staged.inputs.clone(), ..Default::default() };
        let listing = vec![
            WorkDirEntry {
                entryname: Some(Template::parse("same.txt").unwrap()),
                entry: Template::parse("$(inputs.a)").unwrap(),
            },
            WorkDirEntry {
                entryname: Some(Template::parse("same.txt").unwrap()),
                entry: Template::parse("$(inputs.b)").unwrap(),
            },
        ];
        let err = staged.materialize(&listing, &ctx).unwrap_err();
        assert!(err.to_string().contains("collision") && err.to_string().contains("same.txt"), "{err}");
    }
}
