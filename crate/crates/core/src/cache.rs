//! Content-addressed result reuse.
//!
//! Layout: `<root>/<first two hex digits>/<key>/entry.json` with the stored
//! output files below `files/`. Entries are written to `<root>/.incoming`
//! and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::digest::{self, json_digest};
use crate::document::{clause_json, tool_digest, Clause, ClauseKind};
use crate::par::{self, ExecMode};
use crate::planner::TaskNode;
use crate::runtime::copy_tree;
use crate::value::{DirectoryValue, FileValue, Value};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache I/O error at {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt cache entry {key}: {message}")]
    Corrupt { key: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub tool_digest: String,
    pub input_digest: String,
    pub env_digest: String,
    /// False when a WorkReuse clause disables reuse; such keys never match.
    pub reusable: bool,
}

impl CacheKey {
    /// The combined 64-hex key, or `None` for the no-reuse marker.
    pub fn hex(&self) -> Option<String> {
        self.reusable.then(|| {
            digest::sha256_hex(format!("{}|{}|{}", self.tool_digest, self.input_digest, self.env_digest).as_bytes())
        })
    }
}

/// Key for running `node` on `inputs`. Only the tool's own inputs count,
/// and files contribute content (checksum, size, format) rather than paths.
pub fn cache_key(node: &TaskNode, inputs: &BTreeMap<String, Value>) -> CacheKey {
    let tool = node.tool();
    let bound: serde_json::Map<String, Json> = tool
        .inputs
        .iter()
        .map(|p| (p.id.clone(), inputs.get(&p.id).map(Value::content_json).unwrap_or(Json::Null)))
        .collect();
    let clause = |kind: ClauseKind| node.clause(&kind).map(|(c, _)| clause_json(c)).unwrap_or(Json::Null);
    let image = match node.clause(&ClauseKind::Container) {
        Some((Clause::Container { image }, _)) => json!(image),
        _ => json!("host"),
    };
    let env = json!({
        "image": image,
        "env": clause(ClauseKind::EnvVars),
        "workdir": clause(ClauseKind::InitialWorkDir),
    });
    let reusable = !matches!(node.clause(&ClauseKind::WorkReuse), Some((Clause::WorkReuse { enable: false }, _)));
    CacheKey {
        tool_digest: tool_digest(tool),
        input_digest: json_digest(&Json::Object(bound)),
        env_digest: json_digest(&env),
        reusable,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: String,
    /// File paths point into the entry's `files/` directory.
    pub outputs: BTreeMap<String, Value>,
    pub created_at: String,
    pub source_run_id: String,
}

#[derive(Serialize, Deserialize)]
struct StoredEntry {
    key: String,
    created_at: String,
    source_run_id: String,
    /// Output values with paths relative to the entry directory.
    outputs: BTreeMap<String, Json>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Cache, CacheError> {
        let root = root.into();
        fs::create_dir_all(root.join(".incoming")).map_err(io_err(&root))?;
        Ok(Cache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_dir(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(key)
    }

    /// Looks `key` up, verifying every stored file. Corrupt entries are
    /// evicted; I/O problems are logged and reported as a miss.
    pub fn lookup(&self, key: &CacheKey) -> Option<CacheEntry> {
        let hex = key.hex()?;
        let dir = self.entry_dir(&hex);
        if !dir.join("entry.json").exists() {
            return None;
        }
        match self.read_verified(&hex, &dir) {
            Ok(entry) => Some(entry),
            Err(e) => {
                log::warn!("cache: discarding entry {hex}: {e}");
                if let Err(e) = fs::remove_dir_all(&dir) {
                    log::warn!("cache: cannot evict {}: {e}", dir.display());
                }
                None
            }
        }
    }

    /// Parallel lookups for many keys.
    pub fn lookup_many(&self, keys: &[CacheKey], mode: ExecMode) -> Vec<Option<CacheEntry>> {
        par::map(mode, keys, |k| self.lookup(k))
    }

    fn read_verified(&self, hex: &str, dir: &Path) -> Result<CacheEntry, CacheError> {
        let path = dir.join("entry.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let corrupt = |message: String| CacheError::Corrupt { key: hex.to_string(), message };
        let stored: StoredEntry = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if stored.key != hex {
            return Err(corrupt(format!("entry claims key {}", stored.key)));
        }
        let mut outputs = BTreeMap::new();
        for (id, j) in &stored.outputs {
            let value = value_from_stored(j, dir).ok_or_else(|| corrupt(format!("unreadable output {id}")))?;
            verify(&value).map_err(corrupt)?;
            outputs.insert(id.clone(), value);
        }
        Ok(CacheEntry { key: stored.key, outputs, created_at: stored.created_at, source_run_id: stored.source_run_id })
    }

    /// Copies `outputs` into a new entry and atomically publishes it. A
    /// concurrent store of the same key simply wins or loses the rename.
    pub fn store(
        &self,
        key: &CacheKey,
        outputs: &BTreeMap<String, Value>,
        run_id: &str,
    ) -> Result<Option<CacheEntry>, CacheError> {
        let Some(hex) = key.hex() else { return Ok(None) };
        let staging = self.root.join(".incoming").join(uuid::Uuid::new_v4().to_string());
        fs::create_dir_all(staging.join("files")).map_err(io_err(&staging))?;
        let result = self.fill(&hex, &staging, outputs, run_id);
        let stored = match result {
            Ok(s) => s,
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(e);
            }
        };
        let target = self.entry_dir(&hex);
        let parent = target.parent().expect("entry dirs have a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        if target.exists() {
            let _ = fs::remove_dir_all(&target);
        }
        if let Err(e) = fs::rename(&staging, &target) {
            let _ = fs::remove_dir_all(&staging);
            if !target.join("entry.json").exists() {
                return Err(CacheError::Io { path: target, source: e });
            }
        }
        let outputs = stored
            .outputs
            .iter()
            .map(|(k, j)| (k.clone(), value_from_stored(j, &target).expect("just written")))
            .collect();
        Ok(Some(CacheEntry { key: hex, outputs, created_at: stored.created_at, source_run_id: stored.source_run_id }))
    }

    fn fill(
        &self,
        hex: &str,
        staging: &Path,
        outputs: &BTreeMap<String, Value>,
        run_id: &str,
    ) -> Result<StoredEntry, CacheError> {
        let mut counter = 0usize;
        let mut stored = BTreeMap::new();
        for (id, value) in outputs {
            stored.insert(id.clone(), store_value(value, staging, &mut counter)?);
        }
        let entry = StoredEntry {
            key: hex.to_string(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
            source_run_id: run_id.to_string(),
            outputs: stored,
        };
        let path = staging.join("entry.json");
        let text = serde_json::to_string_pretty(&entry).expect("entry serializes");
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(entry)
    }
}

fn store_value(value: &Value, staging: &Path, counter: &mut usize) -> Result<Json, CacheError> {
    let mut slot = |basename: &str| {
        let rel = format!("files/{}/{basename}", *counter);
        *counter += 1;
        rel
    };
    Ok(match value {
        Value::File(f) => {
            let rel = slot(&f.basename);
            let dst = staging.join(&rel);
            fs::create_dir_all(dst.parent().expect("has parent")).map_err(io_err(&dst))?;
            let (sum, _) = digest::copy_and_checksum(&f.path, &dst).map_err(io_err(&f.path))?;
            if sum != f.checksum {
                return Err(CacheError::Corrupt {
                    key: String::new(),
                    message: format!("{} changed before storing", f.path.display()),
                });
            }
            let mut j = value.to_json();
            j["path"] = json!(rel);
            j
        }
        Value::Directory(d) => {
            let rel = slot(&d.basename);
            let dst = staging.join(&rel);
            copy_tree(&d.path, &dst).map_err(io_err(&d.path))?;
            let mut j = value.to_json();
            j["path"] = json!(rel);
            j
        }
        Value::Array(items) => {
            Json::Array(items.iter().map(|v| store_value(v, staging, counter)).collect::<Result<_, _>>()?)
        }
        other => other.to_json(),
    })
}

/// Rebuilds a value from its stored JSON, resolving relative paths.
fn value_from_stored(j: &Json, dir: &Path) -> Option<Value> {
    Some(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(*b),
        Json::Number(n) => match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::Float(n.as_f64()?),
        },
        Json::String(s) => Value::String(s.clone()),
        Json::Array(items) => Value::Array(items.iter().map(|i| value_from_stored(i, dir)).collect::<Option<_>>()?),
        Json::Object(m) => {
            let path = dir.join(m.get("path")?.as_str()?);
            let basename = m.get("basename")?.as_str()?.to_string();
            let checksum = m.get("checksum")?.as_str()?.to_string();
            let size = m.get("size")?.as_u64()?;
            match m.get("class")?.as_str()? {
                "File" => Value::File(FileValue {
                    path,
                    basename,
                    size,
                    checksum,
                    format: m.get("format").and_then(Json::as_str).map(str::to_string),
                    streamable: m.get("streamable").and_then(Json::as_bool).unwrap_or(false),
                }),
                "Directory" => Value::Directory(DirectoryValue { path, basename, size, checksum }),
                _ => return None,
            }
        }
    })
}

fn verify(value: &Value) -> Result<(), String> {
    match value {
        Value::File(f) => match digest::checksum_file(&f.path) {
            Ok((sum, _)) if sum == f.checksum => Ok(()),
            Ok(_) => Err(format!("checksum mismatch for {}", f.path.display())),
            Err(e) => Err(format!("{}: {e}", f.path.display())),
        },
        Value::Directory(d) => match DirectoryValue::capture(&d.path) {
            Ok(now) if now.checksum == d.checksum => Ok(()),
            Ok(_) => Err(format!("checksum mismatch for {}", d.path.display())),
            Err(e) => Err(format!("{}: {e}", d.path.display())),
        },
        Value::Array(items) => items.iter().try_for_each(verify),
        _ => Ok(()),
    }
}

/// Copies an entry's files into `dest` so a run stays self-contained.
pub fn republish(entry: &CacheEntry, dest: &Path) -> Result<BTreeMap<String, Value>, CacheError> {
    fn copy(v: &Value, dest: &Path, counter: &mut usize) -> Result<Value, CacheError> {
        Ok(match v {
            Value::File(f) => {
                let dst = dest.join(counter.to_string()).join(&f.basename);
                *counter += 1;
                fs::create_dir_all(dst.parent().expect("has parent")).map_err(io_err(&dst))?;
                fs::copy(&f.path, &dst).map_err(io_err(&f.path))?;
                Value::File(FileValue { path: dst, ..f.clone() })
            }
            Value::Directory(d) => {
                let dst = dest.join(counter.to_string()).join(&d.basename);
                *counter += 1;
                copy_tree(&d.path, &dst).map_err(io_err(&d.path))?;
                Value::Directory(DirectoryValue { path: dst, ..d.clone() })
            }
            Value::Array(items) => {
                Value::Array(items.iter().map(|i| copy(i, dest, counter)).collect::<Result<_, _>>()?)
            }
            other => other.clone(),
        })
    }
    let mut counter = 0;
    entry.outputs.iter().map(|(k, v)| Ok((k.clone(), copy(v, dest, &mut counter)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::parse_document;

    const TOOL: &str = "cwlVersion: v1.2\nid: t\nclass: CommandLineTool\nbaseCommand: [cat]\ninputs: {f: File, s: string}\noutputs: {o: stdout}\n";

    fn node(text: &str) -> TaskNode {
        let doc = parse_document(text, None).unwrap();
        crate::planner::plan_shape(&doc).unwrap().nodes.into_values().next().unwrap()
    }

    fn file(dir: &Path, name: &str, body: &str) -> Value {
        fs::write(dir.join(name), body).unwrap();
        Value::File(FileValue::capture(&dir.join(name)).unwrap())
    }

    #[test]
    fn key_ignores_paths_but_not_content() {
        let d = tempfile::tempdir().unwrap();
        let n = node(TOOL);
        let s = Value::String("x".into());
        let a = BTreeMap::from([("f".to_string(), file(d.path(), "a.txt", "same")), ("s".to_string(), s.clone())]);
        let b =
            BTreeMap::from([("f".to_string(), file(d.path(), "renamed.txt", "same")), ("s".to_string(), s.clone())]);
        let c = BTreeMap::from([("f".to_string(), file(d.path(), "c.txt", "samf")), ("s".to_string(), s)]);
        let d2 = BTreeMap::from([
            ("f".to_string(), file(d.path(), "a2.txt", "same")),
            ("s".to_string(), Value::String("y".into())),
        ]);
        assert_eq!(cache_key(&n, &a), cache_key(&n, &b));
        assert_ne!(cache_key(&n, &a), cache_key(&n, &c));
        assert_ne!(cache_key(&n, &a), cache_key(&n, &d2));
    }

    #[test]
    fn work_reuse_disabled_never_hits() {
        let d = tempfile::tempdir().unwrap();
        let n = node(&TOOL.replace("inputs:", "hints: [{class: WorkReuse, enableReuse: false}]\ninputs:"));
        let key = cache_key(&n, &BTreeMap::new());
        assert!(key.hex().is_none());
        let cache = Cache::open(d.path().join("c")).unwrap();
        assert!(cache.store(&key, &BTreeMap::new(), "r").unwrap().is_none());
        assert!(cache.lookup(&key).is_none());
    }

    #[test]
    fn store_lookup_and_evict() {
        let d = tempfile::tempdir().unwrap();
        let cache = Cache::open(d.path().join("c")).unwrap();
        let n = node(TOOL);
        let key = cache_key(&n, &BTreeMap::new());
        let unknown = CacheKey { input_digest: "0".into(), ..key.clone() };
        let outputs =
            BTreeMap::from([("o".to_string(), file(d.path(), "o.txt", "result")), ("n".to_string(), Value::Int(3))]);
        let entry = cache.store(&key, &outputs, "run-1").unwrap().unwrap();
        assert!(entry.outputs["o"].to_json()["path"].as_str().unwrap().starts_with(cache.root().to_str().unwrap()));
        let hit = cache.lookup(&key).unwrap();
        assert_eq!(hit.outputs["n"], Value::Int(3));
        assert_eq!(hit.source_run_id, "run-1");
        assert!(cache.lookup(&unknown).is_none());

        let Value::File(f) = &hit.outputs["o"] else { panic!() };
        fs::remove_file(&f.path).unwrap();
        assert!(cache.lookup(&key).is_none());
        assert!(!cache.entry_dir(&key.hex().unwrap()).exists());
    }
}
