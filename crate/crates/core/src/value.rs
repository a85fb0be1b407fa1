//! Runtime values flowing along workflow edges.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map};

use crate::digest::{self, CHECKSUM_PREFIX};
use crate::document::{BaseType, DataType};
use crate::par::{self, ExecMode};

/// A staged or produced file, identified by content.
#[derive(Debug, Clone, PartialEq)]
pub struct FileValue {
    pub path: PathBuf,
    pub basename: String,
    pub size: u64,
    pub checksum: String,
    pub format: Option<String>,
    pub streamable: bool,
}

impl FileValue {
    /// Captures `path` as it is right now (checksum and size).
    pub fn capture(path: &Path) -> io::Result<FileValue> {
        let path = absolute(path)?;
        let meta = fs::metadata(&path)?;
        if !meta.is_file() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} is not a regular file", path.display()),
            ));
        }
        let (checksum, size) = digest::checksum_file(&path)?;
        Ok(FileValue { basename: basename_of(&path), path, size, checksum, format: None, streamable: false })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryValue {
    pub path: PathBuf,
    pub basename: String,
    /// Total size of all regular files below the directory.
    pub size: u64,
    /// Digest over the sorted listing of relative paths and file checksums.
    pub checksum: String,
}

impl DirectoryValue {
    pub fn capture(path: &Path) -> io::Result<DirectoryValue> {
        let path = absolute(path)?;
        if !fs::metadata(&path)?.is_dir() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{} is not a directory", path.display())));
        }
        let mut listing = String::new();
        let mut size = 0;
        walk_listing(&path, Path::new(""), &mut listing, &mut size)?;
        Ok(DirectoryValue {
            basename: basename_of(&path),
            checksum: format!("{CHECKSUM_PREFIX}{}", digest::sha256_hex(listing.as_bytes())),
            path,
            size,
        })
    }
}

fn walk_listing(root: &Path, rel: &Path, out: &mut String, size: &mut u64) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(root.join(rel))?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let child = rel.join(entry.file_name());
        let ty = entry.file_type()?;
        if ty.is_dir() {
            out.push_str(&format!("d {}\n", child.display()));
            walk_listing(root, &child, out, size)?;
        } else {
            let (sum, n) = digest::checksum_file(&root.join(&child))?;
            *size += n;
            out.push_str(&format!("f {} {}\n", child.display(), sum));
        }
    }
    Ok(())
}

pub(crate) fn basename_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn absolute(path: &Path) -> io::Result<PathBuf> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    String(String),
    File(FileValue),
    Directory(DirectoryValue),
    Array(Vec<Value>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::String(_) => "string",
            Value::File(_) => "File",
            Value::Directory(_) => "Directory",
            Value::Array(_) => "array",
        }
    }

    /// Output-object rendering. Files carry path, basename, checksum and size.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => json!(b),
            Value::Int(i) => json!(i),
            Value::Float(f) => json!(f),
            Value::String(s) => json!(s),
            Value::File(f) => {
                let mut m = Map::new();
                m.insert("class".into(), json!("File"));
                m.insert("path".into(), json!(f.path.to_string_lossy()));
                m.insert("basename".into(), json!(f.basename));
                m.insert("checksum".into(), json!(f.checksum));
                m.insert("size".into(), json!(f.size));
                if let Some(fmt) = &f.format {
                    m.insert("format".into(), json!(fmt));
                }
                if f.streamable {
                    m.insert("streamable".into(), json!(true));
                }
                serde_json::Value::Object(m)
            }
            Value::Directory(d) => json!({
                "class": "Directory",
                "path": d.path.to_string_lossy(),
                "basename": d.basename,
                "checksum": d.checksum,
                "size": d.size,
            }),
            Value::Array(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
        }
    }

    /// Path-independent rendering: files and directories contribute only
    /// checksum, size and format. Used for cache keys and provenance.
    pub fn content_json(&self) -> serde_json::Value {
        match self {
            Value::File(f) => {
                let mut m = Map::new();
                m.insert("class".into(), json!("File"));
                m.insert("checksum".into(), json!(f.checksum));
                m.insert("size".into(), json!(f.size));
                if let Some(fmt) = &f.format {
                    m.insert("format".into(), json!(fmt));
                }
                serde_json::Value::Object(m)
            }
            Value::Directory(d) => json!({"class": "Directory", "checksum": d.checksum, "size": d.size}),
            Value::Array(items) => serde_json::Value::Array(items.iter().map(Value::content_json).collect()),
            other => other.to_json(),
        }
    }

    /// Visits every file and directory value in depth-first order.
    pub fn for_each_path<F: FnMut(&Path)>(&self, f: &mut F) {
        match self {
            Value::File(file) => f(&file.path),
            Value::Directory(dir) => f(&dir.path),
            Value::Array(items) => items.iter().for_each(|v| v.for_each_path(f)),
            _ => {}
        }
    }

    /// Does this value inhabit `ty`?
    pub fn conforms_to(&self, ty: &DataType) -> bool {
        if self.is_null() {
            return ty.optional || ty.base == BaseType::Null && !ty.array;
        }
        if ty.array {
            return match self {
                Value::Array(items) => items.iter().all(|v| v.conforms_to(&ty.item())),
                _ => false,
            };
        }
        matches!(
            (ty.base, self),
            (BaseType::File, Value::File(_))
                | (BaseType::Directory, Value::Directory(_))
                | (BaseType::String, Value::String(_))
                | (BaseType::Int, Value::Int(_))
                | (BaseType::Float, Value::Float(_))
                | (BaseType::Boolean, Value::Bool(_))
        )
    }

    /// Converts a JSON literal (job order entry or document default) into a
    /// typed value. Relative file paths resolve against `base_dir`; files are
    /// checksummed on load.
    pub fn from_json(
        json: &serde_json::Value,
        ty: &DataType,
        base_dir: &Path,
        mode: ExecMode,
    ) -> Result<Value, ValueError> {
        use serde_json::Value as J;
        if json.is_null() {
            return if ty.optional || ty.base == BaseType::Null {
                Ok(Value::Null)
            } else {
                Err(ValueError::Type { expected: ty.to_string(), found: "null".into() })
            };
        }
        if ty.array {
            let J::Array(items) = json else {
                return Err(ValueError::Type { expected: ty.to_string(), found: json_kind(json).into() });
            };
            let item_ty = ty.item();
            let values =
                par::try_map(mode, items, |item| Value::from_json(item, &item_ty, base_dir, ExecMode::Sequential))?;
            return Ok(Value::Array(values));
        }
        let mismatch = || ValueError::Type { expected: ty.to_string(), found: json_kind(json).into() };
        match (ty.base, json) {
            (BaseType::String, J::String(s)) => Ok(Value::String(s.clone())),
            (BaseType::Boolean, J::Bool(b)) => Ok(Value::Bool(*b)),
            (BaseType::Int, J::Number(n)) => n.as_i64().map(Value::Int).ok_or_else(mismatch),
            (BaseType::Float, J::Number(n)) => n.as_f64().map(Value::Float).ok_or_else(mismatch),
            (BaseType::File, _) => {
                let (path, format, streamable) = location_of(json, "File").ok_or_else(mismatch)?;
                let full = base_dir.join(&path);
                let mut file = FileValue::capture(&full)
                    .map_err(|e| ValueError::Io { path: full.clone(), message: e.to_string() })?;
                file.format = format;
                file.streamable = streamable;
                Ok(Value::File(file))
            }
            (BaseType::Directory, _) => {
                let (path, _, _) = location_of(json, "Directory").ok_or_else(mismatch)?;
                let full = base_dir.join(&path);
                let dir = DirectoryValue::capture(&full)
                    .map_err(|e| ValueError::Io { path: full.clone(), message: e.to_string() })?;
                Ok(Value::Directory(dir))
            }
            _ => Err(mismatch()),
        }
    }

    /// Renders the value for string interpolation. Null becomes the empty
    /// string, files their path, arrays their JSON form.
    pub fn interpolate(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::String(s) => s.clone(),
            Value::File(f) => f.path.to_string_lossy().into_owned(),
            Value::Directory(d) => d.path.to_string_lossy().into_owned(),
            Value::Array(_) => crate::digest::canonical_json(&self.to_json()),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{}", serde_json::Value::from(*x)),
            Value::String(s) => f.write_str(s),
            Value::File(file) => write!(f, "{}", file.path.display()),
            Value::Directory(d) => write!(f, "{}", d.path.display()),
            Value::Array(_) => f.write_str(&crate::digest::canonical_json(&self.to_json())),
        }
    }
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "boolean",
        serde_json::Value::Number(n) if n.is_i64() || n.is_u64() => "int",
        serde_json::Value::Number(_) => "float",
        serde_json::Value::String(_) => "string",
        serde_json::Value::Array(_) => "array",
        serde_json::Value::Object(_) => "object",
    }
}

/// Accepts `{class: File, path|location: ...}` or a bare path string.
fn location_of(json: &serde_json::Value, class: &str) -> Option<(String, Option<String>, bool)> {
    match json {
        serde_json::Value::String(s) => Some((s.clone(), None, false)),
        serde_json::Value::Object(m) => {
            if m.get("class").and_then(|c| c.as_str()) != Some(class) {
                return None;
            }
            let path = m.get("path").or_else(|| m.get("location")).and_then(|p| p.as_str())?;
            let path = path.strip_prefix("file://").unwrap_or(path).to_string();
            let format = m.get("format").and_then(|f| f.as_str()).map(str::to_string);
            let streamable = m.get("streamable").and_then(|s| s.as_bool()).unwrap_or(false);
            Some((path, format, streamable))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValueError {
    #[error("expected {expected}, found {found}")]
    Type { expected: String, found: String },
    #[error("cannot read {}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> DataType {
        s.parse().unwrap()
    }

    #[test]
    fn file_from_bare_path_is_checksummed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "abc").unwrap();
        let v = Value::from_json(&json!("a.txt"), &ty("File"), dir.path(), ExecMode::Sequential).unwrap();
        let Value::File(f) = v else { panic!() };
        assert_eq!(f.size, 3);
        assert_eq!(f.basename, "a.txt");
        assert_eq!(f.checksum, "sha256$ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            Value::from_json(&json!({"class": "File", "path": "nope"}), &ty("File"), dir.path(), ExecMode::Sequential)
                .unwrap_err();
        assert!(matches!(err, ValueError::Io { .. }));
    }

    #[test]
    fn no_int_to_string_coercion() {
        let err = Value::from_json(&json!(3), &ty("string"), Path::new("."), ExecMode::Sequential);
        assert!(err.is_err());
        let ok = Value::from_json(&json!(3), &ty("float"), Path::new("."), ExecMode::Sequential).unwrap();
        assert_eq!(ok, Value::Float(3.0));
    }

    #[test]
    fn conformance_checks_optional_and_arrays() {
        assert!(Value::Null.conforms_to(&ty("string?")));
        assert!(!Value::Null.conforms_to(&ty("string")));
        let arr = Value::Array(vec![Value::Int(1), Value::Int(2)]);
        assert!(arr.conforms_to(&ty("int[]")));
        assert!(!arr.conforms_to(&ty("int")));
        assert!(!Value::Array(vec![Value::String("x".into())]).conforms_to(&ty("int[]")));
    }

    #[test]
    fn directory_checksum_depends_on_content_only() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            fs::create_dir(d.join("sub")).unwrap();
            fs::write(d.join("sub/x.txt"), "x").unwrap();
            fs::write(d.join("y.txt"), "yy").unwrap();
        }
        let da = DirectoryValue::capture(a.path()).unwrap();
        let db = DirectoryValue::capture(b.path()).unwrap();
        assert_eq!(da.checksum, db.checksum);
        assert_eq!(da.size, 3);
        fs::write(b.path().join("y.txt"), "yz").unwrap();
        assert_ne!(da.checksum, DirectoryValue::capture(b.path()).unwrap().checksum);
    }
}
