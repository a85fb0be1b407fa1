use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::RuntimeError;
use crate::document::{BaseType, OutputSource, ToolDescription};
use crate::expression::EvalContext;
use crate::par::{self, ExecMode};
use crate::planner::annotate_output;
use crate::value::{DirectoryValue, FileValue, Value};

/// Expands `pattern` relative to `outdir`; matches come back sorted.
pub fn glob_outdir(outdir: &Path, pattern: &str) -> Result<Vec<PathBuf>, RuntimeError> {
    let pattern = pattern.trim_start_matches("./");
    if pattern.starts_with('/') || pattern.split('/').any(|c| c == "..") {
        return Err(RuntimeError::Output(format!("glob {pattern:?} escapes the output directory")));
    }
    let full = format!("{}/{pattern}", glob::Pattern::escape(&outdir.to_string_lossy()));
    let mut matches: Vec<PathBuf> = glob::glob(&full)
        .map_err(|e| RuntimeError::Output(format!("bad glob {pattern:?}: {e}")))?
        .filter_map(Result::ok)
        .collect();
    matches.sort();
    Ok(matches)
}

enum Found {
    One(PathBuf),
    Many(Vec<PathBuf>),
    Literal(Value),
}

/// Reads every declared output of a successful attempt. `ctx` must be the
/// evaluation context the command line was built with.
pub fn collect_outputs(
    tool: &ToolDescription,
    outdir: &Path,
    stdout: &Path,
    stderr: &Path,
    ctx: &EvalContext,
    mode: ExecMode,
) -> Result<BTreeMap<String, Value>, RuntimeError> {
    let mut located = Vec::new();
    for param in &tool.outputs {
        let ty = param.data_type;
        let found = match &param.source {
            OutputSource::Stdout => Found::One(stdout.to_path_buf()),
            OutputSource::Stderr => Found::One(stderr.to_path_buf()),
            OutputSource::Workflow(_) => continue,
            OutputSource::Glob(t) => {
                let pattern = t.eval_string(ctx).map_err(RuntimeError::Expression)?;
                let mut matches = glob_outdir(outdir, &pattern)?;
                let wanted_dir = ty.base == BaseType::Directory;
                if ty.is_file_like() {
                    matches.retain(|m| m.is_dir() == wanted_dir);
                }
                if ty.array && ty.is_file_like() {
                    Found::Many(matches)
                } else {
                    match matches.len() {
                        0 if ty.optional => Found::Literal(Value::Null),
                        0 => return Err(RuntimeError::OutputMissing { output: param.id.clone(), glob: pattern }),
                        1 => Found::One(matches.pop().expect("one match")),
                        n => {
                            return Err(RuntimeError::OutputAmbiguous {
                                output: param.id.clone(),
                                glob: pattern,
                                count: n,
                            })
                        }
                    }
                }
            }
        };
        located.push((param, found));
    }

    let values = par::try_map(mode, &located, |(param, found)| -> Result<(String, Value), RuntimeError> {
        let ty = param.data_type;
        let capture = |p: &Path| -> Result<Value, RuntimeError> {
            let io = |e: std::io::Error| RuntimeError::Output(format!("cannot read {}: {e}", p.display()));
            if p.is_dir() {
                DirectoryValue::capture(p).map(Value::Directory).map_err(io)
            } else {
                FileValue::capture(p).map(Value::File).map_err(io)
            }
        };
        let value = match found {
            Found::Literal(v) => v.clone(),
            Found::Many(paths) => Value::Array(paths.iter().map(|p| capture(p)).collect::<Result<_, _>>()?),
            Found::One(path) if ty.is_file_like() => capture(path)?,
            Found::One(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| RuntimeError::Output(format!("cannot read {}: {e}", path.display())))?;
                let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
                    RuntimeError::Output(format!("output {} expects JSON in {}: {e}", param.id, path.display()))
                })?;
                Value::from_json(&json, &ty, path.parent().unwrap_or(Path::new("/")), ExecMode::Sequential)
                    .map_err(|e| RuntimeError::Output(format!("output {}: {e}", param.id)))?
            }
        };
        Ok((param.id.clone(), annotate_output(value, param)))
    })?;
    Ok(values.into_iter().collect())
}
