use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::parse::parse_text;
use super::*;

/// Fetches documents named by `run` references.
pub trait DocumentLoader {
    /// Turns `reference` (relative to `base_dir`) into a stable key used for
    /// cycle detection and as the location of the loaded document.
    fn locate(&self, reference: &str, base_dir: Option<&Path>) -> Result<PathBuf, DocumentError>;
    fn read(&self, location: &Path) -> Result<String, DocumentError>;
}

/// Loads documents from the local filesystem.
#[derive(Debug, Clone, Copy, Default)]
pub struct FsLoader;

impl DocumentLoader for FsLoader {
    fn locate(&self, reference: &str, base_dir: Option<&Path>) -> Result<PathBuf, DocumentError> {
        let reference = reference.strip_prefix("file://").unwrap_or(reference);
        let path = match base_dir {
            Some(base) if Path::new(reference).is_relative() => base.join(reference),
            _ => PathBuf::from(reference),
        };
        path.canonicalize().map_err(|_| DocumentError::NotFound(path.display().to_string()))
    }

    fn read(&self, location: &Path) -> Result<String, DocumentError> {
        fs::read_to_string(location).map_err(|e| DocumentError::NotFound(format!("{}: {e}", location.display())))
    }
}

/// Reads, parses and resolves the document at `path`.
pub fn load_document(path: &Path, loader: &dyn DocumentLoader) -> Result<Document, DocumentError> {
    let location = loader.locate(&path.to_string_lossy(), None)?;
    let mut stack = vec![location.clone()];
    load_at(&location, loader, &mut stack)
}

fn load_at(location: &Path, loader: &dyn DocumentLoader, stack: &mut Vec<PathBuf>) -> Result<Document, DocumentError> {
    let text = loader.read(location)?;
    let json = parse_text(&text)?;
    let doc = parse_document_with_version(&json, location.parent(), None)?;
    resolve_with(&doc, loader, stack)
}

/// Replaces every `run` path below `doc` with the parsed document it names.
/// A document may not include itself, directly or transitively.
pub fn resolve_references(doc: &Document, loader: &dyn DocumentLoader) -> Result<Document, DocumentError> {
    resolve_with(doc, loader, &mut Vec::new())
}

fn resolve_with(
    doc: &Document,
    loader: &dyn DocumentLoader,
    stack: &mut Vec<PathBuf>,
) -> Result<Document, DocumentError> {
    let Body::Workflow(wf) = &doc.body else {
        return Ok(doc.clone());
    };
    let mut steps = Vec::with_capacity(wf.steps.len());
    for step in &wf.steps {
        let run = match &step.run {
            RunRef::Path(reference) => {
                let location = loader.locate(reference, doc.base_dir.as_deref())?;
                if let Some(start) = stack.iter().position(|p| *p == location) {
                    let mut cycle: Vec<String> = stack[start..].iter().map(|p| p.display().to_string()).collect();
                    cycle.push(location.display().to_string());
                    return Err(DocumentError::IncludeCycle(cycle));
                }
                stack.push(location.clone());
                let child = load_at(&location, loader, stack);
                stack.pop();
                RunRef::Document(Arc::new(child?))
            }
            RunRef::Document(inline) => RunRef::Document(Arc::new(resolve_with(inline, loader, stack)?)),
        };
        steps.push(Step { run, ..step.clone() });
    }
    Ok(Document { body: Body::Workflow(WorkflowDescription { steps, ..wf.clone() }), ..doc.clone() })
}
