//! Version-to-version document migration.
//!
//! Each [`Migration`] lists the structural rewrites needed to move a
//! document one minor version forward. Upgrading applies them in sequence,
//! to embedded documents as well.

use std::sync::Arc;

use crate::document::{Body, Clause, Document, RunRef, Version, VersionError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UpgradeError {
    #[error("cannot downgrade from {from} to {to}")]
    Downgrade { from: Version, to: Version },
    #[error("unknown version: {0}")]
    UnknownVersion(String),
}

impl From<VersionError> for UpgradeError {
    fn from(e: VersionError) -> Self {
        match e {
            VersionError::Malformed(s) | VersionError::Unknown(s) => UpgradeError::UnknownVersion(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// An extension clause whose class has this local name (after any
    /// `prefix:` or `#`) becomes the built-in clause of that name.
    PromoteExtension { local_name: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub from: Version,
    pub to: Version,
    pub rules: &'static [Rule],
}

pub const MIGRATIONS: &[Migration] = &[
    Migration { from: Version::V1_0, to: Version::V1_1, rules: &[Rule::PromoteExtension { local_name: "WorkReuse" }] },
    // Conditional steps are new syntax; nothing written for v1.1 changes.
    Migration { from: Version::V1_1, to: Version::V1_2, rules: &[] },
];

fn local_name(class: &str) -> &str {
    class.rsplit([':', '#']).next().unwrap_or(class)
}

fn rewrite_clause(rule: Rule, clause: &mut Clause) {
    match rule {
        Rule::PromoteExtension { local_name: name } => {
            let Clause::Extension { class, payload } = &*clause else { return };
            if local_name(class) != name {
                return;
            }
            if name == "WorkReuse" {
                let enable = payload.get("enableReuse").and_then(|v| v.as_bool()).unwrap_or(true);
                *clause = Clause::WorkReuse { enable };
            }
        }
    }
}

fn apply(migration: &Migration, doc: &mut Document) {
    let clauses = |list: &mut Vec<Clause>| {
        for rule in migration.rules {
            list.iter_mut().for_each(|c| rewrite_clause(*rule, c));
        }
    };
    match &mut doc.body {
        Body::Tool(t) => {
            clauses(&mut t.requirements);
            clauses(&mut t.hints);
        }
        Body::Workflow(w) => {
            clauses(&mut w.requirements);
            clauses(&mut w.hints);
            for step in &mut w.steps {
                clauses(&mut step.requirements);
                clauses(&mut step.hints);
                if let RunRef::Document(inner) = &mut step.run {
                    if inner.version == migration.from {
                        let mut copy = (**inner).clone();
                        apply(migration, &mut copy);
                        *inner = Arc::new(copy);
                    }
                }
            }
        }
    }
    doc.version = migration.to;
}

/// Upgrades `doc` to `target`. Already being at `target` is the identity.
pub fn upgrade(doc: &Document, target: Version) -> Result<Document, UpgradeError> {
    if doc.version > target {
        return Err(UpgradeError::Downgrade { from: doc.version, to: target });
    }
    let mut out = doc.clone();
    while out.version < target {
        let m = MIGRATIONS.iter().find(|m| m.from == out.version).expect("every older version has a migration");
        apply(m, &mut out);
    }
    Ok(out)
}

/// `upgrade` with the target given as text.
pub fn upgrade_to(doc: &Document, target: &str) -> Result<Document, UpgradeError> {
    upgrade(doc, target.parse()?)
}
