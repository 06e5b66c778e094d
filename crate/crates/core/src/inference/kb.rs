use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InferenceError, InferredSyscall, Rule};
use crate::distance::TargetSite;
use crate::graph::Program;

const DEFAULT_KB: &str = include_str!("../../data/default_kb.json");

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    MemErrorHandling,
    PermErrorHandling,
    Seccomp,
    Readiness,
}

impl Marker {
    pub fn as_str(self) -> &'static str {
        match self {
            Marker::MemErrorHandling => "mem_error_handling",
            Marker::PermErrorHandling => "perm_error_handling",
            Marker::Seccomp => "seccomp",
            Marker::Readiness => "readiness",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum KbPredicate {
    /// Prefix of the target block's source location or of its function name.
    PathPrefix(String),
    /// Virtual filesystem tag (`fs_tag:<value>`) on the target block or function.
    FsTag(String),
    /// Marker tag (`marker:<value>`) on the target block or function.
    Marker(Marker),
}

impl KbPredicate {
    pub fn matches(&self, program: &Program, target: TargetSite) -> bool {
        let func = program.function(target.block.func);
        let block = program.block(target.block).expect("target block exists");
        let tagged = |tag: String| func.tags.contains(&tag) || block.tags.contains(&tag);
        match self {
            KbPredicate::PathPrefix(p) => {
                block.source_loc.as_deref().is_some_and(|loc| loc.starts_with(p.as_str())) || func.name.starts_with(p.as_str())
            }
            KbPredicate::FsTag(fs) => tagged(format!("fs_tag:{fs}")),
            KbPredicate::Marker(m) => tagged(format!("marker:{}", m.as_str())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KbEntry {
    pub predicate: KbPredicate,
    pub syscalls: Vec<String>,
}

/// Expert rules mapping target properties to syscalls.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KnowledgeBase {
    pub entries: Vec<KbEntry>,
}

impl KnowledgeBase {
    /// Virtual-filesystem, packet-variant, error-handling, seccomp and
    /// readiness rules.
    pub fn bundled() -> KnowledgeBase {
        KnowledgeBase::from_json(DEFAULT_KB).expect("bundled knowledge base is valid")
    }

    pub fn from_json(text: &str) -> Result<KnowledgeBase, InferenceError> {
        let kb: KnowledgeBase = serde_json::from_str(text).map_err(|e| InferenceError::Kb(e.to_string()))?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<KnowledgeBase, InferenceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| InferenceError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        KnowledgeBase::from_json(&text)
    }

    fn validate(&self) -> Result<(), InferenceError> {
        for (i, e) in self.entries.iter().enumerate() {
            if e.syscalls.is_empty() {
                return Err(InferenceError::Kb(format!("entry {i} lists no syscalls")));
            }
            let empty = match &e.predicate {
                KbPredicate::PathPrefix(p) | KbPredicate::FsTag(p) => p.is_empty(),
                KbPredicate::Marker(_) => false,
            };
            if empty {
                return Err(InferenceError::Kb(format!("entry {i} has an empty predicate value")));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, predicate: KbPredicate, syscalls: Vec<String>) {
        self.entries.push(KbEntry { predicate, syscalls });
    }
}

/// Union of the syscalls of every entry whose predicate matches the target.
/// Names the program cannot call are dropped.
pub fn infer_knowledge(kb: &KnowledgeBase, program: &Program, target: TargetSite) -> Vec<InferredSyscall> {
    let mut out: Vec<InferredSyscall> = Vec::new();
    for e in kb.entries.iter().filter(|e| e.predicate.matches(program, target)) {
        for s in &e.syscalls {
            if program.handler_of(s).is_none() {
                log::debug!("knowledge base names `{s}`, which this program does not implement");
                continue;
            }
            if !out.iter().any(|x| &x.name == s) {
                out.push(InferredSyscall::new(s, Rule::KnowledgeBase));
            }
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}
