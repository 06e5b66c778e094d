//! Target-related syscall inference.
//!
//! Four rules are composed as a flat union: the call-chain rule (handlers at
//! the smallest call-graph distance from the target), variant extraction
//! from constants on the path to the target, a data-driven knowledge base,
//! and stack-trace extraction for bug reproduction.

mod kb;
mod stack_trace;

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use kb::{infer_knowledge, KbEntry, KbPredicate, KnowledgeBase, Marker};
pub use stack_trace::{infer_stack_trace, DispatchFrames, Frame, NrTable, StackTrace};

use crate::distance::{Analysis, ReachableSet};
use crate::graph::{Constant, Program};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("knowledge base: {0}")]
    Kb(String),
    #[error("stack trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which rule produced an inference. Declaration order is report order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    CallChain,
    SpecializedVariant,
    KnowledgeBase,
    StackTrace,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::CallChain => "call_chain",
            Rule::SpecializedVariant => "specialized_variant",
            Rule::KnowledgeBase => "knowledge_base",
            Rule::StackTrace => "stack_trace",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InferredSyscall {
    pub name: String,
    pub source_rule: Rule,
}

impl InferredSyscall {
    pub fn new(name: impl Into<String>, source_rule: Rule) -> Self {
        InferredSyscall {
            name: name.into(),
            source_rule,
        }
    }
}

/// Base syscall -> (variant name, fixed constant).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VariantTable {
    by_base: BTreeMap<String, Vec<(String, Constant)>>,
}

impl VariantTable {
    pub fn insert(&mut self, base: &str, variant: &str, constant: Constant) {
        self.by_base
            .entry(base.to_string())
            .or_default()
            .push((variant.to_string(), constant));
    }

    pub fn variants_of(&self, base: &str) -> &[(String, Constant)] {
        self.by_base.get(base).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Syscalls whose handler is closest (in call-graph hops) to the target.
/// Ties keep every minimum.
pub fn infer_call_chain(rs: &ReachableSet) -> Vec<InferredSyscall> {
    let Some(&min) = rs.entry_syscalls.values().min() else {
        return Vec::new();
    };
    rs.entry_syscalls
        .iter()
        .filter(|(_, &h)| h == min)
        .map(|(s, _)| InferredSyscall::new(s.clone(), Rule::CallChain))
        .collect()
}

/// Variants of `bases` whose fixed constant occurs on a block that lies on
/// some path from the handler entry to the target.
pub fn infer_variants<'a>(
    program: &Program,
    analysis: &Analysis,
    variants: &VariantTable,
    bases: impl IntoIterator<Item = &'a str>,
) -> Vec<InferredSyscall> {
    let mut found = BTreeSet::new();
    for base in bases {
        let table = variants.variants_of(base);
        if table.is_empty() {
            continue;
        }
        let Some(handler) = program.handler_of(base) else {
            continue;
        };
        let constants = path_constants(program, analysis, program.entry_block(handler));
        for (name, c) in table {
            if constants.contains(c) {
                found.insert(name.clone());
            }
        }
    }
    found
        .into_iter()
        .map(|n| InferredSyscall::new(n, Rule::SpecializedVariant))
        .collect()
}

/// Constants on blocks reachable from `start` through blocks that can
/// themselves reach the target.
fn path_constants(program: &Program, analysis: &Analysis, start: crate::graph::BlockId) -> HashSet<Constant> {
    let dm = &analysis.distances;
    let mut out = HashSet::new();
    if !dm.contains(start) {
        return out;
    }
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(b) = queue.pop_front() {
        if let Some(block) = program.block(b) {
            out.extend(block.constants.iter().cloned());
        }
        for s in analysis.icfg.successors(b) {
            if dm.contains(s) && seen.insert(s) {
                queue.push_back(s);
            }
        }
    }
    out
}

/// Optional stack-trace evidence for bug reproduction.
#[derive(Clone, Debug)]
pub struct TraceEvidence<'a> {
    pub trace: &'a StackTrace,
    pub nr_table: &'a NrTable,
    pub dispatch: &'a DispatchFrames,
}

/// Deduplicated union of all rules, in rule order then name order. A name
/// found by several rules keeps the first rule. Names the program does not
/// implement are dropped.
pub fn infer_all(
    program: &Program,
    analysis: &Analysis,
    variants: &VariantTable,
    kb: &KnowledgeBase,
    trace: Option<TraceEvidence<'_>>,
) -> Vec<InferredSyscall> {
    let chain = infer_call_chain(&analysis.reachable);
    let knowledge = infer_knowledge(kb, program, analysis.target);
    let stack = trace
        .map(|t| infer_stack_trace(program, t.trace, t.nr_table, t.dispatch))
        .unwrap_or_default();
    let bases: BTreeSet<&str> = chain
        .iter()
        .chain(&knowledge)
        .chain(&stack)
        .map(|s| s.name.as_str())
        .collect();
    let variant = infer_variants(program, analysis, variants, bases);

    let mut out: Vec<InferredSyscall> = Vec::new();
    let mut seen = HashSet::new();
    for group in [chain, variant, knowledge, stack] {
        let mut group = group;
        group.sort_by(|a, b| a.name.cmp(&b.name));
        for s in group {
            if program.handler_of(&s.name).is_none() {
                log::debug!("dropping `{}` ({}): not implemented by the program", s.name, s.source_rule);
                continue;
            }
            if seen.insert(s.name.clone()) {
                out.push(s);
            }
        }
    }
    out
}

/// |inferred ∩ poc| / |inferred|; `None` when nothing was inferred.
pub fn inference_precision<'a>(inferred: &[InferredSyscall], poc_calls: impl IntoIterator<Item = &'a str>) -> Option<f64> {
    if inferred.is_empty() {
        return None;
    }
    let poc: HashSet<&str> = poc_calls.into_iter().collect();
    let hits = inferred.iter().filter(|s| poc.contains(s.name.as_str())).count();
    Some(hits as f64 / inferred.len() as f64)
}
