use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::scenario::{Predicate, Scenario};
use crate::graph::{BlockId, CallKind, FuncId};
use crate::input::{Arg, Input};

/// Nested-call depth beyond which callees are not entered.
const MAX_DEPTH: usize = 32;
/// Blocks walked per function activation before the walk is cut off.
const MAX_STEPS: usize = 4096;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("call {index}: unknown syscall `{name}`")]
    UnknownSyscall { index: usize, name: String },
    #[error("call {call} references call {target}, which does not precede it")]
    ForwardReference { call: usize, target: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub covered: BTreeSet<BlockId>,
    /// Intra-function CFG edges taken.
    pub edges: BTreeSet<(BlockId, BlockId)>,
    /// Caller -> callee pairs entered.
    pub call_edges: BTreeSet<(FuncId, FuncId)>,
    pub hit_targets: BTreeSet<BlockId>,
    /// (call index, resource type) for every resource produced.
    pub resource_log: Vec<(usize, String)>,
    /// Sequence-state flags set when the input finished.
    pub flags: BTreeSet<String>,
}

impl ExecResult {
    pub fn hit(&self, target: BlockId) -> bool {
        self.hit_targets.contains(&target)
    }
}

struct Frame<'a> {
    call: usize,
    args: &'a [Arg],
}

struct State<'s> {
    sc: &'s Scenario,
    out: ExecResult,
    /// Produced resource type per call index.
    resources: Vec<Option<String>>,
}

impl<'s> State<'s> {
    fn resource_valid(&self, frame: &Frame<'_>, arg: usize, resource: Option<&str>) -> bool {
        match frame.args.get(arg) {
            Some(Arg::Res(j)) if *j < frame.call => match (&self.resources[*j], resource) {
                (Some(_), None) => true,
                (Some(have), Some(want)) => have == want,
                (None, _) => false,
            },
            _ => false,
        }
    }

    fn holds(&self, p: &Predicate, frame: &Frame<'_>) -> bool {
        match p {
            Predicate::ArgEq { arg, value } => frame.args.get(*arg).is_some_and(|a| a.matches(value)),
            Predicate::ResourceValid { arg, resource } => self.resource_valid(frame, *arg, resource.as_deref()),
            Predicate::FlagSet(f) => self.out.flags.contains(f),
            Predicate::FlagUnset(f) => !self.out.flags.contains(f),
            Predicate::All(ps) => ps.iter().all(|p| self.holds(p, frame)),
        }
    }

    fn walk(&mut self, func: FuncId, start: u32, frame: &Frame<'_>, depth: usize) {
        let sc = self.sc;
        let mut block = start;
        for _ in 0..MAX_STEPS {
            let here = BlockId::new(func, block);
            self.out.covered.insert(here);
            if let Some(e) = sc.effects.get(&here) {
                for f in &e.clear {
                    self.out.flags.remove(f);
                }
                for f in &e.set {
                    self.out.flags.insert(f.clone());
                }
            }
            for site in sc.program.call_sites_at(here) {
                let callee = match &site.kind {
                    CallKind::Direct(f) => Some(*f),
                    CallKind::Indirect(sig) => sc.dispatch.get(&here).and_then(|cands| {
                        cands
                            .iter()
                            .find(|(f, when)| {
                                &sc.program.function(*f).signature == sig
                                    && when.as_ref().is_none_or(|p| self.holds(p, frame))
                            })
                            .map(|(f, _)| *f)
                    }),
                };
                if let Some(callee) = callee {
                    if depth < MAX_DEPTH {
                        self.out.call_edges.insert((func, callee));
                        let entry = sc.program.cfg(callee).entry;
                        self.walk(callee, entry, frame, depth + 1);
                    }
                }
            }
            let Some(succ) = sc.branches.get(&here) else {
                return;
            };
            let next = succ
                .iter()
                .find(|(_, g)| g.as_ref().is_some_and(|p| self.holds(p, frame)))
                .or_else(|| succ.iter().find(|(_, g)| g.is_none()));
            match next {
                Some(&(to, _)) => {
                    self.out.edges.insert((here, BlockId::new(func, to)));
                    block = to;
                }
                None => return,
            }
        }
    }
}

/// Run `input` against the scenario. Pure: the same input always yields the
/// same result.
pub fn execute(sc: &Scenario, input: &Input) -> Result<ExecResult, ExecError> {
    let mut st = State {
        sc,
        out: ExecResult::default(),
        resources: Vec::with_capacity(input.len()),
    };
    let mut args_buf: Vec<Arg> = Vec::new();
    for (i, call) in input.calls.iter().enumerate() {
        let Some((def, fixed)) = sc.resolve(&call.name) else {
            return Err(ExecError::UnknownSyscall {
                index: i,
                name: call.name.clone(),
            });
        };
        for a in &call.args {
            if let Arg::Res(j) = a {
                if *j >= i {
                    return Err(ExecError::ForwardReference { call: i, target: *j });
                }
            }
        }
        args_buf.clear();
        args_buf.extend(call.args.iter().cloned());
        if let Some((slot, c)) = fixed {
            if args_buf.len() <= *slot {
                args_buf.resize(*slot + 1, Arg::Int(0));
            }
            args_buf[*slot] = Arg::from(c);
        }
        let frame = Frame { call: i, args: &args_buf };
        let resources_ok = def
            .consumes
            .iter()
            .all(|(slot, r)| st.resource_valid(&frame, *slot, Some(r)));
        let entry = sc.program.cfg(def.handler).entry;
        let mut produced = None;
        match (resources_ok, def.error_block) {
            (false, Some(err)) => {
                st.out.covered.insert(BlockId::new(def.handler, entry));
                st.walk(def.handler, err, &frame, 0);
            }
            _ => {
                st.walk(def.handler, entry, &frame, 0);
                if resources_ok {
                    produced = def.produces.clone();
                }
            }
        }
        if let Some(r) = &produced {
            st.out.resource_log.push((i, r.clone()));
        }
        st.resources.push(produced);
    }
    let mut out = st.out;
    out.hit_targets = out.covered.iter().copied().filter(|&b| sc.is_target(b)).collect();
    Ok(out)
}
