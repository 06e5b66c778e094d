use std::collections::{BTreeMap, BTreeSet, HashSet};

use super::exec::{execute, ExecError};
use super::scenario::Scenario;
use crate::graph::BlockId;
use crate::input::{Arg, Call, Input};

pub const MAX_ORACLE_LEN: usize = 6;
pub const MAX_ORACLE_ALPHABET: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("search too large: max_len {max_len} (limit {MAX_ORACLE_LEN}), alphabet {alphabet} (limit {MAX_ORACLE_ALPHABET})")]
    Intractable { max_len: usize, alphabet: usize },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Whether the scenario is small enough for [`brute_force_min_trigger`].
pub fn oracle_tractable(sc: &Scenario) -> bool {
    sc.callable_count() <= MAX_ORACLE_ALPHABET
}

/// Exhaustive search for a shortest input covering `target`.
///
/// Argument slots range over `0x0`, every constant any guard compares that
/// slot against, and one reference per resource type produced so far. Two
/// prefixes that leave the same flags set and the same resource types
/// available behave identically on every continuation, so only the first
/// prefix reaching each such state is extended.
pub fn brute_force_min_trigger(sc: &Scenario, target: BlockId, max_len: usize) -> Result<Option<Input>, OracleError> {
    if max_len > MAX_ORACLE_LEN || !oracle_tractable(sc) {
        return Err(OracleError::Intractable {
            max_len,
            alphabet: sc.callable_count(),
        });
    }
    let names: Vec<&str> = sc.callable_names().collect();
    let mut seen: HashSet<(BTreeSet<String>, BTreeSet<String>)> = HashSet::new();
    seen.insert(Default::default());
    // Each entry: prefix and, per resource type, one call index producing it.
    let mut frontier: Vec<(Input, BTreeMap<String, usize>)> = vec![(Input::default(), BTreeMap::new())];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (prefix, avail) in &frontier {
            for &name in &names {
                for args in canonical_args(sc, name, avail) {
                    let mut cand = prefix.clone();
                    cand.calls.push(Call::new(name, args));
                    let r = execute(sc, &cand)?;
                    if r.hit(target) {
                        return Ok(Some(cand));
                    }
                    let mut types = BTreeMap::new();
                    for (i, t) in &r.resource_log {
                        types.entry(t.clone()).or_insert(*i);
                    }
                    if seen.insert((r.flags, types.keys().cloned().collect())) {
                        next.push((cand, types));
                    }
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(None)
}

fn canonical_args(sc: &Scenario, name: &str, avail: &BTreeMap<String, usize>) -> Vec<Vec<Arg>> {
    let (def, fixed) = sc.resolve(name).expect("callable");
    let mut combos: Vec<Vec<Arg>> = vec![Vec::new()];
    for slot in 0..def.arity {
        let choices: Vec<Arg> = match fixed {
            Some((s, c)) if *s == slot => vec![Arg::from(c)],
            _ => {
                let mut set = BTreeSet::from([Arg::Int(0)]);
                set.extend(sc.arg_constants(slot).map(Arg::from));
                set.extend(avail.values().map(|&i| Arg::Res(i)));
                set.into_iter().collect()
            }
        };
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                choices.iter().map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c.clone());
                    v
                })
            })
            .collect();
    }
    combos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scenario;

    const PIPE: &str = r#"{
        "graph": {
            "functions": [
                {"name": "sys_pipe", "signature": "sys", "syscall_entry": "pipe"},
                {"name": "sys_read", "signature": "sys", "syscall_entry": "read"},
                {"name": "sys_getpid", "signature": "sys", "syscall_entry": "getpid"}
            ],
            "cfgs": [
                {"function": "sys_pipe", "entry": 0, "blocks": [{"index": 0}]},
                {"function": "sys_read", "entry": 0, "blocks": [{"index": 0}, {"index": 1}, {"index": 2}, {"index": 3}],
                 "edges": [[0, 1]]},
                {"function": "sys_getpid", "entry": 0, "blocks": [{"index": 0}, {"index": 1}], "edges": [[0, 1]]}
            ],
            "syscall_map": {"pipe": "sys_pipe", "read": "sys_read", "getpid": "sys_getpid"}
        },
        "syscalls": {
            "pipe": {"handler": "sys_pipe", "produces": "pipe_fd"},
            "read": {"handler": "sys_read", "consumes": [[0, "pipe_fd"]], "error_block": 2},
            "getpid": {"handler": "sys_getpid"}
        },
        "targets": [
            {"name": "read_pipe", "function": "sys_read", "block": 1},
            {"name": "getpid", "function": "sys_getpid", "block": 1},
            {"name": "dead", "function": "sys_read", "block": 2}
        ]
    }"#;

    #[test]
    fn dependency_chain_needs_two_calls() {
        let sc = Scenario::from_json(PIPE).unwrap();
        let t = sc.target("read_pipe").unwrap().block;
        let found = brute_force_min_trigger(&sc, t, 4).unwrap().unwrap();
        assert_eq!(found.to_string(), "pipe()\nread(@0)\n");
    }

    #[test]
    fn direct_target_needs_one_call() {
        let sc = Scenario::from_json(PIPE).unwrap();
        let t = sc.target("getpid").unwrap().block;
        assert_eq!(brute_force_min_trigger(&sc, t, 4).unwrap().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_target_yields_none() {
        let sc = Scenario::from_json(PIPE).unwrap();
        // Block 3 of read has no incoming edge.
        let dead = BlockId::new(sc.program.func_id("sys_read").unwrap(), 3);
        assert_eq!(brute_force_min_trigger(&sc, dead, 3).unwrap(), None);
    }

    #[test]
    fn limits_are_enforced() {
        let sc = Scenario::from_json(PIPE).unwrap();
        let t = sc.target("getpid").unwrap().block;
        assert!(matches!(
            brute_force_min_trigger(&sc, t, 7),
            Err(OracleError::Intractable { .. })
        ));
    }
}
