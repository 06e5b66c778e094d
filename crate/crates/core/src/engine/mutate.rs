use rand::Rng;

use crate::input::{Arg, Call, Input};
use crate::scheduler::{insert_index, CallRole, RandomSource, SyscallWeights};
use crate::sim::Scenario;

/// How deep producer chains are synthesized for unresolved resources.
const MAX_PRODUCER_DEPTH: usize = 4;

/// Which generic operator produced a mutant.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MutationKind {
    Inferred,
    Argument,
    Insert,
    Duplicate,
    Remove,
}

#[derive(Clone, Debug)]
pub struct MutationParams<'a> {
    pub weights: &'a SyscallWeights,
    /// Probability of using an inferred syscall on this mutation.
    pub utilization: f64,
    pub bias_k: u32,
    pub max_calls: usize,
    /// Relative weights of argument, insert, duplicate and remove.
    pub generic_weights: [u32; 4],
}

fn produced_type<'s>(sc: &'s Scenario, name: &str) -> Option<&'s str> {
    sc.resolve(name).and_then(|(d, _)| d.produces.as_deref())
}

/// Indices before `at` whose call produces `resource`.
fn producers_before(sc: &Scenario, input: &Input, at: usize, resource: &str) -> Vec<usize> {
    input.calls[..at]
        .iter()
        .enumerate()
        .filter(|(_, c)| produced_type(sc, &c.name) == Some(resource))
        .map(|(i, _)| i)
        .collect()
}

fn random_value(sc: &Scenario, slot: usize, rng: &mut RandomSource) -> Arg {
    let pool: Vec<_> = sc.arg_constants(slot).collect();
    let r = rng.unit();
    if !pool.is_empty() && r < 0.5 {
        Arg::from(pool[rng.below(pool.len())])
    } else if r < 0.75 {
        Arg::Int(0)
    } else {
        Arg::Int(rng.rng().gen_range(1..=0xffff))
    }
}

/// Insert a call to `name` at `at`, filling resource arguments from earlier
/// producers. With `synthesize`, missing producers are inserted in front of
/// it first. Returns the index the call ended up at.
pub fn insert_call(sc: &Scenario, input: &mut Input, at: usize, name: &str, synthesize: bool, rng: &mut RandomSource) -> usize {
    insert_call_depth(sc, input, at, name, synthesize, rng, 0)
}

fn insert_call_depth(
    sc: &Scenario,
    input: &mut Input,
    at: usize,
    name: &str,
    synthesize: bool,
    rng: &mut RandomSource,
    depth: usize,
) -> usize {
    let (def, fixed) = sc.resolve(name).expect("callable name");
    let mut at = at;
    let mut args = Vec::with_capacity(def.arity);
    for slot in 0..def.arity {
        if let Some((s, c)) = fixed {
            if *s == slot {
                args.push(Arg::from(c));
                continue;
            }
        }
        let needed = def.consumes.iter().find(|(s, _)| *s == slot).map(|(_, r)| r.as_str());
        let arg = match needed {
            Some(r) => {
                let have = producers_before(sc, input, at, r);
                if !have.is_empty() {
                    Arg::Res(have[rng.below(have.len())])
                } else if synthesize && depth < MAX_PRODUCER_DEPTH {
                    let makers = sc.producers_of(r);
                    if makers.is_empty() {
                        Arg::Int(0)
                    } else {
                        let p = makers[rng.below(makers.len())].to_string();
                        let idx = insert_call_depth(sc, input, at, &p, true, rng, depth + 1);
                        at = idx + 1;
                        Arg::Res(idx)
                    }
                } else {
                    Arg::Int(0)
                }
            }
            None => random_value(sc, slot, rng),
        };
        args.push(arg);
    }
    input.insert(at, Call::new(name, args));
    at
}

/// Derive a new input from `seed`: with probability `utilization` insert an
/// inferred syscall at a role-biased position, otherwise apply one generic
/// mutation.
pub fn mutate(seed: &Input, params: &MutationParams<'_>, sc: &Scenario, rng: &mut RandomSource) -> (Input, MutationKind) {
    let mut out = seed.clone();
    if !params.weights.is_empty() && rng.chance(params.utilization) {
        while !out.is_empty() && out.len() >= params.max_calls {
            let i = rng.below(out.len());
            out.remove(i);
        }
        let name = params.weights.sample(rng).expect("nonempty weights").to_string();
        let role = sc.role(&name).unwrap_or(CallRole::Consumer);
        let at = insert_index(rng, out.len(), role, params.bias_k);
        insert_call(sc, &mut out, at, &name, true, rng);
        return (out, MutationKind::Inferred);
    }
    let kind = generic_kind(&out, params, rng);
    apply_generic(&mut out, kind, sc, rng);
    (out, kind)
}

fn generic_kind(input: &Input, params: &MutationParams<'_>, rng: &mut RandomSource) -> MutationKind {
    const KINDS: [MutationKind; 4] = [
        MutationKind::Argument,
        MutationKind::Insert,
        MutationKind::Duplicate,
        MutationKind::Remove,
    ];
    let total: u32 = params.generic_weights.iter().sum();
    let mut x = rng.rng().gen_range(0..total);
    let mut kind = MutationKind::Argument;
    for (k, &w) in KINDS.iter().zip(&params.generic_weights) {
        if x < w {
            kind = *k;
            break;
        }
        x -= w;
    }
    let full = input.len() >= params.max_calls;
    match kind {
        _ if input.is_empty() => MutationKind::Insert,
        MutationKind::Insert | MutationKind::Duplicate if full => MutationKind::Remove,
        MutationKind::Remove if input.len() < 2 => MutationKind::Insert,
        k => k,
    }
}

fn apply_generic(out: &mut Input, kind: MutationKind, sc: &Scenario, rng: &mut RandomSource) {
    match kind {
        MutationKind::Argument => {
            if !mutate_argument(out, sc, rng) {
                random_insert(out, sc, rng);
            }
        }
        MutationKind::Insert => random_insert(out, sc, rng),
        MutationKind::Duplicate => {
            let i = rng.below(out.len());
            let c = out.calls[i].clone();
            out.insert(i + 1, c);
        }
        MutationKind::Remove => {
            let i = rng.below(out.len());
            out.remove(i);
        }
        MutationKind::Inferred => unreachable!("not a generic operator"),
    }
}

fn random_insert(out: &mut Input, sc: &Scenario, rng: &mut RandomSource) {
    let names: Vec<&str> = sc.callable_names().collect();
    let name = names[rng.below(names.len())].to_string();
    let at = rng.below(out.len() + 1);
    insert_call(sc, out, at, &name, false, rng);
}

/// Change one non-fixed argument. Returns false if no call has one.
fn mutate_argument(out: &mut Input, sc: &Scenario, rng: &mut RandomSource) -> bool {
    let mut slots = Vec::new();
    for (i, c) in out.calls.iter().enumerate() {
        let Some((def, fixed)) = sc.resolve(&c.name) else { continue };
        for s in 0..def.arity {
            if fixed.is_none_or(|(f, _)| *f != s) {
                slots.push((i, s));
            }
        }
    }
    if slots.is_empty() {
        return false;
    }
    let (i, slot) = slots[rng.below(slots.len())];
    let (def, _) = sc.resolve(&out.calls[i].name).expect("resolved above");
    let needed = def.consumes.iter().find(|(s, _)| *s == slot).map(|(_, r)| r.clone());
    let old = out.calls[i].args.get(slot).cloned();
    let mut new = old.clone();
    for _ in 0..4 {
        let cand = match &needed {
            Some(r) => {
                let have = producers_before(sc, out, i, r);
                if !have.is_empty() && rng.chance(0.75) {
                    Arg::Res(have[rng.below(have.len())])
                } else {
                    random_value(sc, slot, rng)
                }
            }
            None => random_value(sc, slot, rng),
        };
        new = Some(cand);
        if new != old {
            break;
        }
    }
    let args = &mut out.calls[i].args;
    if args.len() <= slot {
        args.resize(slot + 1, Arg::Int(0));
    }
    args[slot] = new.expect("at least one draw");
    true
}

/// Starting inputs: one inferred syscall each (round-robin over the inferred
/// set) with its producers, or random one-to-three-call sequences when
/// nothing was inferred.
pub fn build_initial_seeds(inferred: &[String], sc: &Scenario, rng: &mut RandomSource, count: usize) -> Vec<Input> {
    let names: Vec<&str> = sc.callable_names().collect();
    (0..count.max(1))
        .map(|i| {
            let mut input = Input::default();
            if inferred.is_empty() {
                for _ in 0..1 + rng.below(3) {
                    let name = names[rng.below(names.len())].to_string();
                    let at = input.len();
                    insert_call(sc, &mut input, at, &name, false, rng);
                }
            } else {
                let name = &inferred[i % inferred.len()];
                insert_call(sc, &mut input, 0, name, true, rng);
            }
            input
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PIPE: &str = r#"{
        "graph": {
            "functions": [
                {"name": "sys_pipe", "signature": "sys", "syscall_entry": "pipe"},
                {"name": "sys_read", "signature": "sys", "syscall_entry": "read"},
                {"name": "sys_ioctl", "signature": "sys", "syscall_entry": "ioctl"},
                {"name": "sys_getpid", "signature": "sys", "syscall_entry": "getpid"}
            ],
            "cfgs": [
                {"function": "sys_pipe", "entry": 0, "blocks": [{"index": 0}]},
                {"function": "sys_read", "entry": 0, "blocks": [{"index": 0}, {"index": 1}], "edges": [[0, 1]]},
                {"function": "sys_ioctl", "entry": 0, "blocks": [{"index": 0}, {"index": 1}], "edges": [[0, 1]]},
                {"function": "sys_getpid", "entry": 0, "blocks": [{"index": 0}]}
            ],
            "syscall_map": {"pipe": "sys_pipe", "read": "sys_read", "ioctl": "sys_ioctl",
                            "ioctl$FIONREAD": "sys_ioctl", "getpid": "sys_getpid"}
        },
        "syscalls": {
            "pipe": {"handler": "sys_pipe", "produces": "pipe_fd"},
            "read": {"handler": "sys_read", "arity": 2, "consumes": [[0, "pipe_fd"]], "error_block": 1},
            "ioctl": {"handler": "sys_ioctl", "arity": 2, "variants": {"ioctl$FIONREAD": 21531},
                      "consumes": [[0, "pipe_fd"]]},
            "getpid": {"handler": "sys_getpid"}
        },
        "guards": [{"function": "sys_ioctl", "from": 0, "to": 1, "when": {"arg_eq": {"arg": 1, "value": 21531}}}],
        "targets": [{"name": "t", "function": "sys_read", "block": 1}]
    }"#;

    fn sc() -> Scenario {
        Scenario::from_json(PIPE).unwrap()
    }

    fn params(w: &SyscallWeights, utilization: f64) -> MutationParams<'_> {
        MutationParams {
            weights: w,
            utilization,
            bias_k: 5,
            max_calls: 8,
            generic_weights: [50, 20, 15, 15],
        }
    }

    #[test]
    fn consumer_insertion_synthesizes_producer_in_front() {
        let sc = sc();
        let w = SyscallWeights::new(["read"]);
        let mut rng = RandomSource::new(5);
        let (out, kind) = mutate(&Input::default(), &params(&w, 1.0), &sc, &mut rng);
        assert_eq!(kind, MutationKind::Inferred);
        assert_eq!(out.names().collect::<Vec<_>>(), vec!["pipe", "read"]);
        assert_eq!(out.calls[1].args[0], Arg::Res(0));
    }

    #[test]
    fn existing_producer_is_reused() {
        let sc = sc();
        let w = SyscallWeights::new(["read"]);
        let seed = Input::parse("pipe()\ngetpid()\n").unwrap();
        let mut rng = RandomSource::new(11);
        for _ in 0..20 {
            let (out, _) = mutate(&seed, &params(&w, 1.0), &sc, &mut rng);
            out.validate().unwrap();
            let r = out.calls.iter().position(|c| c.name == "read").unwrap();
            match &out.calls[r].args[0] {
                Arg::Res(j) => assert_eq!(out.calls[*j].name, "pipe"),
                a => {
                    // Inserted before the pipe: a fresh producer must precede it.
                    panic!("unresolved read argument {a} in\n{out}")
                }
            }
        }
    }

    #[test]
    fn variant_slot_is_fixed() {
        let sc = sc();
        let w = SyscallWeights::new(["ioctl$FIONREAD"]);
        let (out, _) = mutate(&Input::default(), &params(&w, 1.0), &sc, &mut RandomSource::new(2));
        let call = out.calls.iter().find(|c| c.name == "ioctl$FIONREAD").unwrap();
        assert_eq!(call.args[1], Arg::Int(21531));
    }

    #[test]
    fn failed_utilization_applies_one_generic_mutation() {
        let sc = sc();
        let w = SyscallWeights::new(["read"]);
        let seed = Input::parse("pipe()\nread(@0, 0x5)\n").unwrap();
        let mut rng = RandomSource::new(9);
        for _ in 0..200 {
            let (out, kind) = mutate(&seed, &params(&w, 0.0), &sc, &mut rng);
            let delta = out.len() as i64 - seed.len() as i64;
            match kind {
                MutationKind::Argument => assert_eq!(delta, 0),
                MutationKind::Insert | MutationKind::Duplicate => assert_eq!(delta, 1),
                MutationKind::Remove => assert_eq!(delta, -1),
                MutationKind::Inferred => panic!("utilization 0 never inserts inferred syscalls"),
            }
        }
    }

    #[test]
    fn initial_seeds_contain_inferred_syscall_after_producers() {
        let sc = sc();
        let seeds = build_initial_seeds(&["read".to_string()], &sc, &mut RandomSource::new(0), 3);
        assert_eq!(seeds.len(), 3);
        for s in &seeds {
            assert_eq!(s.names().collect::<Vec<_>>(), vec!["pipe", "read"]);
        }
        let one = build_initial_seeds(&[], &sc, &mut RandomSource::new(0), 1);
        assert_eq!(one.len(), 1);
        assert!(!one[0].is_empty());
    }

    proptest! {
        #[test]
        fn mutants_are_valid_inputs(seed in 0u64..5000, util in 0.0f64..=1.0, steps in 1usize..30) {
            let sc = sc();
            let w = SyscallWeights::new(["read", "ioctl$FIONREAD", "getpid"]);
            let mut rng = RandomSource::new(seed);
            let mut input = Input::default();
            for _ in 0..steps {
                input = mutate(&input, &params(&w, util), &sc, &mut rng).0;
                prop_assert!(input.validate().is_ok());
                prop_assert!(input.len() <= 8 + MAX_PRODUCER_DEPTH);
                prop_assert!(input.names().all(|n| sc.resolve(n).is_some()));
            }
        }
    }
}
