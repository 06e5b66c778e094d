#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use gfz::graph::{BlockDoc, BlockId, CallKindDoc, CallSiteDoc, CfgDoc, FuncId, FunctionDoc, GraphDoc, Program};
use gfz::sim::{load_scenario, Scenario};
use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const FIXTURES: [&str; 7] = [
    "pipefs",
    "constant_variant",
    "dependency_chain",
    "error_fork",
    "deep_chain",
    "indirect_required",
    "decoy_rich",
];

/// Random program with at most `max_blocks` blocks over at most
/// `max_funcs` functions. At least 10% of call sites are indirect.
pub fn random_graph(seed: u64, max_funcs: usize, max_blocks: usize) -> GraphDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.gen_range(2..=max_funcs);
    let mut sizes: Vec<usize> = (0..nf).map(|_| rng.gen_range(1..=12)).collect();
    while sizes.iter().sum::<usize>() > max_blocks {
        let i = sizes.iter().enumerate().max_by_key(|(_, s)| **s).unwrap().0;
        sizes[i] -= 1;
    }
    let sigs = ["sa", "sb", "sc", "sd"];
    let name = |i: usize| format!("f{i}");
    let functions: Vec<FunctionDoc> = (0..nf)
        .map(|i| FunctionDoc {
            name: name(i),
            signature: sigs[rng.gen_range(0..sigs.len())].to_string(),
            syscall_entry: (i < 3).then(|| format!("sys{i}")),
            tags: Vec::new(),
        })
        .collect();
    let cfgs: Vec<CfgDoc> = (0..nf)
        .map(|i| {
            let n = sizes[i] as u32;
            let mut edges = Vec::new();
            for a in 0..n {
                for _ in 0..rng.gen_range(0..=2) {
                    let b = rng.gen_range(0..n);
                    if !edges.contains(&(a, b)) {
                        edges.push((a, b));
                    }
                }
            }
            CfgDoc {
                function: name(i),
                entry: 0,
                blocks: (0..n).map(|index| BlockDoc { index, ..Default::default() }).collect(),
                edges,
            }
        })
        .collect();
    let mut call_sites = Vec::new();
    let n_sites = rng.gen_range(nf..=3 * nf);
    for k in 0..n_sites {
        let caller = rng.gen_range(0..nf);
        let block = rng.gen_range(0..sizes[caller] as u32);
        let indirect = k % 5 == 0 || rng.gen_bool(0.2);
        call_sites.push(if indirect {
            CallSiteDoc {
                caller_function: name(caller),
                caller_block: block,
                kind: CallKindDoc::Indirect,
                callee: None,
                signature: Some(sigs[rng.gen_range(0..sigs.len())].to_string()),
            }
        } else {
            CallSiteDoc {
                caller_function: name(caller),
                caller_block: block,
                kind: CallKindDoc::Direct,
                callee: Some(name(rng.gen_range(0..nf))),
                signature: None,
            }
        });
    }
    let syscall_map = (0..nf.min(3)).map(|i| (format!("sys{i}"), name(i))).collect();
    GraphDoc {
        functions,
        cfgs,
        call_sites,
        syscall_map,
    }
}

pub fn indirect_fraction(doc: &GraphDoc) -> f64 {
    let n = doc.call_sites.len().max(1) as f64;
    doc.call_sites.iter().filter(|c| c.kind == CallKindDoc::Indirect).count() as f64 / n
}

/// Hop distance from every block to `target`, computed with petgraph on the
/// block graph restricted to functions that can call into the target's
/// function. Indirect sites go to every function with the same signature.
pub fn dijkstra_oracle(doc: &GraphDoc, program: &Program, target: BlockId, indirect: bool) -> BTreeMap<BlockId, u32> {
    let fid = |name: &str| program.func_id(name).unwrap();
    let mut callees: HashMap<FuncId, Vec<(u32, FuncId)>> = HashMap::new();
    for cs in &doc.call_sites {
        let caller = fid(&cs.caller_function);
        match cs.kind {
            CallKindDoc::Direct => callees
                .entry(caller)
                .or_default()
                .push((cs.caller_block, fid(cs.callee.as_deref().unwrap()))),
            CallKindDoc::Indirect if indirect => {
                for f in &doc.functions {
                    if Some(&f.signature) == cs.signature.as_ref() {
                        callees.entry(caller).or_default().push((cs.caller_block, fid(&f.name)));
                    }
                }
            }
            CallKindDoc::Indirect => {}
        }
    }

    // Function-level reachability toward the target function.
    let mut fg: DiGraph<FuncId, ()> = DiGraph::new();
    let fnode: Vec<NodeIndex> = (0..doc.functions.len()).map(|i| fg.add_node(FuncId(i as u32))).collect();
    for (caller, list) in &callees {
        for (_, callee) in list {
            fg.add_edge(fnode[callee.0 as usize], fnode[caller.0 as usize], ());
        }
    }
    let reach = dijkstra(&fg, fnode[target.func.0 as usize], None, |_| 1u32);
    let members: HashSet<FuncId> = reach.keys().map(|n| fg[*n]).collect();

    // Reversed block graph over the members.
    let mut g: DiGraph<BlockId, ()> = DiGraph::new();
    let mut node = HashMap::new();
    for cfg in &doc.cfgs {
        let f = fid(&cfg.function);
        if !members.contains(&f) {
            continue;
        }
        for b in &cfg.blocks {
            let id = BlockId::new(f, b.index);
            node.insert(id, g.add_node(id));
        }
    }
    for cfg in &doc.cfgs {
        let f = fid(&cfg.function);
        if !members.contains(&f) {
            continue;
        }
        for &(a, b) in &cfg.edges {
            g.update_edge(node[&BlockId::new(f, b)], node[&BlockId::new(f, a)], ());
        }
        for &(block, callee) in callees.get(&f).into_iter().flatten() {
            if members.contains(&callee) {
                let entry = BlockId::new(callee, doc.cfgs.iter().find(|c| fid(&c.function) == callee).unwrap().entry);
                g.update_edge(node[&entry], node[&BlockId::new(f, block)], ());
            }
        }
    }
    dijkstra(&g, node[&target], None, |_| 1u32)
        .into_iter()
        .map(|(n, d)| (g[n], d))
        .collect()
}

pub fn median(v: &[u64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}
