//! Reachability pruning and basic-block distances.
//!
//! Starting from the target function, callers are walked bottom-up over the
//! resolved call graph to find the reachable functions. Their CFGs are
//! joined by call-site -> callee-entry edges into a local inter-procedural
//! CFG, and a reverse BFS from the target block yields hop distances.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{BlockId, CallGraph, FuncId, Program};

#[derive(Debug, thiserror::Error)]
pub enum DistanceError {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("distance map line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Hop distance, or unreachable. `Finite(_) < Infinite`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Distance {
    Finite(u32),
    Infinite,
}

impl Distance {
    pub fn is_finite(self) -> bool {
        matches!(self, Distance::Finite(_))
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Infinite => None,
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d}"),
            Distance::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct TargetSite {
    pub block: BlockId,
}

impl TargetSite {
    pub fn new(program: &Program, block: BlockId) -> Result<Self, DistanceError> {
        if program.contains_block(block) {
            Ok(TargetSite { block })
        } else {
            Err(DistanceError::UnknownTarget(format!("{}:{}", block.func.0, block.index)))
        }
    }

    /// Accepts `function:block_index`, or a `file:line` source location.
    pub fn parse(program: &Program, spec: &str) -> Result<Self, DistanceError> {
        if let Some((name, idx)) = spec.rsplit_once(':') {
            if let (Some(func), Ok(index)) = (program.func_id(name), idx.parse::<u32>()) {
                let block = BlockId::new(func, index);
                if program.contains_block(block) {
                    return Ok(TargetSite { block });
                }
                return Err(DistanceError::UnknownTarget(spec.to_string()));
            }
        }
        program
            .block_by_source_loc(spec)
            .map(|block| TargetSite { block })
            .ok_or_else(|| DistanceError::UnknownTarget(spec.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachableSet {
    pub target: TargetSite,
    pub functions: BTreeSet<FuncId>,
    /// Minimal call-graph hop count from each member to the target function.
    pub hops: BTreeMap<FuncId, u32>,
    /// Syscall name -> hop count of its handler.
    pub entry_syscalls: BTreeMap<String, u32>,
}

impl ReachableSet {
    pub fn contains(&self, f: FuncId) -> bool {
        self.functions.contains(&f)
    }

    pub fn block_count(&self, program: &Program) -> usize {
        self.functions.iter().map(|&f| program.cfg(f).len()).sum()
    }

    pub fn function_ratio(&self, program: &Program) -> f64 {
        self.functions.len() as f64 / program.function_count() as f64
    }
}

pub fn reachable_set(program: &Program, cg: &CallGraph, target: TargetSite) -> ReachableSet {
    let root = target.block.func;
    let mut hops = BTreeMap::from([(root, 0u32)]);
    let mut queue = VecDeque::from([root]);
    while let Some(f) = queue.pop_front() {
        let h = hops[&f];
        for caller in cg.callers_of(f) {
            if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(caller) {
                e.insert(h + 1);
                queue.push_back(caller);
            }
        }
    }
    let mut entry_syscalls = BTreeMap::new();
    for (&f, &h) in &hops {
        if let Some(sys) = &program.function(f).syscall_entry {
            entry_syscalls.insert(sys.clone(), h);
        }
    }
    ReachableSet {
        target,
        functions: hops.keys().copied().collect(),
        hops,
        entry_syscalls,
    }
}

/// Local inter-procedural CFG over the blocks of the reachable functions.
#[derive(Clone, Debug)]
pub struct InterCfg {
    nodes: Vec<BlockId>,
    index: HashMap<BlockId, usize>,
    succs: Vec<Vec<usize>>,
    preds: Vec<Vec<usize>>,
    intra_edges: usize,
    call_edges: usize,
}

impl InterCfg {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.intra_edges + self.call_edges
    }

    pub fn call_edge_count(&self) -> usize {
        self.call_edges
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.index.contains_key(&b)
    }

    pub fn nodes(&self) -> &[BlockId] {
        &self.nodes
    }

    pub fn successors(&self, b: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.index
            .get(&b)
            .into_iter()
            .flat_map(move |&i| self.succs[i].iter().map(move |&j| self.nodes[j]))
    }

    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.succs
            .iter()
            .enumerate()
            .flat_map(move |(i, s)| s.iter().map(move |&j| (self.nodes[i], self.nodes[j])))
    }
}

pub fn build_inter_cfg(program: &Program, cg: &CallGraph, rs: &ReachableSet) -> InterCfg {
    let mut nodes = Vec::with_capacity(rs.block_count(program));
    for &f in &rs.functions {
        nodes.extend((0..program.cfg(f).len() as u32).map(|i| BlockId::new(f, i)));
    }
    let index: HashMap<BlockId, usize> = nodes.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut intra_edges = 0;
    for &f in &rs.functions {
        for &(a, b) in &program.cfg(f).edges {
            succs[index[&BlockId::new(f, a)]].push(index[&BlockId::new(f, b)]);
            intra_edges += 1;
        }
    }
    let mut call_edges = 0;
    for site in program.call_sites() {
        if !rs.contains(site.caller.func) {
            continue;
        }
        let from = index[&site.caller];
        for callee in program.site_callees(site, cg.resolution) {
            if !rs.contains(callee) {
                continue;
            }
            let to = index[&program.entry_block(callee)];
            if !succs[from].contains(&to) {
                succs[from].push(to);
                call_edges += 1;
            }
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, s) in succs.iter().enumerate() {
        for &j in s {
            preds[j].push(i);
        }
    }
    InterCfg {
        nodes,
        index,
        succs,
        preds,
        intra_edges,
        call_edges,
    }
}

/// Block -> hop distance to the target. Absent blocks are unreachable.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DistanceMap {
    entries: BTreeMap<BlockId, u32>,
}

impl DistanceMap {
    pub fn from_entries(entries: BTreeMap<BlockId, u32>) -> Self {
        DistanceMap { entries }
    }

    pub fn get(&self, b: BlockId) -> Distance {
        self.entries.get(&b).map_or(Distance::Infinite, |&d| Distance::Finite(d))
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.entries.contains_key(&b)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BlockId, u32)> + '_ {
        self.entries.iter().map(|(&b, &d)| (b, d))
    }

    /// Every entry shifted by `c`; used to check that exploration ignores distance.
    pub fn shifted(&self, c: u32) -> DistanceMap {
        DistanceMap {
            entries: self.entries.iter().map(|(&b, &d)| (b, d + c)).collect(),
        }
    }
}

pub fn bfs_distance(icfg: &InterCfg, target: TargetSite) -> DistanceMap {
    let mut entries = BTreeMap::new();
    let Some(&start) = icfg.index.get(&target.block) else {
        return DistanceMap { entries };
    };
    let mut dist = vec![u32::MAX; icfg.nodes.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in &icfg.preds[v] {
            if dist[u] == u32::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    for (i, &d) in dist.iter().enumerate() {
        if d != u32::MAX {
            entries.insert(icfg.nodes[i], d);
        }
    }
    DistanceMap { entries }
}

/// Function-level approximation: every block of a reachable function gets
/// `factor` times its function's call-graph hop count.
pub fn function_level_distance(program: &Program, rs: &ReachableSet, factor: u32) -> DistanceMap {
    let mut entries = BTreeMap::new();
    for (&f, &h) in &rs.hops {
        for i in 0..program.cfg(f).len() as u32 {
            entries.insert(BlockId::new(f, i), h * factor);
        }
    }
    DistanceMap { entries }
}

pub fn seed_distance<'a>(dm: &DistanceMap, covered: impl IntoIterator<Item = &'a BlockId>) -> Distance {
    covered
        .into_iter()
        .filter_map(|&b| dm.entries.get(&b).copied())
        .min()
        .map_or(Distance::Infinite, Distance::Finite)
}

/// Everything the static pipeline produces for one target.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub target: TargetSite,
    pub reachable: ReachableSet,
    pub icfg: InterCfg,
    pub distances: DistanceMap,
}

impl Analysis {
    pub fn run(program: &Program, cg: &CallGraph, target: TargetSite) -> Analysis {
        let reachable = reachable_set(program, cg, target);
        let icfg = build_inter_cfg(program, cg, &reachable);
        let distances = bfs_distance(&icfg, target);
        Analysis {
            target,
            reachable,
            icfg,
            distances,
        }
    }
}

// ---------------------------------------------------------------------------
// File format: `function<TAB>block_index<TAB>distance`, sorted, no header.
// ---------------------------------------------------------------------------

pub fn write_distance_map(dm: &DistanceMap, program: &Program, path: impl AsRef<Path>) -> Result<(), DistanceError> {
    let path = path.as_ref();
    let io_err = |source| DistanceError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    write_distance_records(dm, program, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn write_distance_records(dm: &DistanceMap, program: &Program, out: &mut impl Write) -> std::io::Result<()> {
    let mut records: Vec<(&str, u32, u32)> = dm.iter().map(|(b, d)| (program.name(b.func), b.index, d)).collect();
    records.sort();
    for (name, index, d) in records {
        writeln!(out, "{name}\t{index}\t{d}")?;
    }
    Ok(())
}

pub fn read_distance_map(path: impl AsRef<Path>, program: &Program) -> Result<DistanceMap, DistanceError> {
    let path = path.as_ref();
    let io_err = |source| DistanceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    parse_distance_records(BufReader::new(file), program)
}

pub fn parse_distance_records(input: impl BufRead, program: &Program) -> Result<DistanceMap, DistanceError> {
    let mut entries = BTreeMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|source| DistanceError::Io {
            path: "<input>".into(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DistanceError::Format { line: n + 1, msg };
        let mut parts = line.split('\t');
        let (Some(name), Some(idx), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected three tab-separated fields".into()));
        };
        let func = program.func_id(name).ok_or_else(|| err(format!("unknown function `{name}`")))?;
        let index: u32 = idx.parse().map_err(|_| err(format!("bad block index `{idx}`")))?;
        let d: u32 = d.parse().map_err(|_| err(format!("bad distance `{d}`")))?;
        let block = BlockId::new(func, index);
        if !program.contains_block(block) {
            return Err(err(format!("block {name}:{index} does not exist")));
        }
        entries.insert(block, d);
    }
    Ok(DistanceMap { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{resolve_indirect, Resolution};

    fn program(json: &str) -> Program {
        Program::from_json(json).unwrap()
    }

    /// sysA -> f -> g, sysB -> h. Each function: 0 -> 1 -> 2, calls from block 1.
    fn chain_program() -> Program {
        let mut funcs = Vec::new();
        let mut cfgs = Vec::new();
        for (name, entry) in [("sys_a", Some("sysA")), ("f", None), ("g", None), ("sys_b", Some("sysB")), ("h", None)] {
            funcs.push(serde_json::json!({"name": name, "signature": name, "syscall_entry": entry}));
            cfgs.push(serde_json::json!({"function": name, "entry": 0,
                "blocks": [{"index":0},{"index":1},{"index":2}], "edges": [[0,1],[1,2]]}));
        }
        let doc = serde_json::json!({
            "functions": funcs, "cfgs": cfgs,
            "call_sites": [
                {"caller_function":"sys_a","caller_block":1,"kind":"direct","callee":"f"},
                {"caller_function":"f","caller_block":1,"kind":"direct","callee":"g"},
                {"caller_function":"sys_b","caller_block":1,"kind":"direct","callee":"h"}
            ],
            "syscall_map": {"sysA":"sys_a","sysB":"sys_b"}
        });
        program(&doc.to_string())
    }

    #[test]
    fn single_function_reaches_itself() {
        let p = program(
            r#"{"functions":[{"name":"main","signature":"v"}],
                "cfgs":[{"function":"main","entry":0,"blocks":[{"index":0}],"edges":[]}]}"#,
        );
        let cg = resolve_indirect(&p);
        let t = TargetSite::parse(&p, "main:0").unwrap();
        let rs = reachable_set(&p, &cg, t);
        assert_eq!(rs.functions.len(), 1);
        let icfg = build_inter_cfg(&p, &cg, &rs);
        assert_eq!(icfg.node_count(), 1);
        assert_eq!(icfg.call_edge_count(), 0);
    }

    #[test]
    fn chain_reachable_set_and_entry_hops() {
        let p = chain_program();
        let cg = resolve_indirect(&p);
        let rs = reachable_set(&p, &cg, TargetSite::parse(&p, "g:2").unwrap());
        let names: BTreeSet<&str> = rs.functions.iter().map(|&f| p.name(f)).collect();
        assert_eq!(names, BTreeSet::from(["g", "f", "sys_a"]));
        assert_eq!(rs.entry_syscalls, BTreeMap::from([("sysA".to_string(), 2)]));
    }

    #[test]
    fn unknown_target_rejected() {
        let p = chain_program();
        assert!(TargetSite::parse(&p, "g:9").is_err());
        assert!(TargetSite::parse(&p, "nope:0").is_err());
    }

    #[test]
    fn inter_cfg_counts_and_distances() {
        let p = chain_program();
        let cg = resolve_indirect(&p);
        let t = TargetSite::parse(&p, "g:2").unwrap();
        let a = Analysis::run(&p, &cg, t);
        // 3 functions x 2 intra edges + 2 call edges; h is not reachable.
        assert_eq!(a.icfg.node_count(), 9);
        assert_eq!(a.icfg.edge_count(), 8);
        assert_eq!(a.icfg.call_edge_count(), 2);
        let g = p.func_id("g").unwrap();
        let f = p.func_id("f").unwrap();
        let s = p.func_id("sys_a").unwrap();
        // sys_a:0 -> sys_a:1 -> f:0 -> f:1 -> g:0 -> g:1 -> g:2
        assert_eq!(a.distances.get(BlockId::new(s, 0)), Distance::Finite(6));
        assert_eq!(a.distances.get(BlockId::new(f, 1)), Distance::Finite(3));
        assert_eq!(a.distances.get(BlockId::new(g, 2)), Distance::Finite(0));
        // Blocks after the call site in callers have no path forward.
        assert_eq!(a.distances.get(BlockId::new(f, 2)), Distance::Infinite);
    }

    #[test]
    fn path_graph_distances() {
        let p = program(
            r#"{"functions":[{"name":"m","signature":"v"}],
                "cfgs":[{"function":"m","entry":0,"blocks":[{"index":0},{"index":1},{"index":2},{"index":3}],
                         "edges":[[0,1],[1,2]]}]}"#,
        );
        let cg = resolve_indirect(&p);
        let a = Analysis::run(&p, &cg, TargetSite::parse(&p, "m:2").unwrap());
        let m = FuncId(0);
        let got: Vec<Distance> = (0..4).map(|i| a.distances.get(BlockId::new(m, i))).collect();
        assert_eq!(
            got,
            vec![Distance::Finite(2), Distance::Finite(1), Distance::Finite(0), Distance::Infinite]
        );
    }

    #[test]
    fn diamond_takes_shorter_branch() {
        // A=0 -> B=1 -> D=4 ; A -> C=2 -> E=3 -> D. Unit-weight Dijkstra by hand:
        // D 0, B 1, E 1, C 2, A 2.
        let p = program(
            r#"{"functions":[{"name":"m","signature":"v"}],
                "cfgs":[{"function":"m","entry":0,
                  "blocks":[{"index":0},{"index":1},{"index":2},{"index":3},{"index":4}],
                  "edges":[[0,1],[1,4],[0,2],[2,3],[3,4]]}]}"#,
        );
        let cg = resolve_indirect(&p);
        let a = Analysis::run(&p, &cg, TargetSite::parse(&p, "m:4").unwrap());
        let d = |i| a.distances.get(BlockId::new(FuncId(0), i)).finite().unwrap();
        assert_eq!((d(0), d(1), d(2), d(3), d(4)), (2, 1, 2, 1, 0));
    }

    #[test]
    fn call_to_unreachable_function_adds_no_edge() {
        let p = chain_program();
        let cg = resolve_indirect(&p);
        let rs = reachable_set(&p, &cg, TargetSite::parse(&p, "f:2").unwrap());
        let icfg = build_inter_cfg(&p, &cg, &rs);
        // f -> g exists in the CG but g is not on a path to f.
        assert_eq!(icfg.call_edge_count(), 1);
        assert!(!icfg.contains(BlockId::new(p.func_id("g").unwrap(), 0)));
    }

    #[test]
    fn indirect_resolution_matters_for_reachability() {
        let p = program(
            r#"{"functions":[{"name":"sys","signature":"s","syscall_entry":"x"},{"name":"impl","signature":"op"}],
                "cfgs":[{"function":"sys","entry":0,"blocks":[{"index":0}]},
                        {"function":"impl","entry":0,"blocks":[{"index":0}]}],
                "call_sites":[{"caller_function":"sys","caller_block":0,"kind":"indirect","signature":"op"}],
                "syscall_map":{"x":"sys"}}"#,
        );
        let t = TargetSite::parse(&p, "impl:0").unwrap();
        let rta = reachable_set(&p, &CallGraph::build(&p, Resolution::Rta), t);
        let direct = reachable_set(&p, &CallGraph::build(&p, Resolution::DirectOnly), t);
        assert_eq!(rta.functions.len(), 2);
        assert_eq!(direct.functions.len(), 1);
        assert!(direct.entry_syscalls.is_empty());
    }

    #[test]
    fn seed_distance_is_min_over_covered() {
        let b = |i| BlockId::new(FuncId(0), i);
        let dm = DistanceMap::from_entries(BTreeMap::from([(b(0), 7), (b(1), 3), (b(2), 0)]));
        assert_eq!(seed_distance(&dm, &[b(0), b(1)]), Distance::Finite(3));
        assert_eq!(seed_distance(&dm, &[b(5)]), Distance::Infinite);
        assert_eq!(seed_distance(&dm, &[b(0), b(2)]), Distance::Finite(0));
        assert_eq!(seed_distance(&dm, &[]), Distance::Infinite);
    }

    #[test]
    fn function_level_distance_scales_hops() {
        let p = chain_program();
        let cg = resolve_indirect(&p);
        let rs = reachable_set(&p, &cg, TargetSite::parse(&p, "g:2").unwrap());
        let dm = function_level_distance(&p, &rs, 10);
        assert_eq!(dm.get(BlockId::new(p.func_id("sys_a").unwrap(), 2)), Distance::Finite(20));
        assert_eq!(dm.get(BlockId::new(p.func_id("g").unwrap(), 0)), Distance::Finite(0));
        assert_eq!(dm.len(), 9);
    }

    #[test]
    fn distance_file_round_trip() {
        let p = chain_program();
        let cg = resolve_indirect(&p);
        let a = Analysis::run(&p, &cg, TargetSite::parse(&p, "g:2").unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dist.tsv");
        write_distance_map(&a.distances, &p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), a.distances.len());
        assert!(text.starts_with("f\t0\t4\n"), "{text}");
        assert_eq!(read_distance_map(&path, &p).unwrap(), a.distances);

        let empty = dir.path().join("empty.tsv");
        write_distance_map(&DistanceMap::default(), &p, &empty).unwrap();
        assert_eq!(std::fs::read_to_string(&empty).unwrap(), "");
        assert!(read_distance_map(&empty, &p).unwrap().is_empty());
    }

    #[test]
    fn five_entry_map_writes_five_records() {
        let p = chain_program();
        let f = p.func_id("f").unwrap();
        let dm = DistanceMap::from_entries((0..3).map(|i| (BlockId::new(f, i), i)).chain([
            (BlockId::new(FuncId(0), 0), 9),
            (BlockId::new(FuncId(0), 1), 8),
        ]).collect());
        let mut buf = Vec::new();
        write_distance_records(&dm, &p, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn malformed_records_report_line() {
        let p = chain_program();
        let err = parse_distance_records("f\t0\t1\nf\tx\t1\n".as_bytes(), &p).unwrap_err();
        assert!(matches!(err, DistanceError::Format { line: 2, .. }));
        let err = parse_distance_records("ghost\t0\t1\n".as_bytes(), &p).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
