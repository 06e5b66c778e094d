//! Static program representation: functions, per-function CFGs, call sites,
//! and the syscall-name to handler mapping.
//!
//! Programs are loaded from the JSON graph interchange format (see
//! [`GraphDoc`]) and are immutable once validated.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> GraphError {
    GraphError::Invalid(msg.into())
}

/// Literal appearing in a basic block, or compared against by a guard.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constant {
    Int(u64),
    Str(String),
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(v) => write!(f, "{v:#x}"),
            Constant::Str(s) => f.write_str(s),
        }
    }
}

// ---------------------------------------------------------------------------
// Interchange document
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub functions: Vec<FunctionDoc>,
    pub cfgs: Vec<CfgDoc>,
    #[serde(default)]
    pub call_sites: Vec<CallSiteDoc>,
    #[serde(default)]
    pub syscall_map: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDoc {
    pub name: String,
    pub signature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syscall_entry: Option<String>,
    /// Metadata tags of the form `kind:value`, e.g. `fs_tag:pipefs`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgDoc {
    pub function: String,
    pub entry: u32,
    pub blocks: Vec<BlockDoc>,
    #[serde(default)]
    pub edges: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_loc: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constants: Vec<Constant>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKindDoc {
    Direct,
    Indirect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallSiteDoc {
    pub caller_function: String,
    pub caller_block: u32,
    pub kind: CallKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callee: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
}

// ---------------------------------------------------------------------------
// Validated program
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FuncId(pub u32);

/// A basic block addressed by (function, ordinal).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId {
    pub func: FuncId,
    pub index: u32,
}

impl BlockId {
    pub fn new(func: FuncId, index: u32) -> Self {
        BlockId { func, index }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub signature: String,
    pub syscall_entry: Option<String>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub source_loc: Option<String>,
    pub constants: Vec<Constant>,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cfg {
    pub entry: u32,
    /// Indexed by block ordinal.
    pub blocks: Vec<Block>,
    pub edges: BTreeSet<(u32, u32)>,
    succs: Vec<Vec<u32>>,
    /// Blocks not reachable from `entry`. Kept, but flagged.
    pub unreachable: Vec<u32>,
}

impl Cfg {
    pub fn successors(&self, block: u32) -> &[u32] {
        &self.succs[block as usize]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CallKind {
    Direct(FuncId),
    Indirect(String),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CallSite {
    pub caller: BlockId,
    pub kind: CallKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    functions: Vec<Function>,
    by_name: HashMap<String, FuncId>,
    cfgs: Vec<Cfg>,
    call_sites: Vec<CallSite>,
    sites_by_block: HashMap<BlockId, Vec<usize>>,
    by_signature: HashMap<String, Vec<FuncId>>,
    syscall_map: BTreeMap<String, FuncId>,
    warnings: Vec<String>,
}

pub fn load_program(path: impl AsRef<Path>) -> Result<Program, GraphError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Program::from_json(&text)
}

impl Program {
    pub fn from_json(text: &str) -> Result<Program, GraphError> {
        let doc: GraphDoc = serde_json::from_str(text)?;
        Program::from_doc(&doc)
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Program, GraphError> {
        let mut warnings = Vec::new();
        let mut functions = Vec::with_capacity(doc.functions.len());
        let mut by_name = HashMap::new();
        for (i, f) in doc.functions.iter().enumerate() {
            if f.name.is_empty() {
                return Err(invalid(format!("function #{i} has an empty name")));
            }
            if by_name.insert(f.name.clone(), FuncId(i as u32)).is_some() {
                return Err(invalid(format!("duplicate function `{}`", f.name)));
            }
            functions.push(Function {
                name: f.name.clone(),
                signature: f.signature.clone(),
                syscall_entry: f.syscall_entry.clone(),
                tags: f.tags.clone(),
            });
        }
        let lookup = |name: &str, what: &str| -> Result<FuncId, GraphError> {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| invalid(format!("{what} references unknown function `{name}`")))
        };

        let mut cfgs: Vec<Option<Cfg>> = vec![None; functions.len()];
        for c in &doc.cfgs {
            let fid = lookup(&c.function, "cfg")?;
            if cfgs[fid.0 as usize].is_some() {
                return Err(invalid(format!("function `{}` has more than one cfg", c.function)));
            }
            cfgs[fid.0 as usize] = Some(build_cfg(c, &mut warnings)?);
        }
        let cfgs = cfgs
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| invalid(format!("function `{}` has no cfg", functions[i].name))))
            .collect::<Result<Vec<_>, _>>()?;

        let mut call_sites = Vec::with_capacity(doc.call_sites.len());
        for s in &doc.call_sites {
            let func = lookup(&s.caller_function, "call site")?;
            if s.caller_block as usize >= cfgs[func.0 as usize].len() {
                return Err(invalid(format!(
                    "call site references block {} of `{}`, which has {} blocks",
                    s.caller_block,
                    s.caller_function,
                    cfgs[func.0 as usize].len()
                )));
            }
            let kind = match s.kind {
                CallKindDoc::Direct => {
                    let callee = s.callee.as_deref().ok_or_else(|| {
                        invalid(format!("direct call site in `{}` has no callee", s.caller_function))
                    })?;
                    CallKind::Direct(lookup(callee, "call site")?)
                }
                CallKindDoc::Indirect => match s.signature.as_deref() {
                    Some(sig) if !sig.is_empty() => CallKind::Indirect(sig.to_string()),
                    _ => {
                        return Err(invalid(format!(
                            "indirect call site in `{}` has an empty signature",
                            s.caller_function
                        )))
                    }
                },
            };
            call_sites.push(CallSite {
                caller: BlockId::new(func, s.caller_block),
                kind,
            });
        }

        let mut syscall_map = BTreeMap::new();
        for (name, fname) in &doc.syscall_map {
            syscall_map.insert(name.clone(), lookup(fname, &format!("syscall_map entry `{name}`"))?);
        }
        for f in &functions {
            if let Some(sys) = &f.syscall_entry {
                if !syscall_map.contains_key(sys) {
                    return Err(invalid(format!(
                        "function `{}` is the entry of syscall `{sys}`, which is missing from syscall_map",
                        f.name
                    )));
                }
            }
        }

        let mut sites_by_block: HashMap<BlockId, Vec<usize>> = HashMap::new();
        for (i, s) in call_sites.iter().enumerate() {
            sites_by_block.entry(s.caller).or_default().push(i);
        }
        let mut by_signature: HashMap<String, Vec<FuncId>> = HashMap::new();
        for (i, f) in functions.iter().enumerate() {
            by_signature.entry(f.signature.clone()).or_default().push(FuncId(i as u32));
        }
        for w in &warnings {
            log::info!("{w}");
        }

        Ok(Program {
            functions,
            by_name,
            cfgs,
            call_sites,
            sites_by_block,
            by_signature,
            syscall_map,
            warnings,
        })
    }

    pub fn functions(&self) -> impl Iterator<Item = (FuncId, &Function)> {
        self.functions.iter().enumerate().map(|(i, f)| (FuncId(i as u32), f))
    }

    pub fn function_count(&self) -> usize {
        self.functions.len()
    }

    pub fn function(&self, id: FuncId) -> &Function {
        &self.functions[id.0 as usize]
    }

    pub fn name(&self, id: FuncId) -> &str {
        &self.functions[id.0 as usize].name
    }

    pub fn func_id(&self, name: &str) -> Option<FuncId> {
        self.by_name.get(name).copied()
    }

    pub fn cfg(&self, id: FuncId) -> &Cfg {
        &self.cfgs[id.0 as usize]
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.cfgs.get(id.func.0 as usize)?.blocks.get(id.index as usize)
    }

    pub fn contains_block(&self, id: BlockId) -> bool {
        self.block(id).is_some()
    }

    pub fn entry_block(&self, id: FuncId) -> BlockId {
        BlockId::new(id, self.cfg(id).entry)
    }

    pub fn total_blocks(&self) -> usize {
        self.cfgs.iter().map(Cfg::len).sum()
    }

    pub fn call_sites(&self) -> &[CallSite] {
        &self.call_sites
    }

    pub fn call_sites_at(&self, block: BlockId) -> impl Iterator<Item = &CallSite> {
        self.sites_by_block
            .get(&block)
            .into_iter()
            .flatten()
            .map(|&i| &self.call_sites[i])
    }

    /// Functions whose signature key equals `signature` exactly.
    pub fn functions_with_signature(&self, signature: &str) -> &[FuncId] {
        self.by_signature.get(signature).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn syscall_map(&self) -> &BTreeMap<String, FuncId> {
        &self.syscall_map
    }

    pub fn handler_of(&self, syscall: &str) -> Option<FuncId> {
        self.syscall_map.get(syscall).copied()
    }

    /// Diagnostics raised during validation (e.g. unreachable blocks).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn block_by_source_loc(&self, loc: &str) -> Option<BlockId> {
        self.cfgs.iter().enumerate().find_map(|(f, cfg)| {
            cfg.blocks
                .iter()
                .position(|b| b.source_loc.as_deref() == Some(loc))
                .map(|i| BlockId::new(FuncId(f as u32), i as u32))
        })
    }

    pub fn display_block(&self, b: BlockId) -> String {
        format!("{}:{}", self.name(b.func), b.index)
    }

    /// Callees a call site may reach under the given resolution policy.
    pub fn site_callees(&self, site: &CallSite, resolution: Resolution) -> Vec<FuncId> {
        match (&site.kind, resolution) {
            (CallKind::Direct(f), _) => vec![*f],
            (CallKind::Indirect(sig), Resolution::Rta) => self.functions_with_signature(sig).to_vec(),
            (CallKind::Indirect(_), Resolution::DirectOnly) => Vec::new(),
        }
    }
}

fn build_cfg(c: &CfgDoc, warnings: &mut Vec<String>) -> Result<Cfg, GraphError> {
    let n = c.blocks.len();
    let mut slots: Vec<Option<Block>> = vec![None; n];
    for b in &c.blocks {
        let i = b.index as usize;
        if i >= n {
            return Err(invalid(format!(
                "block index {} of `{}` is out of range ({} blocks)",
                b.index, c.function, n
            )));
        }
        if slots[i].is_some() {
            return Err(invalid(format!("duplicate block index {} in `{}`", b.index, c.function)));
        }
        slots[i] = Some(Block {
            source_loc: b.source_loc.clone(),
            constants: b.constants.clone(),
            tags: b.tags.clone(),
        });
    }
    // Every index in 0..n is present: n distinct values, each < n.
    let blocks: Vec<Block> = slots.into_iter().map(|b| b.expect("permutation")).collect();
    if n == 0 {
        return Err(invalid(format!("cfg of `{}` has no blocks", c.function)));
    }
    if c.entry as usize >= n {
        return Err(invalid(format!("entry {} of `{}` is not a block", c.entry, c.function)));
    }
    let mut edges = BTreeSet::new();
    let mut succs = vec![Vec::new(); n];
    for &(from, to) in &c.edges {
        if from as usize >= n || to as usize >= n {
            return Err(invalid(format!(
                "edge ({from}, {to}) of `{}` has an endpoint outside its {n} blocks",
                c.function
            )));
        }
        if edges.insert((from, to)) {
            succs[from as usize].push(to);
        }
    }

    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([c.entry]);
    seen[c.entry as usize] = true;
    while let Some(b) = queue.pop_front() {
        for &s in &succs[b as usize] {
            if !seen[s as usize] {
                seen[s as usize] = true;
                queue.push_back(s);
            }
        }
    }
    let unreachable: Vec<u32> = (0..n as u32).filter(|&i| !seen[i as usize]).collect();
    if !unreachable.is_empty() {
        warnings.push(format!(
            "`{}` has blocks unreachable from its entry: {:?}",
            c.function, unreachable
        ));
    }
    Ok(Cfg {
        entry: c.entry,
        blocks,
        edges,
        succs,
        unreachable,
    })
}

// ---------------------------------------------------------------------------
// Call graph
// ---------------------------------------------------------------------------

/// How indirect call sites are resolved.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Signature matching: an indirect site may call every function whose
    /// signature key equals the site's.
    #[default]
    Rta,
    /// Indirect sites are ignored.
    DirectOnly,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallGraph {
    pub resolution: Resolution,
    pub edges: BTreeSet<(FuncId, FuncId)>,
    callers: BTreeMap<FuncId, BTreeSet<FuncId>>,
}

impl CallGraph {
    pub fn build(program: &Program, resolution: Resolution) -> CallGraph {
        let mut edges = BTreeSet::new();
        for site in program.call_sites() {
            let callees = program.site_callees(site, resolution);
            if callees.is_empty() {
                if let CallKind::Indirect(sig) = &site.kind {
                    if resolution == Resolution::Rta {
                        log::warn!(
                            "indirect call at {} with signature `{sig}` matches no function",
                            program.display_block(site.caller)
                        );
                    }
                }
            }
            for callee in callees {
                edges.insert((site.caller.func, callee));
            }
        }
        let mut callers: BTreeMap<FuncId, BTreeSet<FuncId>> = BTreeMap::new();
        for &(a, b) in &edges {
            callers.entry(b).or_default().insert(a);
        }
        CallGraph {
            resolution,
            edges,
            callers,
        }
    }

    pub fn callers_of(&self, f: FuncId) -> impl Iterator<Item = FuncId> + '_ {
        self.callers.get(&f).into_iter().flatten().copied()
    }

    pub fn contains(&self, caller: FuncId, callee: FuncId) -> bool {
        self.edges.contains(&(caller, callee))
    }
}

/// All direct edges plus every signature-matched indirect edge.
pub fn resolve_indirect(program: &Program) -> CallGraph {
    CallGraph::build(program, Resolution::Rta)
}
