use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::{BlockId, CallKind, Constant, FuncId, GraphDoc, GraphError, Program};
use crate::inference::VariantTable;
use crate::scheduler::CallRole;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Closed guard language evaluated against the current call.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    ArgEq {
        arg: usize,
        value: Constant,
    },
    ResourceValid {
        arg: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resource: Option<String>,
    },
    FlagSet(String),
    FlagUnset(String),
    All(Vec<Predicate>),
}

impl Predicate {
    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Predicate)) {
        f(self);
        if let Predicate::All(ps) = self {
            for p in ps {
                p.visit(f);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyscallDoc {
    pub handler: String,
    #[serde(default)]
    pub arity: usize,
    /// Argument slot fixed by variants.
    #[serde(default = "default_variant_arg")]
    pub variant_arg: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub variants: BTreeMap<String, Constant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produces: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub consumes: Vec<(usize, String)>,
    /// Handler block taken when a consumed resource is invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_block: Option<u32>,
}

fn default_variant_arg() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardDoc {
    pub function: String,
    pub from: u32,
    pub to: u32,
    pub when: Predicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectDoc {
    pub function: String,
    pub block: u32,
    #[serde(default)]
    pub set: Vec<String>,
    #[serde(default)]
    pub clear: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchDoc {
    pub caller_function: String,
    pub caller_block: u32,
    pub callee: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Predicate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDoc {
    pub name: String,
    pub function: String,
    pub block: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub graph: GraphDoc,
    pub syscalls: BTreeMap<String, SyscallDoc>,
    #[serde(default)]
    pub guards: Vec<GuardDoc>,
    #[serde(default)]
    pub effects: Vec<EffectDoc>,
    #[serde(default)]
    pub dispatch: Vec<DispatchDoc>,
    pub targets: Vec<TargetDoc>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyscallDef {
    pub name: String,
    pub handler: FuncId,
    pub arity: usize,
    pub variant_arg: usize,
    pub variants: BTreeMap<String, Constant>,
    pub produces: Option<String>,
    pub consumes: Vec<(usize, String)>,
    pub error_block: Option<u32>,
}

/// A name a program may call: a base syscall or one of its variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Callable {
    pub base: String,
    pub fixed: Option<(usize, Constant)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub(crate) struct Effect {
    pub set: Vec<String>,
    pub clear: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTarget {
    pub name: String,
    pub block: BlockId,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub program: Program,
    syscalls: BTreeMap<String, SyscallDef>,
    callables: BTreeMap<String, Callable>,
    /// Successors of each block in CFG order with their guards.
    pub(crate) branches: HashMap<BlockId, Vec<(u32, Option<Predicate>)>>,
    pub(crate) effects: HashMap<BlockId, Effect>,
    pub(crate) dispatch: HashMap<BlockId, Vec<(FuncId, Option<Predicate>)>>,
    targets: Vec<NamedTarget>,
    constant_pool: Vec<Constant>,
    arg_constants: BTreeMap<usize, BTreeSet<Constant>>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut sc = Scenario::from_json(&text)?;
    if sc.name.is_empty() {
        sc.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(sc)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let doc: ScenarioDoc = serde_json::from_str(text)?;
        Scenario::from_doc(&doc)
    }

    pub fn from_doc(doc: &ScenarioDoc) -> Result<Scenario, ScenarioError> {
        let program = Program::from_doc(&doc.graph)?;
        let func = |name: &str, what: &str| {
            program
                .func_id(name)
                .ok_or_else(|| invalid(format!("{what} references unknown function `{name}`")))
        };

        let mut syscalls = BTreeMap::new();
        let mut callables = BTreeMap::new();
        let mut produced: BTreeSet<&str> = BTreeSet::new();
        let mut arg_constants: BTreeMap<usize, BTreeSet<Constant>> = BTreeMap::new();
        for (name, s) in &doc.syscalls {
            let handler = func(&s.handler, &format!("syscall `{name}`"))?;
            let check_map = |n: &str| match program.handler_of(n) {
                Some(h) if h == handler => Ok(()),
                Some(h) => Err(invalid(format!(
                    "syscall `{n}` maps to `{}` in the graph but `{}` in the syscall table",
                    program.name(h),
                    s.handler
                ))),
                None => Err(invalid(format!("syscall `{n}` is missing from the graph's syscall_map"))),
            };
            check_map(name)?;
            if let Some(e) = s.error_block {
                if e as usize >= program.cfg(handler).len() {
                    return Err(invalid(format!("error block {e} of `{name}` does not exist")));
                }
            }
            let mut arity = s.arity;
            for (slot, _) in &s.consumes {
                arity = arity.max(slot + 1);
            }
            if !s.variants.is_empty() {
                arity = arity.max(s.variant_arg + 1);
            }
            for (vname, c) in &s.variants {
                if vname.split_once('$').map(|(b, _)| b) != Some(name.as_str()) {
                    return Err(invalid(format!("variant `{vname}` must be written `{name}$...`")));
                }
                check_map(vname)?;
                arg_constants.entry(s.variant_arg).or_default().insert(c.clone());
                callables.insert(
                    vname.clone(),
                    Callable {
                        base: name.clone(),
                        fixed: Some((s.variant_arg, c.clone())),
                    },
                );
            }
            if let Some(r) = &s.produces {
                produced.insert(r);
            }
            callables.insert(
                name.clone(),
                Callable {
                    base: name.clone(),
                    fixed: None,
                },
            );
            syscalls.insert(
                name.clone(),
                SyscallDef {
                    name: name.clone(),
                    handler,
                    arity,
                    variant_arg: s.variant_arg,
                    variants: s.variants.clone(),
                    produces: s.produces.clone(),
                    consumes: s.consumes.clone(),
                    error_block: s.error_block,
                },
            );
        }
        for s in doc.syscalls.values() {
            for (_, r) in &s.consumes {
                if !produced.contains(r.as_str()) {
                    return Err(invalid(format!("resource type `{r}` is consumed but never produced")));
                }
            }
        }

        let mut guard_map: HashMap<(BlockId, u32), Predicate> = HashMap::new();
        for g in &doc.guards {
            let f = func(&g.function, "guard")?;
            if !program.cfg(f).edges.contains(&(g.from, g.to)) {
                return Err(invalid(format!(
                    "guard on nonexistent edge {}:{} -> {}",
                    g.function, g.from, g.to
                )));
            }
            if guard_map.insert((BlockId::new(f, g.from), g.to), g.when.clone()).is_some() {
                return Err(invalid(format!("edge {}:{} -> {} has two guards", g.function, g.from, g.to)));
            }
            g.when.visit(&mut |p| {
                if let Predicate::ArgEq { arg, value } = p {
                    arg_constants.entry(*arg).or_default().insert(value.clone());
                }
            });
        }
        let mut branches = HashMap::new();
        for (f, _) in program.functions() {
            let cfg = program.cfg(f);
            for b in 0..cfg.len() as u32 {
                let from = BlockId::new(f, b);
                let succ: Vec<(u32, Option<Predicate>)> = cfg
                    .successors(b)
                    .iter()
                    .map(|&to| (to, guard_map.get(&(from, to)).cloned()))
                    .collect();
                if succ.iter().filter(|(_, g)| g.is_none()).count() > 1 {
                    return Err(invalid(format!(
                        "block {} has more than one unguarded successor",
                        program.display_block(from)
                    )));
                }
                if !succ.is_empty() {
                    branches.insert(from, succ);
                }
            }
        }

        let mut effects: HashMap<BlockId, Effect> = HashMap::new();
        for e in &doc.effects {
            let f = func(&e.function, "effect")?;
            let b = BlockId::new(f, e.block);
            if !program.contains_block(b) {
                return Err(invalid(format!("effect on nonexistent block {}:{}", e.function, e.block)));
            }
            let slot = effects.entry(b).or_default();
            slot.set.extend(e.set.iter().cloned());
            slot.clear.extend(e.clear.iter().cloned());
        }

        let mut dispatch: HashMap<BlockId, Vec<(FuncId, Option<Predicate>)>> = HashMap::new();
        for d in &doc.dispatch {
            let caller = func(&d.caller_function, "dispatch")?;
            let callee = func(&d.callee, "dispatch")?;
            let site = BlockId::new(caller, d.caller_block);
            let sig = &program.function(callee).signature;
            let matches_site = program
                .call_sites_at(site)
                .any(|s| matches!(&s.kind, CallKind::Indirect(x) if x == sig));
            if !matches_site {
                return Err(invalid(format!(
                    "dispatch to `{}` at {}:{} has no indirect call site with signature `{sig}`",
                    d.callee, d.caller_function, d.caller_block
                )));
            }
            if let Some(p) = &d.when {
                p.visit(&mut |p| {
                    if let Predicate::ArgEq { arg, value } = p {
                        arg_constants.entry(*arg).or_default().insert(value.clone());
                    }
                });
            }
            dispatch.entry(site).or_default().push((callee, d.when.clone()));
        }

        let mut targets = Vec::new();
        for t in &doc.targets {
            let f = func(&t.function, "target")?;
            let b = BlockId::new(f, t.block);
            if !program.contains_block(b) {
                return Err(invalid(format!("target `{}` names nonexistent block {}:{}", t.name, t.function, t.block)));
            }
            targets.push(NamedTarget {
                name: t.name.clone(),
                block: b,
            });
        }
        if targets.is_empty() {
            return Err(invalid("scenario declares no targets"));
        }

        let constant_pool: Vec<Constant> = arg_constants
            .values()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        Ok(Scenario {
            name: doc.name.clone(),
            description: doc.description.clone(),
            program,
            syscalls,
            callables,
            branches,
            effects,
            dispatch,
            targets,
            constant_pool,
            arg_constants,
        })
    }

    pub fn syscalls(&self) -> impl Iterator<Item = &SyscallDef> {
        self.syscalls.values()
    }

    pub fn syscall(&self, base: &str) -> Option<&SyscallDef> {
        self.syscalls.get(base)
    }

    /// Base syscall definition and fixed variant argument for a callable name.
    pub fn resolve(&self, name: &str) -> Option<(&SyscallDef, Option<&(usize, Constant)>)> {
        let c = self.callables.get(name)?;
        Some((&self.syscalls[&c.base], c.fixed.as_ref()))
    }

    pub fn callable_names(&self) -> impl Iterator<Item = &str> {
        self.callables.keys().map(String::as_str)
    }

    pub fn callable_count(&self) -> usize {
        self.callables.len()
    }

    pub fn role(&self, name: &str) -> Option<CallRole> {
        let (def, _) = self.resolve(name)?;
        if !def.consumes.is_empty() {
            Some(CallRole::Consumer)
        } else if def.produces.is_some() {
            Some(CallRole::Producer)
        } else {
            None
        }
    }

    /// Callable names whose syscall produces resources of `resource` type.
    pub fn producers_of(&self, resource: &str) -> Vec<&str> {
        self.callables
            .iter()
            .filter(|(_, c)| self.syscalls[&c.base].produces.as_deref() == Some(resource))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn variant_table(&self) -> VariantTable {
        let mut t = VariantTable::default();
        for s in self.syscalls.values() {
            for (v, c) in &s.variants {
                t.insert(&s.name, v, c.clone());
            }
        }
        t
    }

    /// Every constant compared against by a guard or fixed by a variant.
    pub fn constant_pool(&self) -> &[Constant] {
        &self.constant_pool
    }

    /// Constants compared against argument slot `arg` anywhere in the scenario.
    pub fn arg_constants(&self, arg: usize) -> impl Iterator<Item = &Constant> {
        self.arg_constants.get(&arg).into_iter().flatten()
    }

    pub fn targets(&self) -> &[NamedTarget] {
        &self.targets
    }

    pub fn target(&self, name: &str) -> Option<&NamedTarget> {
        self.targets.iter().find(|t| t.name == name)
    }

    pub fn is_target(&self, b: BlockId) -> bool {
        self.targets.iter().any(|t| t.block == b)
    }
}
