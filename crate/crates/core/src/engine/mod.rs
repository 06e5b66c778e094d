//! The campaign loop: seed pools, inferred-syscall mutation, feedback
//! bookkeeping, phase-driven seed selection and PoC minimization.

mod campaign;
mod mutate;
mod pool;

pub use campaign::{Campaign, CampaignResult, PhaseChange, ProbabilitySample};
pub use mutate::{build_initial_seeds, insert_call, mutate, MutationKind, MutationParams};
pub use pool::{select_seed, Admission, Seed, SeedPool};

use crate::config::{CampaignConfig, Mode};
use crate::distance::{function_level_distance, Analysis, DistanceMap, TargetSite};
use crate::graph::{CallGraph, Resolution};
use crate::inference::{infer_all, InferredSyscall, KnowledgeBase, TraceEvidence};
use crate::input::Input;
use crate::sim::{execute, ExecError, ExecResult, NamedTarget, Scenario};

/// Multiplier applied to call-graph hops in the function-level ablation.
pub const FUNC_DIS_FACTOR: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("seed pool is empty")]
    EmptyPool,
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("proof of concept does not trigger the target")]
    PocDoesNotReplay,
    #[error("configuration: {0}")]
    Config(String),
}

/// Runs inputs against a kernel. Implementations must be deterministic.
pub trait Executor: Sync {
    fn execute(&self, input: &Input) -> Result<ExecResult, ExecError>;
}

impl Executor for Scenario {
    fn execute(&self, input: &Input) -> Result<ExecResult, ExecError> {
        execute(self, input)
    }
}

/// Static artifacts for one campaign: the target, the analysis, the
/// distance map the engine uses and the inferred syscalls.
#[derive(Clone, Debug)]
pub struct CampaignPlan {
    pub target: NamedTarget,
    pub analysis: Analysis,
    pub distances: DistanceMap,
    pub inferred: Vec<InferredSyscall>,
}

/// Resolve a target by scenario name or `function:block`.
pub fn find_target(sc: &Scenario, spec: &str) -> Result<NamedTarget, EngineError> {
    if let Some(t) = sc.target(spec) {
        return Ok(t.clone());
    }
    let site = TargetSite::parse(&sc.program, spec).map_err(|_| EngineError::UnknownTarget(spec.to_string()))?;
    Ok(NamedTarget {
        name: spec.to_string(),
        block: site.block,
    })
}

/// Static analysis and inference for `target` under the mode in `cfg`.
pub fn plan_campaign(
    sc: &Scenario,
    target: &str,
    cfg: &CampaignConfig,
    kb: &KnowledgeBase,
    trace: Option<TraceEvidence<'_>>,
) -> Result<CampaignPlan, EngineError> {
    let target = find_target(sc, target)?;
    let resolution = if cfg.indirect_resolution {
        Resolution::Rta
    } else {
        Resolution::DirectOnly
    };
    let cg = CallGraph::build(&sc.program, resolution);
    let site = TargetSite::new(&sc.program, target.block).map_err(|_| EngineError::UnknownTarget(target.name.clone()))?;
    let analysis = Analysis::run(&sc.program, &cg, site);
    let inferred = if cfg.mode.uses_inference() {
        infer_all(&sc.program, &analysis, &sc.variant_table(), kb, trace)
            .into_iter()
            .filter(|s| sc.resolve(&s.name).is_some())
            .collect()
    } else {
        Vec::new()
    };
    let distances = if cfg.mode == Mode::FuncDis {
        function_level_distance(&sc.program, &analysis.reachable, FUNC_DIS_FACTOR)
    } else {
        analysis.distances.clone()
    };
    Ok(CampaignPlan {
        target,
        analysis,
        distances,
        inferred,
    })
}

/// Plan and run one campaign with the scenario as executor.
pub fn run_campaign(sc: &Scenario, plan: &CampaignPlan, cfg: &CampaignConfig) -> Result<CampaignResult, EngineError> {
    Campaign {
        scenario: sc,
        executor: sc,
        target: plan.target.block,
        distances: &plan.distances,
        inferred: &plan.inferred,
        config: cfg,
    }
    .run()
}

fn triggers(exec: &dyn Executor, input: &Input, target: crate::graph::BlockId) -> Result<bool, EngineError> {
    Ok(exec.execute(input)?.hit(target))
}

/// Drop calls one at a time, front to back, keeping each deletion that still
/// triggers. Repeats until no single deletion triggers.
pub fn minimize_poc(poc: &Input, exec: &dyn Executor, target: crate::graph::BlockId) -> Result<Input, EngineError> {
    if !triggers(exec, poc, target)? {
        return Err(EngineError::PocDoesNotReplay);
    }
    let mut cur = poc.clone();
    loop {
        let before = cur.len();
        let mut i = 0;
        while i < cur.len() && cur.len() > 1 {
            let mut cand = cur.clone();
            cand.remove(i);
            if triggers(exec, &cand, target)? {
                cur = cand;
            } else {
                i += 1;
            }
        }
        if cur.len() == before {
            return Ok(cur);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Distance;
    use crate::graph::BlockId;
    use crate::scheduler::Phase;

    const CHAIN: &str = r#"{
        "graph": {
            "functions": [
                {"name": "sys_pipe", "signature": "sys", "syscall_entry": "pipe"},
                {"name": "sys_write", "signature": "sys", "syscall_entry": "write"},
                {"name": "sys_read", "signature": "sys", "syscall_entry": "read"},
                {"name": "sys_getpid", "signature": "sys", "syscall_entry": "getpid"},
                {"name": "sys_uname", "signature": "sys", "syscall_entry": "uname"},
                {"name": "pipe_read", "signature": "pr"}
            ],
            "cfgs": [
                {"function": "sys_pipe", "entry": 0, "blocks": [{"index": 0}]},
                {"function": "sys_write", "entry": 0, "blocks": [{"index": 0}, {"index": 1}, {"index": 2}],
                 "edges": [[0, 1]]},
                {"function": "sys_read", "entry": 0, "blocks": [{"index": 0}, {"index": 1}, {"index": 2}],
                 "edges": [[0, 1]]},
                {"function": "sys_getpid", "entry": 0, "blocks": [{"index": 0}]},
                {"function": "sys_uname", "entry": 0, "blocks": [{"index": 0}]},
                {"function": "pipe_read", "entry": 0,
                 "blocks": [{"index": 0}, {"index": 1}, {"index": 2}, {"index": 3}],
                 "edges": [[0, 1], [0, 2]]}
            ],
            "call_sites": [{"caller_function": "sys_read", "caller_block": 1, "kind": "direct", "callee": "pipe_read"}],
            "syscall_map": {"pipe": "sys_pipe", "write": "sys_write", "read": "sys_read",
                            "getpid": "sys_getpid", "uname": "sys_uname"}
        },
        "syscalls": {
            "pipe": {"handler": "sys_pipe", "produces": "fd"},
            "write": {"handler": "sys_write", "consumes": [[0, "fd"]], "error_block": 2},
            "read": {"handler": "sys_read", "consumes": [[0, "fd"]], "error_block": 2},
            "getpid": {"handler": "sys_getpid"},
            "uname": {"handler": "sys_uname"}
        },
        "effects": [{"function": "sys_write", "block": 1, "set": ["data"]}],
        "guards": [{"function": "pipe_read", "from": 0, "to": 1, "when": {"flag_set": "data"}}],
        "targets": [
            {"name": "data", "function": "pipe_read", "block": 1},
            {"name": "dead", "function": "sys_read", "block": 2}
        ]
    }"#;

    fn sc() -> Scenario {
        Scenario::from_json(CHAIN).unwrap()
    }

    fn cfg(mode: Mode, seed: u64) -> CampaignConfig {
        CampaignConfig {
            mode,
            rng_seed: seed,
            timeout_secs: 2000.0,
            ..Default::default()
        }
    }

    fn go(mode: Mode, seed: u64, target: &str) -> CampaignResult {
        let sc = sc();
        let c = cfg(mode, seed);
        let plan = plan_campaign(&sc, target, &c, &KnowledgeBase::default(), None).unwrap();
        run_campaign(&sc, &plan, &c).unwrap()
    }

    #[test]
    fn hit_has_replayable_poc() {
        let r = go(Mode::Gfuzz, 1, "data");
        assert!(r.hit);
        let poc = r.poc.as_ref().unwrap();
        let t = sc().target("data").unwrap().block;
        assert!(execute(&sc(), poc).unwrap().hit(t));
        assert_eq!(r.tte_secs, r.executions as f64);
    }

    #[test]
    fn unreachable_target_times_out() {
        // pipe_read:3 has no incoming edge.
        let sc = sc();
        let c = CampaignConfig {
            timeout_secs: 200.0,
            ..cfg(Mode::Gfuzz, 3)
        };
        let mut plan = plan_campaign(&sc, "data", &c, &KnowledgeBase::default(), None).unwrap();
        plan.target.block = BlockId::new(sc.program.func_id("pipe_read").unwrap(), 3);
        let r = run_campaign(&sc, &plan, &c).unwrap();
        assert!(!r.hit);
        assert_eq!(r.tte_secs, 200.0);
        assert_eq!(r.executions, 200);
        assert!(r.poc.is_none());
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let a = go(Mode::Gfuzz, 7, "data").to_json();
        let b = go(Mode::Gfuzz, 7, "data").to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn workers_do_not_change_results() {
        let sc = sc();
        let base = cfg(Mode::ExploreOnly, 5);
        let plan = plan_campaign(&sc, "data", &base, &KnowledgeBase::default(), None).unwrap();
        let one = run_campaign(&sc, &plan, &base).unwrap();
        let four = run_campaign(&sc, &plan, &CampaignConfig { workers: 4, ..base }).unwrap();
        assert_eq!(one.to_json(), four.to_json());
    }

    #[test]
    fn inference_modes() {
        let sc = sc();
        let plan = plan_campaign(&sc, "data", &cfg(Mode::Gfuzz, 0), &KnowledgeBase::default(), None).unwrap();
        assert_eq!(plan.inferred.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), vec!["read"]);
        let plan = plan_campaign(&sc, "data", &cfg(Mode::NoInfer, 0), &KnowledgeBase::default(), None).unwrap();
        assert!(plan.inferred.is_empty());
        let plan = plan_campaign(&sc, "data", &cfg(Mode::FuncDis, 0), &KnowledgeBase::default(), None).unwrap();
        let read0 = BlockId::new(sc.program.func_id("sys_read").unwrap(), 0);
        assert_eq!(plan.distances.get(read0), Distance::Finite(FUNC_DIS_FACTOR));
    }

    #[test]
    fn pinned_phases() {
        let r = go(Mode::ExploitOnly, 2, "data");
        assert!(r.phase_timeline.iter().all(|p| p.phase != Phase::Explore));
        let r = go(Mode::ExploreOnly, 2, "data");
        assert!(r.phase_timeline.iter().all(|p| p.phase != Phase::Exploit));
    }

    #[test]
    fn minimize_drops_redundant_calls() {
        let sc = sc();
        let t = sc.target("data").unwrap().block;
        let poc = Input::parse("getpid()\npipe()\nuname()\npipe()\nwrite(@1)\nread(@1)\ngetpid()\n").unwrap();
        let min = minimize_poc(&poc, &sc, t).unwrap();
        assert_eq!(min.to_string(), "pipe()\nwrite(@0)\nread(@0)\n");
        assert_eq!(minimize_poc(&min, &sc, t).unwrap(), min);
    }

    #[test]
    fn minimize_rejects_non_triggering_poc() {
        let sc = sc();
        let t = sc.target("data").unwrap().block;
        let poc = Input::parse("getpid()\n").unwrap();
        assert!(matches!(minimize_poc(&poc, &sc, t), Err(EngineError::PocDoesNotReplay)));
    }

    /// Every subsequence check: the minimized PoC triggers and no single
    /// deletion of it does.
    #[test]
    fn minimized_poc_is_one_minimal() {
        let sc = sc();
        let t = sc.target("data").unwrap().block;
        for seed in 0..5 {
            let r = go(Mode::Gfuzz, seed, "data");
            let min = minimize_poc(r.poc.as_ref().unwrap(), &sc, t).unwrap();
            assert!(execute(&sc, &min).unwrap().hit(t));
            for i in 0..min.len() {
                let mut cand = min.clone();
                cand.remove(i);
                assert!(!execute(&sc, &cand).unwrap().hit(t));
            }
        }
    }
}
