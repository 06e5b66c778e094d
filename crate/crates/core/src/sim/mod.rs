//! Deterministic toy kernel.
//!
//! A [`Scenario`] declares syscalls, their handler functions, resource
//! dependencies, guarded CFG edges and sequence-state effects. [`execute`]
//! walks handler CFGs for each call of an input and reports the blocks
//! covered, standing in for kernel coverage instrumentation.

mod exec;
mod oracle;
mod scenario;

pub use exec::{execute, ExecError, ExecResult};
pub use oracle::{brute_force_min_trigger, oracle_tractable, OracleError, MAX_ORACLE_ALPHABET, MAX_ORACLE_LEN};
pub use scenario::{
    load_scenario, Callable, DispatchDoc, EffectDoc, GuardDoc, NamedTarget, Predicate, Scenario, ScenarioDoc,
    ScenarioError, SyscallDef, SyscallDoc, TargetDoc,
};
