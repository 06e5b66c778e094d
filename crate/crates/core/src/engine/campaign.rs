use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::mutate::{build_initial_seeds, mutate, MutationParams};
use super::pool::{select_seed, Seed, SeedPool};
use super::{EngineError, Executor};
use crate::config::{CampaignConfig, Mode};
use crate::distance::{Distance, DistanceMap};
use crate::graph::BlockId;
use crate::inference::InferredSyscall;
use crate::input::Input;
use crate::scheduler::{utilization_probability, Phase, ProgressEvent, RandomSource, SwitchState, SyscallWeights};
use crate::sim::{ExecResult, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySample {
    pub t_secs: f64,
    /// Selection probability per inferred syscall, in name order.
    pub probabilities: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub t_secs: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub mode: Mode,
    pub rng_seed: u64,
    pub hit: bool,
    /// Virtual time of the triggering execution, or the timeout.
    pub tte_secs: f64,
    pub executions: u64,
    pub poc: Option<Input>,
    pub inferred: Vec<InferredSyscall>,
    pub probability_trace: Vec<ProbabilitySample>,
    pub phase_timeline: Vec<PhaseChange>,
    pub final_frequencies: Vec<(String, u64)>,
    pub global_queue: usize,
    pub shorter_queue: usize,
    pub covered_blocks: usize,
    pub best_distance: Distance,
}

impl CampaignResult {
    pub fn tte(&self) -> Duration {
        Duration::from_secs_f64(self.tte_secs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<CampaignResult, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Final selection probability of `syscall`, if it was inferred.
    pub fn final_probability(&self, syscall: &str) -> Option<f64> {
        self.probability_trace
            .last()?
            .probabilities
            .iter()
            .find(|(s, _)| s == syscall)
            .map(|&(_, p)| p)
    }
}

/// One directed campaign against a single target block.
pub struct Campaign<'a> {
    pub scenario: &'a Scenario,
    pub executor: &'a dyn Executor,
    pub target: BlockId,
    pub distances: &'a DistanceMap,
    pub inferred: &'a [InferredSyscall],
    pub config: &'a CampaignConfig,
}

struct Run<'a> {
    c: &'a Campaign<'a>,
    rng: RandomSource,
    pool: SeedPool,
    weights: SyscallWeights,
    switch: SwitchState,
    now: Duration,
    executions: u64,
    trace: Vec<ProbabilitySample>,
    timeline: Vec<PhaseChange>,
    fast_path: VecDeque<usize>,
    poc: Option<Input>,
}

impl Run<'_> {
    fn sample_probabilities(&mut self) {
        if self.weights.is_empty() {
            return;
        }
        self.trace.push(ProbabilitySample {
            t_secs: self.now.as_secs_f64(),
            probabilities: self.weights.probabilities(),
        });
    }

    fn set_phase(&mut self, st: SwitchState) {
        if st.phase != self.switch.phase {
            self.timeline.push(PhaseChange {
                t_secs: self.now.as_secs_f64(),
                phase: st.phase,
            });
        }
        self.switch = st;
    }

    /// Account for one execution; true if it triggered the target.
    fn record(&mut self, input: Input, exec: ExecResult, parent: Option<Distance>) -> bool {
        self.now += self.c.config.exec_cost();
        self.executions += 1;
        if exec.hit(self.c.target) {
            self.poc = Some(input);
            return true;
        }
        let seed = Seed::new(input, &exec, self.c.distances, parent);
        let adm = self.pool.admit(seed, &exec, self.c.distances, &mut self.weights);
        if adm.event != ProgressEvent::None || adm.shorter {
            self.sample_probabilities();
        }
        if self.switch.phase != Phase::Initial && fixed_phase(self.c.config.mode).is_none() {
            let st = self.switch.step(adm.event, self.now);
            self.set_phase(st);
        }
        if self.switch.phase == Phase::Explore {
            if let Some(i) = adm.queued {
                self.fast_path.push_back(i);
            }
        }
        false
    }

    fn execute_batch(&self, inputs: &[Input]) -> Result<Vec<ExecResult>, EngineError> {
        let workers = self.c.config.workers.min(inputs.len()).max(1);
        if workers == 1 {
            return inputs.iter().map(|i| self.c.executor.execute(i).map_err(EngineError::from)).collect();
        }
        let chunk = inputs.len().div_ceil(workers);
        let exec = self.c.executor;
        let parts: Vec<Vec<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|i| exec.execute(i)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("executor worker panicked")).collect()
        });
        parts.into_iter().flatten().map(|r| r.map_err(EngineError::from)).collect()
    }
}

/// Phase pinned by an ablation mode.
fn fixed_phase(mode: Mode) -> Option<Phase> {
    match mode {
        Mode::ExploreOnly | Mode::Undirected => Some(Phase::Explore),
        Mode::ExploitOnly => Some(Phase::Exploit),
        _ => None,
    }
}

impl Campaign<'_> {
    /// Fuzz until the target is covered or the virtual budget runs out.
    /// Mutants are generated in bursts and admitted in generation order, so
    /// the result does not depend on the number of workers.
    pub fn run(&self) -> Result<CampaignResult, EngineError> {
        let cfg = self.config;
        let schedule = cfg.schedule().map_err(|e| EngineError::Config(e.to_string()))?;
        let names: Vec<String> = self
            .inferred
            .iter()
            .filter(|s| self.scenario.resolve(&s.name).is_some())
            .map(|s| s.name.clone())
            .collect();
        let mut run = Run {
            c: self,
            rng: RandomSource::new(cfg.rng_seed),
            pool: SeedPool::new(cfg.coverage, cfg.counting),
            weights: SyscallWeights::new(names.iter().cloned()),
            switch: SwitchState::new(cfg.t_a(), cfg.t_b()),
            now: Duration::ZERO,
            executions: 0,
            trace: Vec::new(),
            timeline: vec![PhaseChange {
                t_secs: 0.0,
                phase: Phase::Initial,
            }],
            fast_path: VecDeque::new(),
            poc: None,
        };
        run.sample_probabilities();
        let timeout = cfg.timeout();
        let cost = cfg.exec_cost();

        let initial = build_initial_seeds(&names, self.scenario, &mut run.rng, cfg.initial_seeds);
        let initial: Vec<Input> = initial.into_iter().take(budget(run.now, timeout, cost)).collect();
        let results = run.execute_batch(&initial)?;
        let mut hit = false;
        for (input, exec) in initial.into_iter().zip(results) {
            if run.record(input, exec, None) {
                hit = true;
                break;
            }
        }
        if !hit {
            let st = run.switch.finish_initial(run.now);
            let st = match fixed_phase(cfg.mode) {
                Some(p) => SwitchState { phase: p, ..st },
                None => st,
            };
            run.set_phase(st);
        }

        while !hit && run.now < timeout && !run.pool.is_empty() {
            let parent_idx = match run.switch.phase {
                Phase::Explore => run.fast_path.pop_front(),
                _ => None,
            };
            let parent_idx = match parent_idx {
                Some(i) => i,
                None => select_seed(&run.pool, run.switch.phase, cfg.exploit_sample_m, cfg.exploit_top_k, &mut run.rng)
                    .ok_or(EngineError::EmptyPool)?,
            };
            let parent = &run.pool.global_queue[parent_idx];
            let (parent_input, parent_distance) = (parent.input.clone(), parent.distance);
            let params = MutationParams {
                weights: &run.weights,
                utilization: utilization_probability(&schedule, run.now),
                bias_k: cfg.bias_k,
                max_calls: cfg.max_calls,
                generic_weights: cfg.mutation_weights,
            };
            let n = cfg.burst.min(budget(run.now, timeout, cost));
            let mut children = Vec::with_capacity(n);
            for _ in 0..n {
                children.push(mutate(&parent_input, &params, self.scenario, &mut run.rng).0);
            }
            let results = run.execute_batch(&children)?;
            for (child, exec) in children.into_iter().zip(results) {
                if run.record(child, exec, Some(parent_distance)) {
                    hit = true;
                    break;
                }
            }
        }

        run.sample_probabilities();
        let tte = if hit { run.now } else { timeout };
        Ok(CampaignResult {
            mode: cfg.mode,
            rng_seed: cfg.rng_seed,
            hit,
            tte_secs: tte.as_secs_f64(),
            executions: run.executions,
            poc: run.poc,
            inferred: self.inferred.to_vec(),
            probability_trace: run.trace,
            phase_timeline: run.timeline,
            final_frequencies: run.weights.frequencies().iter().map(|(s, &f)| (s.clone(), f)).collect(),
            global_queue: run.pool.len(),
            shorter_queue: run.pool.shorter_queue.len(),
            covered_blocks: run.pool.covered_blocks(),
            best_distance: run.pool.best_distance(),
        })
    }
}

/// Executions that fit between `now` and `timeout`.
fn budget(now: Duration, timeout: Duration, cost: Duration) -> usize {
    let left = timeout.saturating_sub(now).as_nanos();
    left.div_ceil(cost.as_nanos().max(1)) as usize
}
