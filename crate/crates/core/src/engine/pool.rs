use std::collections::{BTreeSet, HashSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::config::{CoverageMode, Counting};
use crate::distance::{seed_distance, Distance, DistanceMap};
use crate::graph::BlockId;
use crate::input::Input;
use crate::scheduler::{Phase, ProgressEvent, RandomSource, SyscallWeights};
use crate::sim::ExecResult;

/// An executed input with its coverage and lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    /// Admission order; used to break distance ties.
    pub id: usize,
    pub input: Input,
    pub coverage: BTreeSet<BlockId>,
    pub distance: Distance,
    /// Distance of the seed this one was mutated from; `None` for initial seeds.
    pub parent_distance: Option<Distance>,
}

impl Seed {
    pub fn new(input: Input, exec: &ExecResult, dm: &DistanceMap, parent_distance: Option<Distance>) -> Seed {
        Seed {
            id: 0,
            distance: seed_distance(dm, &exec.covered),
            coverage: exec.covered.clone(),
            input,
            parent_distance,
        }
    }

    pub fn is_shorter(&self) -> bool {
        self.parent_distance.is_some_and(|p| self.distance < p)
    }
}

#[derive(Clone, Debug)]
pub struct SeedPool {
    /// Inputs that reached new coverage.
    pub global_queue: Vec<Seed>,
    /// Inputs closer to the target than their parent.
    pub shorter_queue: Vec<Seed>,
    covered: HashSet<BlockId>,
    covered_edges: HashSet<(BlockId, BlockId)>,
    coverage_mode: CoverageMode,
    counting: Counting,
    next_id: usize,
}

impl SeedPool {
    pub fn new(coverage_mode: CoverageMode, counting: Counting) -> SeedPool {
        SeedPool {
            global_queue: Vec::new(),
            shorter_queue: Vec::new(),
            covered: HashSet::new(),
            covered_edges: HashSet::new(),
            coverage_mode,
            counting,
            next_id: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.global_queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.global_queue.len()
    }

    pub fn covered_blocks(&self) -> usize {
        self.covered.len()
    }

    /// Best distance over the global queue.
    pub fn best_distance(&self) -> Distance {
        self.global_queue.iter().map(|s| s.distance).min().unwrap_or(Distance::Infinite)
    }

    /// Record an execution. Novel coverage puts the seed in the global queue;
    /// a distance below the parent's puts it in the shorter queue and
    /// reinforces the inferred syscalls it contains.
    pub fn admit(&mut self, mut seed: Seed, exec: &ExecResult, dm: &DistanceMap, weights: &mut SyscallWeights) -> Admission {
        let new_blocks: Vec<BlockId> = exec.covered.iter().copied().filter(|b| !self.covered.contains(b)).collect();
        let new_edges: Vec<(BlockId, BlockId)> = match self.coverage_mode {
            CoverageMode::Block => Vec::new(),
            CoverageMode::Edge => exec.edges.iter().copied().filter(|e| !self.covered_edges.contains(e)).collect(),
        };
        let reachable = new_blocks.iter().any(|&b| dm.contains(b)) || new_edges.iter().any(|&(_, to)| dm.contains(to));
        let event = if new_blocks.is_empty() && new_edges.is_empty() {
            ProgressEvent::None
        } else if reachable {
            ProgressEvent::NewReachablePath
        } else {
            ProgressEvent::NewPath
        };
        let shorter = seed.is_shorter();
        if shorter {
            match self.counting {
                Counting::PerOccurrence => weights.record_shorter_distance(seed.input.names()),
                Counting::PerSeed => weights.record_shorter_distance_once(seed.input.names()),
            }
        }
        let mut queued = None;
        if event != ProgressEvent::None || shorter {
            seed.id = self.next_id;
            self.next_id += 1;
        }
        if shorter {
            self.shorter_queue.push(seed.clone());
        }
        if event != ProgressEvent::None {
            self.covered.extend(new_blocks);
            self.covered_edges.extend(exec.edges.iter().copied());
            queued = Some(self.global_queue.len());
            self.global_queue.push(seed);
        }
        Admission { event, queued, shorter }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Admission {
    pub event: ProgressEvent,
    /// Index in the global queue if the seed was queued.
    pub queued: Option<usize>,
    pub shorter: bool,
}

/// Exploit: sample `m` seeds, keep the `k` closest (ties by admission
/// order), pick one uniformly. Explore: pick proportionally to coverage.
/// Returns an index into the global queue.
pub fn select_seed(pool: &SeedPool, phase: Phase, m: usize, k: usize, rng: &mut RandomSource) -> Option<usize> {
    let q = &pool.global_queue;
    if q.is_empty() {
        return None;
    }
    match phase {
        Phase::Explore => {
            let total: usize = q.iter().map(|s| s.coverage.len()).sum();
            if total == 0 {
                return Some(rng.below(q.len()));
            }
            let mut x = rng.below(total);
            for (i, s) in q.iter().enumerate() {
                if x < s.coverage.len() {
                    return Some(i);
                }
                x -= s.coverage.len();
            }
            unreachable!("coverage weights sum to total")
        }
        Phase::Initial | Phase::Exploit => {
            let m = m.min(q.len()).max(1);
            let mut sample: Vec<usize> = index::sample(rng.rng(), q.len(), m).into_vec();
            sample.sort_by_key(|&i| (q[i].distance, q[i].id));
            sample.truncate(k.max(1));
            Some(sample[rng.below(sample.len())])
        }
    }
}
