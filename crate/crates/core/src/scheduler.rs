//! Scheduling policies: how often inferred syscalls are used, which one is
//! picked, where it is inserted, and when the campaign flips between
//! closer-seed exploitation and path exploration.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchedulerError {
    #[error("syscall `{0}` is not in the inferred set")]
    NotInferred(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Deterministic random stream. Identical seeds give identical streams.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.rng.gen::<f64>() < p
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Utilization probability
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct UtilizationSchedule {
    pub p_max: f64,
    pub p_min: f64,
    pub t_fuzz: Duration,
}

impl UtilizationSchedule {
    pub fn new(p_max: f64, p_min: f64, t_fuzz: Duration) -> Result<Self, SchedulerError> {
        if !(0.0..=1.0).contains(&p_min) || !(0.0..=1.0).contains(&p_max) || p_min > p_max {
            return Err(SchedulerError::InvalidSchedule(format!(
                "need 0 <= p_min <= p_max <= 1, got p_min={p_min} p_max={p_max}"
            )));
        }
        if t_fuzz.is_zero() {
            return Err(SchedulerError::InvalidSchedule("t_fuzz must be positive".into()));
        }
        Ok(UtilizationSchedule { p_max, p_min, t_fuzz })
    }
}

/// Linearly decaying probability of using an inferred syscall in a mutation.
/// Past `t_fuzz` the value stays at `p_min`.
pub fn utilization_probability(s: &UtilizationSchedule, t: Duration) -> f64 {
    let t = t.as_secs_f64();
    let t_fuzz = s.t_fuzz.as_secs_f64();
    let p = s.p_max - (s.p_max - s.p_min) / t_fuzz * t;
    p.clamp(s.p_min, s.p_max)
}

// ---------------------------------------------------------------------------
// Selection probability
// ---------------------------------------------------------------------------

/// Per-syscall frequency in the shorter-distance queue.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallWeights {
    freq: BTreeMap<String, u64>,
}

impl SyscallWeights {
    pub fn new<I, S>(inferred: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SyscallWeights {
            freq: inferred.into_iter().map(|s| (s.into(), 0)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn contains(&self, s: &str) -> bool {
        self.freq.contains_key(s)
    }

    pub fn frequency(&self, s: &str) -> Option<u64> {
        self.freq.get(s).copied()
    }

    pub fn frequencies(&self) -> &BTreeMap<String, u64> {
        &self.freq
    }

    pub fn total(&self) -> u64 {
        self.freq.values().sum()
    }

    /// Count one occurrence for every inferred syscall appearing in `calls`.
    pub fn record_shorter_distance<'a>(&mut self, calls: impl IntoIterator<Item = &'a str>) {
        for name in calls {
            if let Some(f) = self.freq.get_mut(name) {
                *f += 1;
            }
        }
    }

    /// Like [`record_shorter_distance`](Self::record_shorter_distance) but
    /// counting each syscall at most once per input.
    pub fn record_shorter_distance_once<'a>(&mut self, calls: impl IntoIterator<Item = &'a str>) {
        let mut seen = std::collections::BTreeSet::new();
        for name in calls {
            if seen.insert(name) {
                if let Some(f) = self.freq.get_mut(name) {
                    *f += 1;
                }
            }
        }
    }

    pub fn selection_probability(&self, s: &str) -> Result<f64, SchedulerError> {
        let f = self
            .freq
            .get(s)
            .ok_or_else(|| SchedulerError::NotInferred(s.to_string()))?;
        let total: u64 = self.freq.values().map(|f| f + 1).sum();
        Ok((f + 1) as f64 / total as f64)
    }

    pub fn probabilities(&self) -> Vec<(String, f64)> {
        let total: u64 = self.freq.values().map(|f| f + 1).sum();
        self.freq
            .iter()
            .map(|(s, f)| (s.clone(), (f + 1) as f64 / total as f64))
            .collect()
    }

    /// Draw an inferred syscall by its selection probability.
    pub fn sample(&self, rng: &mut RandomSource) -> Option<&str> {
        if self.freq.is_empty() {
            return None;
        }
        let total: u64 = self.freq.values().map(|f| f + 1).sum();
        let mut x = rng.rng().gen_range(0..total);
        for (s, f) in &self.freq {
            if x < f + 1 {
                return Some(s);
            }
            x -= f + 1;
        }
        unreachable!("weights sum to total")
    }
}

pub fn selection_probability(w: &SyscallWeights, s: &str) -> Result<f64, SchedulerError> {
    w.selection_probability(s)
}

// ---------------------------------------------------------------------------
// Insert order
// ---------------------------------------------------------------------------

/// Draw from `[0, n)` with weights rising linearly from 1 at index 0 to `k`
/// at index `n - 1`.
pub fn biased_rand(rng: &mut RandomSource, n: usize, k: u32) -> usize {
    assert!(n >= 1 && k >= 1, "biased_rand needs n >= 1 and k >= 1");
    if n == 1 {
        return 0;
    }
    let step = (k as f64 - 1.0) / (n as f64 - 1.0);
    let total = n as f64 * (k as f64 + 1.0) / 2.0;
    let mut x = rng.unit() * total;
    for i in 0..n {
        let w = 1.0 + i as f64 * step;
        if x < w {
            return i;
        }
        x -= w;
    }
    n - 1
}

/// Exact probabilities of [`biased_rand`].
pub fn biased_weights(n: usize, k: u32) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let step = (k as f64 - 1.0) / (n as f64 - 1.0);
    let total = n as f64 * (k as f64 + 1.0) / 2.0;
    (0..n).map(|i| (1.0 + i as f64 * step) / total).collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallRole {
    Producer,
    Consumer,
}

/// Insertion slot in `[0, n]` for a sequence of length `n`: consumers lean
/// toward the back, producers toward the front.
pub fn insert_index(rng: &mut RandomSource, n: usize, role: CallRole, k: u32) -> usize {
    let x = biased_rand(rng, n + 1, k);
    match role {
        CallRole::Consumer => x,
        CallRole::Producer => n - x,
    }
}

// ---------------------------------------------------------------------------
// Exploration / exploitation switch
// ---------------------------------------------------------------------------

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Exploit,
    Explore,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgressEvent {
    NewReachablePath,
    NewPath,
    None,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SwitchState {
    pub phase: Phase,
    pub last_progress: Duration,
    pub t_a: Duration,
    pub t_b: Duration,
}

impl SwitchState {
    pub fn new(t_a: Duration, t_b: Duration) -> Self {
        assert!(!t_a.is_zero() && !t_b.is_zero(), "switch thresholds must be positive");
        SwitchState {
            phase: Phase::Initial,
            last_progress: Duration::ZERO,
            t_a,
            t_b,
        }
    }

    /// Leave the initial phase once the initial seeds have run.
    pub fn finish_initial(self, now: Duration) -> Self {
        SwitchState {
            phase: Phase::Exploit,
            last_progress: now,
            ..self
        }
    }

    pub fn step(self, event: ProgressEvent, now: Duration) -> Self {
        let mut st = self;
        match st.phase {
            Phase::Initial => {}
            Phase::Exploit => {
                if event == ProgressEvent::NewReachablePath {
                    st.last_progress = now;
                }
                if now.saturating_sub(st.last_progress) >= st.t_a {
                    st.phase = Phase::Explore;
                    st.last_progress = now;
                }
            }
            Phase::Explore => {
                if event != ProgressEvent::None {
                    st.last_progress = now;
                }
                if now.saturating_sub(st.last_progress) >= st.t_b {
                    st.phase = Phase::Exploit;
                    st.last_progress = now;
                }
            }
        }
        st
    }
}

pub fn switch_step(st: SwitchState, event: ProgressEvent, now: Duration) -> SwitchState {
    st.step(event, now)
}
