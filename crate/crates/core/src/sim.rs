//! The original redundancy-d system: per-server workloads under
//! cancel-on-completion replication with FCFS servers.
//!
//! An arrival with replicas on servers `s_j` and requirements `b_j` completes
//! at `T = min_j(ω_{s_j} + b_j)`; every sampled server's workload becomes
//! `max(T, ω_{s_j})`. Between arrivals all workloads drain at unit rate.

use serde::Serialize;
use smallvec::SmallVec;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stochastics::{classify_job, generate_stream, ArrivalEvent, JobTag, Placement, Slots};

/// Server indices ordered by descending workload.
pub type Ordering = SmallVec<[usize; 16]>;

/// Workload vector ω with the time it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadState<S> {
    omega: Vec<S>,
    clock: S,
}

/// Result of one arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobOutcome<S> {
    /// Latency `T = min_j(ω_{s_j} + b_j)`.
    pub latency: S,
    /// Waiting time `W = T − min_j b_j`.
    pub waiting: S,
    /// Server holding the first replica to finish.
    pub completing_server: usize,
    pub tag: JobTag,
}

impl<S: Scalar> JobOutcome<S> {
    /// `T − W`, which equals `min_j b_j`.
    pub fn service(&self) -> S {
        self.latency - self.waiting
    }
}

impl<S: Scalar> WorkloadState<S> {
    pub fn empty(n: usize) -> Self {
        WorkloadState {
            omega: vec![S::zero(); n],
            clock: S::zero(),
        }
    }

    pub fn from_workloads(omega: Vec<S>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidArgument("workload vector is empty".into()));
        }
        if let Some(w) = omega.iter().find(|w| w.is_negative() || !w.real().is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "workloads must be finite and nonnegative, found {w:?}"
            )));
        }
        Ok(WorkloadState {
            omega,
            clock: S::zero(),
        })
    }

    pub fn from_reals(values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite workload in {values:?}")));
        }
        Self::from_workloads(values.iter().map(|&v| S::from_real(v)).collect())
    }

    pub fn workloads(&self) -> &[S] {
        &self.omega
    }

    pub fn workloads_f64(&self) -> Vec<f64> {
        self.omega.iter().map(|w| w.real()).collect()
    }

    pub fn clock(&self) -> S {
        self.clock
    }

    pub fn n(&self) -> usize {
        self.omega.len()
    }

    pub fn max(&self) -> S {
        self.omega.iter().fold(S::zero(), |m, &w| m.max_of(w))
    }

    /// `Σ_i (max_k ω_k − ω_i)`.
    pub fn surplus(&self) -> S {
        let max = self.max();
        self.omega.iter().fold(S::zero(), |acc, &w| acc + (max - w))
    }

    /// All workloads equal, compared exactly. The empty state counts.
    pub fn is_synchronized(&self) -> bool {
        let first = self.omega[0];
        self.omega.iter().all(|&w| w == first)
    }

    /// Top `d` order statistics equal.
    pub fn in_truncated_space(&self, d: usize) -> bool {
        let max = self.max();
        self.omega.iter().filter(|&&w| w == max).count() >= d.min(self.omega.len())
    }

    /// Servers from largest to smallest workload; ties by ascending index.
    pub fn ordering(&self) -> Ordering {
        let mut idx: Ordering = (0..self.omega.len()).collect();
        idx.sort_by(|&a, &b| {
            self.omega[b]
                .partial_cmp(&self.omega[a])
                .expect("workloads are never NaN")
        });
        idx
    }

    /// Workloads in descending order, `ω_(1) ≥ … ≥ ω_(N)`.
    pub fn ordered(&self) -> Vec<S> {
        self.ordering().iter().map(|&i| self.omega[i]).collect()
    }

    /// Unit-rate service for `delta` time units, clamped at zero.
    pub fn drain(&mut self, delta: S) -> Result<()> {
        if delta.is_negative() {
            return Err(Error::InvalidArgument(format!("negative drain interval {delta:?}")));
        }
        let zero = S::zero();
        for w in &mut self.omega {
            *w = if *w > delta { *w - delta } else { zero };
        }
        self.clock = self.clock + delta;
        Ok(())
    }

    /// Advances the clock without serving any work.
    pub(crate) fn hold(&mut self, delta: S) -> Result<()> {
        if delta.is_negative() {
            return Err(Error::InvalidArgument(format!("negative drain interval {delta:?}")));
        }
        self.clock = self.clock + delta;
        Ok(())
    }

    pub(crate) fn set_workload(&mut self, server: usize, value: S) {
        self.omega[server] = value;
    }

    /// Time spent synchronized during the next `delta` time units if no
    /// arrival happens.
    ///
    /// Gaps between positive workloads do not change while draining, so an
    /// unsynchronized state only synchronizes when its maximum reaches zero.
    pub fn sync_time_in_interval(&self, delta: S) -> S {
        if self.is_synchronized() {
            delta
        } else {
            let max = self.max();
            if delta > max {
                delta - max
            } else {
                S::zero()
            }
        }
    }

    /// Applies one arrival to distinct `servers` with requirements `reqs`.
    pub fn apply_arrival(&mut self, servers: &[usize], reqs: &[S]) -> Result<JobOutcome<S>> {
        let n = self.omega.len();
        if servers.is_empty() || servers.len() != reqs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} servers but {} requirements",
                servers.len(),
                reqs.len()
            )));
        }
        for (i, &s) in servers.iter().enumerate() {
            if s >= n {
                return Err(Error::InvalidArgument(format!("server {s} out of range for N = {n}")));
            }
            if servers[..i].contains(&s) {
                return Err(Error::InvalidArgument(format!("server {s} sampled twice")));
            }
        }
        if let Some(b) = reqs.iter().find(|b| b.is_negative()) {
            return Err(Error::InvalidArgument(format!("negative requirement {b:?}")));
        }

        let mut best = 0;
        let mut latency = self.omega[servers[0]] + reqs[0];
        let mut min_req = reqs[0];
        for j in 1..servers.len() {
            let finish = self.omega[servers[j]] + reqs[j];
            if finish < latency {
                latency = finish;
                best = j;
            }
            min_req = min_req.min_of(reqs[j]);
        }
        for &s in servers {
            self.omega[s] = self.omega[s].max_of(latency);
        }
        Ok(JobOutcome {
            latency,
            waiting: latency - min_req,
            completing_server: servers[best],
            tag: classify_job(reqs),
        })
    }

    /// Applies a stream event, resolving position marks through this state's
    /// own ordering.
    pub fn apply_event(&mut self, event: &ArrivalEvent) -> Result<JobOutcome<S>> {
        let reqs: Slots<S> = event.requirements.iter().map(|&b| S::from_real(b)).collect();
        let servers: Slots<usize> = match &event.placement {
            Placement::Servers(s) => s.clone(),
            placement @ Placement::Positions(_) => placement.resolve(&self.ordering()),
        };
        let mut outcome = self.apply_arrival(&servers, &reqs)?;
        outcome.tag = event.tag;
        Ok(outcome)
    }
}

/// Something that drains between arrivals and knows how long it stays
/// synchronized while doing so.
pub trait Draining<S> {
    fn sync_time(&self, delta: S) -> S;
    fn advance(&mut self, delta: S) -> Result<()>;
}

impl<S: Scalar> Draining<S> for WorkloadState<S> {
    fn sync_time(&self, delta: S) -> S {
        self.sync_time_in_interval(delta)
    }
    fn advance(&mut self, delta: S) -> Result<()> {
        self.drain(delta)
    }
}

/// Job counts by class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JobCounts {
    pub a: u64,
    pub b: u64,
    pub b1: u64,
    pub c: u64,
}

impl JobCounts {
    pub fn add(&mut self, tag: JobTag) {
        match tag {
            JobTag::A => self.a += 1,
            JobTag::B => self.b += 1,
            JobTag::B1 => self.b1 += 1,
            JobTag::C => self.c += 1,
        }
    }

    pub fn get(&self, tag: JobTag) -> u64 {
        match tag {
            JobTag::A => self.a,
            JobTag::B => self.b,
            JobTag::B1 => self.b1,
            JobTag::C => self.c,
        }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.b1 + self.c
    }

    fn merge(&mut self, other: &JobCounts) {
        self.a += other.a;
        self.b += other.b;
        self.b1 += other.b1;
        self.c += other.c;
    }
}

/// Time-average and per-job statistics collected after warmup.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SimMetrics {
    pub time_in_sync: f64,
    pub total_time: f64,
    pub jobs: JobCounts,
    pub sum_waiting: f64,
    pub sum_latency: f64,
    /// Σ (T − W) over jobs.
    pub sum_service: f64,
    pub sum_max_at_arrival: f64,
    /// Max workload just before every `sample_stride`-th post-warmup arrival.
    #[serde(skip)]
    pub max_samples: Vec<f64>,
    pub sample_stride: u64,
    /// Largest workload at the end of the run.
    pub final_max: f64,
}

impl SimMetrics {
    pub fn with_stride(sample_stride: u64) -> Self {
        SimMetrics {
            sample_stride: sample_stride.max(1),
            ..Default::default()
        }
    }

    pub fn total_jobs(&self) -> u64 {
        self.jobs.total()
    }

    fn ratio(num: f64, den: f64) -> f64 {
        if den > 0.0 {
            num / den
        } else {
            f64::NAN
        }
    }

    pub fn sync_fraction(&self) -> f64 {
        Self::ratio(self.time_in_sync, self.total_time)
    }

    pub fn mean_waiting(&self) -> f64 {
        Self::ratio(self.sum_waiting, self.total_jobs() as f64)
    }

    pub fn mean_latency(&self) -> f64 {
        Self::ratio(self.sum_latency, self.total_jobs() as f64)
    }

    pub fn mean_latency_minus_waiting(&self) -> f64 {
        Self::ratio(self.sum_service, self.total_jobs() as f64)
    }

    /// Mean of the maximum workload seen by arrivals.
    pub fn mean_max_workload(&self) -> f64 {
        Self::ratio(self.sum_max_at_arrival, self.total_jobs() as f64)
    }

    pub fn record_interval(&mut self, sync: f64, total: f64) {
        self.time_in_sync += sync;
        self.total_time += total;
    }

    pub fn record_arrival<S: Scalar>(&mut self, max_before: S, outcome: &JobOutcome<S>) {
        let max_before = max_before.real();
        if self.jobs.total().is_multiple_of(self.sample_stride.max(1)) {
            self.max_samples.push(max_before);
        }
        self.jobs.add(outcome.tag);
        self.sum_max_at_arrival += max_before;
        self.sum_waiting += outcome.waiting.real();
        self.sum_latency += outcome.latency.real();
        self.sum_service += outcome.service().real();
    }

    /// Pools two runs. Means of the result are job- or time-weighted means
    /// of the inputs, independent of merge order.
    pub fn merge(&mut self, other: &SimMetrics) {
        self.time_in_sync += other.time_in_sync;
        self.total_time += other.total_time;
        self.jobs.merge(&other.jobs);
        self.sum_waiting += other.sum_waiting;
        self.sum_latency += other.sum_latency;
        self.sum_service += other.sum_service;
        self.sum_max_at_arrival += other.sum_max_at_arrival;
        self.max_samples.extend_from_slice(&other.max_samples);
        self.final_max = self.final_max.max(other.final_max);
    }

    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary {
            sync_fraction: self.sync_fraction(),
            mean_waiting: self.mean_waiting(),
            mean_latency: self.mean_latency(),
            mean_latency_minus_waiting: self.mean_latency_minus_waiting(),
            mean_max_workload: self.mean_max_workload(),
            final_max_workload: self.final_max,
            time_in_sync: self.time_in_sync,
            total_time: self.total_time,
            jobs: self.jobs,
        }
    }
}

/// Derived view of [`SimMetrics`] for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub sync_fraction: f64,
    pub mean_waiting: f64,
    pub mean_latency: f64,
    pub mean_latency_minus_waiting: f64,
    pub mean_max_workload: f64,
    pub final_max_workload: f64,
    pub time_in_sync: f64,
    pub total_time: f64,
    pub jobs: JobCounts,
}

/// Moves `system` from `from` to `to`, crediting time after `warmup`.
pub(crate) fn advance_measured<S: Scalar, D: Draining<S>>(
    system: &mut D,
    metrics: &mut SimMetrics,
    from: S,
    to: S,
    warmup: S,
) -> Result<()> {
    if to <= warmup {
        return system.advance(to - from);
    }
    let start = if from < warmup {
        system.advance(warmup - from)?;
        warmup
    } else {
        from
    };
    let delta = to - start;
    metrics.record_interval(system.sync_time(delta).real(), delta.real());
    system.advance(delta)
}

/// Stride that keeps the stored max-workload trace near `target` samples.
pub(crate) fn sample_stride(config: &ScenarioConfig, target: f64) -> u64 {
    let expected = config.lambda() * (config.horizon - config.warmup_time());
    (expected / target).ceil().max(1.0) as u64
}

pub(crate) const MAX_SAMPLE_TARGET: f64 = 200_000.0;

/// Simulates the original system over `config.horizon` with the given seed.
pub fn run_simulation<S: Scalar>(config: &ScenarioConfig, seed: u64) -> Result<SimMetrics> {
    config.validate()?;
    let mut state = WorkloadState::<S>::from_reals(&config.initial_workloads())?;
    let warmup = S::from_real(config.warmup_time());
    let horizon = S::from_real(config.horizon);
    let mut metrics = SimMetrics::with_stride(sample_stride(config, MAX_SAMPLE_TARGET));
    let mut prev = S::zero();
    for event in generate_stream(config, seed, config.horizon)? {
        let event = event?;
        let t = S::from_real(event.time);
        advance_measured(&mut state, &mut metrics, prev, t, warmup)?;
        prev = t;
        let max_before = state.max();
        let outcome = state.apply_event(&event)?;
        if t >= warmup {
            metrics.record_arrival(max_before, &outcome);
        }
    }
    if horizon > prev {
        advance_measured(&mut state, &mut metrics, prev, horizon, warmup)?;
    }
    metrics.final_max = state.max().real();
    Ok(metrics)
}

/// Time until the original system first synchronizes from an arbitrary
/// starting vector, or `None` if it does not within the horizon.
pub fn first_synchronization_time<S: Scalar>(
    config: &ScenarioConfig,
    seed: u64,
    initial: &[f64],
) -> Result<Option<f64>> {
    let mut state = WorkloadState::<S>::from_reals(initial)?;
    if state.n() != config.n {
        return Err(Error::Config(format!(
            "initial state has {} entries, expected N = {}",
            state.n(),
            config.n
        )));
    }
    if state.is_synchronized() {
        return Ok(Some(0.0));
    }
    let mut prev = S::zero();
    for event in generate_stream(config, seed, config.horizon)? {
        let event = event?;
        let t = S::from_real(event.time);
        let delta = t - prev;
        if state.sync_time_in_interval(delta) > S::zero() {
            return Ok(Some((prev + state.max()).real()));
        }
        state.drain(delta)?;
        prev = t;
        state.apply_event(&event)?;
        if state.is_synchronized() {
            return Ok(Some(t.real()));
        }
    }
    let rest = S::from_real(config.horizon) - prev;
    if state.sync_time_in_interval(rest) > S::zero() {
        return Ok(Some((prev + state.max()).real()));
    }
    Ok(None)
}
