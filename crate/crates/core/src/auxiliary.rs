//! The auxiliary system and coupled execution of original, auxiliary and
//! M/G/1 processes on one marked arrival stream.
//!
//! The auxiliary system differs from the original in three ways: it drains
//! only while synchronized, it places every type-A job on its top `d`
//! ordered servers, and among type-B jobs it only serves B1 jobs.

use std::fmt::Write as _;

use crate::bounds::Mg1Workload;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result, ViolationKind};
use crate::scalar::Scalar;
use crate::sim::{advance_measured, sample_stride, Draining, SimMetrics, WorkloadState, MAX_SAMPLE_TARGET};
use crate::stochastics::{generate_coupled_stream, ArrivalEvent, EventStream, JobTag, StreamKind};

/// Workloads of the auxiliary system. Always in the truncated space.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState<S> {
    state: WorkloadState<S>,
    d: usize,
}

impl<S: Scalar> AuxState<S> {
    /// Fails unless the top `d` workloads of `state` are equal.
    pub fn new(state: WorkloadState<S>, d: usize) -> Result<Self> {
        if d < 1 || d > state.n() {
            return Err(Error::InvalidArgument(format!(
                "d = {d} out of range for N = {}",
                state.n()
            )));
        }
        if !state.in_truncated_space(d) {
            return Err(Error::InvalidArgument(format!(
                "auxiliary start {:?} has fewer than d = {d} maximal workloads",
                state.workloads()
            )));
        }
        Ok(AuxState { state, d })
    }

    pub fn empty(n: usize, d: usize) -> Result<Self> {
        Self::new(WorkloadState::empty(n), d)
    }

    pub fn state(&self) -> &WorkloadState<S> {
        &self.state
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn surplus(&self) -> S {
        self.state.surplus()
    }

    pub fn is_synchronized(&self) -> bool {
        self.state.is_synchronized()
    }

    /// Drains only while synchronized; otherwise the state is frozen.
    pub fn drain(&mut self, delta: S) -> Result<()> {
        if self.state.is_synchronized() {
            self.state.drain(delta)
        } else {
            self.state.hold(delta)
        }
    }

    /// Type-A job on the top `d` ordered servers: each gains
    /// `min_j b_j`, where `b_j = x_j·K`.
    pub fn apply_type_a(&mut self, requirements: &[S]) -> Result<()> {
        if requirements.len() != self.d {
            return Err(Error::InvalidArgument(format!(
                "type-A job needs {} requirements, got {}",
                self.d,
                requirements.len()
            )));
        }
        if !self.state.in_truncated_space(self.d) {
            return Err(Error::Logic(format!(
                "auxiliary state {:?} left the truncated space",
                self.state.workloads()
            )));
        }
        let top: Vec<usize> = self.state.ordering()[..self.d].to_vec();
        let reqs: Vec<S> = requirements.to_vec();
        self.state.apply_arrival(&top, &reqs)?;
        Ok(())
    }

    /// Type-B1 job: the lowest ordered server rises to
    /// `min(ω_(1), ω_(N) + x_d·K)`.
    pub fn apply_type_b1(&mut self, scaled_x: S) -> Result<()> {
        if scaled_x.is_negative() {
            return Err(Error::InvalidArgument(format!("negative requirement {scaled_x:?}")));
        }
        let lowest = *self.state.ordering().last().expect("nonempty state");
        let top = self.state.max();
        let target = (self.state.workloads()[lowest] + scaled_x).min_of(top);
        self.state
            .set_workload(lowest, target.max_of(self.state.workloads()[lowest]));
        Ok(())
    }

    /// Applies whatever part of a coupled-stream event the auxiliary system
    /// sees. Returns whether the event was consumed.
    pub fn consume(&mut self, event: &ArrivalEvent) -> Result<bool> {
        match event.tag {
            JobTag::A => {
                let reqs: Vec<S> = event.requirements.iter().map(|&b| S::from_real(b)).collect();
                self.apply_type_a(&reqs)?;
                Ok(true)
            }
            JobTag::B1 => {
                let b = *event.requirements.last().expect("B1 carries d requirements");
                self.apply_type_b1(S::from_real(b))?;
                Ok(true)
            }
            JobTag::B | JobTag::C => Ok(false),
        }
    }
}

impl<S: Scalar> Draining<S> for AuxState<S> {
    /// Frozen unless synchronized, and a frozen state cannot synchronize.
    fn sync_time(&self, delta: S) -> S {
        if self.state.is_synchronized() {
            delta
        } else {
            S::zero()
        }
    }

    fn advance(&mut self, delta: S) -> Result<()> {
        self.drain(delta)
    }
}

fn require_coupled(stream: &EventStream) -> Result<()> {
    if stream.kind() != StreamKind::Coupled {
        return Err(Error::Config(
            "the auxiliary system needs a coupled (type-marked) stream".into(),
        ));
    }
    Ok(())
}

/// Runs the auxiliary system alone over a coupled stream.
pub fn run_auxiliary<S: Scalar>(
    config: &ScenarioConfig,
    stream: EventStream,
    initial: AuxState<S>,
) -> Result<SimMetrics> {
    require_coupled(&stream)?;
    let mut aux = initial;
    let warmup = S::from_real(config.warmup_time());
    let horizon = S::from_real(stream.horizon());
    let mut metrics = SimMetrics::with_stride(sample_stride(config, MAX_SAMPLE_TARGET));
    let mut prev = S::zero();
    for event in stream {
        let event = event?;
        let t = S::from_real(event.time);
        advance_measured(&mut aux, &mut metrics, prev, t, warmup)?;
        prev = t;
        if aux.consume(&event)? && t >= warmup {
            metrics.jobs.add(event.tag);
        }
    }
    if horizon > prev {
        advance_measured(&mut aux, &mut metrics, prev, horizon, warmup)?;
    }
    metrics.final_max = aux.state().max().real();
    Ok(metrics)
}

/// One row of a coupled run, taken right after an event is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub index: u64,
    pub time: f64,
    pub tag: JobTag,
    /// Original workloads, descending.
    pub original: Vec<f64>,
    /// Auxiliary workloads, descending.
    pub auxiliary: Vec<f64>,
    pub mg1: f64,
    pub surplus: f64,
    pub aux_surplus: f64,
    /// Original maximum at most the M/G/1 workload.
    pub max_ok: bool,
    /// Every auxiliary ordered gap at least the original one.
    pub gap_ok: bool,
}

impl TraceRecord {
    pub fn max_workload(&self) -> f64 {
        self.original[0]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoupledTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct CoupledOptions {
    /// Return an error at the first violation instead of counting.
    pub stop_on_violation: bool,
    pub record_trace: bool,
    pub max_events: Option<u64>,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        CoupledOptions {
            stop_on_violation: true,
            record_trace: false,
            max_events: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Violation {
    pub event_index: u64,
    pub kind: ViolationKind,
    pub dump: String,
}

/// Outcome of a coupled run.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub trace: CoupledTrace,
    pub events: u64,
    pub max_violations: u64,
    pub gap_violations: u64,
    /// Events where the auxiliary surplus fell below the original one.
    pub surplus_violations: u64,
    pub first_violation: Option<Violation>,
    pub original: SimMetrics,
    pub auxiliary: SimMetrics,
}

impl CoupledRun {
    pub fn passed(&self) -> bool {
        self.max_violations == 0 && self.gap_violations == 0 && self.surplus_violations == 0
    }
}

fn dump_state<S: Scalar>(orig: &WorkloadState<S>, aux: &AuxState<S>, mg1: S) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "original {:?}, auxiliary {:?}, M/G/1 {}",
        orig.ordered().iter().map(|w| w.real()).collect::<Vec<_>>(),
        aux.state().ordered().iter().map(|w| w.real()).collect::<Vec<_>>(),
        mg1.real()
    );
    s
}

/// Drives the original system, the auxiliary system and the bounding M/G/1
/// workload off one coupled stream and checks, after every event, that the
/// original maximum stays below the M/G/1 workload and that every ordered
/// gap of the original stays below the auxiliary one.
///
/// Both systems start from `config.initial_state`, which must lie in the
/// truncated space; the M/G/1 workload starts at the common maximum.
pub fn run_coupled<S: Scalar>(config: &ScenarioConfig, seed: u64, options: CoupledOptions) -> Result<CoupledRun> {
    run_coupled_observed::<S>(config, seed, options, None)
}

/// Observer invoked with every trace record of a coupled run.
pub type TraceObserver<'a> = &'a mut dyn FnMut(&TraceRecord) -> Result<()>;

/// As [`run_coupled`], additionally handing each per-event record to
/// `observe` as it is produced.
pub fn run_coupled_observed<S: Scalar>(
    config: &ScenarioConfig,
    seed: u64,
    options: CoupledOptions,
    mut observe: Option<TraceObserver<'_>>,
) -> Result<CoupledRun> {
    config.validate()?;
    let initial = WorkloadState::<S>::from_reals(&config.initial_workloads())?;
    let mut original = initial.clone();
    let mut aux = AuxState::new(initial, config.d)?;
    let mut mg1 = Mg1Workload::new(original.max());

    let mut stream = generate_coupled_stream(config, seed, config.horizon)?;
    if let Some(limit) = options.max_events {
        stream = stream.with_max_events(limit);
    }
    let warmup = S::from_real(config.warmup_time());
    let horizon = S::from_real(config.horizon);
    let stride = sample_stride(config, MAX_SAMPLE_TARGET);
    let mut run = CoupledRun {
        trace: CoupledTrace::default(),
        events: 0,
        max_violations: 0,
        gap_violations: 0,
        surplus_violations: 0,
        first_violation: None,
        original: SimMetrics::with_stride(stride),
        auxiliary: SimMetrics::with_stride(stride),
    };

    let mut prev = S::zero();
    for event in stream {
        let event = event?;
        let t = S::from_real(event.time);
        advance_measured(&mut original, &mut run.original, prev, t, warmup)?;
        advance_measured(&mut aux, &mut run.auxiliary, prev, t, warmup)?;
        mg1.drain(t - prev);
        prev = t;

        let max_before = original.max();
        let outcome = original.apply_event(&event)?;
        let consumed = aux.consume(&event)?;
        mg1.arrive(S::from_real(event.min_requirement()));
        if t >= warmup {
            run.original.record_arrival(max_before, &outcome);
            if consumed {
                run.auxiliary.jobs.add(event.tag);
            }
        }
        run.events += 1;

        let orig_ord = original.ordered();
        let aux_ord = aux.state().ordered();
        let max_ok = orig_ord[0] <= mg1.value();
        let gap_ok = orig_ord
            .iter()
            .zip(&aux_ord)
            .all(|(&o, &a)| aux_ord[0] - a >= orig_ord[0] - o);
        let (surplus, aux_surplus) = (original.surplus(), aux.surplus());
        if aux_surplus < surplus {
            run.surplus_violations += 1;
        }
        for (ok, kind) in [(max_ok, ViolationKind::MaxWorkload), (gap_ok, ViolationKind::Gap)] {
            if ok {
                continue;
            }
            match kind {
                ViolationKind::MaxWorkload => run.max_violations += 1,
                ViolationKind::Gap => run.gap_violations += 1,
            }
            let dump = dump_state(&original, &aux, mg1.value());
            if options.stop_on_violation {
                return Err(Error::Dominance {
                    event_index: event.index,
                    kind,
                    dump,
                });
            }
            if run.first_violation.is_none() {
                run.first_violation = Some(Violation {
                    event_index: event.index,
                    kind,
                    dump,
                });
            }
        }
        if options.record_trace || observe.is_some() {
            let record = TraceRecord {
                index: event.index,
                time: event.time,
                tag: event.tag,
                original: orig_ord.iter().map(|w| w.real()).collect(),
                auxiliary: aux_ord.iter().map(|w| w.real()).collect(),
                mg1: mg1.value().real(),
                surplus: surplus.real(),
                aux_surplus: aux_surplus.real(),
                max_ok,
                gap_ok,
            };
            if let Some(observe) = observe.as_mut() {
                observe(&record)?;
            }
            if options.record_trace {
                run.trace.records.push(record);
            }
        }
    }
    if horizon > prev {
        advance_measured(&mut original, &mut run.original, prev, horizon, warmup)?;
        advance_measured(&mut aux, &mut run.auxiliary, prev, horizon, warmup)?;
    }
    run.original.final_max = original.max().real();
    run.auxiliary.final_max = aux.state().max().real();
    Ok(run)
}
