//! Service requirements, job classification and the arrival streams that
//! drive every simulated system.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};
use crate::scalar::Scalar;

/// Per-replica storage; `d` rarely exceeds four.
pub type Slots<T> = SmallVec<[T; 4]>;

type Sampler = dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync;

/// A user-supplied distribution for X. Construct through [`XSpec::custom`],
/// which checks the unit-mean contract statistically.
#[derive(Clone)]
pub struct CustomX {
    name: String,
    sampler: Arc<Sampler>,
}

impl CustomX {
    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Debug for CustomX {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomX").field("name", &self.name).finish()
    }
}

/// Distribution of the positive, unit-mean factor X in `B = X·K`.
#[derive(Debug, Clone, Default)]
pub enum XSpec {
    /// X ≡ 1.
    #[default]
    Deterministic1,
    /// X ~ Exp(1).
    Exponential1,
    /// X ~ Uniform(0, 2].
    Uniform02,
    Custom(CustomX),
}

/// Draws used to validate a custom distribution's mean.
const CUSTOM_VALIDATION_DRAWS: usize = 100_000;
const CUSTOM_VALIDATION_SEED: u64 = 0x5eed_cafe;

impl XSpec {
    /// Wraps `sampler` as a custom X distribution.
    ///
    /// `declared_mean` must be 1, and a Monte-Carlo mean over 10^5 draws must
    /// sit within three standard errors of it. Every validation draw must be
    /// strictly positive.
    pub fn custom<F>(name: impl Into<String>, declared_mean: f64, sampler: F) -> Result<XSpec>
    where
        F: Fn(&mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        if (declared_mean - 1.0).abs() > 1e-12 {
            return Err(Error::DistributionContract(format!(
                "custom X '{name}' declares mean {declared_mean}, expected 1"
            )));
        }
        let spec = XSpec::Custom(CustomX {
            name: name.clone(),
            sampler: Arc::new(sampler),
        });
        let mut rng = rng_from_seed(CUSTOM_VALIDATION_SEED);
        let mut acc = MeanAccumulator::default();
        for _ in 0..CUSTOM_VALIDATION_DRAWS {
            acc.push(sample_x(&spec, &mut rng)?);
        }
        let est = acc.estimate();
        if (est.value - 1.0).abs() > 3.0 * est.std_error {
            return Err(Error::DistributionContract(format!(
                "custom X '{name}' has empirical mean {:.6} (se {:.2e}), expected 1",
                est.value, est.std_error
            )));
        }
        Ok(spec)
    }

    pub fn name(&self) -> &str {
        match self {
            XSpec::Deterministic1 => "deterministic1",
            XSpec::Exponential1 => "exponential1",
            XSpec::Uniform02 => "uniform02",
            XSpec::Custom(c) => c.name(),
        }
    }

    pub fn is_custom(&self) -> bool {
        matches!(self, XSpec::Custom(_))
    }
}

impl std::str::FromStr for XSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<XSpec> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic1" | "deterministic" | "det" | "one" => Ok(XSpec::Deterministic1),
            "exponential1" | "exponential" | "exp" => Ok(XSpec::Exponential1),
            "uniform02" | "uniform" | "unif" => Ok(XSpec::Uniform02),
            other => Err(Error::Config(format!(
                "unknown X distribution '{other}' (expected deterministic1, exponential1 or uniform02)"
            ))),
        }
    }
}

impl Serialize for XSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for XSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scaled Bernoulli requirement: `B = X·K` with probability `1/K`, else 0.
#[derive(Debug, Clone)]
pub struct ServiceSpec {
    x: XSpec,
    k: f64,
}

impl ServiceSpec {
    pub fn new(x: XSpec, k: f64) -> Result<Self> {
        if !k.is_finite() || k < 1.0 {
            return Err(Error::Config(format!("scale K must be finite and >= 1, got {k}")));
        }
        Ok(ServiceSpec { x, k })
    }

    pub fn x(&self) -> &XSpec {
        &self.x
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Probability of a zero requirement, `1 − 1/K`.
    pub fn p(&self) -> f64 {
        1.0 - 1.0 / self.k
    }

    /// Probability of a nonzero requirement, `1/K`.
    pub fn q(&self) -> f64 {
        1.0 / self.k
    }
}

/// One draw of X.
pub fn sample_x<R: Rng>(x: &XSpec, rng: &mut R) -> Result<f64> {
    match x {
        XSpec::Deterministic1 => Ok(1.0),
        XSpec::Exponential1 => loop {
            let v: f64 = Exp1.sample(rng);
            if v > 0.0 {
                return Ok(v);
            }
        },
        XSpec::Uniform02 => {
            let u: f64 = rng.random();
            Ok(2.0 * (1.0 - u))
        }
        XSpec::Custom(c) => {
            let v = (c.sampler)(rng);
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::DistributionContract(format!(
                    "custom X '{}' produced {v}, must be strictly positive and finite",
                    c.name
                )))
            }
        }
    }
}

pub fn sample_service<R: Rng>(spec: &ServiceSpec, rng: &mut R) -> Result<f64> {
    let u: f64 = rng.random();
    if u < spec.q() {
        Ok(sample_x(&spec.x, rng)? * spec.k)
    } else {
        Ok(0.0)
    }
}

/// Job classes by the zero pattern of their replica requirements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JobTag {
    /// No replica has zero requirement.
    A,
    /// Between 1 and d−1 zero replicas.
    B,
    /// The placement-level subclass of B used by the auxiliary system: zero
    /// replicas on the top d−1 ordered servers, one nonzero replica on the
    /// lowest ordered server.
    B1,
    /// Every replica is zero.
    C,
}

impl JobTag {
    pub const ALL: [JobTag; 4] = [JobTag::A, JobTag::B, JobTag::B1, JobTag::C];

    pub fn index(self) -> usize {
        match self {
            JobTag::A => 0,
            JobTag::B => 1,
            JobTag::B1 => 2,
            JobTag::C => 3,
        }
    }
}

impl fmt::Display for JobTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobTag::A => "A",
            JobTag::B => "B",
            JobTag::B1 => "B1",
            JobTag::C => "C",
        };
        f.write_str(s)
    }
}

/// A/B/C from the requirement vector alone. B1 depends on placement and is
/// never returned here.
pub fn classify_job<S: Scalar>(requirements: &[S]) -> JobTag {
    let zeros = requirements.iter().filter(|b| b.is_zero()).count();
    if zeros == 0 {
        JobTag::A
    } else if zeros == requirements.len() {
        JobTag::C
    } else {
        JobTag::B
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TypeProbabilities {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Fraction of all arrivals that are B1: `(N−d)!/N! · (1−p) p^(d−1)`.
    /// Zero when `d = 1`, where no job has mixed replicas.
    pub b1: f64,
}

impl TypeProbabilities {
    pub fn b1_rate(&self, lambda: f64) -> f64 {
        self.b1 * lambda
    }
}

/// `N!/(N−d)!`, the number of ordered d-tuples of distinct servers.
pub fn falling_factorial(n: usize, d: usize) -> f64 {
    (0..d).map(|i| (n - i) as f64).product()
}

pub fn job_type_probabilities(spec: &ServiceSpec, n: usize, d: usize) -> Result<TypeProbabilities> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    if n < d {
        return Err(Error::Config(format!("N = {n} is smaller than d = {d}")));
    }
    let q = spec.q();
    let p = spec.p();
    let a = q.powi(d as i32);
    let c = p.powi(d as i32);
    let b = 1.0 - a - c;
    let b1 = if d >= 2 {
        q * p.powi(d as i32 - 1) / falling_factorial(n, d)
    } else {
        0.0
    };
    Ok(TypeProbabilities { a, b, c, b1 })
}

/// A mean with its Monte-Carlo standard error (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn exact(value: f64) -> Self {
        MeanEstimate { value, std_error: 0.0 }
    }
}

/// Welford running mean/variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn estimate(&self) -> MeanEstimate {
        let se = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate {
            value: self.mean,
            std_error: se,
        }
    }
}

const MIN_X_MC_DRAWS: usize = 1_000_000;
const MIN_X_MC_SEED: u64 = 0x6d69_6e78;

/// Monte-Carlo estimates of `E[min X]` and `E[min X²]` over `d` i.i.d. copies.
pub fn min_x_moments_mc<R: Rng>(
    x: &XSpec,
    d: usize,
    draws: usize,
    rng: &mut R,
) -> Result<(MeanEstimate, MeanEstimate)> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let mut first = MeanAccumulator::default();
    let mut second = MeanAccumulator::default();
    for _ in 0..draws {
        let mut m = f64::INFINITY;
        for _ in 0..d {
            m = m.min(sample_x(x, rng)?);
        }
        first.push(m);
        second.push(m * m);
    }
    Ok((first.estimate(), second.estimate()))
}

/// `E[min{X_1..X_d}]`.
pub fn expected_min_x(x: &XSpec, d: usize) -> Result<MeanEstimate> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let d = d as f64;
    match x {
        XSpec::Deterministic1 => Ok(MeanEstimate::exact(1.0)),
        XSpec::Exponential1 => Ok(MeanEstimate::exact(1.0 / d)),
        XSpec::Uniform02 => Ok(MeanEstimate::exact(2.0 / (d + 1.0))),
        XSpec::Custom(_) => {
            let mut rng = rng_from_seed(MIN_X_MC_SEED);
            Ok(min_x_moments_mc(x, d as usize, MIN_X_MC_DRAWS, &mut rng)?.0)
        }
    }
}

/// `E[min{X_1..X_d}²]`.
pub fn expected_min_x_sq(x: &XSpec, d: usize) -> Result<MeanEstimate> {
    if d < 1 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let d = d as f64;
    match x {
        XSpec::Deterministic1 => Ok(MeanEstimate::exact(1.0)),
        XSpec::Exponential1 => Ok(MeanEstimate::exact(2.0 / (d * d))),
        XSpec::Uniform02 => Ok(MeanEstimate::exact(8.0 / ((d + 1.0) * (d + 2.0)))),
        XSpec::Custom(_) => {
            let mut rng = rng_from_seed(MIN_X_MC_SEED);
            Ok(min_x_moments_mc(x, d as usize, MIN_X_MC_DRAWS, &mut rng)?.1)
        }
    }
}

/// Where an event's replicas go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placement {
    /// Concrete server indices (0-based), distinct.
    Servers(Slots<usize>),
    /// Ranks in the consuming system's own descending workload ordering
    /// (0 = largest workload), distinct. Each system resolves them against
    /// its current state.
    Positions(Slots<usize>),
}

impl Placement {
    pub fn indices(&self) -> &[usize] {
        match self {
            Placement::Servers(s) | Placement::Positions(s) => s,
        }
    }

    /// Concrete servers given the consuming system's ordering (servers listed
    /// from largest to smallest workload).
    pub fn resolve(&self, ordering: &[usize]) -> Slots<usize> {
        match self {
            Placement::Servers(s) => s.clone(),
            Placement::Positions(p) => p.iter().map(|&r| ordering[r]).collect(),
        }
    }
}

/// One Poisson arrival with its marks.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalEvent {
    /// Position in the stream, starting at 0.
    pub index: u64,
    pub time: f64,
    pub tag: JobTag,
    pub placement: Placement,
    /// `b_j`, either `x_j·K` or 0, aligned with the placement slots.
    pub requirements: Slots<f64>,
}

impl ArrivalEvent {
    pub fn min_requirement(&self) -> f64 {
        self.requirements.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Uniform server samples, A/B/C tags.
    Uniform,
    /// Thinned by type, position marks, B1 tags.
    Coupled,
}

/// Lazily generated arrival stream. Identical `(config, seed, horizon)` give
/// identical events.
#[derive(Debug, Clone)]
pub struct EventStream {
    kind: StreamKind,
    seed: u64,
    horizon: f64,
    max_events: Option<u64>,
    n: usize,
    d: usize,
    service: ServiceSpec,
    probs: TypeProbabilities,
    /// Cumulative weights of the nonzero-replica count k = 1..d−1 for
    /// type-B jobs.
    mixed_count_cdf: Vec<f64>,
    interarrival: Exp<f64>,
    rng: SimRng,
    clock: f64,
    emitted: u64,
    done: bool,
}

impl EventStream {
    fn new(kind: StreamKind, config: &ScenarioConfig, seed: u64, horizon: f64) -> Result<Self> {
        config.validate()?;
        let lambda = config.lambda();
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let service = config.service()?;
        let probs = job_type_probabilities(&service, config.n, config.d)?;
        let interarrival = Exp::new(lambda).map_err(|e| Error::Config(format!("arrival rate {lambda}: {e}")))?;
        let (q, p) = (service.q(), service.p());
        let d = config.d;
        let mut mixed_count_cdf = Vec::with_capacity(d.saturating_sub(1));
        let mut acc = 0.0;
        for k in 1..d {
            acc += binomial(d, k) * q.powi(k as i32) * p.powi((d - k) as i32);
            mixed_count_cdf.push(acc);
        }
        Ok(EventStream {
            kind,
            seed,
            horizon,
            max_events: None,
            n: config.n,
            d,
            service,
            probs,
            mixed_count_cdf,
            interarrival,
            rng: rng_from_seed(seed),
            clock: 0.0,
            emitted: 0,
            done: false,
        })
    }

    /// Stops the stream after `limit` events even if the horizon is not
    /// reached.
    pub fn with_max_events(mut self, limit: u64) -> Self {
        self.max_events = Some(limit);
        self
    }

    pub fn kind(&self) -> StreamKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn service(&self) -> &ServiceSpec {
        &self.service
    }

    pub fn probabilities(&self) -> TypeProbabilities {
        self.probs
    }

    fn next_time(&mut self) -> f64 {
        loop {
            let gap = self.interarrival.sample(&mut self.rng);
            if gap > 0.0 {
                let t = self.clock + gap;
                if t > self.clock {
                    return t;
                }
            }
        }
    }

    /// Uniform ordered tuple of `d` distinct values below `n`.
    fn uniform_tuple(&mut self, n: usize, d: usize) -> Slots<usize> {
        if 2 * d <= n {
            let mut out = Slots::with_capacity(d);
            while out.len() < d {
                let v = self.rng.random_range(0..n);
                if !out.contains(&v) {
                    out.push(v);
                }
            }
            out
        } else {
            index::sample(&mut self.rng, n, d).into_iter().collect()
        }
    }

    fn uniform_event(&mut self) -> Result<(JobTag, Placement, Slots<f64>)> {
        let servers = self.uniform_tuple(self.n, self.d);
        let mut reqs = Slots::with_capacity(self.d);
        for _ in 0..self.d {
            reqs.push(sample_service(&self.service, &mut self.rng)?);
        }
        Ok((classify_job(&reqs), Placement::Servers(servers), reqs))
    }

    fn scaled_x(&mut self) -> Result<f64> {
        Ok(sample_x(self.service.x(), &mut self.rng)? * self.service.k())
    }

    fn coupled_event(&mut self) -> Result<(JobTag, Placement, Slots<f64>)> {
        let (n, d) = (self.n, self.d);
        let u: f64 = self.rng.random();
        let TypeProbabilities { a, b1, c, .. } = self.probs;
        if u < a {
            let positions = self.uniform_tuple(n, d);
            let mut reqs = Slots::with_capacity(d);
            for _ in 0..d {
                reqs.push(self.scaled_x()?);
            }
            Ok((JobTag::A, Placement::Positions(positions), reqs))
        } else if u < a + b1 {
            let mut positions: Slots<usize> = (0..d - 1).collect();
            positions.push(n - 1);
            let mut reqs: Slots<f64> = std::iter::repeat_n(0.0, d - 1).collect();
            reqs.push(self.scaled_x()?);
            Ok((JobTag::B1, Placement::Positions(positions), reqs))
        } else if u < a + b1 + c {
            let positions = self.uniform_tuple(n, d);
            Ok((
                JobTag::C,
                Placement::Positions(positions),
                std::iter::repeat_n(0.0, d).collect(),
            ))
        } else {
            // Remaining type-B mass: a uniform (zero pattern, position tuple)
            // pair conditioned on being mixed and not the B1 pair.
            let total = *self.mixed_count_cdf.last().expect("B mass requires d >= 2");
            loop {
                let w: f64 = self.rng.random::<f64>() * total;
                let nonzero = 1 + self
                    .mixed_count_cdf
                    .iter()
                    .position(|&cdf| w < cdf)
                    .unwrap_or(self.mixed_count_cdf.len() - 1);
                let mut is_nonzero: Slots<bool> = std::iter::repeat_n(false, d).collect();
                for j in index::sample(&mut self.rng, d, nonzero) {
                    is_nonzero[j] = true;
                }
                let positions = self.uniform_tuple(n, d);
                let is_b1 = nonzero == 1
                    && is_nonzero[d - 1]
                    && positions[d - 1] == n - 1
                    && positions[..d - 1].iter().enumerate().all(|(i, &r)| r == i);
                if is_b1 {
                    continue;
                }
                let mut reqs = Slots::with_capacity(d);
                for &nz in &is_nonzero {
                    reqs.push(if nz { self.scaled_x()? } else { 0.0 });
                }
                return Ok((JobTag::B, Placement::Positions(positions), reqs));
            }
        }
    }
}

impl Iterator for EventStream {
    type Item = Result<ArrivalEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.max_events.is_some_and(|m| self.emitted >= m) {
            return None;
        }
        let t = self.next_time();
        if t > self.horizon {
            self.done = true;
            return None;
        }
        self.clock = t;
        let marks = match self.kind {
            StreamKind::Uniform => self.uniform_event(),
            StreamKind::Coupled => self.coupled_event(),
        };
        let (tag, placement, requirements) = match marks {
            Ok(m) => m,
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        let event = ArrivalEvent {
            index: self.emitted,
            time: t,
            tag,
            placement,
            requirements,
        };
        self.emitted += 1;
        Some(Ok(event))
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Poisson(λ) arrivals with `d` uniform distinct servers and i.i.d. scaled
/// Bernoulli requirements.
pub fn generate_stream(config: &ScenarioConfig, seed: u64, horizon: f64) -> Result<EventStream> {
    EventStream::new(StreamKind::Uniform, config, seed, horizon)
}

/// Arrivals thinned by job type and marked with ordered positions, for
/// driving the original and auxiliary systems off the same randomness.
///
/// Every event carries a uniformly random tuple of distinct ranks, so a
/// system resolving ranks through its own ordering sees uniformly random
/// servers; B1 events carry the fixed tuple `(1, …, d−1, N)`.
pub fn generate_coupled_stream(config: &ScenarioConfig, seed: u64, horizon: f64) -> Result<EventStream> {
    EventStream::new(StreamKind::Coupled, config, seed, horizon)
}
