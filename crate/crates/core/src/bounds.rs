//! Closed-form analysis: stability conditions, the M/G/1 comparison queue,
//! renewal functions and the synchronicity-fraction lower bound.

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;
use crate::stochastics::{
    expected_min_x, expected_min_x_sq, falling_factorial, sample_x, MeanAccumulator, MeanEstimate, XSpec,
};

/// Checks the structural parameters; λ = 0 is allowed here.
fn check_model(config: &ScenarioConfig) -> Result<f64> {
    if config.n < 1 || config.d < 1 || config.d > config.n {
        return Err(Error::Config(format!(
            "need 1 <= d <= N, got d = {}, N = {}",
            config.d, config.n
        )));
    }
    if !config.k.is_finite() || config.k < 1.0 {
        return Err(Error::Config(format!("K must be finite and >= 1, got {}", config.k)));
    }
    let lambda = config.lambda();
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "arrival rate must be finite and >= 0, got {lambda}"
        )));
    }
    Ok(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `λ·E[min{B_1..B_d}]`.
    pub rho: f64,
    /// `λ·E[min X] / K^(d−1)`.
    pub reduced_load: f64,
    pub sufficient_stable: bool,
    /// `K^(d−1) / E[min X]`.
    pub capacity_estimate: f64,
    /// `E[min{B_1..B_d}]`.
    pub e_min_b: f64,
}

/// The sufficient stability condition, evaluated both through `E[min B]` and
/// in its reduced scaled-Bernoulli form.
pub fn sufficient_condition(config: &ScenarioConfig) -> Result<StabilityReport> {
    let lambda = check_model(config)?;
    let (k, d) = (config.k, config.d);
    let e_min_x = expected_min_x(&config.x, d)?.value;
    // min B is nonzero only when every replica is: probability (1−p)^d.
    let p = 1.0 - 1.0 / k;
    let e_min_b = (1.0 - p).powi(d as i32) * e_min_x * k;
    let rho = lambda * e_min_b;
    let reduced_load = lambda * e_min_x / k.powi(d as i32 - 1);
    Ok(StabilityReport {
        rho,
        reduced_load,
        sufficient_stable: rho < 1.0,
        capacity_estimate: k.powi(d as i32 - 1) / e_min_x,
        e_min_b,
    })
}

/// Parameters of an M/G/1 queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mg1Params<F> {
    pub lambda_mg1: F,
    pub mean_b: F,
    pub mean_b2: F,
}

impl<F: Float> Mg1Params<F> {
    pub fn new(lambda_mg1: F, mean_b: F, mean_b2: F) -> Result<Self> {
        let zero = F::zero();
        if !(lambda_mg1 >= zero) || !(mean_b >= zero) || !(mean_b2 >= mean_b * mean_b) {
            return Err(Error::InvalidArgument(
                "M/G/1 parameters need lambda >= 0 and E[B^2] >= E[B]^2 >= 0".into(),
            ));
        }
        Ok(Mg1Params {
            lambda_mg1,
            mean_b,
            mean_b2,
        })
    }

    pub fn rho(&self) -> F {
        self.lambda_mg1 * self.mean_b
    }
}

/// Pollaczek–Khinchine mean workload `λE[B²] / (2(1 − λE[B]))`.
pub fn mg1_expected_workload<F: Float>(params: &Mg1Params<F>) -> Result<F> {
    let one = F::one();
    let rho = params.rho();
    if rho >= one {
        return Err(Error::Domain(format!(
            "M/G/1 load {} >= 1 has no stationary workload",
            rho.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let two = one + one;
    Ok(params.lambda_mg1 * params.mean_b2 / (two * (one - rho)))
}

/// The M/G/1 queue that bounds the maximum workload: only type-A jobs,
/// arriving at rate `λ/K^d`, contribute `min{X}·K`.
pub fn mg1_params(config: &ScenarioConfig) -> Result<Mg1Params<f64>> {
    let lambda = check_model(config)?;
    let (k, d) = (config.k, config.d);
    let m1 = expected_min_x(&config.x, d)?.value;
    let m2 = expected_min_x_sq(&config.x, d)?.value;
    Mg1Params::new(lambda / k.powi(d as i32), m1 * k, m2 * k * k)
}

/// Upper bound on the mean waiting time: the mean workload of the bounding
/// M/G/1 queue.
pub fn waiting_time_upper_bound(config: &ScenarioConfig) -> Result<f64> {
    mg1_expected_workload(&mg1_params(config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyBound {
    pub waiting: f64,
    /// Exact `E[min B] = E[min X]·K^(1−d)`.
    pub e_min_b: f64,
    /// `waiting + e_min_b`.
    pub latency: f64,
    /// `waiting + 1`, using only `E[min B] <= E[B] = 1`.
    pub loose_latency: f64,
}

pub fn latency_upper_bound(config: &ScenarioConfig) -> Result<LatencyBound> {
    let waiting = waiting_time_upper_bound(config)?;
    let e_min_b = expected_min_x(&config.x, config.d)?.value * config.k.powi(1 - config.d as i32);
    Ok(LatencyBound {
        waiting,
        e_min_b,
        latency: waiting + e_min_b,
        loose_latency: waiting + 1.0,
    })
}

/// Renewal function `m(t) = E[max{n : S_n <= t}]` for the named X kinds.
pub fn renewal_function<F: Float + FromPrimitive>(x: &XSpec, t: F) -> Result<F> {
    if !(t >= F::zero()) {
        return Err(Error::InvalidArgument("renewal function needs t >= 0".into()));
    }
    match x {
        XSpec::Deterministic1 => Ok(t.floor()),
        XSpec::Exponential1 => Ok(t),
        XSpec::Uniform02 => {
            let switch = F::from_f64(UNIFORM02_ASYMPTOTIC_FROM).expect("representable");
            if t >= switch {
                // m(t) − (t − 1/3) is below 4e-12 here, while the alternating
                // series loses digits to cancellation.
                Ok(t - F::one() / F::from_u8(3).expect("representable"))
            } else {
                Ok(uniform02_renewal_plus_one(t) - F::one())
            }
        }
        XSpec::Custom(c) => Err(Error::UnsupportedClosedForm(format!(
            "renewal function of custom X '{}'",
            c.name()
        ))),
    }
}

const UNIFORM02_ASYMPTOTIC_FROM: f64 = 24.0;

/// `m(t) + 1 = Σ_{i=0}^{⌊t/2⌋} (−1)^i (t/2 − i)^i / i! · e^(t/2 − i)`,
/// summed with Neumaier compensation.
fn uniform02_renewal_plus_one<F: Float + FromPrimitive>(t: F) -> F {
    let two = F::one() + F::one();
    let half = t / two;
    let top = half.floor().to_usize().unwrap_or(0);
    let mut sum = F::zero();
    let mut comp = F::zero();
    let mut factorial = F::one();
    for i in 0..=top {
        if i > 0 {
            factorial = factorial * F::from_usize(i).expect("index fits");
        }
        let shift = half - F::from_usize(i).expect("index fits");
        let mut term = shift.powi(i as i32) / factorial * shift.exp();
        if i % 2 == 1 {
            term = -term;
        }
        let next = sum + term;
        comp = comp
            + if sum.abs() >= term.abs() {
                (sum - next) + term
            } else {
                (term - next) + sum
            };
        sum = next;
    }
    sum + comp
}

/// Monte-Carlo renewal function: the mean renewal count over `paths`
/// independent renewal sequences.
pub fn renewal_function_mc<R: Rng>(x: &XSpec, t: f64, paths: usize, rng: &mut R) -> Result<MeanEstimate> {
    if !(t >= 0.0) || paths == 0 {
        return Err(Error::InvalidArgument("need t >= 0 and at least one path".into()));
    }
    let mut acc = MeanAccumulator::default();
    for _ in 0..paths {
        let mut s = 0.0;
        let mut count = 0u64;
        loop {
            s += sample_x(x, rng)?;
            if s > t {
                break;
            }
            count += 1;
        }
        acc.push(count as f64);
    }
    Ok(acc.estimate())
}

const RENEWAL_FALLBACK_PATHS: usize = 100_000;
const RENEWAL_FALLBACK_SEED: u64 = 0x7265_6e65;

/// Closed form when there is one, otherwise a fixed-seed Monte-Carlo
/// estimate. The flag reports which.
fn renewal_or_estimate(x: &XSpec, t: f64) -> Result<(f64, bool)> {
    match renewal_function(x, t) {
        Ok(v) => Ok((v, false)),
        Err(Error::UnsupportedClosedForm(_)) => {
            let mut rng = rng_from_seed(RENEWAL_FALLBACK_SEED);
            Ok((renewal_function_mc(x, t, RENEWAL_FALLBACK_PATHS, &mut rng)?.value, true))
        }
        Err(e) => Err(e),
    }
}

/// Bound on the expected number of B1 jumps that clear a surplus:
/// `(N − d)(m(surplus/K) + 1)`.
///
/// Exact when `surplus/K` is not an integer; for X ≡ 1 at integer ratios it
/// may overcount by one renewal.
pub fn expected_jumps_bound(config: &ScenarioConfig, surplus: f64) -> Result<f64> {
    check_model(config)?;
    if !(surplus >= 0.0) {
        return Err(Error::InvalidArgument(format!("surplus must be >= 0, got {surplus}")));
    }
    let spread = (config.n - config.d) as f64;
    if spread == 0.0 {
        return Ok(0.0);
    }
    Ok(spread * (renewal_function(&config.x, surplus / config.k)? + 1.0))
}

/// Output of the synchronicity-fraction bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Mean time the auxiliary surplus stays at zero, `K^d/λ`.
    pub e_tau1: f64,
    /// Upper bound on the mean time away from synchronicity.
    pub e_tau2_upper: Option<f64>,
    /// Whether the positivity condition behind the bound holds.
    pub assumption_ok: bool,
    /// `E[τ1] / (E[τ1] + E[τ2]_upper)`.
    pub sync_fraction_lower: Option<f64>,
    /// `E[Z]` bound for the starting surplus.
    pub e_jumps_upper: f64,
    /// `E[Y] = E[τ2]·λ/K^d` evaluated at the τ2 bound.
    pub e_upward_jumps: Option<f64>,
    /// Starting surplus used in the τ2 bound.
    pub surplus: f64,
    pub surplus_convention: String,
    /// Renewal values came from simulation rather than a closed form.
    pub renewal_estimated: bool,
}

/// Lower bound on the long-run fraction of time the auxiliary system is
/// synchronized, starting each excursion from the mean post-jump surplus
/// `(N − d)·E[min X]·K`.
pub fn sync_fraction_bound(config: &ScenarioConfig) -> Result<BoundReport> {
    let e_min_x = expected_min_x(&config.x, config.d)?.value;
    let surplus = (config.n - config.d.min(config.n)) as f64 * e_min_x * config.k;
    let mut report = sync_fraction_bound_at(config, surplus)?;
    report.surplus_convention = "mean post-jump surplus (N-d)*E[min X]*K".into();
    Ok(report)
}

/// As [`sync_fraction_bound`] with a caller-chosen starting surplus.
pub fn sync_fraction_bound_at(config: &ScenarioConfig, surplus: f64) -> Result<BoundReport> {
    let lambda = check_model(config)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "the synchronicity bound needs lambda > 0".into(),
        ));
    }
    if !(surplus >= 0.0) {
        return Err(Error::InvalidArgument(format!("surplus must be >= 0, got {surplus}")));
    }
    let (n, d, k) = (config.n, config.d, config.k);
    let e_tau1 = k.powi(d as i32) / lambda;
    let spread = (n - d) as f64;
    if n == d {
        return Ok(BoundReport {
            e_tau1,
            e_tau2_upper: Some(0.0),
            assumption_ok: true,
            sync_fraction_lower: Some(1.0),
            e_jumps_upper: 0.0,
            e_upward_jumps: Some(0.0),
            surplus,
            surplus_convention: "caller-supplied".into(),
            renewal_estimated: false,
        });
    }
    let e_min_x = expected_min_x(&config.x, d)?.value;
    let (m_min, est_a) = renewal_or_estimate(&config.x, e_min_x)?;
    let (m_surplus, est_b) = renewal_or_estimate(&config.x, surplus / k)?;
    let e_jumps_upper = spread * (m_surplus + 1.0);

    let survive = (1.0 - 1.0 / k).powi(d as i32 - 1);
    // (N−d−1)!/N! = 1 / (N (N−1) ⋯ (N−d))
    let lhs = survive / falling_factorial(n, d + 1);
    let rhs = (m_min + 1.0) / k.powi(d as i32 - 1);
    let b1_rate = lambda / k * survive / falling_factorial(n, d);
    let upward_drift = spread * (m_min + 1.0) * lambda / k.powi(d as i32);
    let denominator = b1_rate - upward_drift;
    let assumption_ok = lhs > rhs && denominator > 0.0;

    let (e_tau2_upper, fraction, e_upward) = if assumption_ok {
        let tau2 = e_jumps_upper / denominator;
        (
            Some(tau2),
            Some(e_tau1 / (e_tau1 + tau2)),
            Some(tau2 * lambda / k.powi(d as i32)),
        )
    } else {
        (None, None, None)
    };
    Ok(BoundReport {
        e_tau1,
        e_tau2_upper,
        assumption_ok,
        sync_fraction_lower: fraction,
        e_jumps_upper,
        e_upward_jumps: e_upward,
        surplus,
        surplus_convention: "caller-supplied".into(),
        renewal_estimated: est_a || est_b,
    })
}

const K_SEARCH_LIMIT: f64 = 1e9;

/// Smallest scale `K` at which the synchronicity bound applies and reaches
/// `1 − epsilon`, with `λ = lambda_rule(K)`.
///
/// Searches doubling integers, bisects to the smallest integer, then refines
/// over the reals to three significant digits. The returned value is on the
/// satisfying side. Monotonicity of the bound in `K` is checked on a grid
/// above the result.
pub fn find_k_epsilon<L>(base: &ScenarioConfig, epsilon: f64, lambda_rule: L) -> Result<f64>
where
    L: Fn(f64) -> f64,
{
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if base.n == base.d {
        return Ok(1.0);
    }
    let target = 1.0 - epsilon;
    let fraction_at = |k: f64| -> Result<Option<f64>> {
        let mut cfg = base.clone();
        cfg.k = k;
        cfg.set_lambda(lambda_rule(k));
        Ok(sync_fraction_bound(&cfg)?.sync_fraction_lower)
    };
    let ok = |k: f64| -> Result<bool> { Ok(fraction_at(k)?.is_some_and(|f| f >= target)) };

    let mut hi = 1.0;
    while !ok(hi)? {
        hi *= 2.0;
        if hi > K_SEARCH_LIMIT {
            return Err(Error::Search(format!(
                "no K <= {K_SEARCH_LIMIT:e} reaches a synchronicity fraction of {target}"
            )));
        }
    }
    let search_top = hi;
    if hi == 1.0 {
        return Ok(1.0);
    }
    let mut lo = hi / 2.0;
    while hi - lo > 1.0 {
        let mid = ((lo + hi) / 2.0).floor();
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo = hi - 1.0;
    let resolution = 10f64.powi(hi.log10().floor() as i32 - 2);
    while hi - lo > resolution {
        let mid = (lo + hi) / 2.0;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    // Verify the bound is nondecreasing and satisfied from `hi` upward.
    let top = (search_top * 2.0).max(hi * 4.0);
    let steps = 64;
    let mut prev = 0.0;
    for i in 0..=steps {
        let k = hi * (top / hi).powf(i as f64 / steps as f64);
        match fraction_at(k)? {
            Some(f) if f >= target && f + 1e-12 >= prev => prev = f,
            other => {
                return Err(Error::Search(format!(
                    "synchronicity bound is not monotone in K: {other:?} at K = {k} after {prev} below it"
                )))
            }
        }
    }
    Ok(hi)
}

/// Workload of the bounding M/G/1 queue driven pathwise: each arrival adds
/// `min_j b_j`, and work drains at unit rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mg1Workload<S> {
    value: S,
}

impl<S: Scalar> Mg1Workload<S> {
    pub fn new(initial: S) -> Self {
        Mg1Workload { value: initial }
    }

    pub fn value(&self) -> S {
        self.value
    }

    pub fn drain(&mut self, delta: S) {
        self.value = if self.value > delta {
            self.value - delta
        } else {
            S::zero()
        };
    }

    pub fn arrive(&mut self, min_requirement: S) {
        self.value = self.value + min_requirement;
    }
}
