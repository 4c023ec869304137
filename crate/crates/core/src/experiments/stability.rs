use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::thread_pool;
use crate::bounds::{mg1_expected_workload, mg1_params, sufficient_condition};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::sim::run_simulation;

/// Fewest post-warmup max-workload samples a verdict is based on.
pub const MIN_VERDICT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub lambda_tested: f64,
    pub verdict: Verdict,
    pub first_half_mean_max: f64,
    pub second_half_mean_max: f64,
    pub final_max: f64,
}

/// Drift test on a trace of max-workload samples.
///
/// Stable: the second-half mean is at most 1.2 times the first-half mean and
/// the final sample is at most `10·K·max(1, reference_mean)`. Unstable: the
/// second-half mean is at least 1.5 times the first-half mean and the final
/// sample exceeds `10·K`. Anything else is inconclusive.
pub fn verdict(lambda: f64, samples: &[f64], k: f64, reference_mean: f64) -> Result<StabilityVerdict> {
    if samples.len() < MIN_VERDICT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_VERDICT_SAMPLES,
            got: samples.len(),
        });
    }
    let half = samples.len() / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&samples[..half]);
    let second = mean(&samples[half..]);
    let final_max = *samples.last().expect("nonempty");
    let verdict = if second <= 1.2 * first && final_max <= 10.0 * k * reference_mean.max(1.0) {
        Verdict::Stable
    } else if second >= 1.5 * first && final_max > 10.0 * k {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityVerdict {
        lambda_tested: lambda,
        verdict,
        first_half_mean_max: first,
        second_half_mean_max: second,
        final_max,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScanMode {
    /// Test every listed arrival rate.
    Grid(Vec<f64>),
    /// Bisect between a stable `lo` and an unstable `hi` until the bracket is
    /// narrower than `rel_tol·hi`, `max_steps` are used, or a midpoint is
    /// inconclusive.
    Bisection {
        lo: f64,
        hi: f64,
        rel_tol: f64,
        max_steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    /// Sorted by arrival rate.
    pub verdicts: Vec<StabilityVerdict>,
    /// Midpoint of the tightest stable/unstable pair.
    pub capacity_estimate: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    /// `K^(d−1)/E[min X]`.
    pub analytical_capacity: f64,
    pub all_inconclusive: bool,
}

impl ScanReport {
    /// One row per tested rate: `lambda_tested, verdict, first_half_mean_max,
    /// second_half_mean_max, final_max`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for v in &self.verdicts {
            w.serialize(v)?;
        }
        if self.verdicts.is_empty() {
            w.write_record([
                "lambda_tested",
                "verdict",
                "first_half_mean_max",
                "second_half_mean_max",
                "final_max",
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Reference level for the stable threshold: the M/G/1 mean workload when
/// the sufficient condition holds, else 1.
fn reference_mean(cfg: &ScenarioConfig) -> Result<f64> {
    if sufficient_condition(cfg)?.sufficient_stable {
        mg1_expected_workload(&mg1_params(cfg)?)
    } else {
        Ok(1.0)
    }
}

fn test_rate(config: &ScenarioConfig, lambda: f64) -> Result<StabilityVerdict> {
    let mut cfg = config.clone();
    cfg.set_lambda(lambda);
    cfg.validate()?;
    let metrics = run_simulation::<f64>(&cfg, config.seeds[0])?;
    verdict(lambda, &metrics.max_samples, cfg.k, reference_mean(&cfg)?)
}

/// Classifies arrival rates with the drift detector, simulating each with
/// the first seed of `config`, and estimates the capacity from the results.
pub fn stability_scan(config: &ScenarioConfig, mode: &ScanMode, workers: usize) -> Result<ScanReport> {
    config.validate()?;
    let analytical_capacity = sufficient_condition(config)?.capacity_estimate;
    let mut verdicts = match mode {
        ScanMode::Grid(rates) => {
            if rates.is_empty() {
                return Err(Error::Config("empty arrival-rate grid".into()));
            }
            let pool = thread_pool(workers)?;
            pool.install(|| {
                rates
                    .par_iter()
                    .map(|&l| test_rate(config, l))
                    .collect::<Result<Vec<_>>>()
            })?
        }
        ScanMode::Bisection {
            lo,
            hi,
            rel_tol,
            max_steps,
        } => bisect(config, *lo, *hi, *rel_tol, *max_steps, workers)?,
    };
    verdicts.sort_by(|a, b| a.lambda_tested.total_cmp(&b.lambda_tested));
    let all_inconclusive = verdicts.iter().all(|v| v.verdict == Verdict::Inconclusive);
    let bracket = tightest_pair(&verdicts);
    Ok(ScanReport {
        capacity_estimate: bracket.map(|(s, u)| 0.5 * (s + u)),
        bracket,
        verdicts,
        analytical_capacity,
        all_inconclusive,
    })
}

/// Largest stable rate below the smallest unstable rate.
fn tightest_pair(sorted: &[StabilityVerdict]) -> Option<(f64, f64)> {
    let unstable = sorted.iter().find(|v| v.verdict == Verdict::Unstable)?.lambda_tested;
    let stable = sorted
        .iter()
        .rev()
        .find(|v| v.verdict == Verdict::Stable && v.lambda_tested < unstable)?
        .lambda_tested;
    Some((stable, unstable))
}

fn bisect(
    config: &ScenarioConfig,
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
    max_steps: usize,
    workers: usize,
) -> Result<Vec<StabilityVerdict>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!(
            "bisection bracket [{lo}, {hi}] is not increasing and positive"
        )));
    }
    let pool = thread_pool(workers)?;
    let (a, b) = pool.install(|| rayon::join(|| test_rate(config, lo), || test_rate(config, hi)));
    let (a, b) = (a?, b?);
    if a.verdict != Verdict::Stable || b.verdict != Verdict::Unstable {
        return Err(Error::Search(format!(
            "bracket does not straddle the boundary: {lo} is {:?}, {hi} is {:?}",
            a.verdict, b.verdict
        )));
    }
    let mut out = vec![a, b];
    for _ in 0..max_steps {
        if hi - lo <= rel_tol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = pool.install(|| test_rate(config, mid))?;
        out.push(v);
        match v.verdict {
            Verdict::Stable => lo = mid,
            Verdict::Unstable => hi = mid,
            Verdict::Inconclusive => break,
        }
    }
    Ok(out)
}
