//! Scenario description shared by every simulator and by the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{ServiceSpec, XSpec};

fn default_horizon() -> f64 {
    1e5
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

/// Starting workload vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InitialRepr", into = "InitialRepr")]
pub enum InitialState {
    /// All servers idle.
    #[default]
    Empty,
    /// Explicit workloads; must have its top-d entries equal.
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum InitialRepr {
    Name(String),
    Vector(Vec<f64>),
}

impl TryFrom<InitialRepr> for InitialState {
    type Error = String;
    fn try_from(r: InitialRepr) -> Result<Self, String> {
        match r {
            InitialRepr::Name(s) if s == "empty" => Ok(InitialState::Empty),
            InitialRepr::Name(s) => Err(format!("unknown initial state '{s}'")),
            InitialRepr::Vector(v) => Ok(InitialState::Explicit(v)),
        }
    }
}

impl From<InitialState> for InitialRepr {
    fn from(s: InitialState) -> Self {
        match s {
            InitialState::Empty => InitialRepr::Name("empty".into()),
            InitialState::Explicit(v) => InitialRepr::Vector(v),
        }
    }
}

/// `(N, d, λ, K, X)` plus run control.
///
/// Exactly one of `lambda` and `lambda_over_k` is set; the latter expresses
/// an arrival rate that scales with `K`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub d: usize,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_over_k: Option<f64>,
    #[serde(default)]
    pub x: XSpec,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Defaults to 10% of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub initial_state: InitialState,
}

impl ScenarioConfig {
    /// A config with an absolute arrival rate and default run control.
    pub fn new(n: usize, d: usize, k: f64, lambda: f64) -> Self {
        ScenarioConfig {
            n,
            d,
            k,
            lambda: Some(lambda),
            lambda_over_k: None,
            x: XSpec::Deterministic1,
            horizon: default_horizon(),
            warmup: None,
            seeds: default_seeds(),
            initial_state: InitialState::Empty,
        }
    }

    /// A config whose arrival rate is `ratio·K`.
    pub fn with_load_ratio(n: usize, d: usize, k: f64, ratio: f64) -> Self {
        ScenarioConfig {
            lambda: None,
            lambda_over_k: Some(ratio),
            ..ScenarioConfig::new(n, d, k, 0.0)
        }
    }

    pub fn x(mut self, x: XSpec) -> Self {
        self.x = x;
        self
    }

    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn warmup(mut self, warmup: f64) -> Self {
        self.warmup = Some(warmup);
        self
    }

    pub fn seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.seeds = seeds.into_iter().collect();
        self
    }

    pub fn initial(mut self, initial: InitialState) -> Self {
        self.initial_state = initial;
        self
    }

    /// Replaces the arrival rate with an absolute one.
    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = Some(lambda);
        self.lambda_over_k = None;
    }

    /// Arrival rate λ.
    pub fn lambda(&self) -> f64 {
        match (self.lambda, self.lambda_over_k) {
            (Some(l), _) => l,
            (None, Some(r)) => r * self.k,
            (None, None) => f64::NAN,
        }
    }

    pub fn warmup_time(&self) -> f64 {
        self.warmup.unwrap_or(0.1 * self.horizon)
    }

    pub fn service(&self) -> Result<ServiceSpec> {
        ServiceSpec::new(self.x.clone(), self.k)
    }

    /// Initial workloads as a vector of length `n`.
    pub fn initial_workloads(&self) -> Vec<f64> {
        match &self.initial_state {
            InitialState::Empty => vec![0.0; self.n],
            InitialState::Explicit(v) => v.clone(),
        }
    }

    /// Parses and validates a TOML scenario.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if self.d < 1 || self.d > self.n {
            return Err(Error::Config(format!(
                "d must lie in [1, N]; got d = {}, N = {}",
                self.d, self.n
            )));
        }
        if !self.k.is_finite() || self.k < 1.0 {
            return Err(Error::Config(format!("K must be finite and >= 1, got {}", self.k)));
        }
        match (self.lambda, self.lambda_over_k) {
            (Some(_), Some(_)) => return Err(Error::Config("set exactly one of lambda and lambda_over_k".into())),
            (None, None) => return Err(Error::Config("one of lambda and lambda_over_k is required".into())),
            _ => {}
        }
        let lambda = self.lambda();
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "arrival rate must be positive and finite, got {lambda}"
            )));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config(format!(
                "horizon must be finite and >= 0, got {}",
                self.horizon
            )));
        }
        let warmup = self.warmup_time();
        if !(warmup >= 0.0) || (self.horizon > 0.0 && warmup >= self.horizon) {
            return Err(Error::Config(format!(
                "warmup must lie in [0, horizon); got {warmup} with horizon {}",
                self.horizon
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if let InitialState::Explicit(v) = &self.initial_state {
            if v.len() != self.n {
                return Err(Error::Config(format!(
                    "initial state has {} entries, expected N = {}",
                    v.len(),
                    self.n
                )));
            }
            if v.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::Config("initial workloads must be finite and nonnegative".into()));
            }
            let max = v.iter().copied().fold(0.0, f64::max);
            if v.iter().filter(|&&w| w == max).count() < self.d {
                return Err(Error::Config(format!(
                    "initial state {v:?} is outside the truncated space: fewer than d = {} maximal entries",
                    self.d
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_toml_with_ratio() {
        let cfg: ScenarioConfig = toml::from_str(
            r#"
            n = 4
            d = 2
            k = 100.0
            lambda_over_k = 0.5
            x = "uniform02"
            seeds = [1, 2]
            initial_state = [3.0, 3.0, 1.0, 0.0]
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lambda(), 50.0);
        assert_eq!(cfg.warmup_time(), 1e4);
        assert!(matches!(cfg.x, XSpec::Uniform02));
    }

    #[test]
    fn rejects_both_rates() {
        let mut cfg = ScenarioConfig::new(4, 2, 10.0, 5.0);
        cfg.lambda_over_k = Some(0.5);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_d_above_n() {
        assert!(ScenarioConfig::new(2, 3, 10.0, 1.0).validate().is_err());
    }

    #[test]
    fn rejects_initial_state_outside_truncated_space() {
        let cfg = ScenarioConfig::new(4, 2, 10.0, 1.0).initial(InitialState::Explicit(vec![4.0, 3.0, 3.0, 2.0]));
        assert!(cfg.validate().is_err());
        let ok = ScenarioConfig::new(4, 2, 10.0, 1.0).initial(InitialState::Explicit(vec![4.0, 3.0, 4.0, 2.0]));
        ok.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_initial_name() {
        let r: Result<ScenarioConfig, _> =
            toml::from_str("n = 2\nd = 2\nk = 2.0\nlambda = 1.0\ninitial_state = \"full\"");
        assert!(r.is_err());
    }
}
