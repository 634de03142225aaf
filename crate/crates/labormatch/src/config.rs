//! Run configuration: economy primitives, numerical settings, and experiment
//! presets, loaded from a TOML file with one section per concern.
//!
//! Key layout (defaults in parentheses; see `configs/` for annotated files):
//!
//! ```toml
//! [economy]
//! workers = 500              # n_h, number of workers
//! firms = 500                # n_f, must equal workers
//! edu_levels = [1.0, 2.0]    # low and high education values, 0 < low < high
//! capital_support = [0.5, 1.0]   # strictly increasing, positive
//! capital_mass = [0.5, 0.5]      # same length, sums to 1
//! covariate_dim = 2
//! theta1 = 1.0               # production scale, > 0
//! theta2 = [1.0, 1.0]        # outside-option coefficients, length covariate_dim
//! beta = 0.0                 # information friction, >= 0 (0 = pure noise)
//! sigma = 1.0                # index noise s.d. (1.0)
//! tau = 0.5                  # worker bargaining weight in (0,1) (0.5)
//! production = "multiplicative"   # or "additive"
//! outside = "exp_interaction"     # or "scaled_exp"
//!
//! [matching]
//! beta_draws = 100           # Monte Carlo draws per order-statistic coefficient
//! support_points = 0         # 0 = automatic count-grid coarsening
//! deterministic_capital_counts = false
//!
//! [solver]
//! tol = 1e-8
//! max_iter = 500
//! damping = 1.0              # in (0, 1]
//!
//! [inference]
//! mc_sims = 99               # simulated datasets R per Monte Carlo test
//! bootstrap_reps = 200
//! alpha = 0.05
//! beta_grid = []             # test-inversion grid; empty = 0, 0.25, ..., 5
//! contrast = [1.0, 1.0]      # a in the reported functional a' theta
//! theta_starts = [[0.8, 1.2], [1.3, 0.7], [0.5, 0.5]]
//! ```
//!
//! Optional `[figures]` and `[tables]` sections configure the batch drivers;
//! their keys are documented on [`FiguresConfig`] and [`TablesConfig`].

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Match output technology f(h, k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductionForm {
    /// f = theta1 * h * k
    Multiplicative,
    /// f = theta1 * (h + k)
    Additive,
}

/// Worker outside option g(h, x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsideForm {
    /// g = exp(h * x' theta2)
    ExpInteraction,
    /// g = h * exp(x' theta2)
    ScaledExp,
}

/// Primitives of the economy under study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomyConfig {
    pub workers: usize,
    pub firms: usize,
    /// (low, high) education values.
    pub edu_levels: [f64; 2],
    /// Capital support k_1 < ... < k_M.
    pub capital_support: Vec<f64>,
    /// Prior mass q_m on each capital type.
    pub capital_mass: Vec<f64>,
    pub covariate_dim: usize,
    pub theta1: f64,
    pub theta2: Vec<f64>,
    pub beta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub production: ProductionForm,
    pub outside: OutsideForm,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_tau() -> f64 {
    0.5
}

/// Numerical settings for matching-probability construction and simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    /// Monte Carlo draws behind each order-statistic coefficient.
    pub beta_draws: usize,
    /// Nodes on each count grid; 0 selects max(ceil(n/50), 8), with the full
    /// grid used whenever n <= 64.
    pub support_points: usize,
    /// Fix realized capital counts at n_f * q_m (largest-remainder rounding)
    /// instead of drawing types iid.
    pub deterministic_capital_counts: bool,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            beta_draws: 100,
            support_points: 0,
            deterministic_capital_counts: false,
        }
    }
}

/// Fixed-point solver settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Step weight on the new iterate, in (0, 1]; 1 is undamped.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 500,
            damping: 1.0,
        }
    }
}

/// Estimation and testing settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Simulated datasets per Monte Carlo test (R).
    pub mc_sims: usize,
    pub bootstrap_reps: usize,
    pub alpha: f64,
    /// Friction values scanned by test inversion; empty selects 0, 0.25, .., 5.
    pub beta_grid: Vec<f64>,
    /// Contrast vector a for the reported scalar a' (theta1, theta2).
    pub contrast: [f64; 2],
    /// Simplex starting points for (theta1, theta2).
    pub theta_starts: Vec<[f64; 2]>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            mc_sims: 99,
            bootstrap_reps: 200,
            alpha: 0.05,
            beta_grid: Vec::new(),
            contrast: [1.0, 1.0],
            theta_starts: vec![[0.8, 1.2], [1.3, 0.7], [0.5, 0.5]],
        }
    }
}

impl InferenceConfig {
    /// Grid actually scanned: the configured one, or the default 0..=5 by 0.25.
    pub fn effective_beta_grid(&self) -> Vec<f64> {
        if !self.beta_grid.is_empty() {
            return self.beta_grid.clone();
        }
        (0..=20).map(|i| i as f64 * 0.25).collect()
    }
}

/// Comparative-statics sweep over the friction parameter at two production
/// scales, as drawn in the figure outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresConfig {
    /// Production scales swept, ordered (low, high).
    pub theta1_cases: [f64; 2],
    /// Friction grid; empty selects 0, 0.5, ..., 5.
    #[serde(default)]
    pub beta_grid: Vec<f64>,
    /// Economies simulated per grid point.
    #[serde(default = "default_figure_sims")]
    pub sims: usize,
}

fn default_figure_sims() -> usize {
    500
}

impl FiguresConfig {
    pub fn effective_beta_grid(&self) -> Vec<f64> {
        if !self.beta_grid.is_empty() {
            return self.beta_grid.clone();
        }
        (0..=10).map(|i| i as f64 * 0.5).collect()
    }
}

/// Coverage study over model specifications, friction values, and sample
/// sizes, as tabulated in the table outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesConfig {
    /// True friction values the data are generated under.
    pub beta0_grid: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    /// Replications per cell.
    pub sims: usize,
    /// Bootstrap replications inside each replication.
    pub bootstrap_reps: usize,
    /// Specification pairs (outside, production) to run; empty = all four.
    #[serde(default)]
    pub specs: Vec<(OutsideForm, ProductionForm)>,
}

impl TablesConfig {
    pub fn effective_specs(&self) -> Vec<(OutsideForm, ProductionForm)> {
        if !self.specs.is_empty() {
            return self.specs.clone();
        }
        vec![
            (OutsideForm::ExpInteraction, ProductionForm::Multiplicative),
            (OutsideForm::ExpInteraction, ProductionForm::Additive),
            (OutsideForm::ScaledExp, ProductionForm::Multiplicative),
            (OutsideForm::ScaledExp, ProductionForm::Additive),
        ]
    }
}

/// Whole configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub economy: EconomyConfig,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub figures: Option<FiguresConfig>,
    #[serde(default)]
    pub tables: Option<TablesConfig>,
}

impl EconomyConfig {
    /// Number of capital types M.
    pub fn n_types(&self) -> usize {
        self.capital_support.len()
    }

    pub fn edu_low(&self) -> f64 {
        self.edu_levels[0]
    }

    pub fn edu_high(&self) -> f64 {
        self.edu_levels[1]
    }

    /// Education value for class index j (0 = low, 1 = high).
    pub fn edu_value(&self, j: usize) -> f64 {
        self.edu_levels[j]
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.workers < 2 {
            return err(format!("workers must be at least 2, got {}", self.workers));
        }
        if self.firms != self.workers {
            return err(format!(
                "firms ({}) must equal workers ({}); the market is balanced",
                self.firms, self.workers
            ));
        }
        let [lo, hi] = self.edu_levels;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
            return err(format!(
                "edu_levels must satisfy 0 < low < high, got [{lo}, {hi}]"
            ));
        }
        if self.capital_support.is_empty() {
            return err("capital_support must be nonempty".into());
        }
        if self
            .capital_support
            .iter()
            .any(|&k| !(k.is_finite() && k > 0.0))
        {
            return err("capital_support values must be positive and finite".into());
        }
        if self.capital_support.windows(2).any(|w| w[0] >= w[1]) {
            return err("capital_support must be strictly increasing".into());
        }
        if self.capital_mass.len() != self.capital_support.len() {
            return err(format!(
                "capital_mass has {} entries for {} support points",
                self.capital_mass.len(),
                self.capital_support.len()
            ));
        }
        if self
            .capital_mass
            .iter()
            .any(|&q| !(q.is_finite() && q > 0.0))
        {
            return err("capital_mass entries must be positive".into());
        }
        let mass: f64 = self.capital_mass.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return err(format!("capital_mass sums to {mass}, expected 1"));
        }
        if self.covariate_dim == 0 {
            return err("covariate_dim must be at least 1".into());
        }
        if self.theta2.len() != self.covariate_dim {
            return err(format!(
                "theta2 has {} entries for covariate_dim {}",
                self.theta2.len(),
                self.covariate_dim
            ));
        }
        if !(self.theta1.is_finite() && self.theta1 > 0.0) {
            return err(format!("theta1 must be positive, got {}", self.theta1));
        }
        if self.theta2.iter().any(|t| !t.is_finite()) {
            return err("theta2 entries must be finite".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return err(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return err(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.tau.is_finite() && 0.0 < self.tau && self.tau < 1.0) {
            return err(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        Ok(())
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.economy.validate()?;
        let err = |msg: String| Err(Error::Config(msg));
        if self.matching.beta_draws == 0 {
            return err("matching.beta_draws must be at least 1".into());
        }
        if !(self.solver.tol.is_finite() && self.solver.tol > 0.0) {
            return err(format!(
                "solver.tol must be positive, got {}",
                self.solver.tol
            ));
        }
        if self.solver.max_iter == 0 {
            return err("solver.max_iter must be at least 1".into());
        }
        if !(self.solver.damping > 0.0 && self.solver.damping <= 1.0) {
            return err(format!(
                "solver.damping must lie in (0, 1], got {}",
                self.solver.damping
            ));
        }
        if self.inference.mc_sims == 0 {
            return err("inference.mc_sims must be at least 1".into());
        }
        if !(self.inference.alpha > 0.0 && self.inference.alpha < 1.0) {
            return err(format!(
                "inference.alpha must lie in (0, 1), got {}",
                self.inference.alpha
            ));
        }
        if self.inference.theta_starts.is_empty() {
            return err("inference.theta_starts must be nonempty".into());
        }
        if self
            .inference
            .beta_grid
            .iter()
            .any(|b| !(b.is_finite() && *b >= 0.0))
        {
            return err("inference.beta_grid values must be nonnegative".into());
        }
        if let Some(fig) = &self.figures {
            if fig.sims == 0 {
                return err("figures.sims must be at least 1".into());
            }
            if fig
                .theta1_cases
                .iter()
                .any(|t| !(t.is_finite() && *t > 0.0))
            {
                return err("figures.theta1_cases must be positive".into());
            }
        }
        if let Some(tab) = &self.tables {
            if tab.sims == 0 || tab.bootstrap_reps == 0 {
                return err("tables.sims and tables.bootstrap_reps must be at least 1".into());
            }
            if tab.beta0_grid.is_empty() || tab.sample_sizes.is_empty() {
                return err("tables.beta0_grid and tables.sample_sizes must be nonempty".into());
            }
            if tab.sample_sizes.iter().any(|&n| n < 2) {
                return err("tables.sample_sizes entries must be at least 2".into());
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_toml_str(&text)
    }

    /// FNV-1a hash of the canonical TOML serialization. Stamped into output
    /// files so results can be traced back to the exact configuration.
    pub fn content_hash(&self) -> u64 {
        let canonical = toml::to_string(self).expect("config serializes");
        fnv1a64(canonical.as_bytes())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Baseline two-type economy used widely in tests and as a CLI default.
pub fn baseline_config() -> Config {
    Config {
        economy: EconomyConfig {
            workers: 500,
            firms: 500,
            edu_levels: [1.0, 2.0],
            capital_support: vec![0.5, 1.0],
            capital_mass: vec![0.5, 0.5],
            covariate_dim: 2,
            theta1: 1.0,
            theta2: vec![1.0, 1.0],
            beta: 0.0,
            sigma: 1.0,
            tau: 0.5,
            production: ProductionForm::Multiplicative,
            outside: OutsideForm::ExpInteraction,
        },
        matching: MatchingConfig::default(),
        solver: SolverConfig::default(),
        inference: InferenceConfig::default(),
        figures: None,
        tables: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_validates() {
        baseline_config().validate().unwrap();
    }

    #[test]
    fn roundtrip_through_toml() {
        let cfg = baseline_config();
        let text = toml::to_string(&cfg).unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn hash_distinguishes_configs() {
        let a = baseline_config();
        let mut b = baseline_config();
        b.economy.beta = 1.0;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = baseline_config();
        c.economy.capital_mass = vec![0.6, 0.6];
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.economy.capital_support = vec![1.0, 0.5];
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.economy.tau = 1.0;
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.economy.edu_levels = [2.0, 1.0];
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.economy.firms = 400;
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.economy.theta2 = vec![1.0];
        assert!(c.validate().is_err());

        let mut c = baseline_config();
        c.solver.damping = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"
            [economy]
            workers = 10
            firms = 10
            edu_levels = [1.0, 2.0]
            capital_support = [0.5, 1.0]
            capital_mass = [0.5, 0.5]
            covariate_dim = 2
            theta1 = 1.0
            theta2 = [1.0, 1.0]
            beta = 0.0
            production = "multiplicative"
            outside = "exp_interaction"
            not_a_key = 3
        "#;
        assert!(Config::from_toml_str(text).is_err());
    }

    #[test]
    fn default_beta_grid_is_quarter_steps_to_five() {
        let grid = InferenceConfig::default().effective_beta_grid();
        assert_eq!(grid.len(), 21);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[20], 5.0);
        assert!((grid[1] - 0.25).abs() < 1e-15);
    }
}
