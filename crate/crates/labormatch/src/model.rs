//! Economic primitives: production technology, outside options, bargained
//! payoffs, and the firm-side preference ordering over education classes.

use crate::config::{EconomyConfig, OutsideForm, ProductionForm};
use crate::{Error, Result};
use rand::Rng;

/// Dense row-major matrix of worker covariates (n rows, d columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape mismatch");
        Matrix { data, rows, cols }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            data,
            rows: r,
            cols: c,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Workers' iid U[0,1] covariates, one row per worker.
pub fn sample_covariates(n: usize, dim: usize, rng: &mut impl Rng) -> Matrix {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.gen::<f64>()).collect();
    Matrix::new(data, n, dim)
}

/// A cross-section of workers: covariates plus, once chosen, education
/// values, and optionally the taste shocks behind those choices.
#[derive(Debug, Clone)]
pub struct WorkerSample {
    pub covariates: Matrix,
    pub education: Option<Vec<f64>>,
    /// Per-worker shocks (epsilon_low, epsilon_high), n x 2 when present.
    pub taste_shocks: Option<Matrix>,
}

impl WorkerSample {
    pub fn new(covariates: Matrix) -> Self {
        WorkerSample {
            covariates,
            education: None,
            taste_shocks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.covariates.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, cfg: &EconomyConfig) -> Result<()> {
        if self.covariates.rows() != cfg.workers {
            return Err(Error::DegenerateData(format!(
                "sample has {} workers, config says {}",
                self.covariates.rows(),
                cfg.workers
            )));
        }
        if self.covariates.cols() != cfg.covariate_dim {
            return Err(Error::DegenerateData(format!(
                "covariates have {} columns, config says {}",
                self.covariates.cols(),
                cfg.covariate_dim
            )));
        }
        if let Some(edu) = &self.education {
            if edu.len() != self.len() {
                return Err(Error::DegenerateData(
                    "education vector length differs from worker count".into(),
                ));
            }
            let [lo, hi] = cfg.edu_levels;
            if edu.iter().any(|&h| h != lo && h != hi) {
                return Err(Error::DegenerateData(
                    "education entries must equal one of the configured levels".into(),
                ));
            }
        }
        if let Some(shocks) = &self.taste_shocks {
            if shocks.rows() != self.len() || shocks.cols() != 2 {
                return Err(Error::DegenerateData(
                    "taste shocks must be an n x 2 matrix".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Match output f(h, k) at the configured scale.
pub fn production(h: f64, k: f64, cfg: &EconomyConfig) -> f64 {
    production_with(h, k, cfg.theta1, cfg.production)
}

/// Match output at an arbitrary scale parameter, for estimation.
pub fn production_with(h: f64, k: f64, theta1: f64, form: ProductionForm) -> f64 {
    match form {
        ProductionForm::Multiplicative => theta1 * h * k,
        ProductionForm::Additive => theta1 * (h + k),
    }
}

/// Outside option g(h, x) at the configured coefficients.
pub fn outside_option(h: f64, x: &[f64], cfg: &EconomyConfig) -> f64 {
    outside_option_with(h, x, &cfg.theta2, cfg.outside)
}

/// Outside option at arbitrary coefficients, for estimation.
pub fn outside_option_with(h: f64, x: &[f64], theta2: &[f64], form: OutsideForm) -> f64 {
    debug_assert_eq!(x.len(), theta2.len());
    let index: f64 = x.iter().zip(theta2).map(|(xi, ti)| xi * ti).sum();
    match form {
        OutsideForm::ExpInteraction => (h * index).exp(),
        OutsideForm::ScaledExp => h * index.exp(),
    }
}

/// Realized payoffs of one match under Nash bargaining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoffs {
    pub wage: f64,
    pub profit: f64,
    pub output: f64,
}

/// Nash bargaining split: the worker gets their outside option plus a share
/// tau of the surplus, the firm keeps the rest. Wage and profit sum to
/// output exactly; profit is negative when the outside option exceeds
/// output (an individual-rationality violation, reported separately).
pub fn bargain_payoffs(h: f64, k: f64, x: &[f64], cfg: &EconomyConfig) -> Payoffs {
    let f = production(h, k, cfg);
    let g = outside_option(h, x, cfg);
    Payoffs {
        wage: cfg.tau * f + (1.0 - cfg.tau) * g,
        profit: (1.0 - cfg.tau) * (f - g),
        output: f,
    }
}

/// Scan of individual-rationality violations (output below the outside
/// option) over a covariate sample, all education levels and capital types.
#[derive(Debug, Clone, Copy, Default)]
pub struct IrReport {
    pub violations: usize,
    pub checked: usize,
    /// Most negative surplus found, 0 when none are negative.
    pub worst_gap: f64,
}

impl IrReport {
    pub fn clean(&self) -> bool {
        self.violations == 0
    }
}

/// Checks f(h, k) >= g(h, x) for every worker, education level, and capital
/// type. Violations make bargained profits negative but do not invalidate
/// the mechanics, so this reports rather than errors.
pub fn ir_spot_check(cfg: &EconomyConfig, covariates: &Matrix) -> IrReport {
    let mut report = IrReport::default();
    for i in 0..covariates.rows() {
        let x = covariates.row(i);
        for &h in &cfg.edu_levels {
            let g = outside_option(h, x, cfg);
            for &k in &cfg.capital_support {
                let gap = production(h, k, cfg) - g;
                report.checked += 1;
                if gap < 0.0 {
                    report.violations += 1;
                    report.worst_gap = report.worst_gap.min(gap);
                }
            }
        }
    }
    report
}

/// Mean outside option at each education level over a covariate sample,
/// ordered (low, high). This is the profile firms use to rank education
/// classes when worker identities are hidden.
pub fn mean_outside(cfg: &EconomyConfig, covariates: &Matrix) -> [f64; 2] {
    mean_outside_with(cfg, covariates, &cfg.theta2)
}

/// Same at arbitrary outside-option coefficients.
pub fn mean_outside_with(cfg: &EconomyConfig, covariates: &Matrix, theta2: &[f64]) -> [f64; 2] {
    let n = covariates.rows() as f64;
    let mut out = [0.0; 2];
    for (j, &h) in cfg.edu_levels.iter().enumerate() {
        let sum: f64 = (0..covariates.rows())
            .map(|i| outside_option_with(h, covariates.row(i), theta2, cfg.outside))
            .sum();
        out[j] = sum / n;
    }
    out
}

/// A firm's valuation of hiring from education class h when it only knows
/// the class: expected profit (1 - tau) * (f(h, k) - gbar(h)).
pub fn preference_value(k: f64, h: f64, gbar_h: f64, cfg: &EconomyConfig) -> f64 {
    (1.0 - cfg.tau) * (production(h, k, cfg) - gbar_h)
}

/// Partition of capital types by which education class they prefer, with
/// the prior mass and posterior distribution of each side.
///
/// Types are ordered by capital. Because the production gap between
/// education levels is nondecreasing in capital for both technologies, the
/// high-preferring set is always the top `cut()` types.
#[derive(Debug, Clone)]
pub struct FirmPreferenceSplit {
    /// Capital type indices preferring the high education class, ascending.
    pub prefers_high: Vec<usize>,
    /// The complement, ascending.
    pub prefers_low: Vec<usize>,
    /// Prior probability that a firm prefers high.
    pub q_high: f64,
    pub q_low: f64,
    /// Type distribution conditional on preferring high, indexed like
    /// `prefers_high`.
    pub posterior_high: Vec<f64>,
    pub posterior_low: Vec<f64>,
    /// Mean outside options (low, high) the split was computed from.
    pub gbar: [f64; 2],
}

impl FirmPreferenceSplit {
    /// Number of high-preferring types; they are the `cut` largest capitals.
    pub fn cut(&self) -> usize {
        self.prefers_high.len()
    }

    pub fn prefers_high_type(&self, m: usize) -> bool {
        self.prefers_high.binary_search(&m).is_ok()
    }

    /// True when every firm ranks education classes the same way.
    pub fn homogeneous(&self) -> bool {
        self.prefers_high.is_empty() || self.prefers_low.is_empty()
    }
}

/// Ranks education classes for each capital type by expected profit, using
/// the supplied mean outside options. Indifferent types count as preferring
/// the high class.
pub fn firm_preference_split(cfg: &EconomyConfig, gbar: [f64; 2]) -> FirmPreferenceSplit {
    let gap_g = gbar[1] - gbar[0];
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (m, &k) in cfg.capital_support.iter().enumerate() {
        let gap_f = production(cfg.edu_high(), k, cfg) - production(cfg.edu_low(), k, cfg);
        if gap_f >= gap_g {
            hi.push(m);
        } else {
            lo.push(m);
        }
    }
    // The production gap is nondecreasing in capital, so the high set is an
    // upper tail of the type order.
    debug_assert!(hi
        .first()
        .map_or(true, |&first| first == cfg.n_types() - hi.len()));

    let mass = |set: &[usize]| -> f64 { set.iter().map(|&m| cfg.capital_mass[m]).sum() };
    let q_high = mass(&hi);
    let q_low = mass(&lo);
    let posterior = |set: &[usize], q: f64| -> Vec<f64> {
        set.iter().map(|&m| cfg.capital_mass[m] / q).collect()
    };
    let posterior_high = if hi.is_empty() {
        Vec::new()
    } else {
        posterior(&hi, q_high)
    };
    let posterior_low = if lo.is_empty() {
        Vec::new()
    } else {
        posterior(&lo, q_low)
    };
    FirmPreferenceSplit {
        prefers_high: hi,
        prefers_low: lo,
        q_high,
        q_low,
        posterior_high,
        posterior_low,
        gbar,
    }
}

/// Split computed from a covariate sample's mean outside options.
pub fn split_from_sample(cfg: &EconomyConfig, covariates: &Matrix) -> FirmPreferenceSplit {
    firm_preference_split(cfg, mean_outside(cfg, covariates))
}

/// Split with the top `cut` capital types preferring high education,
/// irrespective of parameter values. Estimation enumerates these cases;
/// `gbar` is not meaningful here and is set to NaN.
pub fn split_with_cut(cfg: &EconomyConfig, cut: usize) -> FirmPreferenceSplit {
    let m = cfg.n_types();
    assert!(cut <= m, "cut {cut} exceeds type count {m}");
    let lo: Vec<usize> = (0..m - cut).collect();
    let hi: Vec<usize> = (m - cut..m).collect();
    let mass = |set: &[usize]| -> f64 { set.iter().map(|&t| cfg.capital_mass[t]).sum() };
    let (q_high, q_low) = (mass(&hi), mass(&lo));
    let posterior = |set: &[usize], q: f64| -> Vec<f64> {
        if set.is_empty() {
            Vec::new()
        } else {
            set.iter().map(|&t| cfg.capital_mass[t] / q).collect()
        }
    };
    FirmPreferenceSplit {
        posterior_high: posterior(&hi, q_high),
        posterior_low: posterior(&lo, q_low),
        prefers_high: hi,
        prefers_low: lo,
        q_high,
        q_low,
        gbar: [f64::NAN; 2],
    }
}

/// Standard logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
