//! Estimation and simulation-based tests on matched samples.
//!
//! The estimator treats a cross-section of workers (education choice plus
//! covariates) as draws from the schooling fixed point and maximizes the
//! implied binary-choice likelihood over the payoff parameters `(theta1,
//! theta2)`, with the second block tied to a single scalar broadcast across
//! covariates.  Because the firm preference split depends on the candidate
//! parameters only through an ordinal cut, the likelihood is optimized
//! separately on each of the `M + 1` cut regimes and the best candidate is
//! scored on the exact likelihood at its own realized cut.
//!
//! Tests for the friction parameter `beta` compare the observed
//! education-by-capital contingency table against tables simulated from the
//! model.  Critical values come from an exchangeable pool of leave-one-out
//! statistics, so the acceptance event has exact finite-sample level under
//! the null.  [`two_stage_beta`] wraps the same comparison with a bootstrap
//! confidence box for the payoff parameters, replacing the point null on
//! `theta` by a minimax search over the box.

use rand::Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::equilibrium::{sample_actions, solve_with_table};
use crate::matcher::{contingency_shares, draw_firm_types, simulate_matching};
use crate::matchprob::KernelBank;
use crate::model::{outside_option_with, production_with, softplus, split_from_sample};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{purpose, SeedTree};
use crate::{Error, Result};

/// Worker-level observations used by the estimator and the `beta` tests.
///
/// `matched_type` records the capital type index of each worker's firm and is
/// only consulted by the contingency-table tests; the likelihood depends on
/// `education` and `covariates` alone.  An empty `matched_type` is valid for
/// estimation-only datasets.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Realized education level per worker, each equal to a configured level.
    pub education: Vec<f64>,
    /// Worker covariate rows, one per worker.
    pub covariates: crate::model::Matrix,
    /// Capital type index of the matched firm per worker; may be empty.
    pub matched_type: Vec<usize>,
}

impl Dataset {
    /// Checks internal consistency against the configured economy.
    pub fn validate(&self, cfg: &Config) -> Result<()> {
        let n = self.covariates.rows();
        if self.education.len() != n {
            return Err(Error::Config(format!(
                "dataset has {} education entries for {} covariate rows",
                self.education.len(),
                n
            )));
        }
        if !self.matched_type.is_empty() && self.matched_type.len() != n {
            return Err(Error::Config(format!(
                "dataset has {} matches for {} workers",
                self.matched_type.len(),
                n
            )));
        }
        for (i, &h) in self.education.iter().enumerate() {
            if h != cfg.economy.edu_low() && h != cfg.economy.edu_high() {
                return Err(Error::Config(format!(
                    "worker {i} has education {h} outside the configured levels"
                )));
            }
        }
        for (i, &m) in self.matched_type.iter().enumerate() {
            if m >= cfg.economy.n_types() {
                return Err(Error::Config(format!(
                    "worker {i} matched to capital type {m} out of range"
                )));
            }
        }
        Ok(())
    }

    /// Indicator of high education per worker.
    pub fn high_flags(&self, cfg: &Config) -> Vec<bool> {
        self.education
            .iter()
            .map(|&h| (h - cfg.economy.edu_high()).abs() < 1e-12)
            .collect()
    }

    /// Share of workers with high education.
    pub fn education_share(&self, cfg: &Config) -> f64 {
        let flags = self.high_flags(cfg);
        flags.iter().filter(|&&b| b).count() as f64 / flags.len().max(1) as f64
    }
}

/// Expands a scalar second-block parameter to the covariate dimension.
pub fn theta2_vector(theta2: f64, dim: usize) -> Vec<f64> {
    vec![theta2; dim]
}

/// Point estimate together with the likelihood bookkeeping needed downstream.
#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    /// `(theta1, theta2)` at the maximum.
    pub theta: [f64; 2],
    /// Maximized average log-likelihood.
    pub loglik: f64,
    /// Firm preference cut realized at the estimate.
    pub cut: usize,
    /// Empirical high-education share of the estimation sample.
    pub p_hat: f64,
}

/// Likelihood value at a parameter point, with its realized preference cut.
#[derive(Debug, Clone, Copy)]
pub struct LikelihoodEval {
    /// Average log-likelihood over workers.
    pub loglik: f64,
    /// Number of top capital types preferring high education at this point.
    pub cut: usize,
}

/// Evaluates the average log-likelihood with the cut fixed externally.
///
/// Used inside the per-cut optimizations, where the candidate point is scored
/// as if the preference regime were `cut` even when the candidate itself
/// would realize a different one; the outer loop re-scores winners at their
/// own realized cut.
fn loglik_forced(ctx: &LikCtx<'_>, theta: [f64; 2], cut: usize) -> f64 {
    let eco = &ctx.cfg.economy;
    if !(theta[0].is_finite() && theta[1].is_finite()) || theta[0] <= 1e-9 {
        return f64::NEG_INFINITY;
    }
    let theta2 = theta2_vector(theta[1], eco.covariate_dim);
    let tau = eco.tau;
    let base = tau * theta[0] * (ctx.fbar_unit[cut][1] - ctx.fbar_unit[cut][0]);
    let x = ctx.covariates;
    let hi = eco.edu_high();
    let lo = eco.edu_low();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let g_gap = outside_option_with(hi, row, &theta2, eco.outside)
            - outside_option_with(lo, row, &theta2, eco.outside);
        let delta = base + (1.0 - tau) * g_gap;
        // log Lambda(delta) = -softplus(-delta); log(1 - Lambda) = -softplus(delta).
        let ll = if ctx.high[i] {
            -softplus(-delta)
        } else {
            -softplus(delta)
        };
        total += ll;
    }
    total / x.rows() as f64
}

/// Internal evaluation context borrowing the dataset covariates directly.
struct LikCtx<'a> {
    cfg: &'a Config,
    covariates: &'a crate::model::Matrix,
    high: &'a [bool],
    f_unit_gap: &'a [f64],
    fbar_unit: &'a [[f64; 2]],
}

impl LikCtx<'_> {
    fn realized_cut(&self, theta: [f64; 2]) -> usize {
        let eco = &self.cfg.economy;
        let theta2 = theta2_vector(theta[1], eco.covariate_dim);
        let hi = eco.edu_high();
        let lo = eco.edu_low();
        let x = self.covariates;
        let mut gap_g = 0.0;
        for i in 0..x.rows() {
            let row = x.row(i);
            gap_g += outside_option_with(hi, row, &theta2, eco.outside)
                - outside_option_with(lo, row, &theta2, eco.outside);
        }
        gap_g /= x.rows() as f64;
        self.f_unit_gap
            .iter()
            .filter(|&&gap| theta[0] * gap >= gap_g)
            .count()
    }
}

/// Evaluates the estimation likelihood at a parameter point.
///
/// The preference cut is the one the point itself realizes on this dataset,
/// so the value agrees with the objective maximized by [`estimate_theta`].
pub fn loglik(
    theta: [f64; 2],
    data: &Dataset,
    cfg: &Config,
    bank: &KernelBank,
) -> Result<LikelihoodEval> {
    let parts = build_parts(data, cfg, bank)?;
    let ctx = parts.ctx(data, cfg);
    let cut = ctx.realized_cut(theta);
    Ok(LikelihoodEval {
        loglik: loglik_forced(&ctx, theta, cut),
        cut,
    })
}

/// Owned pieces of the likelihood context.
struct LikParts {
    high: Vec<bool>,
    p_hat: f64,
    f_unit_gap: Vec<f64>,
    fbar_unit: Vec<[f64; 2]>,
}

impl LikParts {
    fn ctx<'a>(&'a self, data: &'a Dataset, cfg: &'a Config) -> LikCtx<'a> {
        LikCtx {
            cfg,
            covariates: &data.covariates,
            high: &self.high,
            f_unit_gap: &self.f_unit_gap,
            fbar_unit: &self.fbar_unit,
        }
    }
}

fn build_parts(data: &Dataset, cfg: &Config, bank: &KernelBank) -> Result<LikParts> {
    data.validate(cfg)?;
    let high = data.high_flags(cfg);
    let n_high = high.iter().filter(|&&b| b).count();
    if n_high == 0 || n_high == high.len() {
        return Err(Error::DegenerateData(format!(
            "all {} workers share one education level; the choice model is unidentified",
            high.len()
        )));
    }
    let p_hat = n_high as f64 / high.len() as f64;
    let eco = &cfg.economy;
    let f_unit_gap: Vec<f64> = eco
        .capital_support
        .iter()
        .map(|&k| {
            production_with(eco.edu_high(), k, 1.0, eco.production)
                - production_with(eco.edu_low(), k, 1.0, eco.production)
        })
        .collect();
    let m_types = eco.n_types();
    let mut fbar_unit = Vec::with_capacity(m_types + 1);
    for cut in 0..=m_types {
        let table = bank.table(cut).pi(p_hat);
        let mut pair = [0.0f64; 2];
        for (class, slot) in pair.iter_mut().enumerate() {
            let h = if class == 1 {
                eco.edu_high()
            } else {
                eco.edu_low()
            };
            let mut total = 0.0;
            for m in 0..m_types {
                total += table.prob(m, class)
                    * production_with(h, eco.capital_support[m], 1.0, eco.production);
            }
            *slot = total;
        }
        fbar_unit.push(pair);
    }
    Ok(LikParts {
        high,
        p_hat,
        f_unit_gap,
        fbar_unit,
    })
}

/// Maximizes the choice likelihood using the starting points from the
/// inference configuration.
pub fn estimate_theta(data: &Dataset, cfg: &Config, bank: &KernelBank) -> Result<ThetaEstimate> {
    let starts: Vec<[f64; 2]> = cfg.inference.theta_starts.clone();
    estimate_theta_from(data, cfg, bank, &starts)
}

/// Maximizes the choice likelihood from caller-supplied starting points.
///
/// Each of the `M + 1` preference cuts defines a smooth forced-cut objective;
/// every start is run on every cut, and the resulting candidates are
/// re-scored on the exact likelihood (at their own realized cut) to pick the
/// winner.  This avoids the non-smooth seams where the cut switches.
pub fn estimate_theta_from(
    data: &Dataset,
    cfg: &Config,
    bank: &KernelBank,
    starts: &[[f64; 2]],
) -> Result<ThetaEstimate> {
    if starts.is_empty() {
        return Err(Error::Config("no optimizer starting points given".into()));
    }
    let parts = build_parts(data, cfg, bank)?;
    let ctx = parts.ctx(data, cfg);
    let m_types = cfg.economy.n_types();
    let opts = NelderMeadOptions::default();
    let mut candidates: Vec<[f64; 2]> = Vec::new();
    for cut in 0..=m_types {
        for &start in starts {
            let objective = |z: &[f64]| -> f64 {
                let theta = [z[0], z[1]];
                let value = loglik_forced(&ctx, theta, cut);
                if value.is_finite() {
                    -value
                } else {
                    1e12
                }
            };
            let min = nelder_mead(&objective, &start[..], &opts);
            candidates.push([min.x[0], min.x[1]]);
        }
    }
    let mut best: Option<ThetaEstimate> = None;
    for theta in candidates {
        if !(theta[0].is_finite() && theta[1].is_finite()) || theta[0] <= 1e-9 {
            continue;
        }
        let cut = ctx.realized_cut(theta);
        let value = loglik_forced(&ctx, theta, cut);
        if !value.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => value > b.loglik,
        };
        if better {
            best = Some(ThetaEstimate {
                theta,
                loglik: value,
                cut,
                p_hat: parts.p_hat,
            });
        }
    }
    best.ok_or_else(|| {
        Error::DegenerateData("no likelihood candidate produced a finite value".into())
    })
}

/// Lower index for an order-statistic quantile: the smallest entry whose
/// empirical cdf reaches `q`.  `sorted` must be ascending.
pub fn inf_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let len = sorted.len();
    let raw = (q * len as f64).ceil() as isize - 1;
    let idx = raw.clamp(0, len as isize - 1) as usize;
    sorted[idx]
}

/// Bootstrap confidence output for the payoff parameters.
#[derive(Debug, Clone)]
pub struct BootstrapCi {
    /// Point estimate the resamples perturb.
    pub theta_hat: [f64; 2],
    /// Contrast value at the point estimate.
    pub contrast_hat: f64,
    /// Percentile interval for the contrast at the requested level.
    pub lo: f64,
    pub hi: f64,
    /// Sorted bootstrap draws of the contrast.
    pub contrast_draws: Vec<f64>,
    /// Sorted bootstrap draws of each component, for box construction.
    pub component_draws: [Vec<f64>; 2],
    /// Resamples whose re-estimation failed (excluded from the draws).
    pub failures: usize,
}

impl BootstrapCi {
    /// Per-component interval at joint level `1 - gamma`, splitting `gamma`
    /// evenly across the two components.
    pub fn component_box(&self, gamma: f64) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for (c, draws) in self.component_draws.iter().enumerate() {
            out[c] = [
                inf_quantile(draws, gamma / 4.0),
                inf_quantile(draws, 1.0 - gamma / 4.0),
            ];
        }
        out
    }
}

/// Parametric bootstrap for the estimator at `theta_hat`.
///
/// The schooling fixed point is solved once at the estimate; each resample
/// redraws education from the fitted choice probabilities (covariates held
/// fixed), re-estimates from the single warm start `theta_hat`, and records
/// the contrast `c'theta`.  More than 5% failed re-estimations abort the
/// interval.
pub fn bootstrap_theta_ci(
    theta_hat: [f64; 2],
    data: &Dataset,
    cfg: &Config,
    bank: &KernelBank,
    tree: &SeedTree,
    reps: usize,
    alpha: f64,
) -> Result<BootstrapCi> {
    if reps == 0 {
        return Err(Error::Config(
            "bootstrap needs at least one resample".into(),
        ));
    }
    let mut cfg_hat = cfg.clone();
    cfg_hat.economy.theta1 = theta_hat[0];
    cfg_hat.economy.theta2 = theta2_vector(theta_hat[1], cfg.economy.covariate_dim);
    let split = split_from_sample(&cfg_hat.economy, &data.covariates);
    let table = bank.table(split.cut());
    let p0 = data.education_share(cfg);
    let sol = solve_with_table(&data.covariates, table, &cfg_hat, p0, None)?;
    let (_, psi) =
        crate::equilibrium::best_response(sol.p_star, &data.covariates, table, &cfg_hat, None);
    let contrast = cfg.inference.contrast;
    let results: Vec<Option<[f64; 2]>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree.rng(&[purpose::BOOTSTRAP, b as u64]);
            let education = sample_actions(&psi, cfg, &mut rng);
            let boot = Dataset {
                education,
                covariates: data.covariates.clone(),
                matched_type: Vec::new(),
            };
            estimate_theta_from(&boot, cfg, bank, &[theta_hat])
                .ok()
                .map(|est| est.theta)
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 20 > reps {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: reps,
        });
    }
    let mut contrast_draws: Vec<f64> = Vec::with_capacity(reps - failures);
    let mut comp0: Vec<f64> = Vec::with_capacity(reps - failures);
    let mut comp1: Vec<f64> = Vec::with_capacity(reps - failures);
    for theta in results.into_iter().flatten() {
        contrast_draws.push(contrast[0] * theta[0] + contrast[1] * theta[1]);
        comp0.push(theta[0]);
        comp1.push(theta[1]);
    }
    if contrast_draws.is_empty() {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: reps,
        });
    }
    contrast_draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    comp0.sort_by(|a, b| a.partial_cmp(b).unwrap());
    comp1.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = inf_quantile(&contrast_draws, alpha / 2.0);
    let hi = inf_quantile(&contrast_draws, 1.0 - alpha / 2.0);
    Ok(BootstrapCi {
        theta_hat,
        contrast_hat: contrast[0] * theta_hat[0] + contrast[1] * theta_hat[1],
        lo,
        hi,
        contrast_draws,
        component_draws: [comp0, comp1],
        failures,
    })
}

/// Supremum distance between two share vectors of equal layout.
fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Observed statistic and the exchangeable pool of leave-one-out statistics.
///
/// With simulated tables `S_1..S_R` exchangeable with the observed table
/// under the null, `t_obs` and each `t_sims[r]` play symmetric roles, so the
/// rank of `t_obs` in the pool is uniform.
pub(crate) fn pool_statistics(obs: &[f64], sims: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let r = sims.len();
    assert!(r > 0, "statistic pool needs at least one simulation");
    let d_obs: Vec<f64> = sims.iter().map(|s| sup_dist(obs, s)).collect();
    let t_obs = d_obs.iter().sum::<f64>() / r as f64;
    let t_sims: Vec<f64> = (0..r)
        .map(|i| {
            let mut total = d_obs[i];
            for j in 0..r {
                if j != i {
                    total += sup_dist(&sims[i], &sims[j]);
                }
            }
            total / r as f64
        })
        .collect();
    (t_obs, t_sims)
}

/// Full output of one Monte Carlo comparison at a fixed `beta`.
#[derive(Debug, Clone)]
pub struct McTestDetail {
    /// Mean sup-distance between the observed table and the simulations.
    pub t_obs: f64,
    /// Leave-one-out pool, in simulation order.
    pub t_sims: Vec<f64>,
}

impl McTestDetail {
    /// Critical value at level `alpha` via the lower quantile of the pool.
    pub fn critical(&self, alpha: f64) -> f64 {
        let mut sorted = self.t_sims.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        inf_quantile(&sorted, 1.0 - alpha)
    }

    /// Acceptance at level `alpha`; ties favor acceptance.
    pub fn accepted(&self, alpha: f64) -> bool {
        self.t_obs <= self.critical(alpha)
    }

    /// Rank of the observed statistic in the pooled sample, with seeded
    /// uniform tie-breaking; uniform on `0..=t_sims.len()` under the null.
    pub fn randomized_rank(&self, rng: &mut impl Rng) -> usize {
        let u_obs: f64 = rng.gen();
        let mut rank = 0usize;
        for &t in &self.t_sims {
            let u: f64 = rng.gen();
            if t < self.t_obs || (t == self.t_obs && u < u_obs) {
                rank += 1;
            }
        }
        rank
    }
}

/// Simulates `r_sims` matched markets at the configured economy and compares
/// contingency tables against the observed one.
///
/// Education is held at its observed values; only the capital assignment and
/// the matching noise are redrawn, each simulation on the stream keyed by its
/// index alone so the draws are shared across candidate `beta` values.
pub fn mc_test_detail(
    data: &Dataset,
    cfg: &Config,
    tree: &SeedTree,
    r_sims: usize,
) -> Result<McTestDetail> {
    data.validate(cfg)?;
    if data.matched_type.len() != data.education.len() {
        return Err(Error::Config(
            "contingency test needs matched firm types for every worker".into(),
        ));
    }
    if r_sims == 0 {
        return Err(Error::Config("contingency test needs simulations".into()));
    }
    let split = split_from_sample(&cfg.economy, &data.covariates);
    let obs = contingency_shares(&data.education, &data.matched_type, cfg);
    let sims: Vec<Vec<f64>> = (0..r_sims)
        .into_par_iter()
        .map(|r| {
            let mut rng = tree.rng(&[purpose::MC_SIM, r as u64]);
            let firm_types = draw_firm_types(cfg, &mut rng);
            let outcome = simulate_matching(&data.education, &firm_types, &split, cfg, &mut rng);
            contingency_shares(&data.education, &outcome.matched_type, cfg)
        })
        .collect();
    let (t_obs, t_sims) = pool_statistics(&obs, &sims);
    Ok(McTestDetail { t_obs, t_sims })
}

/// One row of a `beta` confidence sweep.
#[derive(Debug, Clone, Copy)]
pub struct McTestRow {
    pub beta: f64,
    pub t_obs: f64,
    pub critical: f64,
    pub accepted: bool,
}

/// Runs the contingency test at a single candidate `beta` with `theta` known.
pub fn mc_test_beta(
    data: &Dataset,
    cfg: &Config,
    tree: &SeedTree,
    beta: f64,
    r_sims: usize,
    alpha: f64,
) -> Result<McTestRow> {
    let mut cfg_b = cfg.clone();
    cfg_b.economy.beta = beta;
    let detail = mc_test_detail(data, &cfg_b, tree, r_sims)?;
    Ok(McTestRow {
        beta,
        t_obs: detail.t_obs,
        critical: detail.critical(alpha),
        accepted: detail.accepted(alpha),
    })
}

/// Sweeps the candidate grid and reports acceptance per point.
///
/// All grid points consume identical simulation draws, so the acceptance
/// region varies only through the model's dependence on `beta`.
pub fn mc_confidence_beta(
    data: &Dataset,
    cfg: &Config,
    tree: &SeedTree,
    grid: &[f64],
    r_sims: usize,
    alpha: f64,
) -> Result<Vec<McTestRow>> {
    grid.iter()
        .map(|&beta| mc_test_beta(data, cfg, tree, beta, r_sims, alpha))
        .collect()
}

/// One row of the two-stage sweep, where `theta` is estimated rather than
/// known.
#[derive(Debug, Clone, Copy)]
pub struct TwoStageRow {
    pub beta: f64,
    pub t_obs: f64,
    pub critical: f64,
    pub accepted: bool,
    /// Contrast interval endpoints from the first-stage bootstrap.
    pub contrast_lo: f64,
    pub contrast_hi: f64,
}

/// Candidate grid over a confidence box: vertices, centroid, and a Latin
/// hypercube filling of the interior.
fn theta_grid(box2: [[f64; 2]; 2], tree: &SeedTree, lhs_points: usize) -> Vec<[f64; 2]> {
    let clamp1 = |t: f64| t.max(1e-6);
    let mut grid = Vec::with_capacity(5 + lhs_points);
    for &t1 in &box2[0] {
        for &t2 in &box2[1] {
            grid.push([clamp1(t1), t2]);
        }
    }
    grid.push([
        clamp1(0.5 * (box2[0][0] + box2[0][1])),
        0.5 * (box2[1][0] + box2[1][1]),
    ]);
    if lhs_points > 0 {
        let mut rng = tree.rng(&[purpose::THETA_GRID]);
        let mut strata1: Vec<usize> = (0..lhs_points).collect();
        let mut strata2: Vec<usize> = (0..lhs_points).collect();
        for i in (1..lhs_points).rev() {
            strata1.swap(i, rng.gen_range(0..=i));
            strata2.swap(i, rng.gen_range(0..=i));
        }
        let span = |b: [f64; 2]| (b[0], (b[1] - b[0]).max(0.0));
        let (lo1, w1) = span(box2[0]);
        let (lo2, w2) = span(box2[1]);
        for i in 0..lhs_points {
            let u1: f64 = rng.gen();
            let u2: f64 = rng.gen();
            let t1 = lo1 + w1 * (strata1[i] as f64 + u1) / lhs_points as f64;
            let t2 = lo2 + w2 * (strata2[i] as f64 + u2) / lhs_points as f64;
            grid.push([clamp1(t1), t2]);
        }
    }
    grid
}

/// Two-stage confidence procedure for `beta` with `theta` unknown.
///
/// Stage one estimates `theta` at the candidate `beta` and forms a bootstrap
/// box at joint level `1 - alpha/2`.  Stage two simulates matched markets at
/// every grid point of the box, schooling redrawn from each point's fixed
/// point on shocks shared across points, and compares minimax statistics:
/// the candidate is accepted when the best-case observed statistic falls
/// below the worst-case pool quantile at level `alpha/2`.
pub fn two_stage_beta(
    data: &Dataset,
    cfg: &Config,
    tree: &SeedTree,
    grid: &[f64],
    r_sims: usize,
    bootstrap_reps: usize,
    alpha: f64,
) -> Result<Vec<TwoStageRow>> {
    data.validate(cfg)?;
    if data.matched_type.len() != data.education.len() {
        return Err(Error::Config(
            "contingency test needs matched firm types for every worker".into(),
        ));
    }
    let obs = contingency_shares(&data.education, &data.matched_type, cfg);
    let mut rows = Vec::with_capacity(grid.len());
    for (bi, &beta) in grid.iter().enumerate() {
        let mut cfg_b = cfg.clone();
        cfg_b.economy.beta = beta;
        let tree_b = tree.descend(&[purpose::BETA_POINT, bi as u64]);
        let bank = KernelBank::build(&cfg_b, tree);
        let est = estimate_theta(data, &cfg_b, &bank)?;
        let boot = bootstrap_theta_ci(
            est.theta,
            data,
            &cfg_b,
            &bank,
            &tree_b,
            bootstrap_reps,
            alpha,
        )?;
        let box2 = boot.component_box(alpha / 2.0);
        let thetas = theta_grid(box2, &tree_b, 8);
        let n_grid = thetas.len();
        // Simulated tables per grid point, schooling shocks shared across
        // points and matching draws shared across grid points and beta.
        let mut tables: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_grid);
        for theta in &thetas {
            let mut cfg_g = cfg_b.clone();
            cfg_g.economy.theta1 = theta[0];
            cfg_g.economy.theta2 = theta2_vector(theta[1], cfg.economy.covariate_dim);
            let split_g = split_from_sample(&cfg_g.economy, &data.covariates);
            let table_g = bank.table(split_g.cut());
            let p0 = data.education_share(cfg);
            let sol = solve_with_table(&data.covariates, table_g, &cfg_g, p0, None)?;
            let (_, psi) = crate::equilibrium::best_response(
                sol.p_star,
                &data.covariates,
                table_g,
                &cfg_g,
                None,
            );
            let sims: Vec<Vec<f64>> = (0..r_sims)
                .into_par_iter()
                .map(|r| {
                    let mut omega = tree.rng(&[purpose::SCHOOLING, r as u64]);
                    let education = sample_actions(&psi, &cfg_g, &mut omega);
                    let mut rng = tree.rng(&[purpose::MC_SIM, r as u64]);
                    let firm_types = draw_firm_types(&cfg_b, &mut rng);
                    let outcome =
                        simulate_matching(&education, &firm_types, &split_g, &cfg_b, &mut rng);
                    contingency_shares(&education, &outcome.matched_type, cfg)
                })
                .collect();
            tables.push(sims);
        }
        // Best-case observed statistic over the box.
        let mut s_obs = f64::INFINITY;
        for sims in &tables {
            let total: f64 = sims.iter().map(|s| sup_dist(&obs, s)).sum();
            s_obs = s_obs.min(total / r_sims as f64);
        }
        // Worst-case leave-one-out pool: for generating point gt and
        // replicate r, take the best comparison point g, then maximize over
        // gt per replicate.
        let mut min_over_g = vec![f64::INFINITY; r_sims * n_grid];
        for (gt, sims_gt) in tables.iter().enumerate() {
            let mins = &mut min_over_g[gt * r_sims..(gt + 1) * r_sims];
            for sims_g in &tables {
                let t_r: Vec<f64> = (0..r_sims)
                    .into_par_iter()
                    .map(|r| {
                        let mut total = sup_dist(&sims_gt[r], &obs);
                        for (s, sim) in sims_g.iter().enumerate() {
                            if s != r {
                                total += sup_dist(&sims_gt[r], sim);
                            }
                        }
                        total / r_sims as f64
                    })
                    .collect();
                for (slot, t) in mins.iter_mut().zip(&t_r) {
                    *slot = slot.min(*t);
                }
            }
        }
        let mut pool: Vec<f64> = (0..r_sims)
            .map(|r| {
                (0..n_grid)
                    .map(|gt| min_over_g[gt * r_sims + r])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let critical = inf_quantile(&pool, 1.0 - alpha / 2.0);
        rows.push(TwoStageRow {
            beta,
            t_obs: s_obs,
            critical,
            accepted: s_obs <= critical,
            contrast_lo: boot.lo,
            contrast_hi: boot.hi,
        });
    }
    Ok(rows)
}
