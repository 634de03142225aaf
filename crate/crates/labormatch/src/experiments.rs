//! Seeded experiment drivers behind the command-line interface.
//!
//! Each driver owns one output contract: `run_simulate` emits matched
//! markets, `run_estimate` a replication study of the estimator,
//! `run_confint` the test-inversion confidence sweep for the friction
//! parameter, `run_figures` the comparative-statics curves, and `run_tables`
//! the coverage/length study.  All drivers derive every random stream from
//! the root seed through [`SeedTree`], collect parallel results in input
//! order, and reduce sequentially, so output bytes are identical across
//! worker counts.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Config, OutsideForm, ProductionForm};
use crate::equilibrium::{sample_actions, solve_with_table};
use crate::inference::{
    bootstrap_theta_ci, estimate_theta, mc_confidence_beta, two_stage_beta, Dataset, McTestRow,
};
use crate::matcher::{
    assign_wages, draw_firm_types, read_matching_csv, simulate_matching, summarize,
    write_matching_csv, MatchingOutcome, OutcomeStats,
};
use crate::matchprob::KernelBank;
use crate::model::{sample_covariates, split_from_sample, Matrix};
use crate::report::{csv_with_provenance, opt_field};
use crate::rng::{purpose, SeedTree};
use crate::{Error, Result};

/// Replication-count preset selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Run the replication counts exactly as configured.
    Paper,
    /// Cap simulation and bootstrap counts at 100 and sample sizes at 250 in
    /// the coverage tables, trading precision for desk-scale runtimes.
    Quick,
}

impl Scale {
    pub fn apply(self, cfg: &mut Config) {
        if self == Scale::Quick {
            cfg.inference.bootstrap_reps = cfg.inference.bootstrap_reps.min(100);
            if let Some(figures) = cfg.figures.as_mut() {
                figures.sims = figures.sims.min(100);
            }
            if let Some(tables) = cfg.tables.as_mut() {
                tables.sims = tables.sims.min(100);
                tables.bootstrap_reps = tables.bootstrap_reps.min(100);
                for n in tables.sample_sizes.iter_mut() {
                    *n = (*n).min(250);
                }
                tables.sample_sizes.dedup();
            }
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scale> {
        match s {
            "paper" => Ok(Scale::Paper),
            "quick" => Ok(Scale::Quick),
            other => Err(Error::Config(format!(
                "unknown scale {other:?}; expected \"paper\" or \"quick\""
            ))),
        }
    }
}

/// Runs `body` on a dedicated pool of `jobs` workers; 0 inherits the global
/// pool.
fn with_pool<T: Send>(jobs: usize, body: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return body();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
    pool.install(body)
}

/// CSV label for an outside-option form.
pub fn spec_name(outside: OutsideForm) -> &'static str {
    match outside {
        OutsideForm::ExpInteraction => "exp_interaction",
        OutsideForm::ScaledExp => "scaled_exp",
    }
}

/// CSV label for a production form.
pub fn production_name(production: ProductionForm) -> &'static str {
    match production {
        ProductionForm::Multiplicative => "multiplicative",
        ProductionForm::Additive => "additive",
    }
}

/// Requires the tied-coefficient restriction the estimator identifies.
fn require_tied_theta2(cfg: &Config) -> Result<f64> {
    let theta2 = &cfg.economy.theta2;
    let first = theta2[0];
    if theta2.iter().any(|&t| (t - first).abs() > 1e-12) {
        return Err(Error::Config(
            "estimation ties the outside-option coefficients; configure equal theta2 entries"
                .into(),
        ));
    }
    Ok(first)
}

/// One simulated market: the worker cross-section at the schooling fixed
/// point plus a matched, waged outcome.
pub struct SimulatedMarket {
    pub dataset: Dataset,
    pub outcome: MatchingOutcome,
    pub p_star: f64,
}

/// Simulates worker covariates and schooling at the configured economy's
/// fixed point, without any matching.
pub fn simulate_choices(
    cfg: &Config,
    bank: &KernelBank,
    tree: &SeedTree,
) -> Result<(Dataset, f64)> {
    let econ = &cfg.economy;
    let covariates = sample_covariates(
        econ.workers,
        econ.covariate_dim,
        &mut tree.rng(&[purpose::COVARIATES]),
    );
    let split = split_from_sample(econ, &covariates);
    let sol = solve_with_table(&covariates, bank.table(split.cut()), cfg, 0.5, None)?;
    let education = sample_actions(&sol.psi_star, cfg, &mut tree.rng(&[purpose::SCHOOLING]));
    Ok((
        Dataset {
            education,
            covariates,
            matched_type: Vec::new(),
        },
        sol.p_star,
    ))
}

/// Simulates a full market: schooling at the fixed point, then capital
/// assignment, matching, and wages.
pub fn simulate_market(
    cfg: &Config,
    bank: &KernelBank,
    tree: &SeedTree,
) -> Result<SimulatedMarket> {
    let (mut dataset, p_star) = simulate_choices(cfg, bank, tree)?;
    let split = split_from_sample(&cfg.economy, &dataset.covariates);
    let mut rng = tree.rng(&[purpose::MATCHING]);
    let firm_types = draw_firm_types(cfg, &mut rng);
    let mut outcome = simulate_matching(&dataset.education, &firm_types, &split, cfg, &mut rng);
    assign_wages(&mut outcome, &dataset.education, &dataset.covariates, cfg);
    dataset.matched_type = outcome.matched_type.clone();
    Ok(SimulatedMarket {
        dataset,
        outcome,
        p_star,
    })
}

fn numbered(dir: &Path, stem: &str, rep: usize, reps: usize) -> PathBuf {
    if reps <= 1 {
        dir.join(format!("{stem}.csv"))
    } else {
        dir.join(format!("{stem}_{rep:04}.csv"))
    }
}

/// Writes worker covariates as CSV: worker_id, x1..xd.
pub fn write_covariates_csv(
    path: &Path,
    covariates: &Matrix,
    cfg: &Config,
    seed: u64,
) -> Result<()> {
    let mut w = csv_with_provenance(path, cfg, seed)?;
    let mut header = vec!["worker_id".to_string()];
    for d in 1..=covariates.cols() {
        header.push(format!("x{d}"));
    }
    w.write_record(&header)?;
    for i in 0..covariates.rows() {
        let mut record = vec![i.to_string()];
        for v in covariates.row(i) {
            record.push(format!("{v}"));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the covariates CSV back, with line-numbered errors.  Rows must be
/// ordered by worker id 0..n-1 and match the configured covariate dimension.
pub fn read_covariates_csv(path: &Path, cfg: &Config) -> Result<Matrix> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::DataFormat {
        path: name.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    let reader = std::io::BufReader::new(file);
    let dim = cfg.economy.covariate_dim;
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::DataFormat {
            path: name.clone(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let fields = trimmed.split(',').count();
            if !trimmed.starts_with("worker_id") || fields != dim + 1 {
                return Err(Error::DataFormat {
                    path: name,
                    line: line_no,
                    msg: format!("expected header worker_id,x1..x{dim}, found {fields} columns"),
                });
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::DataFormat {
                path: name,
                line: line_no,
                msg: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        let id: usize = fields[0].parse().map_err(|_| Error::DataFormat {
            path: name.clone(),
            line: line_no,
            msg: format!("cannot parse worker_id value {:?}", fields[0]),
        })?;
        if id != rows {
            return Err(Error::DataFormat {
                path: name,
                line: line_no,
                msg: format!("worker ids must run 0..n-1 in order; expected {rows}, found {id}"),
            });
        }
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::DataFormat {
                path: name.clone(),
                line: line_no,
                msg: format!("cannot parse covariate value {f:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::DataFormat {
            path: name,
            line: 0,
            msg: "no data rows".into(),
        });
    }
    Ok(Matrix::new(data, rows, dim))
}

/// Per-replication summary returned by [`run_simulate`].
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub replication: usize,
    pub p_star: f64,
    pub stats: OutcomeStats,
}

/// Simulates `reps` markets and writes each as a matched CSV
/// (`matches[_NNNN].csv`) plus its covariates (`workers[_NNNN].csv`).
pub fn run_simulate(
    cfg: &Config,
    seed: u64,
    jobs: usize,
    reps: usize,
    out_dir: &Path,
) -> Result<Vec<SimulateSummary>> {
    if reps == 0 {
        return Err(Error::Config(
            "simulate needs at least one replication".into(),
        ));
    }
    cfg.validate()?;
    with_pool(jobs, || {
        let tree = SeedTree::new(seed);
        let bank = KernelBank::build(cfg, &tree);
        let markets: Vec<SimulatedMarket> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let sub = tree.descend(&[purpose::REPLICATION, r as u64]);
                simulate_market(cfg, &bank, &sub)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(reps);
        for (r, market) in markets.into_iter().enumerate() {
            write_matching_csv(
                &numbered(out_dir, "matches", r, reps),
                &market.outcome,
                &market.dataset.education,
                cfg,
                seed,
            )?;
            write_covariates_csv(
                &numbered(out_dir, "workers", r, reps),
                &market.dataset.covariates,
                cfg,
                seed,
            )?;
            out.push(SimulateSummary {
                replication: r,
                p_star: market.p_star,
                stats: summarize(&market.outcome, &market.dataset.education, cfg),
            });
        }
        Ok(out)
    })
}

/// One estimator replication; estimation or bootstrap failures leave the
/// optional fields empty.
#[derive(Debug, Clone)]
pub struct EstimateRow {
    pub replication: usize,
    pub theta_hat: Option<[f64; 2]>,
    pub ci: Option<[f64; 2]>,
    pub covered: Option<bool>,
}

/// Replicates simulate-estimate-bootstrap at the configured economy and
/// writes `estimates.csv`.
pub fn run_estimate(
    cfg: &Config,
    seed: u64,
    jobs: usize,
    reps: usize,
    out_dir: &Path,
) -> Result<Vec<EstimateRow>> {
    if reps == 0 {
        return Err(Error::Config(
            "estimate needs at least one replication".into(),
        ));
    }
    cfg.validate()?;
    let theta2_true = require_tied_theta2(cfg)?;
    let contrast = cfg.inference.contrast;
    let truth = contrast[0] * cfg.economy.theta1 + contrast[1] * theta2_true;
    with_pool(jobs, || {
        let tree = SeedTree::new(seed);
        let bank = KernelBank::build(cfg, &tree);
        let rows: Vec<EstimateRow> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let sub = tree.descend(&[purpose::REPLICATION, r as u64]);
                let mut row = EstimateRow {
                    replication: r,
                    theta_hat: None,
                    ci: None,
                    covered: None,
                };
                let Ok((data, _)) = simulate_choices(cfg, &bank, &sub) else {
                    return row;
                };
                let Ok(est) = estimate_theta(&data, cfg, &bank) else {
                    return row;
                };
                row.theta_hat = Some(est.theta);
                let Ok(ci) = bootstrap_theta_ci(
                    est.theta,
                    &data,
                    cfg,
                    &bank,
                    &sub,
                    cfg.inference.bootstrap_reps,
                    cfg.inference.alpha,
                ) else {
                    return row;
                };
                row.ci = Some([ci.lo, ci.hi]);
                row.covered = Some(ci.lo <= truth && truth <= ci.hi);
                row
            })
            .collect();
        let mut w = csv_with_provenance(&out_dir.join("estimates.csv"), cfg, seed)?;
        w.write_record([
            "replication",
            "theta1_hat",
            "theta2_hat",
            "ci_lo",
            "ci_hi",
            "covered",
        ])?;
        for row in &rows {
            w.write_record(&[
                row.replication.to_string(),
                opt_field(row.theta_hat.map(|t| t[0])),
                opt_field(row.theta_hat.map(|t| t[1])),
                opt_field(row.ci.map(|c| c[0])),
                opt_field(row.ci.map(|c| c[1])),
                row.covered
                    .map_or(String::new(), |c| u8::from(c).to_string()),
            ])?;
        }
        w.flush()?;
        Ok(rows)
    })
}

/// Source files for an observed dataset fed to the confidence sweep.
pub struct ConfintData {
    pub matches: PathBuf,
    pub covariates: PathBuf,
}

/// One replication of the confidence sweep.
pub struct ConfintRep {
    pub replication: usize,
    pub rows: Vec<McTestRow>,
}

impl ConfintRep {
    /// Accepted grid points.
    pub fn region(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.accepted)
            .map(|r| r.beta)
            .collect()
    }

    /// Whether the accepted region contains `beta`, up to grid lookup.
    pub fn covers(&self, beta: f64) -> bool {
        self.rows
            .iter()
            .any(|r| r.accepted && (r.beta - beta).abs() < 1e-12)
    }
}

/// Inverts the contingency test over the configured friction grid and writes
/// `confint[_NNNN].csv` (per-point decisions) and `region[_NNNN].csv`
/// (accepted points).
///
/// With `data` given, the sweep runs once on the observed market.  Otherwise
/// each replication simulates a market at the configured economy and sweeps
/// it, which is the coverage experiment.  `theta_known` holds the payoff
/// parameters at their configured values; the default re-estimates them per
/// candidate with a first-stage bootstrap box.
pub fn run_confint(
    cfg: &Config,
    seed: u64,
    jobs: usize,
    reps: usize,
    out_dir: &Path,
    data: Option<&ConfintData>,
    theta_known: bool,
) -> Result<Vec<ConfintRep>> {
    cfg.validate()?;
    if !theta_known {
        require_tied_theta2(cfg)?;
    }
    let grid = cfg.inference.effective_beta_grid();
    if grid.is_empty() {
        return Err(Error::Config("the friction grid is empty".into()));
    }
    let r_sims = cfg.inference.mc_sims;
    let alpha = cfg.inference.alpha;
    let reps = if data.is_some() { 1 } else { reps };
    if reps == 0 {
        return Err(Error::Config(
            "confint needs at least one replication".into(),
        ));
    }
    with_pool(jobs, || {
        let tree = SeedTree::new(seed);
        let observed: Option<Dataset> = match data {
            Some(paths) => {
                let records = read_matching_csv(&paths.matches, cfg)?;
                let covariates = read_covariates_csv(&paths.covariates, cfg)?;
                if records.education.len() != cfg.economy.workers
                    || covariates.rows() != cfg.economy.workers
                {
                    return Err(Error::Config(format!(
                        "config expects {} workers but the data files hold {} matches and {} covariate rows",
                        cfg.economy.workers,
                        records.education.len(),
                        covariates.rows()
                    )));
                }
                Some(Dataset {
                    education: records.education,
                    covariates,
                    matched_type: records.matched_type,
                })
            }
            None => None,
        };
        let bank = KernelBank::build(cfg, &tree);
        let mut out = Vec::with_capacity(reps);
        for r in 0..reps {
            let sub = tree.descend(&[purpose::REPLICATION, r as u64]);
            let dataset = match &observed {
                Some(d) => d.clone(),
                None => simulate_market(cfg, &bank, &sub)?.dataset,
            };
            let rows: Vec<McTestRow> = if theta_known {
                mc_confidence_beta(&dataset, cfg, &sub, &grid, r_sims, alpha)?
            } else {
                two_stage_beta(
                    &dataset,
                    cfg,
                    &sub,
                    &grid,
                    r_sims,
                    cfg.inference.bootstrap_reps,
                    alpha,
                )?
                .into_iter()
                .map(|row| McTestRow {
                    beta: row.beta,
                    t_obs: row.t_obs,
                    critical: row.critical,
                    accepted: row.accepted,
                })
                .collect()
            };
            let rep = ConfintRep {
                replication: r,
                rows,
            };
            let mut w = csv_with_provenance(&numbered(out_dir, "confint", r, reps), cfg, seed)?;
            w.write_record(["beta", "t_obs", "critical", "accepted"])?;
            for row in &rep.rows {
                w.write_record(&[
                    format!("{}", row.beta),
                    format!("{}", row.t_obs),
                    format!("{}", row.critical),
                    u8::from(row.accepted).to_string(),
                ])?;
            }
            w.flush()?;
            let mut w = csv_with_provenance(&numbered(out_dir, "region", r, reps), cfg, seed)?;
            w.write_record(["beta"])?;
            for b in rep.region() {
                w.write_record(&[format!("{b}")])?;
            }
            w.flush()?;
            out.push(rep);
        }
        Ok(out)
    })
}

/// One grid point of the comparative-statics sweep, averaged over
/// simulations.  Missing summaries (degenerate education or unmatched
/// wage classes) are averaged over the simulations that produced them.
#[derive(Debug, Clone)]
pub struct FigureRow {
    pub beta: f64,
    pub theta_case: f64,
    pub edu_share: f64,
    pub gini: f64,
    pub sort_corr: Option<f64>,
    pub wage_premium: Option<f64>,
    /// Mean fixed-point share, kept for diagnostics; not part of the CSV.
    pub p_star: f64,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in values.flatten() {
        total += v;
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

/// Sweeps the friction grid at both production scales and writes
/// `figures.csv` with one averaged row per (scale, friction) cell.
pub fn run_figures(cfg: &Config, seed: u64, jobs: usize, out_dir: &Path) -> Result<Vec<FigureRow>> {
    cfg.validate()?;
    let figures = cfg
        .figures
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [figures] section".into()))?;
    if figures.sims == 0 {
        return Err(Error::Config("figures need at least one simulation".into()));
    }
    let grid = figures.effective_beta_grid();
    with_pool(jobs, || {
        let tree = SeedTree::new(seed);
        let mut rows = Vec::with_capacity(2 * grid.len());
        for &theta1 in &figures.theta1_cases {
            for &beta in &grid {
                let mut cell = cfg.clone();
                cell.economy.theta1 = theta1;
                cell.economy.beta = beta;
                let bank = KernelBank::build(&cell, &tree);
                let sims: Vec<(f64, OutcomeStats)> = (0..figures.sims)
                    .into_par_iter()
                    .map(|s| {
                        let sub = tree.descend(&[purpose::REPLICATION, s as u64]);
                        let market = simulate_market(&cell, &bank, &sub)?;
                        let stats = summarize(&market.outcome, &market.dataset.education, &cell);
                        Ok((market.p_star, stats))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let count = sims.len() as f64;
                rows.push(FigureRow {
                    beta,
                    theta_case: theta1,
                    edu_share: sims.iter().map(|(_, s)| s.edu_share).sum::<f64>() / count,
                    gini: sims.iter().map(|(_, s)| s.gini).sum::<f64>() / count,
                    sort_corr: mean_opt(sims.iter().map(|(_, s)| s.sort_corr)),
                    wage_premium: mean_opt(sims.iter().map(|(_, s)| s.wage_premium)),
                    p_star: sims.iter().map(|(p, _)| p).sum::<f64>() / count,
                });
            }
        }
        let mut w = csv_with_provenance(&out_dir.join("figures.csv"), cfg, seed)?;
        w.write_record([
            "beta",
            "theta_case",
            "edu_share",
            "gini",
            "sort_corr",
            "wage_premium",
        ])?;
        for row in &rows {
            w.write_record(&[
                format!("{}", row.beta),
                format!("{}", row.theta_case),
                format!("{}", row.edu_share),
                format!("{}", row.gini),
                opt_field(row.sort_corr),
                opt_field(row.wage_premium),
            ])?;
        }
        w.flush()?;
        Ok(rows)
    })
}

/// One cell of the coverage study.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub outside: OutsideForm,
    pub production: ProductionForm,
    pub beta0: f64,
    pub n: usize,
    pub sims: usize,
    pub bootstrap_reps: usize,
    /// Fraction of successful replications whose interval covers the truth;
    /// empty when every replication failed.
    pub coverage: Option<f64>,
    /// Mean interval length over successful replications.
    pub mean_length: Option<f64>,
    pub failures: usize,
}

/// Runs the coverage/length study over specifications, true friction values,
/// and sample sizes, writing `tables.csv`.
pub fn run_tables(cfg: &Config, seed: u64, jobs: usize, out_dir: &Path) -> Result<Vec<TableRow>> {
    cfg.validate()?;
    let tables = cfg
        .tables
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [tables] section".into()))?;
    if tables.sims == 0 || tables.bootstrap_reps == 0 {
        return Err(Error::Config(
            "the tables section needs positive sims and bootstrap_reps".into(),
        ));
    }
    if tables.beta0_grid.is_empty() || tables.sample_sizes.is_empty() {
        return Err(Error::Config(
            "the tables section needs nonempty beta0_grid and sample_sizes".into(),
        ));
    }
    let theta2_true = require_tied_theta2(cfg)?;
    let contrast = cfg.inference.contrast;
    let truth = contrast[0] * cfg.economy.theta1 + contrast[1] * theta2_true;
    with_pool(jobs, || {
        let tree = SeedTree::new(seed);
        let mut rows = Vec::new();
        for (outside, production) in tables.effective_specs() {
            for &beta0 in &tables.beta0_grid {
                for &n in &tables.sample_sizes {
                    let mut cell = cfg.clone();
                    cell.economy.outside = outside;
                    cell.economy.production = production;
                    cell.economy.beta = beta0;
                    cell.economy.workers = n;
                    cell.economy.firms = n;
                    cell.inference.bootstrap_reps = tables.bootstrap_reps;
                    let bank = KernelBank::build(&cell, &tree);
                    let outcomes: Vec<Option<(bool, f64)>> = (0..tables.sims)
                        .into_par_iter()
                        .map(|r| {
                            let sub = tree.descend(&[purpose::REPLICATION, r as u64]);
                            let (data, _) = simulate_choices(&cell, &bank, &sub).ok()?;
                            let est = estimate_theta(&data, &cell, &bank).ok()?;
                            let ci = bootstrap_theta_ci(
                                est.theta,
                                &data,
                                &cell,
                                &bank,
                                &sub,
                                tables.bootstrap_reps,
                                cell.inference.alpha,
                            )
                            .ok()?;
                            Some((ci.lo <= truth && truth <= ci.hi, ci.hi - ci.lo))
                        })
                        .collect();
                    let failures = outcomes.iter().filter(|o| o.is_none()).count();
                    let succeeded: Vec<(bool, f64)> = outcomes.into_iter().flatten().collect();
                    let (coverage, mean_length) = if succeeded.is_empty() {
                        (None, None)
                    } else {
                        let count = succeeded.len() as f64;
                        (
                            Some(succeeded.iter().filter(|(c, _)| *c).count() as f64 / count),
                            Some(succeeded.iter().map(|(_, l)| l).sum::<f64>() / count),
                        )
                    };
                    rows.push(TableRow {
                        outside,
                        production,
                        beta0,
                        n,
                        sims: tables.sims,
                        bootstrap_reps: tables.bootstrap_reps,
                        coverage,
                        mean_length,
                        failures,
                    });
                }
            }
        }
        let mut w = csv_with_provenance(&out_dir.join("tables.csv"), cfg, seed)?;
        w.write_record([
            "outside",
            "production",
            "beta0",
            "n",
            "sims",
            "bootstrap_reps",
            "coverage",
            "mean_length",
            "failures",
        ])?;
        for row in &rows {
            w.write_record(&[
                spec_name(row.outside).to_string(),
                production_name(row.production).to_string(),
                format!("{}", row.beta0),
                row.n.to_string(),
                row.sims.to_string(),
                row.bootstrap_reps.to_string(),
                opt_field(row.coverage),
                opt_field(row.mean_length),
                row.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(rows)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::baseline_config;
    use tempfile::tempdir;

    fn small_config() -> Config {
        let mut cfg = baseline_config();
        cfg.economy.workers = 60;
        cfg.economy.firms = 60;
        cfg.matching.beta_draws = 120;
        cfg
    }

    #[test]
    fn simulate_writes_matched_and_worker_files() {
        let cfg = small_config();
        let dir = tempdir().unwrap();
        let summaries = run_simulate(&cfg, 11, 1, 2, dir.path()).unwrap();
        assert_eq!(summaries.len(), 2);
        for r in 0..2 {
            let matches = dir.path().join(format!("matches_{r:04}.csv"));
            let workers = dir.path().join(format!("workers_{r:04}.csv"));
            let records = read_matching_csv(&matches, &cfg).unwrap();
            assert_eq!(records.education.len(), 60);
            let x = read_covariates_csv(&workers, &cfg).unwrap();
            assert_eq!(x.rows(), 60);
            assert_eq!(x.cols(), cfg.economy.covariate_dim);
        }
        let single = tempdir().unwrap();
        run_simulate(&cfg, 11, 1, 1, single.path()).unwrap();
        assert!(single.path().join("matches.csv").exists());
        assert!(single.path().join("workers.csv").exists());
    }

    #[test]
    fn covariates_roundtrip_is_exact() {
        let cfg = small_config();
        let dir = tempdir().unwrap();
        let tree = SeedTree::new(4);
        let x = sample_covariates(17, 2, &mut tree.rng(&[purpose::COVARIATES]));
        let path = dir.path().join("workers.csv");
        write_covariates_csv(&path, &x, &cfg, 4).unwrap();
        let back = read_covariates_csv(&path, &cfg).unwrap();
        assert_eq!(back.rows(), 17);
        for i in 0..17 {
            for (a, b) in x.row(i).iter().zip(back.row(i)) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn covariates_reader_reports_line_numbers() {
        let cfg = small_config();
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# note\nworker_id,x1,x2\n0,0.5,0.5\n2,0.1,0.2\n").unwrap();
        match read_covariates_csv(&path, &cfg) {
            Err(Error::DataFormat { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected a line-numbered error, got {other:?}"),
        }
    }

    #[test]
    fn estimate_rows_cover_truth_on_most_replications() {
        let mut cfg = small_config();
        cfg.economy.workers = 300;
        cfg.economy.firms = 300;
        cfg.inference.bootstrap_reps = 40;
        let dir = tempdir().unwrap();
        let rows = run_estimate(&cfg, 21, 0, 3, dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        let covered = rows.iter().filter(|r| r.covered == Some(true)).count();
        assert!(covered >= 2, "{covered} of 3 intervals covered the truth");
        let text = std::fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        assert!(text.starts_with("# labormatch"));
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("replication,theta1_hat"));
        assert_eq!(text.lines().count(), 2 + 3);
    }

    #[test]
    fn figures_rows_cover_the_grid_in_order() {
        let mut cfg = small_config();
        cfg.figures = Some(crate::config::FiguresConfig {
            theta1_cases: [1.0, 3.0],
            beta_grid: vec![0.0, 2.0],
            sims: 4,
        });
        let dir = tempdir().unwrap();
        let rows = run_figures(&cfg, 31, 0, dir.path()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(
            rows.iter()
                .map(|r| (r.theta_case, r.beta))
                .collect::<Vec<_>>(),
            vec![(1.0, 0.0), (1.0, 2.0), (3.0, 0.0), (3.0, 2.0)]
        );
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.edu_share));
            assert!((0.0..=1.0).contains(&row.p_star));
            assert!(row.gini >= 0.0);
        }
        assert!(dir.path().join("figures.csv").exists());
    }

    #[test]
    fn tables_emit_one_row_per_cell() {
        let mut cfg = small_config();
        cfg.economy.workers = 120;
        cfg.economy.firms = 120;
        cfg.tables = Some(crate::config::TablesConfig {
            beta0_grid: vec![0.0],
            sample_sizes: vec![120],
            sims: 3,
            bootstrap_reps: 25,
            specs: vec![(OutsideForm::ExpInteraction, ProductionForm::Multiplicative)],
        });
        let dir = tempdir().unwrap();
        let rows = run_tables(&cfg, 41, 0, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.n, 120);
        assert_eq!(row.failures, 0, "replications failed");
        assert!(row.coverage.is_some() && row.mean_length.is_some());
        assert!(row.mean_length.unwrap() > 0.0);
        let text = std::fs::read_to_string(dir.path().join("tables.csv")).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("outside,production,beta0"));
    }

    #[test]
    fn confint_known_theta_accepts_truth_with_synthetic_data() {
        let mut cfg = small_config();
        cfg.economy.workers = 100;
        cfg.economy.firms = 100;
        cfg.economy.beta = 1.0;
        cfg.inference.beta_grid = vec![0.0, 1.0, 8.0];
        cfg.inference.mc_sims = 49;
        let dir = tempdir().unwrap();
        let reps = run_confint(&cfg, 51, 0, 1, dir.path(), None, true).unwrap();
        assert_eq!(reps.len(), 1);
        assert_eq!(reps[0].rows.len(), 3);
        assert!(
            reps[0].covers(1.0),
            "true friction rejected: {:?}",
            reps[0].rows
        );
        let text = std::fs::read_to_string(dir.path().join("confint.csv")).unwrap();
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("beta,t_obs,critical,accepted"));
        assert!(dir.path().join("region.csv").exists());
    }

    #[test]
    fn confint_reads_observed_data_back() {
        let mut cfg = small_config();
        cfg.economy.workers = 80;
        cfg.economy.firms = 80;
        cfg.economy.beta = 0.5;
        cfg.inference.beta_grid = vec![0.5];
        cfg.inference.mc_sims = 19;
        let dir = tempdir().unwrap();
        run_simulate(&cfg, 61, 0, 1, dir.path()).unwrap();
        let data = ConfintData {
            matches: dir.path().join("matches.csv"),
            covariates: dir.path().join("workers.csv"),
        };
        let out = tempdir().unwrap();
        let reps = run_confint(&cfg, 61, 0, 5, out.path(), Some(&data), true).unwrap();
        assert_eq!(reps.len(), 1, "observed data runs exactly once");
        assert!(out.path().join("confint.csv").exists());
    }

    #[test]
    fn quick_scale_caps_replication_counts() {
        let mut cfg = small_config();
        cfg.inference.bootstrap_reps = 200;
        cfg.figures = Some(crate::config::FiguresConfig {
            theta1_cases: [1.0, 3.0],
            beta_grid: Vec::new(),
            sims: 500,
        });
        cfg.tables = Some(crate::config::TablesConfig {
            beta0_grid: vec![0.0],
            sample_sizes: vec![500, 1000],
            sims: 500,
            bootstrap_reps: 200,
            specs: Vec::new(),
        });
        Scale::Quick.apply(&mut cfg);
        assert_eq!(cfg.inference.bootstrap_reps, 100);
        assert_eq!(cfg.figures.as_ref().unwrap().sims, 100);
        let tables = cfg.tables.as_ref().unwrap();
        assert_eq!((tables.sims, tables.bootstrap_reps), (100, 100));
        assert_eq!(tables.sample_sizes, vec![250]);
        let mut tiny = cfg.clone();
        tiny.tables.as_mut().unwrap().sample_sizes = vec![80];
        Scale::Quick.apply(&mut tiny);
        assert_eq!(tiny.tables.as_ref().unwrap().sample_sizes, vec![80]);
        let mut untouched = small_config();
        let before = toml::to_string(&untouched).unwrap();
        Scale::Paper.apply(&mut untouched);
        assert_eq!(toml::to_string(&untouched).unwrap(), before);
    }

    #[test]
    fn byte_identical_outputs_across_worker_counts() {
        let mut cfg = small_config();
        cfg.economy.workers = 50;
        cfg.economy.firms = 50;
        cfg.figures = Some(crate::config::FiguresConfig {
            theta1_cases: [1.0, 3.0],
            beta_grid: vec![0.0, 1.0],
            sims: 6,
        });
        let dir1 = tempdir().unwrap();
        let dir8 = tempdir().unwrap();
        run_figures(&cfg, 71, 1, dir1.path()).unwrap();
        run_figures(&cfg, 71, 8, dir8.path()).unwrap();
        let a = std::fs::read(dir1.path().join("figures.csv")).unwrap();
        let b = std::fs::read(dir8.path().join("figures.csv")).unwrap();
        assert_eq!(a, b, "figures.csv differs between 1 and 8 workers");
    }
}
