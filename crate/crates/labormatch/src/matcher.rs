//! Serial-dictatorship matching simulator and outcome statistics.
//!
//! Firms observe a noisy index v = beta * K + eta of their own capital and
//! pick workers in descending index order, each taking a uniformly random
//! worker from the education pool it prefers, falling back to the other pool
//! when the preferred one is empty. Wages then follow the bargaining split.

use crate::config::{Config, EconomyConfig};
use crate::model::{bargain_payoffs, FirmPreferenceSplit, Matrix};
use crate::rng::{purpose, SeedTree};
use crate::{Error, Result};
use rand::Rng;
use std::io::BufRead;
use std::path::Path;

/// Realized assignment of one simulated market.
#[derive(Debug, Clone)]
pub struct MatchingOutcome {
    /// Firm matched to each worker.
    pub firm_of_worker: Vec<usize>,
    /// Capital type of each worker's firm.
    pub matched_type: Vec<usize>,
    /// Capital type of each firm.
    pub firm_types: Vec<usize>,
    /// Noisy capital index of each firm.
    pub v_index: Vec<f64>,
    /// Per-worker wages; empty until [`assign_wages`] runs.
    pub wages: Vec<f64>,
    /// Per-firm profits, aligned with `firm_types`; empty until wages are set.
    pub profits: Vec<f64>,
}

impl MatchingOutcome {
    pub fn matched_capital(&self, cfg: &EconomyConfig) -> Vec<f64> {
        self.matched_type
            .iter()
            .map(|&m| cfg.capital_support[m])
            .collect()
    }
}

/// Fixed per-type firm counts: largest-remainder rounding of n * q_m, ties
/// by type index.
pub fn deterministic_type_counts(econ: &EconomyConfig) -> Vec<usize> {
    let n = econ.firms;
    let mut counts: Vec<usize> = econ
        .capital_mass
        .iter()
        .map(|&q| (q * n as f64).floor() as usize)
        .collect();
    let mut remainder = n - counts.iter().sum::<usize>();
    let mut frac: Vec<(usize, f64)> = econ
        .capital_mass
        .iter()
        .enumerate()
        .map(|(m, &q)| (m, q * n as f64 - (q * n as f64).floor()))
        .collect();
    frac.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(m, _) in frac.iter() {
        if remainder == 0 {
            break;
        }
        counts[m] += 1;
        remainder -= 1;
    }
    counts
}

/// Firm capital types: iid from the prior mass, or fixed counts (largest
/// remainder rounding of n * q_m) when the config asks for deterministic
/// composition.
pub fn draw_firm_types(cfg: &Config, rng: &mut impl Rng) -> Vec<usize> {
    let econ = &cfg.economy;
    let n = econ.firms;
    if cfg.matching.deterministic_capital_counts {
        let counts = deterministic_type_counts(econ);
        let mut types = Vec::with_capacity(n);
        for (m, &c) in counts.iter().enumerate() {
            types.extend(std::iter::repeat(m).take(c));
        }
        return types;
    }
    let mut cum = Vec::with_capacity(econ.n_types());
    let mut acc = 0.0;
    for &q in &econ.capital_mass {
        acc += q;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            cum.iter()
                .position(|&c| u < c)
                .unwrap_or(econ.n_types() - 1)
        })
        .collect()
}

/// Runs the serial dictatorship. `education` holds each worker's chosen
/// level (one of the two configured values). The generator is consumed in a
/// fixed order: one index shock per firm in firm order, then one pool pick
/// per firm in descending index order, so identical seeds reproduce the
/// assignment exactly. Wages are left empty.
pub fn simulate_matching(
    education: &[f64],
    firm_types: &[usize],
    split: &FirmPreferenceSplit,
    cfg: &Config,
    rng: &mut impl Rng,
) -> MatchingOutcome {
    let econ = &cfg.economy;
    let n = econ.workers;
    assert_eq!(education.len(), n, "education length mismatch");
    assert_eq!(firm_types.len(), econ.firms, "firm type length mismatch");

    let v_index: Vec<f64> = firm_types
        .iter()
        .map(|&m| {
            let eta: f64 = rng.sample(rand_distr::StandardNormal);
            econ.beta * econ.capital_support[m] + econ.sigma * eta
        })
        .collect();

    // Descending index, firm number breaking exact ties.
    let mut order: Vec<usize> = (0..econ.firms).collect();
    order.sort_by(|&a, &b| v_index[b].partial_cmp(&v_index[a]).unwrap().then(a.cmp(&b)));

    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &h) in education.iter().enumerate() {
        let class = usize::from(h == econ.edu_high());
        pools[class].push(i);
    }

    let mut firm_of_worker = vec![usize::MAX; n];
    let mut matched_type = vec![usize::MAX; n];
    for &f in &order {
        let wants = usize::from(split.prefers_high_type(firm_types[f]));
        let class = if pools[wants].is_empty() {
            1 - wants
        } else {
            wants
        };
        let pick = rng.gen_range(0..pools[class].len());
        let worker = pools[class].swap_remove(pick);
        firm_of_worker[worker] = f;
        matched_type[worker] = firm_types[f];
    }

    MatchingOutcome {
        firm_of_worker,
        matched_type,
        firm_types: firm_types.to_vec(),
        v_index,
        wages: Vec::new(),
        profits: Vec::new(),
    }
}

/// Fills wages and profits from the bargaining split.
pub fn assign_wages(
    outcome: &mut MatchingOutcome,
    education: &[f64],
    covariates: &Matrix,
    cfg: &Config,
) {
    let econ = &cfg.economy;
    let n = education.len();
    let mut wages = vec![0.0; n];
    let mut profits = vec![0.0; outcome.firm_types.len()];
    for i in 0..n {
        let k = econ.capital_support[outcome.matched_type[i]];
        let p = bargain_payoffs(education[i], k, covariates.row(i), econ);
        wages[i] = p.wage;
        profits[outcome.firm_of_worker[i]] = p.profit;
    }
    outcome.wages = wages;
    outcome.profits = profits;
}

/// Draws firm types, matches, and assigns wages in one pass.
pub fn simulate_economy(
    education: &[f64],
    covariates: &Matrix,
    split: &FirmPreferenceSplit,
    cfg: &Config,
    rng: &mut impl Rng,
) -> MatchingOutcome {
    let firm_types = draw_firm_types(cfg, rng);
    let mut outcome = simulate_matching(education, &firm_types, split, cfg, rng);
    assign_wages(&mut outcome, education, covariates, cfg);
    outcome
}

/// Gini coefficient of nonnegative values, by the sorted-rank identity.
/// Returns 0 for empty input or a zero total.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &w)| (i + 1) as f64 * w)
        .sum();
    let nf = n as f64;
    (2.0 * weighted - (nf + 1.0) * total) / (nf * total)
}

/// Summary statistics of one simulated market.
#[derive(Debug, Clone)]
pub struct OutcomeStats {
    /// Fraction of workers at the high education level.
    pub edu_share: f64,
    pub gini: f64,
    /// Pearson correlation of education and matched capital; missing when
    /// either variable is degenerate.
    pub sort_corr: Option<f64>,
    /// Mean wage difference, high minus low education; missing when a class
    /// is empty.
    pub wage_premium: Option<f64>,
    /// Joint education-by-type shares, entry [j * M + m], summing to 1.
    pub contingency: Vec<f64>,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Computes all outcome statistics. Requires wages to be assigned.
pub fn summarize(outcome: &MatchingOutcome, education: &[f64], cfg: &Config) -> OutcomeStats {
    let econ = &cfg.economy;
    let n = education.len();
    assert!(!outcome.wages.is_empty(), "assign wages before summarizing");
    let high = econ.edu_high();
    let n_high = education.iter().filter(|&&h| h == high).count();
    let capital = outcome.matched_capital(econ);
    let m_types = econ.n_types();

    let mut contingency = vec![0.0; 2 * m_types];
    for i in 0..n {
        let j = usize::from(education[i] == high);
        contingency[j * m_types + outcome.matched_type[i]] += 1.0 / n as f64;
    }

    let wage_premium = if n_high == 0 || n_high == n {
        None
    } else {
        let (mut sum_hi, mut sum_lo) = (0.0, 0.0);
        for i in 0..n {
            if education[i] == high {
                sum_hi += outcome.wages[i];
            } else {
                sum_lo += outcome.wages[i];
            }
        }
        Some(sum_hi / n_high as f64 - sum_lo / (n - n_high) as f64)
    };

    OutcomeStats {
        edu_share: n_high as f64 / n as f64,
        gini: gini(&outcome.wages),
        sort_corr: pearson(education, &capital),
        wage_premium,
        contingency,
    }
}

/// Joint (education class, matched type) shares of a dataset, layout
/// [j * M + m], summing to 1.
pub fn contingency_shares(education: &[f64], matched_type: &[usize], cfg: &Config) -> Vec<f64> {
    let econ = &cfg.economy;
    let m_types = econ.n_types();
    let n = education.len();
    assert_eq!(matched_type.len(), n);
    let mut shares = vec![0.0; 2 * m_types];
    for i in 0..n {
        let j = usize::from(education[i] == econ.edu_high());
        shares[j * m_types + matched_type[i]] += 1.0 / n as f64;
    }
    shares
}

/// Monte Carlo estimate of the per-class type-match distribution: education
/// is drawn Bernoulli(p_high), firm types from the prior, and matches are
/// tallied by (class, type). Columns are conditional on class and normalized
/// by realized class counts. This is the simulation oracle the analytic
/// tables are validated against.
pub fn simulated_match_frequencies(
    split: &FirmPreferenceSplit,
    p_high: f64,
    cfg: &Config,
    reps: usize,
    tree: &SeedTree,
) -> Vec<f64> {
    let econ = &cfg.economy;
    let n = econ.workers;
    let m_types = econ.n_types();
    let mut counts = vec![0.0; 2 * m_types];
    let mut class_totals = [0.0; 2];
    for rep in 0..reps {
        let mut rng = tree.rng(&[purpose::MC_SIM, rep as u64]);
        let education: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < p_high {
                    econ.edu_high()
                } else {
                    econ.edu_low()
                }
            })
            .collect();
        let firm_types = draw_firm_types(cfg, &mut rng);
        let outcome = simulate_matching(&education, &firm_types, split, cfg, &mut rng);
        for i in 0..n {
            let j = usize::from(education[i] == econ.edu_high());
            counts[j * m_types + outcome.matched_type[i]] += 1.0;
            class_totals[j] += 1.0;
        }
    }
    for j in 0..2 {
        if class_totals[j] > 0.0 {
            for m in 0..m_types {
                counts[j * m_types + m] /= class_totals[j];
            }
        }
    }
    counts
}

/// Writes the assignment as CSV with a provenance comment line:
/// worker_id, education, firm_id, capital, wage.
pub fn write_matching_csv(
    path: &Path,
    outcome: &MatchingOutcome,
    education: &[f64],
    cfg: &Config,
    seed: u64,
) -> Result<()> {
    let capital = outcome.matched_capital(&cfg.economy);
    let mut w = crate::report::csv_with_provenance(path, cfg, seed)?;
    w.write_record(["worker_id", "education", "firm_id", "capital", "wage"])?;
    for i in 0..education.len() {
        w.write_record(&[
            i.to_string(),
            format!("{}", education[i]),
            outcome.firm_of_worker[i].to_string(),
            format!("{}", capital[i]),
            format!("{}", outcome.wages[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A dataset read back from the matcher CSV format.
#[derive(Debug, Clone)]
pub struct MatchingRecords {
    pub education: Vec<f64>,
    pub firm_id: Vec<usize>,
    /// Capital type index, recovered by matching values to the support.
    pub matched_type: Vec<usize>,
    pub wages: Vec<f64>,
}

/// Reads the matcher CSV format back, with line-numbered errors. Capital
/// values must match the configured support within 1e-9.
pub fn read_matching_csv(path: &Path, cfg: &Config) -> Result<MatchingRecords> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::DataFormat {
        path: name.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    let reader = std::io::BufReader::new(file);
    let econ = &cfg.economy;
    let mut records = MatchingRecords {
        education: Vec::new(),
        firm_id: Vec::new(),
        matched_type: Vec::new(),
        wages: Vec::new(),
    };
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
            if !trimmed.starts_with("worker_id") {
                return Err(Error::DataFormat {
                    path: name,
                    line: line_no,
                    msg: "expected header worker_id,education,firm_id,capital,wage".into(),
                });
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::DataFormat {
                path: name,
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::DataFormat {
                path: name.clone(),
                line: line_no,
                msg: format!("cannot parse {what} value {s:?}"),
            })
        };
        let education = parse(fields[1], "education")?;
        if education != econ.edu_low() && education != econ.edu_high() {
            return Err(Error::DataFormat {
                path: name,
                line: line_no,
                msg: format!("education {education} is not a configured level"),
            });
        }
        let firm_id = fields[2].parse::<usize>().map_err(|_| Error::DataFormat {
            path: name.clone(),
            line: line_no,
            msg: format!("cannot parse firm_id value {:?}", fields[2]),
        })?;
        let capital = parse(fields[3], "capital")?;
        let matched_type = econ
            .capital_support
            .iter()
            .position(|&k| (k - capital).abs() < 1e-9)
            .ok_or_else(|| Error::DataFormat {
                path: name.clone(),
                line: line_no,
                msg: format!("capital {capital} is not in the configured support"),
            })?;
        let wage = parse(fields[4], "wage")?;
        records.education.push(education);
        records.firm_id.push(firm_id);
        records.matched_type.push(matched_type);
        records.wages.push(wage);
    }
    if records.education.is_empty() {
        return Err(Error::DataFormat {
            path: name,
            line: 0,
            msg: "no data rows".into(),
        });
    }
    Ok(records)
}
