//! Symmetric Bayesian equilibrium of the schooling game.
//!
//! Each worker weighs the expected wage at each education level against the
//! other; with extreme-value taste shocks the choice probability is a logit
//! in the expected-wage gap. The gap depends on everyone else's choices only
//! through the high-education share p, giving a scalar fixed-point problem
//! p = mean_i Lambda(Delta(x_i; p)) solved by damped iteration.

use crate::config::Config;
use crate::matchprob::{expected_production, CaseTable, MatchProbTable};
use crate::model::{logistic, outside_option, Matrix};
use crate::rng::SeedTree;
use crate::{Error, Result};
use rand::Rng;
use std::path::Path;

/// Optional schooling cost c(h, x), subtracted from the value of choosing h.
/// The default model has no cost term.
pub type CostFn<'a> = &'a (dyn Fn(f64, &[f64]) -> f64 + Sync);

/// Expected-wage gap between choosing high and low education for a worker
/// with covariates `x`, when matching follows `table`.
pub fn utility_gap(x: &[f64], table: &MatchProbTable, cfg: &Config, cost: Option<CostFn>) -> f64 {
    let econ = &cfg.economy;
    let fbar = [
        expected_production(0, table, cfg),
        expected_production(1, table, cfg),
    ];
    let g_hi = outside_option(econ.edu_high(), x, econ);
    let g_lo = outside_option(econ.edu_low(), x, econ);
    let cost_gap = cost.map_or(0.0, |c| c(econ.edu_high(), x) - c(econ.edu_low(), x));
    econ.tau * (fbar[1] - fbar[0]) + (1.0 - econ.tau) * (g_hi - g_lo) - cost_gap
}

/// Solved equilibrium with its convergence record and the local uniqueness
/// diagnostic at the solution.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    /// Fixed-point high-education share.
    pub p_star: f64,
    /// Per-worker high-education choice probabilities at the fixed point.
    pub psi_star: Vec<f64>,
    pub iterations: usize,
    /// |mean psi(p_star) - p_star|.
    pub residual: f64,
    /// (iteration, p, residual) visited during the solve.
    pub trace: Vec<(usize, f64, f64)>,
    /// Per-opponent best-response slope at the solution.
    pub phi: f64,
    /// log10 |det(I - J)| of the strategic Jacobian at the solution.
    pub log10_abs_det: f64,
    /// False when the Jacobian diagnostic is near-singular, in which case
    /// other equilibria may exist nearby.
    pub unique_flag: bool,
}

/// Per-worker covariate terms of the wage gap, fixed across iterations.
fn worker_terms(covariates: &Matrix, cfg: &Config, cost: Option<CostFn>) -> Vec<f64> {
    let econ = &cfg.economy;
    (0..covariates.rows())
        .map(|i| {
            let x = covariates.row(i);
            let g_gap =
                outside_option(econ.edu_high(), x, econ) - outside_option(econ.edu_low(), x, econ);
            let cost_gap = cost.map_or(0.0, |c| c(econ.edu_high(), x) - c(econ.edu_low(), x));
            (1.0 - econ.tau) * g_gap - cost_gap
        })
        .collect()
}

/// Production side of the gap, common to all workers at a given share.
fn base_gap(table: &MatchProbTable, cfg: &Config) -> f64 {
    cfg.economy.tau * (expected_production(1, table, cfg) - expected_production(0, table, cfg))
}

fn mean_psi(base: f64, terms: &[f64]) -> (f64, Vec<f64>) {
    let psi: Vec<f64> = terms.iter().map(|&w| logistic(base + w)).collect();
    let mean = psi.iter().sum::<f64>() / psi.len() as f64;
    (mean, psi)
}

/// One application of the aggregate best-response map at share `p`.
pub fn best_response(
    p: f64,
    covariates: &Matrix,
    case: &CaseTable,
    cfg: &Config,
    cost: Option<CostFn>,
) -> (f64, Vec<f64>) {
    let terms = worker_terms(covariates, cfg, cost);
    let table = case.pi(p);
    mean_psi(base_gap(&table, cfg), &terms)
}

/// Solves the fixed point by damped iteration from `p0`, reusing a prebuilt
/// case table. Fails with the visited trajectory when the iteration budget
/// runs out.
pub fn solve_with_table(
    covariates: &Matrix,
    case: &CaseTable,
    cfg: &Config,
    p0: f64,
    cost: Option<CostFn>,
) -> Result<EquilibriumSolution> {
    let terms = worker_terms(covariates, cfg, cost);
    let damping = cfg.solver.damping;
    let mut p = p0.clamp(0.0, 1.0);
    let mut trace = Vec::new();
    for it in 0..cfg.solver.max_iter {
        let table = case.pi(p);
        let (psibar, psi) = mean_psi(base_gap(&table, cfg), &terms);
        let residual = (psibar - p).abs();
        trace.push((it, p, residual));
        if residual < cfg.solver.tol {
            let (phi, log10_abs_det, unique_flag) =
                jacobian_diagnostic(p, covariates.rows(), case, cfg, &psi, &terms);
            return Ok(EquilibriumSolution {
                p_star: p,
                psi_star: psi,
                iterations: it + 1,
                residual,
                trace,
                phi,
                log10_abs_det,
                unique_flag,
            });
        }
        p = (1.0 - damping) * p + damping * psibar;
    }
    Err(Error::NoConvergence {
        max_iter: cfg.solver.max_iter,
        residual: trace.last().map_or(f64::NAN, |t| t.2),
        trajectory: trace.iter().map(|t| t.1).collect(),
    })
}

/// Builds the case table for the split and solves from `p0`.
pub fn solve_fixed_point(
    covariates: &Matrix,
    split: &crate::model::FirmPreferenceSplit,
    cfg: &Config,
    tree: &SeedTree,
    p0: f64,
    cost: Option<CostFn>,
) -> Result<EquilibriumSolution> {
    let case = CaseTable::build(split, cfg, tree);
    solve_with_table(covariates, &case, cfg, p0, cost)
}

/// Slope diagnostic at share `p`: each worker's choice probability responds
/// to any one opponent's strategy with slope phi = (d psibar / dp) / (n-1).
/// The strategic Jacobian J has zeros on the diagonal and phi elsewhere, so
/// det(I - J) = (1 - (n-1) phi) (1 + phi)^(n-1); a near-zero factor flags
/// possible multiplicity.
fn jacobian_diagnostic(
    p: f64,
    n: usize,
    case: &CaseTable,
    cfg: &Config,
    psi: &[f64],
    terms: &[f64],
) -> (f64, f64, bool) {
    let econ = &cfg.economy;
    // d base_gap / dp from the analytic table derivative.
    let m_types = econ.n_types();
    let dpi = case.dpi_dp(p);
    let mut dfbar = [0.0; 2];
    for j in 0..2 {
        let h = econ.edu_value(j);
        for m in 0..m_types {
            dfbar[j] +=
                dpi[j * m_types + m] * crate::model::production(h, econ.capital_support[m], econ);
        }
    }
    let dbase = econ.tau * (dfbar[1] - dfbar[0]);
    // d psibar / dp = mean Lambda'(Delta_i) * dbase; Lambda' = psi(1-psi).
    let dpsibar = psi
        .iter()
        .zip(terms)
        .map(|(&s, _)| s * (1.0 - s) * dbase)
        .sum::<f64>()
        / n as f64;
    let phi = dpsibar / (n as f64 - 1.0);
    let log10_abs_det =
        (1.0 - (n as f64 - 1.0) * phi).abs().log10() + (n as f64 - 1.0) * (1.0 + phi).abs().log10();
    let near_singular = (phi - 1.0 / (n as f64 - 1.0)).abs() < 1e-6 || (phi + 1.0).abs() < 1e-6;
    (phi, log10_abs_det, !near_singular)
}

/// One row of a grid scan of the uniqueness diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosticPoint {
    pub p: f64,
    pub phi: f64,
    pub log10_abs_det: f64,
    pub near_singular: bool,
}

/// Evaluates the Jacobian diagnostic on a share grid, independent of whether
/// each point is an equilibrium.
pub fn uniqueness_diagnostic(
    p_grid: &[f64],
    covariates: &Matrix,
    case: &CaseTable,
    cfg: &Config,
    cost: Option<CostFn>,
) -> Vec<DiagnosticPoint> {
    let terms = worker_terms(covariates, cfg, cost);
    p_grid
        .iter()
        .map(|&p| {
            let table = case.pi(p);
            let (_, psi) = mean_psi(base_gap(&table, cfg), &terms);
            let (phi, log10_abs_det, unique) =
                jacobian_diagnostic(p, covariates.rows(), case, cfg, &psi, &terms);
            DiagnosticPoint {
                p,
                phi,
                log10_abs_det,
                near_singular: !unique,
            }
        })
        .collect()
}

/// Draws an education level for each worker from their equilibrium choice
/// probability: high when the uniform draw falls below psi_i.
pub fn sample_actions(psi: &[f64], cfg: &Config, rng: &mut impl Rng) -> Vec<f64> {
    let econ = &cfg.economy;
    psi.iter()
        .map(|&s| {
            if rng.gen::<f64>() < s {
                econ.edu_high()
            } else {
                econ.edu_low()
            }
        })
        .collect()
}

/// Writes the solver trace as CSV (iteration, p, residual) with the
/// provenance comment line.
pub fn write_trace_csv(
    path: &Path,
    solution: &EquilibriumSolution,
    cfg: &Config,
    seed: u64,
) -> Result<()> {
    let mut w = crate::report::csv_with_provenance(path, cfg, seed)?;
    w.write_record(["iteration", "p", "residual"])?;
    for &(it, p, r) in &solution.trace {
        w.write_record(&[it.to_string(), format!("{p}"), format!("{r}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::baseline_config;
    use crate::model::{sample_covariates, split_with_cut};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_config(n: usize, beta: f64) -> Config {
        let mut cfg = baseline_config();
        cfg.economy.workers = n;
        cfg.economy.firms = n;
        cfg.economy.beta = beta;
        cfg.economy.covariate_dim = 3;
        cfg.economy.theta2 = vec![-0.75, 0.25, 0.5];
        cfg
    }

    fn covariates(cfg: &Config, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_covariates(cfg.economy.workers, cfg.economy.covariate_dim, &mut rng)
    }

    #[test]
    fn solver_reaches_fixed_point() {
        let cfg = test_config(40, 1.0);
        let tree = SeedTree::new(5);
        let xs = covariates(&cfg, 1);
        let split = split_with_cut(&cfg.economy, 2);
        let sol = solve_fixed_point(&xs, &split, &cfg, &tree, 0.5, None).unwrap();
        assert!(sol.residual <= cfg.solver.tol);
        assert!(sol.p_star > 0.0 && sol.p_star < 1.0);
        assert_eq!(sol.psi_star.len(), 40);
        assert!(sol.psi_star.iter().all(|&s| (0.0..=1.0).contains(&s)));
        // The share is the mean choice probability at the fixed point.
        let mean: f64 = sol.psi_star.iter().sum::<f64>() / 40.0;
        assert!((mean - sol.p_star).abs() <= cfg.solver.tol);
        assert!(sol.unique_flag);
        assert!(sol.log10_abs_det.is_finite());
    }

    #[test]
    fn start_invariance() {
        let cfg = test_config(30, 2.0);
        let tree = SeedTree::new(6);
        let xs = covariates(&cfg, 2);
        let split = split_with_cut(&cfg.economy, 2);
        let case = CaseTable::build(&split, &cfg, &tree);
        let mut stars = Vec::new();
        for &p0 in &[0.05, 0.3, 0.5, 0.7, 0.95] {
            let sol = solve_with_table(&xs, &case, &cfg, p0, None).unwrap();
            stars.push(sol.p_star);
        }
        for w in stars.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-6, "starts disagree: {:?}", stars);
        }
    }

    #[test]
    fn higher_production_scale_raises_schooling() {
        let tree = SeedTree::new(7);
        let mut shares = Vec::new();
        for &theta1 in &[1.0, 3.0] {
            let mut cfg = test_config(50, 2.0);
            cfg.economy.theta1 = theta1;
            let xs = covariates(&cfg, 3);
            let split = split_with_cut(&cfg.economy, 2);
            let sol = solve_fixed_point(&xs, &split, &cfg, &tree, 0.5, None).unwrap();
            shares.push(sol.p_star);
        }
        assert!(
            shares[1] > shares[0],
            "p* should rise with theta1: {shares:?}"
        );
    }

    #[test]
    fn cost_hook_lowers_schooling() {
        let cfg = test_config(30, 1.0);
        let tree = SeedTree::new(8);
        let xs = covariates(&cfg, 4);
        let split = split_with_cut(&cfg.economy, 2);
        let free = solve_fixed_point(&xs, &split, &cfg, &tree, 0.5, None).unwrap();
        let costly: CostFn = &|h, _x| if h > 1.5 { 0.8 } else { 0.0 };
        let taxed = solve_fixed_point(&xs, &split, &cfg, &tree, 0.5, Some(costly)).unwrap();
        assert!(taxed.p_star < free.p_star);
    }

    #[test]
    fn utility_gap_matches_internal_terms() {
        let cfg = test_config(20, 1.5);
        let tree = SeedTree::new(9);
        let xs = covariates(&cfg, 5);
        let split = split_with_cut(&cfg.economy, 2);
        let case = CaseTable::build(&split, &cfg, &tree);
        let table = case.pi(0.4);
        let terms = worker_terms(&xs, &cfg, None);
        let base = base_gap(&table, &cfg);
        for i in 0..xs.rows() {
            let direct = utility_gap(xs.row(i), &table, &cfg, None);
            assert!((direct - (base + terms[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn determinant_formula_matches_dense_determinant() {
        // det(I - J) for J with zero diagonal and constant phi off-diagonal,
        // checked against Gaussian elimination at n = 5.
        let n = 5;
        let phi = 0.137;
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j { 1.0 } else { -phi };
            }
        }
        // Gaussian elimination determinant.
        let mut det = 1.0;
        for col in 0..n {
            let pivot = a[col][col];
            det *= pivot;
            for r in col + 1..n {
                let factor = a[r][col] / pivot;
                for c in col..n {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
        let formula = (1.0 - (n as f64 - 1.0) * phi) * (1.0 + phi).powi(n as i32 - 1);
        assert!((det - formula).abs() < 1e-12);
    }

    #[test]
    fn diagnostic_grid_reports_finite_values() {
        let cfg = test_config(25, 1.0);
        let tree = SeedTree::new(10);
        let xs = covariates(&cfg, 6);
        let split = split_with_cut(&cfg.economy, 2);
        let case = CaseTable::build(&split, &cfg, &tree);
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let points = uniqueness_diagnostic(&grid, &xs, &case, &cfg, None);
        assert_eq!(points.len(), 11);
        for pt in &points {
            assert!(pt.phi.is_finite());
            assert!(pt.log10_abs_det.is_finite());
            // Logit slopes are tiny at these scales; the diagnostic should
            // be comfortably regular.
            assert!(!pt.near_singular);
        }
    }

    #[test]
    fn sampled_actions_track_probabilities() {
        let cfg = test_config(10, 0.0);
        let psi = vec![0.0, 1.0, 0.25, 0.5, 0.75, 0.1, 0.9, 0.5, 0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut high_counts = vec![0usize; 10];
        let reps = 20_000;
        for _ in 0..reps {
            let actions = sample_actions(&psi, &cfg, &mut rng);
            for (i, &a) in actions.iter().enumerate() {
                assert!(a == 1.0 || a == 2.0);
                if a == 2.0 {
                    high_counts[i] += 1;
                }
            }
        }
        assert_eq!(high_counts[0], 0);
        assert_eq!(high_counts[1], reps);
        for i in 2..10 {
            let share = high_counts[i] as f64 / reps as f64;
            assert!((share - psi[i]).abs() < 0.02, "worker {i}: {share}");
        }
    }

    #[test]
    fn failure_carries_trajectory() {
        let mut cfg = test_config(15, 1.0);
        cfg.solver.max_iter = 2;
        cfg.solver.tol = 1e-15;
        let tree = SeedTree::new(11);
        let xs = covariates(&cfg, 7);
        let split = split_with_cut(&cfg.economy, 2);
        match solve_fixed_point(&xs, &split, &cfg, &tree, 0.0, None) {
            Err(Error::NoConvergence {
                max_iter,
                trajectory,
                ..
            }) => {
                assert_eq!(max_iter, 2);
                assert_eq!(trajectory.len(), 2);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_is_written() {
        let cfg = test_config(20, 1.0);
        let tree = SeedTree::new(12);
        let xs = covariates(&cfg, 8);
        let split = split_with_cut(&cfg.economy, 2);
        let sol = solve_fixed_point(&xs, &split, &cfg, &tree, 0.5, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &sol, &cfg, 99).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# labormatch"));
        assert!(text.contains("iteration,p,residual"));
        assert_eq!(text.lines().count(), 2 + sol.trace.len());
    }
}
