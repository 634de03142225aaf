//! Analytic matching probabilities.
//!
//! Conditional on how many of the other workers share a worker's education
//! class and how many firms prefer that class, the probability of being
//! matched to each capital type reduces to order-statistic exceedance
//! probabilities of the firms' noisy capital indices (normal mixtures over
//! the relevant type posterior). Marginalizing those counts over their
//! binomial distributions gives the unconditional type-match distribution
//! that both the equilibrium map and the likelihood are built on.
//!
//! Count grids: for large markets the binomial counts are collapsed onto an
//! integer node grid, each node absorbing the probability mass of the counts
//! nearest to it. This keeps columns exactly stochastic while shrinking the
//! kernel table from O(n^2) to O(nodes^2) entries.

use crate::config::Config;
use crate::model::FirmPreferenceSplit;
use crate::orderstat::{below_prob_from_quantiles, beta_draws, threshold_quantiles, NormalMixture};
use crate::rng::SeedTree;
use statrs::function::gamma::ln_gamma;
use std::collections::HashMap;

/// Binomial probability mass, computed in log space for stability at large n.
pub fn binomial_pmf(x: usize, n: usize, p: f64) -> f64 {
    assert!(x <= n, "binomial pmf outside support");
    assert!((0.0..=1.0).contains(&p), "binomial p outside [0,1]");
    if p == 0.0 {
        return if x == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if x == n { 1.0 } else { 0.0 };
    }
    let (nf, xf) = (n as f64, x as f64);
    let ln_choose = ln_gamma(nf + 1.0) - ln_gamma(xf + 1.0) - ln_gamma(nf - xf + 1.0);
    (ln_choose + xf * p.ln() + (nf - xf) * (1.0 - p).ln()).exp()
}

/// Derivative of the binomial pmf in p, zero at the boundary values of p.
fn binomial_pmf_dp(x: usize, n: usize, p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    binomial_pmf(x, n, p) * ((x as f64 - n as f64 * p) / (p * (1.0 - p)))
}

/// Integer node grid on 0..=total. `requested` = 0 picks max(ceil(total/50), 8)
/// nodes; totals up to 64 always get the full grid, as does any request at
/// least total + 1.
pub fn support_nodes(total: usize, requested: usize) -> Vec<usize> {
    let auto = ((total as f64 / 50.0).ceil() as usize).max(8);
    let count = if requested == 0 { auto } else { requested };
    if total <= 64 || count >= total + 1 {
        return (0..=total).collect();
    }
    let count = count.max(2);
    let mut nodes: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * (total as f64) / (count as f64 - 1.0)).round() as usize)
        .collect();
    nodes.dedup();
    nodes
}

/// Binomial(total, p) mass aggregated onto the node grid: each node receives
/// the mass of every count closer to it than to its neighbors (ties split at
/// the integer midpoint). Masses sum to 1 exactly up to rounding.
pub fn node_masses(nodes: &[usize], total: usize, p: f64) -> Vec<f64> {
    node_masses_by(nodes, total, |x| binomial_pmf(x, total, p))
}

fn node_masses_dp(nodes: &[usize], total: usize, p: f64) -> Vec<f64> {
    node_masses_by(nodes, total, |x| binomial_pmf_dp(x, total, p))
}

fn node_masses_by(nodes: &[usize], total: usize, pmf: impl Fn(usize) -> f64) -> Vec<f64> {
    assert!(!nodes.is_empty() && *nodes.last().unwrap() <= total);
    debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]), "nodes must increase");
    let mut masses = vec![0.0; nodes.len()];
    let mut lo = 0usize;
    for (l, &node) in nodes.iter().enumerate() {
        let hi = if l + 1 < nodes.len() {
            (node + nodes[l + 1]) / 2
        } else {
            total
        };
        for x in lo..=hi {
            masses[l] += pmf(x);
        }
        lo = hi + 1;
    }
    masses
}

/// Order-statistic machinery for one education class under one preference
/// case: which types prefer the class, their posteriors, and the signal
/// mixtures, with threshold quantiles cached per (side, rank, sample size).
struct ClassKernel<'a> {
    beta: f64,
    sigma: f64,
    n: usize,
    support: &'a [f64],
    plus_types: Vec<usize>,
    minus_types: Vec<usize>,
    plus_posterior: Vec<f64>,
    minus_posterior: Vec<f64>,
    g_plus: Option<NormalMixture>,
    g_minus: Option<NormalMixture>,
    tree: SeedTree,
    draws: usize,
    quantiles: HashMap<(bool, usize, usize), Vec<f64>>,
}

impl<'a> ClassKernel<'a> {
    /// `class_high` selects which side of the split prefers this class.
    fn new(
        class_high: bool,
        split: &FirmPreferenceSplit,
        cfg: &'a Config,
        tree: &SeedTree,
    ) -> Self {
        let econ = &cfg.economy;
        let (plus_types, plus_posterior, minus_types, minus_posterior) = if class_high {
            (
                split.prefers_high.clone(),
                split.posterior_high.clone(),
                split.prefers_low.clone(),
                split.posterior_low.clone(),
            )
        } else {
            (
                split.prefers_low.clone(),
                split.posterior_low.clone(),
                split.prefers_high.clone(),
                split.posterior_high.clone(),
            )
        };
        let mixture = |types: &[usize], posterior: &[f64]| -> Option<NormalMixture> {
            if types.is_empty() {
                return None;
            }
            let means = types
                .iter()
                .map(|&m| econ.beta * econ.capital_support[m])
                .collect();
            Some(NormalMixture::new(means, econ.sigma, posterior.to_vec()))
        };
        let g_plus = mixture(&plus_types, &plus_posterior);
        let g_minus = mixture(&minus_types, &minus_posterior);
        ClassKernel {
            beta: econ.beta,
            sigma: econ.sigma,
            n: econ.workers,
            support: &econ.capital_support,
            plus_types,
            minus_types,
            plus_posterior,
            minus_posterior,
            g_plus,
            g_minus,
            tree: *tree,
            draws: cfg.matching.beta_draws,
            quantiles: HashMap::new(),
        }
    }

    fn ensure_quantiles(&mut self, plus: bool, kappa: usize, b: usize) {
        let key = (plus, kappa, b);
        if self.quantiles.contains_key(&key) {
            return;
        }
        let mix = if plus {
            self.g_plus.as_ref()
        } else {
            self.g_minus.as_ref()
        }
        .expect("mixture side must be nonempty when its ranks are queried");
        let draws = beta_draws(&self.tree, kappa, b, self.draws);
        self.quantiles.insert(key, threshold_quantiles(mix, &draws));
    }

    /// P(index of a type-m firm falls below the kappa-th smallest index of b
    /// independent firms drawn from the given side's posterior). A rank past
    /// the sample size means an infinite threshold, probability 1.
    fn below(&mut self, plus: bool, kappa: usize, b: usize, m: usize) -> f64 {
        if kappa > b {
            return 1.0;
        }
        self.ensure_quantiles(plus, kappa, b);
        let quantiles = &self.quantiles[&(plus, kappa, b)];
        below_prob_from_quantiles(quantiles, self.beta * self.support[m], self.sigma)
    }

    /// Type-match distribution for one worker of this class, given that
    /// `n_same` of the other n-1 workers share the class and `n_pref` of the
    /// n firms prefer it. Returns a length-M vector over all capital types.
    fn probs(&mut self, n_same: usize, n_pref: usize) -> Vec<f64> {
        let n = self.n;
        assert!(n_same <= n - 1, "same-class count exceeds other workers");
        assert!(n_pref <= n, "preferring count exceeds firms");
        let nbar = n_same + 1;
        let m_count = self.support.len();
        let mut out = vec![0.0; m_count];

        // Scatter a normalized weighting of `values` over `types` scaled by
        // `mass`. The unnormalized weights already sum to the right mass in
        // expectation; normalizing removes the Monte Carlo remainder.
        let scatter = |out: &mut [f64], types: &[usize], values: &[f64], mass: f64| {
            let total: f64 = values.iter().sum();
            assert!(total > 0.0, "degenerate kernel weights");
            for (&m, &v) in types.iter().zip(values) {
                out[m] += mass * v / total;
            }
        };

        if n_pref == n {
            // Every firm prefers this class; the class's workers take the
            // top nbar index ranks.
            assert!(
                !self.plus_types.is_empty(),
                "all firms prefer a class no type prefers"
            );
            if nbar == n {
                for (i, &m) in self.plus_types.clone().iter().enumerate() {
                    out[m] = self.plus_posterior[i];
                }
            } else {
                let types = self.plus_types.clone();
                let values: Vec<f64> = types
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        self.plus_posterior[i] * (1.0 - self.below(true, n - nbar, n - 1, m))
                    })
                    .collect();
                scatter(&mut out, &types, &values, 1.0);
            }
        } else if n_pref == 0 {
            // No firm prefers this class; its workers are taken by the
            // fallback firms at the bottom nbar index ranks.
            assert!(
                !self.minus_types.is_empty(),
                "no firm prefers a class every type prefers"
            );
            if nbar == n {
                for (i, &m) in self.minus_types.clone().iter().enumerate() {
                    out[m] = self.minus_posterior[i];
                }
            } else {
                let types = self.minus_types.clone();
                let values: Vec<f64> = types
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| self.minus_posterior[i] * self.below(false, nbar, n - 1, m))
                    .collect();
                scatter(&mut out, &types, &values, 1.0);
            }
        } else {
            assert!(
                !self.plus_types.is_empty() && !self.minus_types.is_empty(),
                "interior preferring count requires both sides realized"
            );
            if nbar >= n_pref {
                // Every preferring firm secures a worker of this class; the
                // class is oversubscribed by nbar - n_pref workers, matched
                // to the lowest-index fallback firms from the other side.
                let plus_mass = n_pref as f64 / nbar as f64;
                for (i, &m) in self.plus_types.clone().iter().enumerate() {
                    out[m] += self.plus_posterior[i] * plus_mass;
                }
                if nbar > n_pref {
                    let types = self.minus_types.clone();
                    let values: Vec<f64> = types
                        .iter()
                        .enumerate()
                        .map(|(i, &m)| {
                            self.minus_posterior[i]
                                * self.below(false, nbar - n_pref, n - n_pref - 1, m)
                        })
                        .collect();
                    scatter(&mut out, &types, &values, 1.0 - plus_mass);
                }
            } else {
                // More preferring firms than class workers: only the top
                // nbar of the n_pref preferring firms hire from the class.
                let types = self.plus_types.clone();
                let values: Vec<f64> = types
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        self.plus_posterior[i]
                            * (1.0 - self.below(true, n_pref - nbar, n_pref - 1, m))
                    })
                    .collect();
                scatter(&mut out, &types, &values, 1.0);
            }
        }
        out
    }
}

/// Type-match distribution for one worker, conditional on the counts.
///
/// `class_high` is the worker's education class, `n_same` how many of the
/// other n-1 workers chose the same class, `n_pref` how many of the n firms
/// prefer that class. Returns a probability vector over all capital types.
pub fn conditional_match_probs(
    class_high: bool,
    n_same: usize,
    n_pref: usize,
    split: &FirmPreferenceSplit,
    cfg: &Config,
    tree: &SeedTree,
) -> Vec<f64> {
    ClassKernel::new(class_high, split, cfg, tree).probs(n_same, n_pref)
}

/// Single entry of [`conditional_match_probs`].
pub fn conditional_match_prob(
    m: usize,
    class_high: bool,
    n_same: usize,
    n_pref: usize,
    split: &FirmPreferenceSplit,
    cfg: &Config,
    tree: &SeedTree,
) -> f64 {
    conditional_match_probs(class_high, n_same, n_pref, split, cfg, tree)[m]
}

/// Unconditional type-match probabilities at a given high-education share.
#[derive(Debug, Clone)]
pub struct MatchProbTable {
    /// Class-major probabilities: entry [j * M + m].
    probs: Vec<f64>,
    m_types: usize,
    /// High-education share the table was evaluated at.
    pub p_high: f64,
    /// Per-class |column mass - 1| before renormalization.
    pub drift: [f64; 2],
}

impl MatchProbTable {
    /// P(matched to capital type m | education class j), j = 0 low, 1 high.
    pub fn prob(&self, m: usize, j: usize) -> f64 {
        self.probs[j * self.m_types + m]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.probs[j * self.m_types..(j + 1) * self.m_types]
    }

    pub fn n_types(&self) -> usize {
        self.m_types
    }
}

/// Binomially weighted kernel table for one preference case, reusable across
/// every education share. Building it does all the order-statistic work;
/// evaluating [`CaseTable::pi`] afterwards only reweights by the class-size
/// distribution, which is what equilibrium iteration varies.
#[derive(Debug, Clone)]
pub struct CaseTable {
    n: usize,
    m_types: usize,
    /// Count of high-preferring types this table was built for.
    pub cut: usize,
    /// Same-class count grid over 0..=n-1, shared by both classes.
    nj_nodes: Vec<usize>,
    /// Kernels with the preferring-count dimension already integrated out:
    /// entry [j][l * M + m] for same-class node l.
    collapsed: [Vec<f64>; 2],
}

impl CaseTable {
    /// Builds the table for the given split. Beta draws come from the seed
    /// tree's frozen bank, so two tables built from the same tree share
    /// every order-statistic coefficient.
    pub fn build(split: &FirmPreferenceSplit, cfg: &Config, tree: &SeedTree) -> CaseTable {
        let n = cfg.economy.workers;
        let m_types = cfg.economy.n_types();
        let nj_nodes = support_nodes(n - 1, cfg.matching.support_points);
        let np_nodes = support_nodes(n, cfg.matching.support_points);
        let mut collapsed = [
            vec![0.0; nj_nodes.len() * m_types],
            vec![0.0; nj_nodes.len() * m_types],
        ];
        let q_pref = [split.q_low, split.q_high];
        for j in 0..2 {
            let mut kernel = ClassKernel::new(j == 1, split, cfg, tree);
            // Degenerate preferring-count distributions collapse to a single
            // node; otherwise integrate over the node grid. Fixed capital
            // composition pins the count at the realized type-count sum.
            let np_weights: Vec<(usize, f64)> = if cfg.matching.deterministic_capital_counts {
                let counts = crate::matcher::deterministic_type_counts(&cfg.economy);
                let preferring = if j == 1 {
                    &split.prefers_high
                } else {
                    &split.prefers_low
                };
                let np: usize = preferring.iter().map(|&m| counts[m]).sum();
                vec![(np, 1.0)]
            } else if q_pref[j] == 0.0 {
                vec![(0, 1.0)]
            } else if q_pref[j] == 1.0 {
                vec![(n, 1.0)]
            } else {
                np_nodes
                    .iter()
                    .copied()
                    .zip(node_masses(&np_nodes, n, q_pref[j]))
                    .collect()
            };
            for (l, &nj) in nj_nodes.iter().enumerate() {
                let row = &mut collapsed[j][l * m_types..(l + 1) * m_types];
                for &(np, w) in &np_weights {
                    if w == 0.0 {
                        continue;
                    }
                    let probs = kernel.probs(nj, np);
                    for (slot, p) in row.iter_mut().zip(&probs) {
                        *slot += w * p;
                    }
                }
            }
        }
        CaseTable {
            n,
            m_types,
            cut: split.cut(),
            nj_nodes,
            collapsed,
        }
    }

    /// Unconditional table at high-education share `p_high`: the same-class
    /// count of a class-j worker is Binomial(n-1, share of class j).
    pub fn pi(&self, p_high: f64) -> MatchProbTable {
        assert!((0.0..=1.0).contains(&p_high), "share outside [0,1]");
        let mut probs = vec![0.0; 2 * self.m_types];
        let mut drift = [0.0; 2];
        for j in 0..2 {
            let p_class = if j == 1 { p_high } else { 1.0 - p_high };
            let weights = node_masses(&self.nj_nodes, self.n - 1, p_class);
            let col = &mut probs[j * self.m_types..(j + 1) * self.m_types];
            for (l, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = &self.collapsed[j][l * self.m_types..(l + 1) * self.m_types];
                for (slot, p) in col.iter_mut().zip(row) {
                    *slot += w * p;
                }
            }
            let mass: f64 = col.iter().sum();
            drift[j] = (mass - 1.0).abs();
            if mass > 0.0 {
                for slot in col.iter_mut() {
                    *slot /= mass;
                }
            }
        }
        MatchProbTable {
            probs,
            m_types: self.m_types,
            p_high,
            drift,
        }
    }

    /// Analytic derivative of the (renormalized) table in p_high.
    /// Entry [j * M + m], matching [`MatchProbTable`] layout.
    pub fn dpi_dp(&self, p_high: f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.m_types];
        for j in 0..2 {
            let p_class = if j == 1 { p_high } else { 1.0 - p_high };
            // d p_class / d p_high.
            let chain = if j == 1 { 1.0 } else { -1.0 };
            let weights = node_masses(&self.nj_nodes, self.n - 1, p_class);
            let dweights = node_masses_dp(&self.nj_nodes, self.n - 1, p_class);
            let mut u = vec![0.0; self.m_types];
            let mut du = vec![0.0; self.m_types];
            for l in 0..self.nj_nodes.len() {
                let row = &self.collapsed[j][l * self.m_types..(l + 1) * self.m_types];
                for m in 0..self.m_types {
                    u[m] += weights[l] * row[m];
                    du[m] += chain * dweights[l] * row[m];
                }
            }
            let s: f64 = u.iter().sum();
            let ds: f64 = du.iter().sum();
            for m in 0..self.m_types {
                out[j * self.m_types + m] = (du[m] * s - u[m] * ds) / (s * s);
            }
        }
        out
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }
}

/// Kernel tables for every preference case of an economy, built once and
/// shared. Case `c` has the top `c` capital types preferring high education.
#[derive(Debug, Clone)]
pub struct KernelBank {
    pub tables: Vec<CaseTable>,
}

impl KernelBank {
    pub fn build(cfg: &Config, tree: &SeedTree) -> KernelBank {
        let m = cfg.economy.n_types();
        let tables = (0..=m)
            .map(|cut| {
                let split = crate::model::split_with_cut(&cfg.economy, cut);
                CaseTable::build(&split, cfg, tree)
            })
            .collect();
        KernelBank { tables }
    }

    pub fn table(&self, cut: usize) -> &CaseTable {
        &self.tables[cut]
    }
}

/// Unconditional match-probability table for a split at share `p_high`.
pub fn pi_table(
    split: &FirmPreferenceSplit,
    p_high: f64,
    cfg: &Config,
    tree: &SeedTree,
) -> MatchProbTable {
    CaseTable::build(split, cfg, tree).pi(p_high)
}

/// Expected match output for a class-j worker under the table.
pub fn expected_production(j: usize, table: &MatchProbTable, cfg: &Config) -> f64 {
    let econ = &cfg.economy;
    let h = econ.edu_value(j);
    (0..table.n_types())
        .map(|m| table.prob(m, j) * crate::model::production(h, econ.capital_support[m], econ))
        .sum()
}
