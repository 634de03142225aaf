//! Order statistics of normal mixtures.
//!
//! A firm's information signal is normal around a capital-dependent mean, so
//! the signal of a random firm is a finite normal mixture. Matching
//! probabilities reduce to quantities of the form
//! P(Z >= kappa-th order statistic of b iid mixture draws) with Z normal.
//! Writing the order statistic as G^{-1}(U) with U ~ Beta(kappa, b+1-kappa)
//! turns that probability into a one-dimensional expectation, estimated here
//! by Monte Carlo over the beta variable.

use crate::rng::{purpose, SeedTree};
use rand::Rng;
use rand_distr::Distribution;
use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Finite mixture of normals with common standard deviation.
#[derive(Debug, Clone)]
pub struct NormalMixture {
    means: Vec<f64>,
    sd: f64,
    weights: Vec<f64>,
}

impl NormalMixture {
    /// Weights must be positive and sum to 1 within 1e-9; sd must be positive.
    pub fn new(means: Vec<f64>, sd: f64, weights: Vec<f64>) -> Self {
        assert_eq!(means.len(), weights.len(), "component count mismatch");
        assert!(!means.is_empty(), "mixture needs at least one component");
        assert!(sd > 0.0, "sd must be positive");
        let total: f64 = weights.iter().sum();
        assert!(
            weights.iter().all(|&w| w > 0.0) && (total - 1.0).abs() < 1e-9,
            "weights must be positive and sum to 1"
        );
        NormalMixture { means, sd, weights }
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.means
            .iter()
            .zip(&self.weights)
            .map(|(&mu, &w)| w * std_normal_cdf((x - mu) / self.sd))
            .sum()
    }

    /// Inverse CDF by bisection to absolute tolerance 1e-10 (scaled by sd).
    /// Requires p strictly inside (0, 1).
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
        let lo0 = self.means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi0 = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo0 - 12.0 * self.sd;
        let mut hi = hi0 + 12.0 * self.sd;
        while self.cdf(lo) > p {
            lo -= 8.0 * self.sd;
        }
        while self.cdf(hi) < p {
            hi += 8.0 * self.sd;
        }
        let tol = 1e-10 * self.sd.max(1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < tol {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// One draw from the mixture.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.means.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.means[idx] + self.sd * z
    }
}

/// One Beta(alpha, beta) draw.
pub fn beta_sample(alpha: f64, beta: f64, rng: &mut impl Rng) -> f64 {
    let dist = rand_distr::Beta::new(alpha, beta).expect("valid beta parameters");
    dist.sample(rng)
}

/// The frozen bank of Beta(kappa, b+1-kappa) draws used for the coefficient
/// at rank kappa in a sample of size b. Draws are a pure function of
/// (root seed, kappa, b), so every caller that needs this coefficient sees
/// identical randomness regardless of evaluation order or thread count.
pub fn beta_draws(tree: &SeedTree, kappa: usize, b: usize, count: usize) -> Vec<f64> {
    assert!(
        kappa >= 1 && kappa <= b,
        "rank {kappa} outside sample size {b}"
    );
    let mut rng = tree.rng(&[purpose::BETA_DRAWS, kappa as u64, b as u64]);
    let dist =
        rand_distr::Beta::new(kappa as f64, (b + 1 - kappa) as f64).expect("valid beta parameters");
    (0..count).map(|_| dist.sample(&mut rng)).collect()
}

/// Mixture quantiles at each beta draw: the simulated kappa-th order
/// statistics themselves. Shared across all normal targets compared against
/// the same order statistic.
pub fn threshold_quantiles(mix: &NormalMixture, draws: &[f64]) -> Vec<f64> {
    draws.iter().map(|&u| mix.quantile(u)).collect()
}

/// Average of Phi((x_i - mu) / sd) over precomputed thresholds: the
/// probability that N(mu, sd^2) falls below the order statistic.
pub fn below_prob_from_quantiles(quantiles: &[f64], mu: f64, sd: f64) -> f64 {
    let sum: f64 = quantiles
        .iter()
        .map(|&x| std_normal_cdf((x - mu) / sd))
        .sum();
    sum / quantiles.len() as f64
}

/// a(kappa, b, mu; G): probability that an independent N(mu, sd^2) draw
/// falls below the kappa-th smallest of b iid draws from `mix`, by Monte
/// Carlo with `count` beta draws from the seed tree's frozen bank.
pub fn a_coeff(
    tree: &SeedTree,
    kappa: usize,
    b: usize,
    mu: f64,
    sd: f64,
    mix: &NormalMixture,
    count: usize,
) -> f64 {
    let draws = beta_draws(tree, kappa, b, count);
    let quantiles = threshold_quantiles(mix, &draws);
    below_prob_from_quantiles(&quantiles, mu, sd)
}

/// P(Z >= X_(kappa)) for Z ~ N(mu, sd^2): the complement of [`a_coeff`].
pub fn exceed_prob(
    tree: &SeedTree,
    kappa: usize,
    b: usize,
    mu: f64,
    sd: f64,
    mix: &NormalMixture,
    count: usize,
) -> f64 {
    1.0 - a_coeff(tree, kappa, b, mu, sd, mix, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent standard normal CDF: power series around 0 for moderate
    /// arguments, continued-fraction tail otherwise (Abramowitz & Stegun
    /// 26.2.11 / 26.2.14 style). Oracle for the erfc-based implementation.
    fn phi_series(x: f64) -> f64 {
        if x < 0.0 {
            return 1.0 - phi_series(-x);
        }
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if x <= 6.0 {
            // Phi(x) = 1/2 + pdf(x) * sum_{k>=0} x^(2k+1) / (1*3*...*(2k+1))
            let mut term = x;
            let mut sum = x;
            let mut k = 1.0;
            while term.abs() > 1e-18 && k < 500.0 {
                term *= x * x / (2.0 * k + 1.0);
                sum += term;
                k += 1.0;
            }
            0.5 + pdf * sum
        } else {
            // Tail: 1 - Phi(x) = pdf(x)/x * (1 - 1/x^2 + 3/x^4 - ...)
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..10 {
                term *= -((2 * j - 1) as f64) / (x * x);
                sum += term;
            }
            1.0 - pdf / x * sum
        }
    }

    #[test]
    fn normal_cdf_matches_series_oracle() {
        let mut x = -8.0;
        while x <= 8.0 {
            let got = std_normal_cdf(x);
            let want = phi_series(x);
            // The erfc backend carries about 2e-11 absolute error; Monte
            // Carlo noise downstream is orders louder.
            assert!(
                (got - want).abs() < 1e-10,
                "Phi({x}): got {got}, series {want}"
            );
            x += 0.173;
        }
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.96) - 0.975_002_104_851_78).abs() < 1e-10);
    }

    #[test]
    fn single_component_mixture_is_normal() {
        let mix = NormalMixture::new(vec![1.5], 2.0, vec![1.0]);
        for &x in &[-3.0, 0.0, 1.5, 4.2] {
            let want = std_normal_cdf((x - 1.5) / 2.0);
            assert!((mix.cdf(x) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_cdf_is_weighted_sum() {
        let mix = NormalMixture::new(vec![0.0, 2.0], 1.0, vec![0.3, 0.7]);
        let x = 1.0;
        let want = 0.3 * std_normal_cdf(1.0) + 0.7 * std_normal_cdf(-1.0);
        assert!((mix.cdf(x) - want).abs() < 1e-14);
        // Symmetric two-component mixture with equal weights has median at
        // the midpoint.
        let sym = NormalMixture::new(vec![-1.0, 1.0], 0.7, vec![0.5, 0.5]);
        assert!((sym.cdf(0.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mix = NormalMixture::new(vec![0.0, 1.0, 3.5], 0.8, vec![0.2, 0.5, 0.3]);
        for i in 1..40 {
            let p = i as f64 / 40.0;
            let x = mix.quantile(p);
            assert!((mix.cdf(x) - p).abs() < 1e-9, "p = {p}");
        }
        // Monotone in p.
        let q1 = mix.quantile(0.2);
        let q2 = mix.quantile(0.20001);
        assert!(q2 >= q1);
        // Extreme but interior probabilities stay finite.
        assert!(mix.quantile(1e-9).is_finite());
        assert!(mix.quantile(1.0 - 1e-9).is_finite());
    }

    #[test]
    fn symmetric_mixture_median_quantile() {
        let sym = NormalMixture::new(vec![-2.0, 2.0], 1.0, vec![0.5, 0.5]);
        assert!(sym.quantile(0.5).abs() < 1e-8);
    }

    #[test]
    fn beta_draws_are_frozen_and_keyed() {
        let tree = SeedTree::new(123);
        let a = beta_draws(&tree, 3, 10, 50);
        let b = beta_draws(&tree, 3, 10, 50);
        assert_eq!(a, b);
        let c = beta_draws(&tree, 4, 10, 50);
        assert_ne!(a, c);
        let d = beta_draws(&tree, 3, 11, 50);
        assert_ne!(a, d);
        assert!(a.iter().all(|&u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn rank_uniform_corner_when_target_matches_mixture() {
        // If Z and the sample share one normal distribution, Phi applied to
        // the standardized quantile is the identity, so the coefficient is
        // the beta sample mean and its target is kappa / (b + 1).
        let tree = SeedTree::new(77);
        let mu = 0.6;
        let sd = 1.3;
        let mix = NormalMixture::new(vec![mu], sd, vec![1.0]);
        let count = 40_000;
        for &(kappa, b) in &[(1usize, 4usize), (4, 4), (3, 9), (7, 12)] {
            let a = a_coeff(&tree, kappa, b, mu, sd, &mix, count);
            let want = kappa as f64 / (b as f64 + 1.0);
            let se = (want * (1.0 - want) / count as f64).sqrt();
            assert!(
                (a - want).abs() < 4.0 * se + 1e-3,
                "kappa={kappa} b={b}: got {a}, want {want}"
            );
        }
    }

    #[test]
    fn a_coeff_matches_direct_event_simulation() {
        // Oracle: draw the b-sample and Z directly and count the event.
        let tree = SeedTree::new(2024);
        let mix = NormalMixture::new(vec![0.0, 1.2], 0.9, vec![0.4, 0.6]);
        let cases = [(2usize, 5usize, 0.8f64), (1, 3, -0.5), (5, 5, 1.5)];
        let reps = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for &(kappa, b, mu) in &cases {
            let mut hits = 0usize;
            for _ in 0..reps {
                let mut xs: Vec<f64> = (0..b).map(|_| mix.sample(&mut rng)).collect();
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let z: f64 = mu + 0.9 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                if z < xs[kappa - 1] {
                    hits += 1;
                }
            }
            let direct = hits as f64 / reps as f64;
            let comp = a_coeff(&tree, kappa, b, mu, 0.9, &mix, 40_000);
            let se_direct = (direct * (1.0 - direct) / reps as f64).sqrt();
            // Beta-draw noise is of the same order as the direct noise here.
            let tol = 4.0 * se_direct + 4.0 / (40_000f64).sqrt() * 0.25;
            assert!(
                (comp - direct).abs() < tol.max(3e-3),
                "kappa={kappa} b={b} mu={mu}: coeff {comp}, direct {direct}"
            );
        }
    }

    #[test]
    fn exceed_prob_complements() {
        let tree = SeedTree::new(5);
        let mix = NormalMixture::new(vec![0.0, 2.0], 1.0, vec![0.5, 0.5]);
        let a = a_coeff(&tree, 2, 6, 1.0, 1.0, &mix, 1000);
        let e = exceed_prob(&tree, 2, 6, 1.0, 1.0, &mix, 1000);
        assert!((a + e - 1.0).abs() < 1e-14);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn a_coeff_monotone_in_rank_and_mean() {
        // Higher rank raises the threshold, so the below-probability rises;
        // a higher target mean lowers it.
        let tree = SeedTree::new(8);
        let mix = NormalMixture::new(vec![0.0, 1.0], 1.0, vec![0.5, 0.5]);
        let count = 20_000;
        let a1 = a_coeff(&tree, 2, 8, 0.5, 1.0, &mix, count);
        let a2 = a_coeff(&tree, 6, 8, 0.5, 1.0, &mix, count);
        assert!(a2 > a1);
        let b1 = a_coeff(&tree, 4, 8, -1.0, 1.0, &mix, count);
        let b2 = a_coeff(&tree, 4, 8, 2.0, 1.0, &mix, count);
        assert!(b1 > b2);
    }
}
