use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use libm::lgamma as ln_gamma;

use super::{h_max_probs, EntropyEstimate, EstimateAux, EstimatorTag};
use crate::discretization::{Histogram, Pmf};
use crate::error::{Error, Result};

/// Concentration of the peaked Dirichlet prior used unless configured.
pub const DEFAULT_PEAKED_K: f64 = 100.0;

/// Posterior mean of `sum_k sqrt(p_k)` under a flat Dirichlet prior, mapped
/// through `2 log2`:
///
/// ```text
/// 2 log2( Γ(n+m)/Γ(n+m+1/2) * sum_k Γ(n_k+3/2)/Γ(n_k+1) )
/// ```
///
/// Evaluated in log space; direct gamma values overflow at realistic `n`.
pub fn h_max_bayes_uniform(h: &Histogram) -> EntropyEstimate {
    EntropyEstimate::new(bayes_uniform_counts(h.counts()), EstimatorTag::BayesUp, h.n())
}

/// Same estimator on a bare count vector; any number of bins.
pub fn bayes_uniform_counts(counts: &[u64]) -> f64 {
    let n = counts.iter().sum::<u64>() as f64;
    let m = counts.len() as f64;
    let prefix = ln_gamma(n + m) - ln_gamma(n + m + 0.5);

    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut terms: Vec<f64> = counts
        .iter()
        .map(|&c| {
            *cache
                .entry(c)
                .or_insert_with(|| ln_gamma(c as f64 + 1.5) - ln_gamma(c as f64 + 1.0))
        })
        .collect();
    // log-sum-exp
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    terms.iter_mut().for_each(|t| *t = (*t - top).exp());
    let log_sum = top + terms.iter().sum::<f64>().ln();

    2.0 * (prefix + log_sum) / std::f64::consts::LN_2
}

/// Posterior mean `(n_j + K) / (n + m K)` under a symmetric `Dir(K)` prior.
pub fn posterior_mean_peaked(h: &Histogram, k: f64) -> Result<Pmf> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("K must be >= 0, got {k}")));
    }
    if k == 0.0 && h.n() == 0 {
        return Err(Error::UndefinedPosterior);
    }
    let m = h.counts().len() as f64;
    let denom = h.n() as f64 + m * k;
    let probs = h.counts().iter().map(|&c| (c as f64 + k) / denom).collect();
    Pmf::new(h.scheme().lattice(), probs)
}

pub fn h_max_bayes_peaked(h: &Histogram, k: f64) -> Result<EntropyEstimate> {
    let post = posterior_mean_peaked(h, k)?;
    let mut est = EntropyEstimate::new(h_max_probs(post.probs()), EstimatorTag::BayesPp, h.n());
    est.aux = EstimateAux::Peaked { k };
    Ok(est)
}

/// One draw from `Dir(counts + prior)` written into `out`.
///
/// `cache` holds gamma samplers keyed by count so that sparse histograms
/// reuse a handful of distributions.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    counts: &[u64],
    prior: f64,
    cache: &mut HashMap<u64, Gamma<f64>>,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    let mut total = 0.0;
    for (o, &c) in out.iter_mut().zip(counts) {
        let alpha = c as f64 + prior;
        if alpha <= 0.0 {
            *o = 0.0;
            continue;
        }
        let dist = match cache.get(&c) {
            Some(d) => *d,
            None => {
                let d = Gamma::new(alpha, 1.0)
                    .map_err(|e| Error::InvalidParameter(format!("gamma({alpha}): {e}")))?;
                cache.insert(c, d);
                d
            }
        };
        *o = dist.sample(rng);
        total += *o;
    }
    if !(total > 0.0) {
        return Err(Error::UndefinedPosterior);
    }
    out.iter_mut().for_each(|o| *o /= total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::BinningScheme;
    use crate::estimators::h_max_freq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hist(counts: &[u64]) -> Histogram {
        let m = counts.len().max(2);
        let mut c = counts.to_vec();
        c.resize(m, 0);
        Histogram::from_counts(BinningScheme::new(m, 1.0).unwrap(), c).unwrap()
    }

    #[test]
    fn uniform_prior_identities() {
        for n in [0, 1, 7, 16_000] {
            assert_eq!(bayes_uniform_counts(&[n]), 0.0);
        }
        // Γ(2)/Γ(2.5) * 2 Γ(1.5) = 4/3
        let v = h_max_bayes_uniform(&hist(&[0, 0])).value;
        assert!((v - 2.0 * (4.0f64 / 3.0).log2()).abs() < 1e-12);
        assert!((v - 0.830_075).abs() < 1e-6);
        // mpmath, 30 digits
        let v = h_max_bayes_uniform(&hist(&[4, 0])).value;
        assert!((v - 0.708_902_692_835_609).abs() < 1e-12, "{v}");
    }

    #[test]
    fn uniform_prior_large_n_is_finite() {
        let mut counts = vec![0u64; 4096];
        counts[2048] = 16_000;
        let v = h_max_bayes_uniform(&hist(&counts)).value;
        assert!(v.is_finite() && v > 0.0 && v < 12.0);
    }

    #[test]
    fn peaked_posterior_examples() {
        let p = posterior_mean_peaked(&hist(&[0, 0, 0, 0]), 3.0).unwrap();
        assert!(p.probs().iter().all(|&q| (q - 0.25).abs() < 1e-15));
        let p = posterior_mean_peaked(&hist(&[3, 1]), 2.0).unwrap();
        assert_eq!(p.probs(), &[5.0 / 8.0, 3.0 / 8.0]);
        let p = posterior_mean_peaked(&hist(&[3, 1]), 0.0).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        assert!(matches!(
            posterior_mean_peaked(&hist(&[0, 0]), 0.0),
            Err(Error::UndefinedPosterior)
        ));
    }

    #[test]
    fn peaked_estimator_examples() {
        let empty = Histogram::empty(BinningScheme::new(4096, 0.1).unwrap());
        let v = h_max_bayes_peaked(&empty, 100.0).unwrap().value;
        assert!((v - 12.0).abs() < 1e-10);
        let h = hist(&[5, 0, 2, 9]);
        let freq = h_max_freq(&h).unwrap().value;
        assert!((h_max_bayes_peaked(&h, 0.0).unwrap().value - freq).abs() < 1e-14);
        // 2 log2(sqrt(5/8) + sqrt(3/8)), mpmath
        let v = h_max_bayes_peaked(&hist(&[3, 1]), 2.0).unwrap().value;
        assert!((v - 0.976_910_426_482_084).abs() < 1e-12, "{v}");
    }

    #[test]
    fn dirichlet_draws_are_pmfs_with_right_mean() {
        let counts = [3u64, 0, 10, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cache = HashMap::new();
        let mut buf = [0.0; 4];
        let mut mean = [0.0; 4];
        let draws = 20_000;
        for _ in 0..draws {
            sample_dirichlet(&counts, 1.0, &mut cache, &mut rng, &mut buf).unwrap();
            assert!((buf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (m, b) in mean.iter_mut().zip(&buf) {
                *m += b / draws as f64;
            }
        }
        // E[p_k] = (n_k + 1) / (n + m)
        for (m, &c) in mean.iter().zip(&counts) {
            let expected = (c as f64 + 1.0) / 18.0;
            assert!((m - expected).abs() < 0.005, "{m} vs {expected}");
        }
    }
}
