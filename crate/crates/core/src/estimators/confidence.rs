//! One-sided upper confidence values for `H_max`.
//!
//! * `bayes_up`, `bayes_pp`: quantile of `H_max` over Dirichlet posterior draws.
//! * `evb`: chi-square upper limit on the variance, then the EVB bound there
//!   (the bound is non-decreasing in `V`).
//! * `freq`: basic bootstrap, `2 θ̂ − q_α(θ*)`. Plain percentile quantiles of a
//!   downward-biased plug-in estimator would inherit the bias.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::bayes::sample_dirichlet;
use super::evb::h_max_evb_or_fallback;
use super::{h_max_counts, h_max_probs, ConfidenceInterval, EntropyEstimate, HmaxEstimator};
use crate::discretization::Histogram;
use crate::error::{Error, Result};

/// What the check quadrature produced.
#[derive(Debug, Clone, Copy)]
pub struct CheckData<'a> {
    pub histogram: &'a Histogram,
    /// Sample variance used by the EVB estimator.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfidenceSettings {
    /// Posterior draws for the Bayesian estimators.
    pub draws: usize,
    /// Bootstrap resamples for the frequentist estimator.
    pub resamples: usize,
}

impl Default for ConfidenceSettings {
    fn default() -> Self {
        ConfidenceSettings {
            draws: 10_000,
            resamples: 1000,
        }
    }
}

const CHUNK: usize = 250;

/// Runs `count` independent jobs in parallel, each chunk with its own
/// generator derived from `base`.
fn parallel_draws<F>(count: usize, base: u64, job: F) -> Result<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng, &mut Vec<f64>) -> Result<f64> + Sync,
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Result<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(base.wrapping_add(c as u64));
            let mut scratch = Vec::new();
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(|_| job(&mut rng, &mut scratch)).collect()
        })
        .collect();
    let mut all: Vec<f64> = parts?.into_iter().flatten().collect();
    all.sort_by(f64::total_cmp);
    Ok(all)
}

/// Order-statistic quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Point estimate with a one-sided interval attached; `ci.high` is the value
/// to use when a failure probability of at most `failure_rate` is required.
pub fn confidence_bound<R: Rng + ?Sized>(
    estimator: HmaxEstimator,
    data: &CheckData<'_>,
    failure_rate: f64,
    settings: &ConfidenceSettings,
    rng: &mut R,
) -> Result<EntropyEstimate> {
    if !(failure_rate > 0.0 && failure_rate < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "failure rate must lie in (0, 0.5), got {failure_rate}"
        )));
    }
    let point = estimator.point(data)?;
    let h = data.histogram;
    let base: u64 = rng.random();

    let (low, high) = match estimator {
        HmaxEstimator::BayesUniform | HmaxEstimator::BayesPeaked { .. } => {
            let prior = match estimator {
                HmaxEstimator::BayesPeaked { k } => k,
                _ => 1.0,
            };
            let counts = h.counts();
            if settings.draws < 1 {
                return Err(Error::InsufficientData { needed: 1, got: 0 });
            }
            let values = parallel_draws(settings.draws, base, |rng, buf| {
                buf.resize(counts.len(), 0.0);
                let mut cache = HashMap::new();
                sample_dirichlet(counts, prior, &mut cache, rng, buf)?;
                Ok(h_max_probs(buf))
            })?;
            (
                quantile(&values, failure_rate),
                quantile(&values, 1.0 - failure_rate),
            )
        }
        HmaxEstimator::Evb => {
            let n = h.n();
            if n < 2 {
                return Err(Error::InsufficientData {
                    needed: 2,
                    got: n as usize,
                });
            }
            let dof = (n - 1) as f64;
            let chi = ChiSquared::new(dof)
                .map_err(|e| Error::InvalidParameter(format!("chi-square({dof}): {e}")))?;
            let lattice = h.scheme().lattice();
            let v_up = dof * data.variance / chi.inverse_cdf(failure_rate);
            let v_low = dof * data.variance / chi.inverse_cdf(1.0 - failure_rate);
            (
                h_max_evb_or_fallback(&lattice, v_low).value,
                h_max_evb_or_fallback(&lattice, v_up).value,
            )
        }
        HmaxEstimator::Frequentist => {
            let n = h.n();
            if n < 2 || settings.resamples < 2 {
                return Err(Error::InsufficientData {
                    needed: 2,
                    got: n.min(settings.resamples as u64) as usize,
                });
            }
            let picker = WeightedIndex::new(h.counts())
                .map_err(|e| Error::InvalidParameter(format!("bootstrap weights: {e}")))?;
            let m = h.counts().len();
            let values = parallel_draws(settings.resamples, base, |rng, buf| {
                buf.clear();
                buf.resize(m, 0.0);
                for _ in 0..n {
                    buf[picker.sample(rng)] += 1.0;
                }
                let counts: Vec<u64> = buf.iter().map(|&c| c as u64).collect();
                Ok(h_max_counts(&counts, n))
            })?;
            let theta = point.value;
            (
                2.0 * theta - quantile(&values, 1.0 - failure_rate),
                2.0 * theta - quantile(&values, failure_rate),
            )
        }
    };

    let mut est = point;
    est.ci = Some(ConfidenceInterval {
        low: low.min(est.value),
        high: high.max(est.value),
        failure_rate,
    });
    Ok(est)
}
