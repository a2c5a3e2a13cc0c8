//! Entropy estimators on binned data.
//!
//! All entropies are in bits. `H_min = -log2 max_k p_k` and
//! `H_max = 2 log2 sum_k sqrt(p_k)` (Rényi orders infinity and 1/2).

mod bayes;
mod confidence;
mod evb;
mod rearrange;

pub use bayes::{
    bayes_uniform_counts, h_max_bayes_peaked, h_max_bayes_uniform, posterior_mean_peaked,
    sample_dirichlet,
    DEFAULT_PEAKED_K,
};
pub use confidence::{confidence_bound, CheckData, ConfidenceSettings};
pub use evb::{
    evb_distribution, evb_gamma, evb_residual, h_low_evb, h_max_evb, h_max_evb_or_fallback,
    EvbSolution,
};
pub use rearrange::{rearrange_bins_min_variance, symmetrize};

use crate::discretization::{Histogram, Pmf};
use crate::error::{Error, Result};

/// Which estimator produced an [`EntropyEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorTag {
    FreqMin,
    FreqMax,
    BayesUp,
    BayesPp,
    Evb,
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorTag::FreqMin => "freq_min",
            EstimatorTag::FreqMax => "freq_max",
            EstimatorTag::BayesUp => "bayes_up",
            EstimatorTag::BayesPp => "bayes_pp",
            EstimatorTag::Evb => "evb",
        })
    }
}

/// Max-entropy estimators selectable for the check quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HmaxEstimator {
    Frequentist,
    BayesUniform,
    BayesPeaked { k: f64 },
    Evb,
}

impl HmaxEstimator {
    pub fn tag(&self) -> EstimatorTag {
        match self {
            HmaxEstimator::Frequentist => EstimatorTag::FreqMax,
            HmaxEstimator::BayesUniform => EstimatorTag::BayesUp,
            HmaxEstimator::BayesPeaked { .. } => EstimatorTag::BayesPp,
            HmaxEstimator::Evb => EstimatorTag::Evb,
        }
    }

    /// Short name used in config files and CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            HmaxEstimator::Frequentist => "freq",
            HmaxEstimator::BayesUniform => "bayes_up",
            HmaxEstimator::BayesPeaked { .. } => "bayes_pp",
            HmaxEstimator::Evb => "evb",
        }
    }

    pub fn parse(name: &str, k: f64) -> Result<Self> {
        match name {
            "freq" | "freq_max" => Ok(HmaxEstimator::Frequentist),
            "bayes_up" => Ok(HmaxEstimator::BayesUniform),
            "bayes_pp" => Ok(HmaxEstimator::BayesPeaked { k }),
            "evb" => Ok(HmaxEstimator::Evb),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }

    /// Point estimate of `H_max` from check data.
    pub fn point(&self, data: &CheckData<'_>) -> Result<EntropyEstimate> {
        match *self {
            HmaxEstimator::Frequentist => h_max_freq(data.histogram),
            HmaxEstimator::BayesUniform => Ok(h_max_bayes_uniform(data.histogram)),
            HmaxEstimator::BayesPeaked { k } => h_max_bayes_peaked(data.histogram, k),
            HmaxEstimator::Evb => {
                Ok(h_max_evb_or_fallback(&data.histogram.scheme().lattice(), data.variance)
                    .with_n(data.histogram.n()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimateAux {
    None,
    Peaked { k: f64 },
    Evb { gamma: f64, variance: f64 },
    /// The extremal solver failed and `log2 m` was returned instead.
    EvbFallback { variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub estimator: EstimatorTag,
    pub n: u64,
    pub aux: EstimateAux,
    pub ci: Option<ConfidenceInterval>,
}

impl EntropyEstimate {
    pub fn new(value: f64, estimator: EstimatorTag, n: u64) -> Self {
        EntropyEstimate {
            value,
            estimator,
            n,
            aux: EstimateAux::None,
            ci: None,
        }
    }

    pub fn with_n(mut self, n: u64) -> Self {
        self.n = n;
        self
    }

    /// One-sided upper confidence value when an interval is attached,
    /// otherwise the point value.
    pub fn upper(&self) -> f64 {
        self.ci.map_or(self.value, |ci| ci.high)
    }
}

pub fn h_min_pmf(p: &Pmf) -> f64 {
    let max = p.probs().iter().cloned().fold(0.0, f64::max);
    -max.log2()
}

pub fn h_max_pmf(p: &Pmf) -> f64 {
    h_max_probs(p.probs())
}

pub(crate) fn h_max_probs(probs: &[f64]) -> f64 {
    let s: f64 = probs.iter().map(|q| q.sqrt()).sum();
    2.0 * s.log2()
}

pub fn h_min_freq(h: &Histogram) -> Result<EntropyEstimate> {
    if h.n() == 0 {
        return Err(Error::EmptyData("frequentist estimator needs samples"));
    }
    let max = *h.counts().iter().max().unwrap_or(&0);
    let value = -(max as f64 / h.n() as f64).log2();
    Ok(EntropyEstimate::new(value, EstimatorTag::FreqMin, h.n()))
}

pub fn h_max_freq(h: &Histogram) -> Result<EntropyEstimate> {
    if h.n() == 0 {
        return Err(Error::EmptyData("frequentist estimator needs samples"));
    }
    Ok(EntropyEstimate::new(
        h_max_counts(h.counts(), h.n()),
        EstimatorTag::FreqMax,
        h.n(),
    ))
}

/// Plug-in `H_max` of raw counts.
pub(crate) fn h_max_counts(counts: &[u64], n: u64) -> f64 {
    let s: f64 = counts.iter().map(|&c| (c as f64).sqrt()).sum();
    2.0 * (s / (n as f64).sqrt()).log2()
}

/// Sample variance with divisor `n - 1`.
pub fn unbiased_variance(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    Ok(crate::source::sample_variance(samples))
}

/// Unbiased variance of the bin centres of a histogram.
pub fn bin_center_variance(h: &Histogram) -> Result<f64> {
    let n = h.n();
    if n < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: n as usize,
        });
    }
    let s = h.scheme();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (i, &c) in h.counts().iter().enumerate() {
        if c > 0 {
            let x = s.center(s.k_min() + i as i64);
            sum += c as f64 * x;
            sum_sq += c as f64 * x * x;
        }
    }
    let nf = n as f64;
    let mean = sum / nf;
    Ok((sum_sq - nf * mean * mean) / (nf - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{BinningScheme, Lattice};
    use proptest::prelude::*;

    fn pmf(probs: &[f64]) -> Pmf {
        let half = (probs.len() / 2) as i64;
        let lat = Lattice::new(-half, probs.len() as i64 - 1 - half, 1.0).unwrap();
        Pmf::new(lat, probs.to_vec()).unwrap()
    }

    fn hist(counts: &[u64]) -> Histogram {
        Histogram::from_counts(BinningScheme::new(counts.len(), 1.0).unwrap(), counts.to_vec())
            .unwrap()
    }

    #[test]
    fn h_min_examples() {
        let u = vec![1.0 / 4096.0; 4096];
        let lat = BinningScheme::new(4096, 0.01).unwrap().lattice();
        assert!((h_min_pmf(&Pmf::new(lat, u.clone()).unwrap()) - 12.0).abs() < 1e-12);
        assert_eq!(h_min_pmf(&pmf(&[0.0, 1.0, 0.0])), 0.0);
        assert!((h_min_pmf(&pmf(&[0.5, 0.25, 0.25])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn h_max_examples() {
        let lat = BinningScheme::new(4096, 0.01).unwrap().lattice();
        let u = Pmf::new(lat, vec![1.0 / 4096.0; 4096]).unwrap();
        assert!((h_max_pmf(&u) - 12.0).abs() < 1e-10);
        assert_eq!(h_max_pmf(&pmf(&[0.0, 1.0, 0.0])), 0.0);
        // 2 log2(0.5 + 0.5 + sqrt(0.5))
        let oracle = 2.0 * (1.0 + 0.5f64.sqrt()).log2();
        assert!((oracle - 1.5431).abs() < 1e-4);
        assert!((h_max_pmf(&pmf(&[0.25, 0.25, 0.5])) - oracle).abs() < 1e-14);
    }

    #[test]
    fn frequentist_examples() {
        let h = hist(&[1, 1, 2, 0]);
        assert!((h_min_freq(&h).unwrap().value - 1.0).abs() < 1e-15);
        let oracle = 2.0 * (1.0 + 0.5f64.sqrt()).log2();
        assert!((h_max_freq(&h).unwrap().value - oracle).abs() < 1e-14);
        let one = hist(&[0, 9, 0, 0]);
        assert_eq!(h_min_freq(&one).unwrap().value, 0.0);
        assert!(h_max_freq(&one).unwrap().value.abs() < 1e-15);
        let flat = hist(&[5; 16]);
        assert!((h_min_freq(&flat).unwrap().value - 4.0).abs() < 1e-14);
        let mut counts = vec![0u64; 4096];
        counts[..4].iter_mut().for_each(|c| *c = 1);
        assert!((h_max_freq(&hist(&counts)).unwrap().value - 2.0).abs() < 1e-14);
        assert!(matches!(h_min_freq(&hist(&[0, 0])), Err(Error::EmptyData(_))));
        assert!(matches!(h_max_freq(&hist(&[0, 0])), Err(Error::EmptyData(_))));
    }

    #[test]
    fn variance_examples() {
        assert_eq!(unbiased_variance(&[-1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(unbiased_variance(&[3.0; 10]).unwrap(), 0.0);
        assert!(unbiased_variance(&[1.0]).is_err());
        let h = hist(&[0, 1, 0, 1]);
        assert_eq!(bin_center_variance(&h).unwrap(), 2.0);
    }

    #[test]
    fn vacuum_variance_consistent() {
        use crate::source::{DetectorModel, Homodyne, Quadrature, SourceModel};
        let mut h = Homodyne::new(DetectorModel {
            dark_var: 0.0,
            shot_var: 1.0,
            range: f64::INFINITY,
            seed: 11,
        });
        let b = h.draw_block(&SourceModel::vacuum(), Quadrature::Check, 1_000_000);
        let v = unbiased_variance(&b.samples).unwrap();
        assert!((v - 1.0).abs() < 0.005);
    }

    fn arb_pmf() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 1..40).prop_filter_map("zero mass", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn renyi_ordering(p in arb_pmf()) {
            let p = pmf(&p);
            prop_assert!(h_min_pmf(&p) <= h_max_pmf(&p) + 1e-12);
        }

        #[test]
        fn h_max_at_most_log_m(p in arb_pmf()) {
            let m = p.len() as f64;
            let p = pmf(&p);
            prop_assert!(h_max_pmf(&p) <= m.log2() + 1e-12);
        }
    }
}
