//! Discretized quadrature measurement: SNU normalization, binning with
//! unbounded edge bins, histograms and the discretized Gaussian.
//!
//! Bin `k` of a scheme with width `delta` covers `[(k - 1/2) delta, (k + 1/2) delta)`
//! for `-m/2 < k < m/2 - 1`; the two edge bins `k = -m/2` and `k = m/2 - 1`
//! extend to minus and plus infinity respectively.

use std::f64::consts::SQRT_2;
use std::io::Write;

use libm::{erf, erfc};

use crate::error::{Error, Result};

/// Equally spaced points `x_k = k * delta` for `k` in `k_min..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub k_min: i64,
    pub k_max: i64,
    pub delta: f64,
}

#[allow(clippy::len_without_is_empty)]
impl Lattice {
    pub fn new(k_min: i64, k_max: i64, delta: f64) -> Result<Self> {
        if k_max < k_min {
            return Err(Error::InvalidParameter(format!(
                "empty lattice [{k_min}, {k_max}]"
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("delta must be > 0, got {delta}")));
        }
        Ok(Lattice { k_min, k_max, delta })
    }

    /// `2 * half + 1` points centred on zero.
    pub fn symmetric(half: i64, delta: f64) -> Result<Self> {
        Lattice::new(-half, half, delta)
    }

    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    pub fn is_symmetric(&self) -> bool {
        self.k_min == -self.k_max
    }

    pub fn index_of(&self, k: i64) -> Option<usize> {
        (self.k_min..=self.k_max)
            .contains(&k)
            .then(|| (k - self.k_min) as usize)
    }

    pub fn position(&self, idx: usize) -> f64 {
        (self.k_min + idx as i64) as f64 * self.delta
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (self.k_min..=self.k_max).map(move |k| k as f64 * self.delta)
    }
}

/// Uniform binning with `m` bins (even) of width `delta` (SNU).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningScheme {
    m: usize,
    delta: f64,
}

impl BinningScheme {
    pub fn new(m: usize, delta: f64) -> Result<Self> {
        if m < 2 || !m.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "bin count must be even and >= 2, got {m}"
            )));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bin width must be > 0, got {delta}"
            )));
        }
        Ok(BinningScheme { m, delta })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_min(&self) -> i64 {
        -(self.m as i64 / 2)
    }

    pub fn k_max(&self) -> i64 {
        self.m as i64 / 2 - 1
    }

    /// Bin centres as a lattice.
    pub fn lattice(&self) -> Lattice {
        Lattice {
            k_min: self.k_min(),
            k_max: self.k_max(),
            delta: self.delta,
        }
    }

    pub fn center(&self, k: i64) -> f64 {
        k as f64 * self.delta
    }

    /// Position of `k` in a counts vector.
    pub fn slot(&self, k: i64) -> usize {
        (k - self.k_min()) as usize
    }
}

/// Scales raw digitizer samples to shot-noise units.
pub fn normalize_snu(raw: &[f64], shot_var: f64, dark_var: f64) -> Result<Vec<f64>> {
    let gain = shot_var - dark_var;
    if !(gain > 0.0) {
        return Err(Error::CalibrationFailure {
            shot: shot_var,
            dark: dark_var,
        });
    }
    let scale = gain.sqrt().recip();
    Ok(raw.iter().map(|x| x * scale).collect())
}

/// Bin index of an SNU value. Ties at a bin boundary go to the upper bin;
/// values beyond the outer boundaries land in the edge bins. NaN maps to 0.
pub fn bin_sample(x: f64, scheme: &BinningScheme) -> i64 {
    let k = (x / scheme.delta + 0.5).floor();
    if k.is_nan() {
        return 0;
    }
    (k.max(scheme.k_min() as f64).min(scheme.k_max() as f64)) as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    scheme: BinningScheme,
    counts: Vec<u64>,
    n: u64,
}

impl Histogram {
    pub fn empty(scheme: BinningScheme) -> Self {
        Histogram {
            counts: vec![0; scheme.m],
            scheme,
            n: 0,
        }
    }

    pub fn from_counts(scheme: BinningScheme, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != scheme.m {
            return Err(Error::Dimension(format!(
                "expected {} counts, got {}",
                scheme.m,
                counts.len()
            )));
        }
        let n = counts.iter().sum();
        Ok(Histogram { scheme, counts, n })
    }

    pub fn scheme(&self) -> &BinningScheme {
        &self.scheme
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, k: i64) -> u64 {
        self.counts[self.scheme.slot(k)]
    }

    pub fn add(&mut self, k: i64) {
        let slot = self.scheme.slot(k);
        self.counts[slot] += 1;
        self.n += 1;
    }

    /// Component-wise sum of two histograms over the same scheme.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if other.scheme != self.scheme {
            return Err(Error::Dimension("histograms use different schemes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    /// Writes `k,center,count` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,center,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            let k = self.scheme.k_min() + i as i64;
            writeln!(w, "{},{},{}", k, self.scheme.center(k), c)?;
        }
        Ok(())
    }
}

pub fn accumulate(samples: &[f64], scheme: &BinningScheme) -> Histogram {
    let mut h = Histogram::empty(*scheme);
    for &x in samples {
        h.add(bin_sample(x, scheme));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeBins {
    Ok,
    Violated,
}

/// The uncertainty bound only holds for states without support in the
/// unbounded edge bins.
pub fn extreme_bin_check(h: &Histogram) -> ExtremeBins {
    let s = h.scheme();
    if h.count(s.k_min()) > 0 || h.count(s.k_max()) > 0 {
        ExtremeBins::Violated
    } else {
        ExtremeBins::Ok
    }
}

/// Probability vector over the points of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    lattice: Lattice,
    probs: Vec<f64>,
}

const PMF_TOL: f64 = 1e-12;

impl Pmf {
    pub fn new(lattice: Lattice, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != lattice.len() {
            return Err(Error::Dimension(format!(
                "lattice has {} points, got {} probabilities",
                lattice.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter("negative or NaN probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        // rounding in long sums grows like sqrt(len)
        if (sum - 1.0).abs() > PMF_TOL * (probs.len() as f64).sqrt().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Pmf { lattice, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(lattice: Lattice, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter("weights must have a positive sum".into()));
        }
        Pmf::new(lattice, weights.iter().map(|w| w / total).collect())
    }

    pub fn on_scheme(scheme: &BinningScheme, probs: Vec<f64>) -> Result<Self> {
        Pmf::new(scheme.lattice(), probs)
    }

    /// Empirical frequencies `n_k / n`.
    pub fn empirical(h: &Histogram) -> Result<Self> {
        if h.n() == 0 {
            return Err(Error::EmptyData("histogram has no samples"));
        }
        let n = h.n() as f64;
        Pmf::new(
            h.scheme().lattice(),
            h.counts().iter().map(|&c| c as f64 / n).collect(),
        )
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_at(&self, k: i64) -> f64 {
        self.lattice.index_of(k).map_or(0.0, |i| self.probs[i])
    }

    pub fn mean(&self) -> f64 {
        self.lattice
            .positions()
            .zip(&self.probs)
            .map(|(x, p)| x * p)
            .sum()
    }

    /// `E[x^2]` about the origin.
    pub fn second_moment(&self) -> f64 {
        self.lattice
            .positions()
            .zip(&self.probs)
            .map(|(x, p)| x * x * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.lattice
            .positions()
            .zip(&self.probs)
            .map(|(x, p)| (x - mu) * (x - mu) * p)
            .sum()
    }
}

/// Gaussian of standard deviation `sigma` integrated over each bin; the two
/// edge bins take the open tails.
pub fn discretized_gaussian_pmf(sigma: f64, scheme: &BinningScheme) -> Result<Pmf> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let scale = SQRT_2 * sigma;
    let half = scheme.delta / 2.0;
    let (k_lo, k_hi) = (scheme.k_min(), scheme.k_max());
    let probs = (k_lo..=k_hi)
        .map(|k| {
            let center = scheme.center(k);
            if k == k_lo {
                // (-inf, center + delta/2)
                0.5 * erfc(-(center + half) / scale)
            } else if k == k_hi {
                // [center - delta/2, inf)
                0.5 * erfc((center - half) / scale)
            } else {
                let (a, b) = ((center - half) / scale, (center + half) / scale);
                if a > 0.0 {
                    0.5 * (erfc(a) - erfc(b))
                } else if b < 0.0 {
                    0.5 * (erfc(-b) - erfc(-a))
                } else {
                    0.5 * (erf(b) - erf(a))
                }
            }
        })
        .collect();
    Pmf::on_scheme(scheme, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scheme(m: usize, delta: f64) -> BinningScheme {
        BinningScheme::new(m, delta).unwrap()
    }

    #[test]
    fn scheme_rejects_odd_or_degenerate() {
        assert!(BinningScheme::new(3, 1.0).is_err());
        assert!(BinningScheme::new(0, 1.0).is_err());
        assert!(BinningScheme::new(4, 0.0).is_err());
    }

    #[test]
    fn normalization_examples() {
        let raw: Vec<f64> = vec![1.0, -1.0, 2.0];
        let out = normalize_snu(&raw, 1.5, 0.5).unwrap();
        assert_eq!(out, raw);
        let out = normalize_snu(&[2.0], 5.0, 1.0).unwrap();
        assert_eq!(out, vec![1.0]);
        assert!(matches!(
            normalize_snu(&raw, 1.0, 1.0),
            Err(Error::CalibrationFailure { .. })
        ));
    }

    #[test]
    fn normalized_variance_scales() {
        let raw: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let out = normalize_snu(&raw, 1.5, 0.5).unwrap();
        let v_raw = crate::source::sample_variance(&raw);
        let v_out = crate::source::sample_variance(&out);
        assert!((v_out - v_raw / 1.0).abs() < 1e-12);
        let out = normalize_snu(&raw, 4.5, 0.5).unwrap();
        assert!((crate::source::sample_variance(&out) - v_raw / 4.0).abs() < 1e-12);
    }

    #[test]
    fn bin_examples() {
        let s = scheme(4096, 0.0155607);
        assert_eq!(bin_sample(0.0, &s), 0);
        assert_eq!(bin_sample(0.49 * s.delta(), &s), 0);
        assert_eq!(bin_sample(0.5 * s.delta(), &s), 1);
        assert_eq!(bin_sample(-0.5 * s.delta(), &s), 0);
        assert_eq!(bin_sample(1e9, &s), 2047);
        assert_eq!(bin_sample(-1e9, &s), -2048);
        assert_eq!(bin_sample(f64::INFINITY, &s), 2047);
    }

    #[test]
    fn accumulate_examples() {
        let s = scheme(8, 0.5);
        let h = accumulate(&[], &s);
        assert_eq!(h.n(), 0);
        assert!(h.counts().iter().all(|&c| c == 0));
        let h = accumulate(&[0.0, 0.0, 0.5], &s);
        assert_eq!(h.count(0), 2);
        assert_eq!(h.count(1), 1);
        assert_eq!(h.n(), 3);
        let h2 = accumulate(&[0.5, 0.0, 0.0], &s);
        assert_eq!(h, h2);
    }

    #[test]
    fn merge_adds_counts() {
        let s = scheme(8, 1.0);
        let mut a = accumulate(&[0.0, 1.0], &s);
        let b = accumulate(&[1.0, -3.0], &s);
        a.merge(&b).unwrap();
        assert_eq!(a, accumulate(&[0.0, 1.0, 1.0, -3.0], &s));
        assert!(a.merge(&Histogram::empty(scheme(4, 1.0))).is_err());
    }

    #[test]
    fn extreme_bins() {
        let s = scheme(8, 1.0);
        assert_eq!(extreme_bin_check(&accumulate(&[0.0, 1.0, -2.0], &s)), ExtremeBins::Ok);
        assert_eq!(extreme_bin_check(&accumulate(&[-4.0], &s)), ExtremeBins::Violated);
        assert_eq!(extreme_bin_check(&accumulate(&[2.5], &s)), ExtremeBins::Violated);
        assert_eq!(extreme_bin_check(&Histogram::empty(s)), ExtremeBins::Ok);
    }

    #[test]
    fn csv_export() {
        let s = scheme(4, 1.0);
        let h = accumulate(&[0.0, 0.0, -1.0], &s);
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "k,center,count\n-2,-2,0\n-1,-1,1\n0,0,2\n1,1,0\n");
    }

    #[test]
    fn gaussian_center_bin() {
        // erf(1/sqrt 2) from an independent series evaluation
        let oracle = {
            let x: f64 = 1.0 / SQRT_2;
            let mut term = x;
            let mut sum = x;
            for n in 1..60 {
                term *= -x * x / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        };
        assert!((oracle - 0.682_689_492).abs() < 1e-9);
        let p = discretized_gaussian_pmf(1.0, &scheme(16, 2.0)).unwrap();
        assert!((p.prob_at(0) - oracle).abs() < 1e-13, "{}", p.prob_at(0) - oracle);
    }

    #[test]
    fn gaussian_delta_limit() {
        let p = discretized_gaussian_pmf(1e-9, &scheme(64, 0.1)).unwrap();
        assert!((p.prob_at(0) - 1.0).abs() < 1e-15);
        assert!(p.probs().iter().filter(|&&q| q > 0.0).count() == 1);
    }

    #[test]
    fn gaussian_normalized_and_symmetric() {
        let s = scheme(4096, 0.0155607);
        let p = discretized_gaussian_pmf(1.0, &s).unwrap();
        let sum: f64 = p.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for k in 1..2047 {
            assert!((p.prob_at(k) - p.prob_at(-k)).abs() < 1e-17);
        }
    }

    #[test]
    fn gaussian_variance_fine_grid() {
        let s = scheme(20_000, 1e-3);
        let p = discretized_gaussian_pmf(1.0, &s).unwrap();
        assert!(p.mean().abs() < 1e-4);
        assert!((p.variance() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn empirical_matches_gaussian() {
        use crate::source::{DetectorModel, Homodyne, Quadrature, SourceModel};
        let mut h = Homodyne::new(DetectorModel {
            dark_var: 0.0,
            shot_var: 1.0,
            range: f64::INFINITY,
            seed: 3,
        });
        let s = scheme(256, 0.05);
        let block = h.draw_block(&SourceModel::vacuum(), Quadrature::Data, 1_000_000);
        let hist = accumulate(&block.samples, &s);
        let emp = Pmf::empirical(&hist).unwrap();
        let th = discretized_gaussian_pmf(1.0, &s).unwrap();
        // Kolmogorov-Smirnov distance on the binned CDFs
        let (mut ce, mut ct, mut d) = (0.0, 0.0, 0.0f64);
        for (a, b) in emp.probs().iter().zip(th.probs()) {
            ce += a;
            ct += b;
            d = d.max((ce - ct).abs());
        }
        // 1% critical value 1.63/sqrt(n)
        assert!(d < 1.63 / 1000.0, "KS distance {d}");
    }

    proptest! {
        #[test]
        fn binning_is_monotone(a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let s = scheme(64, 0.37);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bin_sample(lo, &s) <= bin_sample(hi, &s));
        }

        #[test]
        fn interior_bins_are_half_open(k in -30i64..30, frac in 0.0f64..1.0) {
            let s = scheme(64, 0.25);
            let x = (k as f64 - 0.5 + frac * 0.999_999) * s.delta();
            prop_assert_eq!(bin_sample(x, &s), k);
        }
    }
}
