//! A subset of the SP 800-22 tests (frequency, block frequency, runs,
//! cumulative sums) and the suite-level acceptance bookkeeping: pass
//! proportions against a Clopper–Pearson interval and a chi-square test of
//! p-value uniformity over ten sub-intervals.

use std::f64::consts::SQRT_2;
use std::io::Write;

use libm::erfc;
use rayon::prelude::*;
use statrs::function::beta::inv_beta_reg;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::extractor::BitVec;

pub const MIN_BITS: usize = 100;

/// Default block length for the block-frequency test.
pub const DEFAULT_BLOCK_LEN: usize = 128;

/// p-values of a suite should exceed this for the uniformity check.
pub const UNIFORMITY_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Monobit,
    BlockFrequency,
    Runs,
    CumulativeSums,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [
        TestKind::Monobit,
        TestKind::BlockFrequency,
        TestKind::Runs,
        TestKind::CumulativeSums,
    ];
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestKind::Monobit => "monobit",
            TestKind::BlockFrequency => "block_frequency",
            TestKind::Runs => "runs",
            TestKind::CumulativeSums => "cumulative_sums",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub test: TestKind,
    pub p_value: f64,
    pub pass: bool,
}

impl TestOutcome {
    fn new(test: TestKind, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        TestOutcome {
            test,
            p_value,
            pass: p_value >= alpha,
        }
    }
}

fn check_len(bits: &BitVec) -> Result<()> {
    if bits.len() < MIN_BITS {
        return Err(Error::InsufficientData {
            needed: MIN_BITS,
            got: bits.len(),
        });
    }
    Ok(())
}

/// Regularized upper incomplete gamma function Q(a, x).
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x)
    }
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Frequency (monobit) test p-value.
pub fn monobit(bits: &BitVec) -> Result<f64> {
    check_len(bits)?;
    let n = bits.len() as f64;
    let s = 2.0 * bits.count_ones() as f64 - n;
    Ok(erfc(s.abs() / n.sqrt() / SQRT_2))
}

/// Frequency-within-a-block test with block length `m`.
pub fn block_frequency(bits: &BitVec, m: usize) -> Result<f64> {
    check_len(bits)?;
    if m == 0 || m > bits.len() {
        return Err(Error::InvalidParameter(format!(
            "block length {m} invalid for {} bits",
            bits.len()
        )));
    }
    let blocks = bits.len() / m;
    let mut chi = 0.0;
    for b in 0..blocks {
        let ones = bits.slice(b * m, m).count_ones() as f64;
        let d = ones / m as f64 - 0.5;
        chi += d * d;
    }
    chi *= 4.0 * m as f64;
    Ok(igamc(blocks as f64 / 2.0, chi / 2.0))
}

/// Number of positions `i` with `bits[i] != bits[i + 1]`.
fn transitions(bits: &BitVec) -> usize {
    let w = bits.words();
    let n = bits.len();
    let mut count = 0usize;
    for (k, &word) in w.iter().enumerate() {
        let next_bit = w.get(k + 1).map_or(0, |x| x & 1);
        let shifted = word >> 1 | next_bit << 63;
        let mut diff = word ^ shifted;
        // only pairs (i, i + 1) with i + 1 < n
        let base = k * 64;
        if base + 64 >= n {
            let valid = n.saturating_sub(base + 1);
            diff &= if valid >= 64 { u64::MAX } else { (1u64 << valid) - 1 };
        }
        count += diff.count_ones() as usize;
    }
    count
}

/// Runs test p-value; 0 when the frequency prerequisite fails.
pub fn runs(bits: &BitVec) -> Result<f64> {
    check_len(bits)?;
    let n = bits.len() as f64;
    let pi = bits.count_ones() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return Ok(0.0);
    }
    let v = (transitions(bits) + 1) as f64;
    let q = pi * (1.0 - pi);
    Ok(erfc((v - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q)))
}

/// Cumulative sums test; `forward = false` walks the sequence backwards.
pub fn cumulative_sums(bits: &BitVec, forward: bool) -> Result<f64> {
    check_len(bits)?;
    let n = bits.len();
    let mut s = 0i64;
    let mut z = 0i64;
    let step = |i: usize, s: &mut i64, z: &mut i64| {
        *s += if bits.get(i) { 1 } else { -1 };
        *z = (*z).max(s.abs());
    };
    if forward {
        (0..n).for_each(|i| step(i, &mut s, &mut z));
    } else {
        (0..n).rev().for_each(|i| step(i, &mut s, &mut z));
    }
    Ok(cusum_p_value(n as f64, z as f64))
}

fn cusum_p_value(n: f64, z: f64) -> f64 {
    let sq = n.sqrt();
    // truncation toward zero, as in the reference implementation
    let range = |lo: f64, hi: f64| (lo as i64)..=(hi as i64);
    let mut p = 1.0;
    for k in range((-n / z + 1.0) / 4.0, (n / z - 1.0) / 4.0) {
        let k = k as f64;
        p -= phi((4.0 * k + 1.0) * z / sq) - phi((4.0 * k - 1.0) * z / sq);
    }
    for k in range((-n / z - 3.0) / 4.0, (n / z - 1.0) / 4.0) {
        let k = k as f64;
        p += phi((4.0 * k + 3.0) * z / sq) - phi((4.0 * k + 1.0) * z / sq);
    }
    p
}

/// Runs every implemented test on one sample.
pub fn run_all(bits: &BitVec, alpha: f64, block_len: usize) -> Result<Vec<TestOutcome>> {
    Ok(vec![
        TestOutcome::new(TestKind::Monobit, monobit(bits)?, alpha),
        TestOutcome::new(
            TestKind::BlockFrequency,
            block_frequency(bits, block_len)?,
            alpha,
        ),
        TestOutcome::new(TestKind::Runs, runs(bits)?, alpha),
        TestOutcome::new(
            TestKind::CumulativeSums,
            cumulative_sums(bits, true)?,
            alpha,
        ),
    ])
}

/// Exact two-sided binomial interval for `x` successes in `n` trials at
/// confidence `1 - alpha`.
pub fn clopper_pearson(x: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    if n == 0 || x > n {
        return Err(Error::InvalidParameter(format!("need 0 <= x <= n, n > 0; got {x}/{n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (xf, nf) = (x as f64, n as f64);
    let low = if x == 0 {
        0.0
    } else {
        inv_beta_reg(xf, nf - xf + 1.0, alpha / 2.0)
    };
    let high = if x == n {
        1.0
    } else {
        inv_beta_reg(xf + 1.0, nf - xf, 1.0 - alpha / 2.0)
    };
    Ok((low, high))
}

/// Acceptance interval for pass proportions over `samples` samples: the
/// Clopper–Pearson interval around the expected pass count `(1 - alpha) s`.
pub fn proportion_interval(samples: u64, alpha: f64) -> Result<(f64, f64)> {
    let expected = ((1.0 - alpha) * samples as f64).round() as u64;
    clopper_pearson(expected, samples, alpha)
}

/// Chi-square p-value of a p-value histogram over ten equal sub-intervals.
pub fn uniformity_p(p_values: &[f64]) -> f64 {
    let s = p_values.len() as f64;
    if s == 0.0 {
        return 0.0;
    }
    let mut hist = [0u64; 10];
    for &p in p_values {
        hist[((p * 10.0) as usize).min(9)] += 1;
    }
    let e = s / 10.0;
    let chi: f64 = hist.iter().map(|&f| (f as f64 - e).powi(2) / e).sum();
    igamc(4.5, chi / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSummary {
    pub test: TestKind,
    pub pass_proportion: f64,
    pub uniformity_p: f64,
    /// Proportion inside the two-sided interval.
    pub within_interval: bool,
    /// Proportion not below the interval. Exceeding the upper limit means
    /// fewer rejections than expected, which alone is not counted as a failure.
    pub proportion_ok: bool,
    pub uniformity_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub samples: usize,
    pub alpha: f64,
    pub proportion_interval: (f64, f64),
    pub tests: Vec<TestSummary>,
    /// Outcomes per sample, in sample order.
    pub outcomes: Vec<Vec<TestOutcome>>,
}

impl SuiteSummary {
    pub fn all_ok(&self) -> bool {
        self.tests
            .iter()
            .all(|t| t.proportion_ok && t.uniformity_ok)
    }

    /// One row per sample and test, then one summary row per test.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample,test,p_value,pass")?;
        for (i, row) in self.outcomes.iter().enumerate() {
            for o in row {
                writeln!(w, "{i},{},{},{}", o.test, o.p_value, o.pass)?;
            }
        }
        writeln!(
            w,
            "\ntest,samples,pass_proportion,interval_low,interval_high,uniformity_p,within_interval,proportion_ok,uniformity_ok"
        )?;
        for t in &self.tests {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                t.test,
                self.samples,
                t.pass_proportion,
                self.proportion_interval.0,
                self.proportion_interval.1,
                t.uniformity_p,
                t.within_interval,
                t.proportion_ok,
                t.uniformity_ok
            )?;
        }
        Ok(())
    }
}

/// Runs all tests on every sample and aggregates.
pub fn suite(samples: &[BitVec], alpha: f64) -> Result<SuiteSummary> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let outcomes: Result<Vec<Vec<TestOutcome>>> = samples
        .par_iter()
        .map(|s| run_all(s, alpha, DEFAULT_BLOCK_LEN))
        .collect();
    let outcomes = outcomes?;
    let interval = proportion_interval(samples.len() as u64, alpha)?;
    let tests = TestKind::ALL
        .iter()
        .enumerate()
        .map(|(j, &test)| {
            let ps: Vec<f64> = outcomes.iter().map(|o| o[j].p_value).collect();
            let passes = outcomes.iter().filter(|o| o[j].pass).count();
            let prop = passes as f64 / samples.len() as f64;
            let u = uniformity_p(&ps);
            TestSummary {
                test,
                pass_proportion: prop,
                uniformity_p: u,
                within_interval: prop >= interval.0 && prop <= interval.1,
                proportion_ok: prop >= interval.0,
                uniformity_ok: u >= UNIFORMITY_THRESHOLD,
            }
        })
        .collect();
    Ok(SuiteSummary {
        samples: samples.len(),
        alpha,
        proportion_interval: interval,
        tests,
        outcomes,
    })
}

/// Splits a bit stream into consecutive samples of `len` bits, dropping the
/// incomplete tail.
pub fn split_samples(bits: &BitVec, len: usize) -> Vec<BitVec> {
    if len == 0 {
        return Vec::new();
    }
    (0..bits.len() / len)
        .map(|i| bits.slice(i * len, len))
        .collect()
}

/// Kolmogorov–Smirnov statistic of `values` against the uniform law on
/// [0, 1], with its asymptotic p-value.
pub fn ks_uniform(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
