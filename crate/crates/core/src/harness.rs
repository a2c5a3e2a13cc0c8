//! Benchmarking drivers behind the command-line tool: estimator bias
//! sweeps, the nine-bin small-sample study, closed-form theory curves and
//! a quick self-test. Every driver is deterministic for a fixed seed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::bound::{self, ConstantMode};
use crate::config::{ProtocolConfig, DEFAULT_DELTA};
use crate::discretization::{accumulate, discretized_gaussian_pmf, BinningScheme, Lattice};
use crate::error::{Error, Result};
use crate::estimators::{
    bayes_uniform_counts, h_max_counts, h_max_evb_or_fallback, h_max_pmf, h_max_probs, h_min_pmf,
    unbiased_variance, DEFAULT_PEAKED_K,
};
use crate::extractor::{toeplitz_hash, toeplitz_hash_reference, BitVec, ToeplitzSeed};
use crate::nist;
use crate::protocol::{derive_seed, run_session};
use crate::source::SourceModel;

/// Quantities tracked by the bias sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasQuantity {
    /// `H_low` of the check quadrature from the plug-in `H_max`.
    HlowFreq,
    HlowBayesUniform,
    HlowBayesPeaked { k: f64 },
    HlowEvb,
    /// Plug-in `H_min` of the data quadrature.
    HminFreq,
}

impl BiasQuantity {
    pub fn name(&self) -> &'static str {
        match self {
            BiasQuantity::HlowFreq => "h_low_freq",
            BiasQuantity::HlowBayesUniform => "h_low_bayes_up",
            BiasQuantity::HlowBayesPeaked { .. } => "h_low_bayes_pp",
            BiasQuantity::HlowEvb => "h_low_evb",
            BiasQuantity::HminFreq => "h_min_freq",
        }
    }

    /// Accepts the estimator names used elsewhere (`freq`, `bayes_up`,
    /// `bayes_pp`, `evb`) plus `h_min_freq`.
    pub fn parse(name: &str, k: f64) -> Result<Self> {
        match name {
            "freq" | "h_low_freq" => Ok(BiasQuantity::HlowFreq),
            "bayes_up" | "h_low_bayes_up" => Ok(BiasQuantity::HlowBayesUniform),
            "bayes_pp" | "h_low_bayes_pp" => Ok(BiasQuantity::HlowBayesPeaked { k }),
            "evb" | "h_low_evb" => Ok(BiasQuantity::HlowEvb),
            "h_min_freq" | "freq_min" => Ok(BiasQuantity::HminFreq),
            other => Err(Error::Config(format!("unknown bias quantity '{other}'"))),
        }
    }

    fn is_h_low(&self) -> bool {
        !matches!(self, BiasQuantity::HminFreq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSimConfig {
    pub quantities: Vec<BiasQuantity>,
    pub n_values: Vec<usize>,
    pub repetitions: usize,
    pub source: SourceModel,
    pub m: usize,
    pub delta: f64,
    pub constant_mode: ConstantMode,
    pub seed: u64,
}

impl Default for BiasSimConfig {
    fn default() -> Self {
        BiasSimConfig {
            quantities: vec![
                BiasQuantity::HlowFreq,
                BiasQuantity::HlowBayesUniform,
                BiasQuantity::HlowBayesPeaked { k: DEFAULT_PEAKED_K },
                BiasQuantity::HlowEvb,
                BiasQuantity::HminFreq,
            ],
            n_values: vec![16_000],
            repetitions: 1000,
            source: SourceModel::vacuum(),
            m: 4096,
            delta: DEFAULT_DELTA,
            constant_mode: ConstantMode::LeadingOrder,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub quantity: String,
    pub n: usize,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
    /// Closed-form value of the same quantity for the true distribution.
    pub theory: f64,
}

impl BiasRow {
    pub fn std_err(&self) -> f64 {
        self.std / (self.repetitions as f64).sqrt()
    }

    /// `(mean - theory) / std_err`.
    pub fn z_score(&self) -> f64 {
        (self.mean - self.theory) / self.std_err()
    }
}

pub const BIAS_CSV_HEADER: &str = "quantity,n,repetitions,mean,std,std_err,theory,bias";

pub fn write_bias_csv<W: Write>(rows: &[BiasRow], mut w: W) -> Result<()> {
    writeln!(w, "{BIAS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.quantity,
            r.n,
            r.repetitions,
            r.mean,
            r.std,
            r.std_err(),
            r.theory,
            r.mean - r.theory
        )?;
    }
    Ok(())
}

/// Closed-form entropies of a source on a given binning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryPoint {
    /// `H_min` of the data quadrature Q.
    pub h_min_q: f64,
    /// `H_max` of the check quadrature P.
    pub h_max_p: f64,
    /// `H_low` from `H_max` of P.
    pub h_low_p: f64,
    pub c: f64,
}

pub fn theory_point(
    source: &SourceModel,
    m: usize,
    delta: f64,
    mode: ConstantMode,
) -> Result<TheoryPoint> {
    let scheme = BinningScheme::new(m, delta)?;
    let q = discretized_gaussian_pmf(source.v_data.sqrt(), &scheme)?;
    let p = discretized_gaussian_pmf(source.v_check.sqrt(), &scheme)?;
    let c = bound::incompatibility_constant(delta, delta, mode)?;
    let h_max_p = h_max_pmf(&p);
    Ok(TheoryPoint {
        h_min_q: h_min_pmf(&q),
        h_max_p,
        h_low_p: bound::h_low(h_max_p, c),
        c,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn gaussian_samples<R: Rng>(rng: &mut R, sigma: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Repeats the estimation `repetitions` times for every `(quantity, n)`.
///
/// Each repetition draws fresh check (variance `v_check`) and data
/// (variance `v_data`) samples; all quantities of one repetition share them.
pub fn bias_sim(cfg: &BiasSimConfig) -> Result<Vec<BiasRow>> {
    if cfg.repetitions < 2 {
        return Err(Error::InvalidParameter("repetitions must be >= 2".into()));
    }
    if cfg.quantities.is_empty() || cfg.n_values.is_empty() {
        return Err(Error::InvalidParameter("nothing to simulate".into()));
    }
    if cfg.n_values.contains(&0) {
        return Err(Error::InvalidParameter("sample sizes must be >= 1".into()));
    }
    let scheme = BinningScheme::new(cfg.m, cfg.delta)?;
    let lattice = scheme.lattice();
    let th = theory_point(&cfg.source, cfg.m, cfg.delta, cfg.constant_mode)?;
    let log_c = th.c.log2();
    let needs_q = cfg.quantities.iter().any(|q| !q.is_h_low());
    let needs_p = cfg.quantities.iter().any(|q| q.is_h_low());
    let (sigma_p, sigma_q) = (cfg.source.v_check.sqrt(), cfg.source.v_data.sqrt());

    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_values.iter().enumerate() {
        let per_rep: Result<Vec<Vec<f64>>> = (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| {
                let stream = ((ni as u64) << 32) | rep as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
                let p = if needs_p { gaussian_samples(&mut rng, sigma_p, n) } else { Vec::new() };
                let q = if needs_q { gaussian_samples(&mut rng, sigma_q, n) } else { Vec::new() };
                let hp = accumulate(&p, &scheme);
                let hq = accumulate(&q, &scheme);
                cfg.quantities
                    .iter()
                    .map(|quantity| {
                        let h_max = match *quantity {
                            BiasQuantity::HminFreq => {
                                let max = *hq.counts().iter().max().unwrap_or(&0) as f64;
                                return Ok(-(max / n as f64).log2());
                            }
                            BiasQuantity::HlowFreq => h_max_counts(hp.counts(), hp.n()),
                            BiasQuantity::HlowBayesUniform => bayes_uniform_counts(hp.counts()),
                            BiasQuantity::HlowBayesPeaked { k } => {
                                h_max_probs(&peaked_probs(hp.counts(), k))
                            }
                            BiasQuantity::HlowEvb => {
                                let v = unbiased_variance(&p)?;
                                h_max_evb_or_fallback(&lattice, v).value
                            }
                        };
                        Ok(-h_max - log_c)
                    })
                    .collect()
            })
            .collect();
        let per_rep = per_rep?;
        for (j, quantity) in cfg.quantities.iter().enumerate() {
            let vals: Vec<f64> = per_rep.iter().map(|r| r[j]).collect();
            let (mean, std) = mean_std(&vals);
            rows.push(BiasRow {
                quantity: quantity.name().to_string(),
                n,
                repetitions: cfg.repetitions,
                mean,
                std,
                theory: if quantity.is_h_low() { th.h_low_p } else { th.h_min_q },
            });
        }
    }
    rows.sort_by(|a, b| a.quantity.cmp(&b.quantity).then(a.n.cmp(&b.n)));
    Ok(rows)
}

fn peaked_probs(counts: &[u64], k: f64) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    let denom = n as f64 + counts.len() as f64 * k;
    counts.iter().map(|&c| (c as f64 + k) / denom).collect()
}

// ---------------------------------------------------------------------------
// nine-bin study

pub const NINE: usize = 9;

/// A named 9-bin distribution on the positions `-4..=4`.
#[derive(Debug, Clone, PartialEq)]
pub struct NineBinPmf {
    pub name: String,
    pub probs: [f64; NINE],
}

impl NineBinPmf {
    pub fn new(name: impl Into<String>, weights: &[f64]) -> Result<Self> {
        if weights.len() != NINE {
            return Err(Error::InvalidParameter(format!(
                "expected {NINE} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let mut probs = [0.0; NINE];
        for (p, w) in probs.iter_mut().zip(weights) {
            *p = w / total;
        }
        Ok(NineBinPmf {
            name: name.into(),
            probs,
        })
    }

    /// Parses nine numbers separated by commas or whitespace; they are
    /// normalized, so raw weights are fine.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let weights: std::result::Result<Vec<f64>, _> = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect();
        let weights =
            weights.map_err(|e| Error::InvalidParameter(format!("bad pmf entry: {e}")))?;
        NineBinPmf::new(name, &weights)
    }

    pub fn h_max(&self) -> f64 {
        h_max_probs(&self.probs)
    }

    fn cdf(&self) -> [f64; NINE] {
        let mut acc = 0.0;
        let mut out = [0.0; NINE];
        for (o, p) in out.iter_mut().zip(self.probs) {
            acc += p;
            *o = acc;
        }
        out[NINE - 1] = 1.0;
        out
    }
}

/// Uniform, single-peak and bimodal shapes.
pub fn builtin_nine_bin() -> Vec<NineBinPmf> {
    vec![
        NineBinPmf::new("uniform", &[1.0; NINE]).unwrap(),
        NineBinPmf::new("single_peak", &[1.0, 2.0, 4.0, 8.0, 16.0, 8.0, 4.0, 2.0, 1.0]).unwrap(),
        NineBinPmf::new("bimodal", &[1.0, 4.0, 10.0, 4.0, 1.0, 4.0, 10.0, 4.0, 1.0]).unwrap(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct NineBinRow {
    pub pmf: String,
    pub estimator: String,
    pub n: usize,
    pub repetitions: usize,
    pub mean: f64,
    pub std: f64,
    pub theory: f64,
}

impl NineBinRow {
    pub fn std_err(&self) -> f64 {
        self.std / (self.repetitions as f64).sqrt()
    }

    /// Mean `H_max` below the true value: the bound built on it would
    /// overstate the extractable randomness.
    pub fn negative_bias(&self) -> bool {
        self.mean < self.theory
    }
}

pub fn write_nine_bin_csv<W: Write>(rows: &[NineBinRow], mut w: W) -> Result<()> {
    writeln!(w, "pmf,estimator,n,repetitions,mean,std,std_err,theory,bias,negative_bias")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.pmf,
            r.estimator,
            r.n,
            r.repetitions,
            r.mean,
            r.std,
            r.std_err(),
            r.theory,
            r.mean - r.theory,
            r.negative_bias()
        )?;
    }
    Ok(())
}

pub const NINE_BIN_ESTIMATORS: [&str; 4] = ["freq", "bayes_up", "bayes_pp", "evb"];

/// Sweeps the four `H_max` estimators over small sample sizes for each
/// distribution. `k` is the peaked-prior concentration.
pub fn nine_bin_study(
    pmfs: &[NineBinPmf],
    n_values: &[usize],
    repetitions: usize,
    k: f64,
    seed: u64,
) -> Result<Vec<NineBinRow>> {
    if repetitions < 2 {
        return Err(Error::InvalidParameter("repetitions must be >= 2".into()));
    }
    if n_values.iter().any(|&n| n < 2) {
        return Err(Error::InvalidParameter("sample sizes must be >= 2".into()));
    }
    // unit spacing; only the shape of the variance constraint matters
    let lattice = Lattice::symmetric(4, 1.0)?;
    let mut rows = Vec::new();
    for (pi, pmf) in pmfs.iter().enumerate() {
        let cdf = pmf.cdf();
        let theory = pmf.h_max();
        for (ni, &n) in n_values.iter().enumerate() {
            let per_rep: Vec<[f64; 4]> = (0..repetitions)
                .into_par_iter()
                .map(|rep| {
                    let stream = ((pi as u64) << 48) | ((ni as u64) << 32) | rep as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
                    let mut counts = [0u64; NINE];
                    for _ in 0..n {
                        let u: f64 = rng.random();
                        let idx = cdf.iter().position(|&c| u < c).unwrap_or(NINE - 1);
                        counts[idx] += 1;
                    }
                    nine_bin_estimates(&counts, &lattice, k)
                })
                .collect();
            for (j, name) in NINE_BIN_ESTIMATORS.iter().enumerate() {
                let vals: Vec<f64> = per_rep.iter().map(|r| r[j]).collect();
                let (mean, std) = mean_std(&vals);
                rows.push(NineBinRow {
                    pmf: pmf.name.clone(),
                    estimator: name.to_string(),
                    n,
                    repetitions,
                    mean,
                    std,
                    theory,
                });
            }
        }
    }
    Ok(rows)
}

fn nine_bin_estimates(counts: &[u64; NINE], lattice: &Lattice, k: f64) -> [f64; 4] {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mean = counts
        .iter()
        .zip(lattice.positions())
        .map(|(&c, x)| c as f64 * x)
        .sum::<f64>()
        / nf;
    let ss = counts
        .iter()
        .zip(lattice.positions())
        .map(|(&c, x)| c as f64 * (x - mean).powi(2))
        .sum::<f64>();
    let variance = ss / (nf - 1.0);
    [
        h_max_counts(counts, n),
        bayes_uniform_counts(counts),
        h_max_probs(&peaked_probs(counts, k)),
        h_max_evb_or_fallback(lattice, variance).value,
    ]
}

// ---------------------------------------------------------------------------
// theory curves

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub source: String,
    pub v_check: f64,
    pub v_data: f64,
    pub delta: f64,
    pub point: TheoryPoint,
}

pub fn theory_sweep(
    sources: &[SourceModel],
    deltas: &[f64],
    m: usize,
    mode: ConstantMode,
) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::with_capacity(sources.len() * deltas.len());
    for s in sources {
        for &d in deltas {
            rows.push(TheoryRow {
                source: crate::config::source_text(s),
                v_check: s.v_check,
                v_data: s.v_data,
                delta: d,
                point: theory_point(s, m, d, mode)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], mut w: W) -> Result<()> {
    writeln!(w, "source,v_check,v_data,delta,h_min_q,h_max_p,h_low_p,c")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.source,
            r.v_check,
            r.v_data,
            r.delta,
            r.point.h_min_q,
            r.point.h_max_p,
            r.point.h_low_p,
            r.point.c
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// self-test

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> SelfTestResult {
    SelfTestResult { name, pass, detail }
}

/// Fast end-to-end checks of the main components.
pub fn self_test(seed: u64) -> Vec<SelfTestResult> {
    let mut out = Vec::new();

    let l = bound::secure_length(16_000, 7.0, 1e-10);
    out.push(check("secure_length", l == 111_933, format!("{l}")));

    let b = bayes_uniform_counts(&[0, 0]);
    out.push(check("bayes_uniform", (b - 0.830_075).abs() < 1e-6, format!("{b}")));

    match nist::proportion_interval(1000, 0.01) {
        Ok((lo, hi)) => out.push(check(
            "clopper_pearson",
            (lo - 0.978_724).abs() < 5e-7 && (hi - 0.996_273).abs() < 5e-7,
            format!("[{lo:.6}, {hi:.6}]"),
        )),
        Err(e) => out.push(check("clopper_pearson", false, e.to_string())),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100));
    let toeplitz_ok = (0..20).all(|_| {
        let n_raw = rng.random_range(1..4000);
        let l_max = rng.random_range(1..=n_raw);
        let l = rng.random_range(1..=l_max);
        let block = BitVec::random(n_raw, &mut rng);
        ToeplitzSeed::random(l_max, n_raw, &mut rng).is_ok_and(|s| {
            matches!(
                (toeplitz_hash(&block, &s, l), toeplitz_hash_reference(&block, &s, l)),
                (Ok(a), Ok(b)) if a == b
            )
        })
    });
    out.push(check("toeplitz", toeplitz_ok, "fast hash matches reference".into()));

    let cfg = ProtocolConfig {
        blocks: 20,
        seed,
        ..ProtocolConfig::default()
    };
    match run_session(cfg) {
        Ok(rep) => out.push(check(
            "session",
            rep.stats.bits_emitted > 0 && rep.accounting_balanced() && rep.session_aborted.is_none(),
            format!("{} bits in {} blocks", rep.stats.bits_emitted, rep.stats.blocks),
        )),
        Err(e) => out.push(check("session", false, e.to_string())),
    }

    let samples: Vec<BitVec> = (0..20).map(|_| BitVec::random(10_000, &mut rng)).collect();
    match nist::suite(&samples, 0.01) {
        Ok(s) => out.push(check(
            "randomness_tests",
            s.tests.iter().all(|t| t.proportion_ok),
            format!("{} samples", s.samples),
        )),
        Err(e) => out.push(check("randomness_tests", false, e.to_string())),
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
    let v = unbiased_variance(&xs).unwrap_or(f64::NAN);
    out.push(check("gaussian_variance", (v - 1.0).abs() < 0.02, format!("{v}")));

    out
}
