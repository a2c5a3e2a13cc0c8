//! Protocol configuration and its `key = value` file format.

use std::path::PathBuf;
use std::str::FromStr;

use crate::bound::{ConstantMode, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::estimators::{ConfidenceSettings, HmaxEstimator, DEFAULT_PEAKED_K};
use crate::source::{DetectorModel, SourceKind, SourceModel};

/// Which variance feeds the EVB estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// Unbiased variance of the SNU samples.
    #[default]
    RawSamples,
    /// Unbiased variance of the bin centres.
    BinCenters,
}

/// How the Toeplitz matrix is chosen per data block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SeedMode {
    /// One seed for the whole session.
    #[default]
    Reuse,
    /// A fresh seed record per data block, read from a file.
    Stream(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Samples per block.
    pub n: usize,
    /// Bins; a power of two so each sample packs into `log2 m` bits.
    pub m: usize,
    pub check_probability: f64,
    pub epsilon: f64,
    pub estimator: HmaxEstimator,
    /// Prior concentration used whenever the estimator is `bayes_pp`.
    pub peaked_k: f64,
    pub failure_rate: f64,
    pub confidence: ConfidenceSettings,
    pub constant_mode: ConstantMode,
    pub variance_mode: VarianceMode,
    /// Subtract the block mean from SNU samples before binning.
    pub subtract_mean: bool,
    pub source: SourceModel,
    pub detector: DetectorModel,
    /// Digitizer bin width in raw units; `2 range / m` when unset.
    pub raw_bin_width: Option<f64>,
    /// Samples per calibration stage; `n` when unset.
    pub calibration_samples: Option<usize>,
    /// Maximum Toeplitz output rows; `n log2 m` when unset.
    pub l_max: Option<usize>,
    pub seed_mode: SeedMode,
    /// Optional file holding the session's single Toeplitz seed.
    pub toeplitz_seed_file: Option<PathBuf>,
    pub reservoir_bits: usize,
    pub max_consecutive_aborts: usize,
    pub blocks: usize,
    /// Master seed; every random stream derives from it.
    pub seed: u64,
}

/// Nominal SNU bin width of the default detector.
pub const DEFAULT_DELTA: f64 = 0.0155607;

/// Bits consumed per phase decision.
pub const DECISION_BITS: usize = 7;

impl Default for ProtocolConfig {
    fn default() -> Self {
        let m = 4096;
        ProtocolConfig {
            n: 16_000,
            m,
            check_probability: 0.1,
            epsilon: DEFAULT_EPSILON,
            estimator: HmaxEstimator::Evb,
            peaked_k: DEFAULT_PEAKED_K,
            failure_rate: 0.01,
            confidence: ConfidenceSettings::default(),
            constant_mode: ConstantMode::LeadingOrder,
            variance_mode: VarianceMode::RawSamples,
            subtract_mean: false,
            source: SourceModel::vacuum(),
            // unit shot-noise gain, so one raw unit is one SNU
            detector: DetectorModel {
                dark_var: 0.1,
                shot_var: 1.1,
                range: DEFAULT_DELTA * (m / 2) as f64,
                seed: 0,
            },
            raw_bin_width: None,
            calibration_samples: None,
            l_max: None,
            seed_mode: SeedMode::Reuse,
            toeplitz_seed_file: None,
            reservoir_bits: 128,
            max_consecutive_aborts: 3,
            blocks: 100,
            seed: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

/// `vacuum`, `thermal:V`, `squeezed:DB:LOSS` or `custom:V_CHECK:V_DATA`.
pub fn parse_source(text: &str) -> Result<SourceModel> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let kind: SourceKind = parts[0].parse()?;
    let num = |i: usize| -> Result<f64> {
        parts
            .get(i)
            .ok_or_else(|| Error::Config(format!("source '{text}' is missing a parameter")))
            .and_then(|v| parse("source", v))
    };
    let expect = |len: usize| -> Result<()> {
        if parts.len() == len {
            Ok(())
        } else {
            Err(Error::Config(format!("source '{text}' expects {} parameter(s)", len - 1)))
        }
    };
    let model = match kind {
        SourceKind::Vacuum => {
            expect(1)?;
            Ok(SourceModel::vacuum())
        }
        SourceKind::Thermal => {
            expect(2)?;
            SourceModel::thermal(num(1)?)
        }
        SourceKind::Squeezed => {
            expect(3)?;
            SourceModel::squeezed(num(1)?, num(2)?)
        }
        SourceKind::Custom => {
            expect(3)?;
            SourceModel::custom(num(1)?, num(2)?)
        }
    };
    model.map_err(|e| Error::Config(e.to_string()))
}

pub fn source_text(s: &SourceModel) -> String {
    match s.kind {
        SourceKind::Vacuum => "vacuum".into(),
        SourceKind::Thermal => format!("thermal:{}", s.v_data),
        SourceKind::Squeezed => format!("squeezed:{}:{}", s.squeezing_db, s.loss),
        SourceKind::Custom => format!("custom:{}:{}", s.v_check, s.v_data),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("'{key}' expects a boolean, got '{value}'"))),
    }
}

impl ProtocolConfig {
    /// `round(128 p)`: a block is a check iff the 7-bit decision value is
    /// below this.
    pub fn check_threshold(&self) -> u8 {
        (self.check_probability * 128.0).round() as u8
    }

    pub fn bits_per_sample(&self) -> u32 {
        self.m.trailing_zeros()
    }

    pub fn n_raw(&self) -> usize {
        self.n * self.bits_per_sample() as usize
    }

    pub fn effective_l_max(&self) -> usize {
        self.l_max.unwrap_or_else(|| self.n_raw())
    }

    pub fn effective_raw_bin_width(&self) -> f64 {
        self.raw_bin_width
            .unwrap_or(2.0 * self.detector.range / self.m as f64)
    }

    pub fn effective_calibration_samples(&self) -> usize {
        self.calibration_samples.unwrap_or(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        if self.m < 2 || !self.m.is_power_of_two() {
            return Err(Error::Config(format!(
                "m must be a power of two >= 2, got {}",
                self.m
            )));
        }
        if !(self.check_probability > 0.0 && self.check_probability < 1.0) {
            return Err(Error::Config(format!(
                "check_probability must lie in (0, 1), got {}",
                self.check_probability
            )));
        }
        let t = self.check_probability * 128.0;
        if !(0.5..127.5).contains(&t) {
            return Err(Error::Config(format!(
                "check_probability {} rounds to an impossible threshold",
                self.check_probability
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.failure_rate > 0.0 && self.failure_rate < 0.5) {
            return Err(Error::Config(format!(
                "failure_rate must lie in (0, 0.5), got {}",
                self.failure_rate
            )));
        }
        if let HmaxEstimator::BayesPeaked { k } = self.estimator {
            if !(k >= 0.0) {
                return Err(Error::Config(format!("peaked_k must be >= 0, got {k}")));
            }
        }
        self.source
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.detector
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let w = self.effective_raw_bin_width();
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Config(format!(
                "raw bin width must be finite and positive, got {w} (set raw_bin_width when range is infinite)"
            )));
        }
        if self.effective_calibration_samples() < 2 {
            return Err(Error::Config("calibration_samples must be >= 2".into()));
        }
        if self.reservoir_bits < DECISION_BITS {
            return Err(Error::Config(format!(
                "reservoir_bits must be >= {DECISION_BITS}"
            )));
        }
        if self.max_consecutive_aborts == 0 {
            return Err(Error::Config("max_consecutive_aborts must be >= 1".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("blocks must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        match key {
            "n" => self.n = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "check_probability" => self.check_probability = parse(key, value)?,
            "epsilon" | "security.epsilon" => self.epsilon = parse(key, value)?,
            "estimator" => self.estimator = HmaxEstimator::parse(value, self.peaked_k)?,
            "peaked_k" => {
                self.peaked_k = parse(key, value)?;
                if let HmaxEstimator::BayesPeaked { k } = &mut self.estimator {
                    *k = self.peaked_k;
                }
            }
            "failure_rate" => self.failure_rate = parse(key, value)?,
            "posterior_draws" => self.confidence.draws = parse(key, value)?,
            "bootstrap_resamples" => self.confidence.resamples = parse(key, value)?,
            "constant_mode" => {
                self.constant_mode = match value {
                    "leading" | "leading_order" => ConstantMode::LeadingOrder,
                    "precise" => ConstantMode::Precise,
                    _ => return Err(Error::Config(format!("unknown constant_mode '{value}'"))),
                }
            }
            "variance_mode" => {
                self.variance_mode = match value {
                    "raw" | "raw_samples" => VarianceMode::RawSamples,
                    "bin_center" | "bin_centers" => VarianceMode::BinCenters,
                    _ => return Err(Error::Config(format!("unknown variance_mode '{value}'"))),
                }
            }
            "subtract_mean" => self.subtract_mean = parse_bool(key, value)?,
            "source" => self.source = parse_source(value)?,
            "source.kind" | "source.variance" | "source.squeezing_db" | "source.loss"
            | "source.v_check" | "source.v_data" => self.set_source_field(key, value)?,
            "dark_var" | "detector.dark_var" => self.detector.dark_var = parse(key, value)?,
            "shot_var" | "detector.shot_var" => self.detector.shot_var = parse(key, value)?,
            "range" | "detector.range" => {
                self.detector.range = match value {
                    "inf" | "infinity" => f64::INFINITY,
                    _ => parse(key, value)?,
                }
            }
            "raw_bin_width" => self.raw_bin_width = Some(parse(key, value)?),
            "calibration_samples" => self.calibration_samples = Some(parse(key, value)?),
            "l_max" => self.l_max = Some(parse(key, value)?),
            "seed_mode" => {
                self.seed_mode = match value {
                    "reuse" => SeedMode::Reuse,
                    v if v.starts_with("stream:") => SeedMode::Stream(PathBuf::from(&v[7..])),
                    _ => {
                        return Err(Error::Config(format!(
                            "seed_mode is 'reuse' or 'stream:<path>', got '{value}'"
                        )))
                    }
                }
            }
            "toeplitz_seed_file" => self.toeplitz_seed_file = Some(PathBuf::from(value)),
            "reservoir_bits" => self.reservoir_bits = parse(key, value)?,
            "max_consecutive_aborts" => self.max_consecutive_aborts = parse(key, value)?,
            "blocks" => self.blocks = parse(key, value)?,
            // the detector stream is derived from the master seed
            "seed" | "detector.seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Updates one field of the source model and rebuilds it from its kind.
    fn set_source_field(&mut self, key: &str, value: &str) -> Result<()> {
        let mut s = self.source;
        match key {
            "source.kind" => s.kind = value.parse()?,
            "source.variance" => {
                let v = parse(key, value)?;
                s.v_check = v;
                s.v_data = v;
            }
            "source.squeezing_db" => s.squeezing_db = parse(key, value)?,
            "source.loss" => s.loss = parse(key, value)?,
            "source.v_check" => s.v_check = parse(key, value)?,
            _ => s.v_data = parse(key, value)?,
        }
        let rebuilt = match s.kind {
            SourceKind::Vacuum => Ok(SourceModel::vacuum()),
            SourceKind::Thermal => SourceModel::thermal(s.v_data),
            SourceKind::Squeezed => SourceModel::squeezed(s.squeezing_db, s.loss),
            SourceKind::Custom => SourceModel::custom(s.v_check, s.v_data),
        };
        self.source = rebuilt.map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ProtocolConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Writes the full configuration in the file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("n", self.n.to_string());
        kv("m", self.m.to_string());
        kv("check_probability", self.check_probability.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("estimator", self.estimator.name().to_string());
        kv("peaked_k", self.peaked_k.to_string());
        kv("failure_rate", self.failure_rate.to_string());
        kv("posterior_draws", self.confidence.draws.to_string());
        kv("bootstrap_resamples", self.confidence.resamples.to_string());
        kv(
            "constant_mode",
            match self.constant_mode {
                ConstantMode::LeadingOrder => "leading",
                ConstantMode::Precise => "precise",
            }
            .into(),
        );
        kv(
            "variance_mode",
            match self.variance_mode {
                VarianceMode::RawSamples => "raw",
                VarianceMode::BinCenters => "bin_center",
            }
            .into(),
        );
        kv("subtract_mean", self.subtract_mean.to_string());
        kv("source", source_text(&self.source));
        kv("dark_var", self.detector.dark_var.to_string());
        kv("shot_var", self.detector.shot_var.to_string());
        kv(
            "range",
            if self.detector.range.is_infinite() {
                "inf".into()
            } else {
                self.detector.range.to_string()
            },
        );
        if let Some(w) = self.raw_bin_width {
            kv("raw_bin_width", w.to_string());
        }
        if let Some(c) = self.calibration_samples {
            kv("calibration_samples", c.to_string());
        }
        if let Some(l) = self.l_max {
            kv("l_max", l.to_string());
        }
        match &self.seed_mode {
            SeedMode::Reuse => kv("seed_mode", "reuse".into()),
            SeedMode::Stream(p) => kv("seed_mode", format!("stream:{}", p.display())),
        }
        if let Some(p) = &self.toeplitz_seed_file {
            kv("toeplitz_seed_file", p.display().to_string());
        }
        kv("reservoir_bits", self.reservoir_bits.to_string());
        kv("max_consecutive_aborts", self.max_consecutive_aborts.to_string());
        kv("blocks", self.blocks.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}
