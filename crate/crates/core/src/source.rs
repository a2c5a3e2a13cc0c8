//! Simulated untrusted optical source and trusted homodyne digitizer.
//!
//! Quadrature variances are in shot-noise units (vacuum = 1). The detector
//! maps an SNU variance `v` to a raw digitizer variance
//! `v * (shot_var - dark_var) + dark_var`, i.e. the optical signal is scaled
//! by the shot-noise gain and electronic dark noise is added independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Vacuum,
    Thermal,
    Squeezed,
    Custom,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SourceKind::Vacuum => "vacuum",
            SourceKind::Thermal => "thermal",
            SourceKind::Squeezed => "squeezed",
            SourceKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vacuum" => Ok(SourceKind::Vacuum),
            "thermal" => Ok(SourceKind::Thermal),
            "squeezed" => Ok(SourceKind::Squeezed),
            "custom" => Ok(SourceKind::Custom),
            other => Err(Error::Config(format!("unknown source kind '{other}'"))),
        }
    }
}

/// Quadrature statistics of the (untrusted) source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Variance of the check quadrature P (SNU).
    pub v_check: f64,
    /// Variance of the data quadrature Q (SNU).
    pub v_data: f64,
    pub loss: f64,
    pub squeezing_db: f64,
}

impl SourceModel {
    pub fn vacuum() -> Self {
        SourceModel {
            kind: SourceKind::Vacuum,
            v_check: 1.0,
            v_data: 1.0,
            loss: 0.0,
            squeezing_db: 0.0,
        }
    }

    /// Thermal state with equal variance `v >= 1` on both quadratures.
    pub fn thermal(v: f64) -> Result<Self> {
        if !(v >= 1.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "thermal variance must be >= 1, got {v}"
            )));
        }
        Ok(SourceModel {
            kind: SourceKind::Thermal,
            v_check: v,
            v_data: v,
            loss: 0.0,
            squeezing_db: 0.0,
        })
    }

    /// P-squeezed state: `squeezing_db` of pure squeezing followed by a
    /// fractional `loss` that mixes in vacuum.
    pub fn squeezed(squeezing_db: f64, loss: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&loss) {
            return Err(Error::InvalidParameter(format!(
                "loss must lie in [0, 1), got {loss}"
            )));
        }
        if !squeezing_db.is_finite() || squeezing_db < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "squeezing must be a finite non-negative dB value, got {squeezing_db}"
            )));
        }
        let g = 10f64.powf(squeezing_db / 10.0);
        Ok(SourceModel {
            kind: SourceKind::Squeezed,
            v_check: (1.0 - loss) / g + loss,
            v_data: (1.0 - loss) * g + loss,
            loss,
            squeezing_db,
        })
    }

    pub fn custom(v_check: f64, v_data: f64) -> Result<Self> {
        let m = SourceModel {
            kind: SourceKind::Custom,
            v_check,
            v_data,
            loss: 0.0,
            squeezing_db: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_check > 0.0 && self.v_data > 0.0) {
            return Err(Error::InvalidParameter(
                "quadrature variances must be positive".into(),
            ));
        }
        // allow for rounding in the closed forms
        if self.v_check * self.v_data < 1.0 - 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "v_check * v_data = {} violates the uncertainty principle",
                self.v_check * self.v_data
            )));
        }
        Ok(())
    }

    pub fn variance(&self, quadrature: Quadrature) -> f64 {
        match quadrature {
            Quadrature::Check => self.v_check,
            Quadrature::Data => self.v_data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    /// Electronic dark-noise variance (digitizer units squared).
    pub dark_var: f64,
    /// Vacuum shot-noise variance including dark noise (digitizer units squared).
    pub shot_var: f64,
    /// Saturation half-range; may be `f64::INFINITY`.
    pub range: f64,
    pub seed: u64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.dark_var >= 0.0) || !(self.shot_var > self.dark_var) {
            return Err(Error::InvalidParameter(format!(
                "need shot_var > dark_var >= 0, got shot {} dark {}",
                self.shot_var, self.dark_var
            )));
        }
        if !(self.range >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "range must be non-negative, got {}",
                self.range
            )));
        }
        Ok(())
    }

    /// Raw variance of a quadrature with SNU variance `v`.
    pub fn raw_variance(&self, v: f64) -> f64 {
        v * (self.shot_var - self.dark_var) + self.dark_var
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Check,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationStage {
    Dark,
    Shot,
}

/// Digitized samples plus the saturation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBlock {
    pub samples: Vec<f64>,
    pub saturated: bool,
}

/// One seeded acquisition stream. Not meant to be shared between threads.
#[derive(Debug, Clone)]
pub struct Homodyne {
    detector: DetectorModel,
    rng: ChaCha8Rng,
}

impl Homodyne {
    pub fn new(detector: DetectorModel) -> Self {
        Homodyne {
            rng: ChaCha8Rng::seed_from_u64(detector.seed),
            detector,
        }
    }

    pub fn detector(&self) -> &DetectorModel {
        &self.detector
    }

    /// Measures `n` samples of the given quadrature. Samples at or beyond
    /// the saturation range are clipped to `±range` and flagged.
    pub fn draw_block(&mut self, model: &SourceModel, quadrature: Quadrature, n: usize) -> RawBlock {
        let sd = self.detector.raw_variance(model.variance(quadrature)).sqrt();
        let range = self.detector.range;
        let mut saturated = false;
        let samples = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let x = sd * z;
                if x.abs() >= range {
                    saturated = true;
                    range.copysign(x)
                } else {
                    x
                }
            })
            .collect();
        RawBlock { samples, saturated }
    }

    /// Dark stage: beams blocked. Shot stage: local oscillator only.
    pub fn draw_calibration(&mut self, stage: CalibrationStage, n: usize) -> Vec<f64> {
        let var = match stage {
            CalibrationStage::Dark => self.detector.dark_var,
            CalibrationStage::Shot => self.detector.shot_var,
        };
        let sd = var.sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                sd * z
            })
            .collect()
    }
}

/// Sample variance with divisor n - 1.
pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}
