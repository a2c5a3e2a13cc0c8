//! The self-testing block state machine.
//!
//! Each block is either a check (dark and shot-noise calibration, then the
//! check quadrature P, from which `H_low` is bounded) or a data block (the
//! data quadrature Q, hashed down to the secure length). The next phase is
//! chosen from 7 bits of previously extracted output.

use std::fs::File;
use std::io::{BufReader, Write};
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bound::{h_low, incompatibility_constant};
use crate::config::{ProtocolConfig, SeedMode, VarianceMode, DECISION_BITS};
use crate::discretization::{accumulate, bin_sample, extreme_bin_check, BinningScheme, ExtremeBins};
use crate::error::{Error, Result};
use crate::estimators::{
    bin_center_variance, confidence_bound, h_min_freq, unbiased_variance, CheckData,
};
use crate::extractor::{extract_block, samples_to_bits, BitVec, BitWriter, ToeplitzSeed};
use crate::source::{CalibrationStage, Homodyne, Quadrature};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    DarkCal,
    ShotCal,
    Check,
    Data,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::DarkCal => "dark_cal",
            Phase::ShotCal => "shot_cal",
            Phase::Check => "check",
            Phase::Data => "data",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    Saturation,
    ExtremeBin,
    NegativeBound,
    CalibrationFailure,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AbortReason::Saturation => "saturation",
            AbortReason::ExtremeBin => "extreme_bin",
            AbortReason::NegativeBound => "negative_bound",
            AbortReason::CalibrationFailure => "calibration_failure",
        })
    }
}

/// How the phase of a block was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// From 7 reservoir bits.
    Random,
    /// First block, depleted reservoir, or no usable bound.
    Forced,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Decision::Random => "random",
            Decision::Forced => "forced",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub block: usize,
    pub phase: Phase,
    pub decision: Decision,
    pub shot_var: f64,
    pub dark_var: f64,
    pub delta_p: f64,
    pub delta_q: f64,
    /// Confidence-adjusted `H_max` used for the bound (check blocks).
    pub h_max_est: f64,
    /// Point estimate of `H_max` before the confidence adjustment.
    pub h_max_point: f64,
    /// `H_low` from the adjusted `H_max`; the value data blocks extract with.
    pub h_low_est: f64,
    /// `H_low` from the point estimate, logged only.
    pub h_low_point: f64,
    /// Frequentist `H_min` of the measured quadrature, for monitoring.
    pub h_min_monitor: f64,
    pub secure_bits_emitted: u64,
    pub aborted: Option<AbortReason>,
    pub wall_time: f64,
}

impl RunReport {
    fn new(block: usize, phase: Phase, decision: Decision) -> Self {
        RunReport {
            block,
            phase,
            decision,
            shot_var: f64::NAN,
            dark_var: f64::NAN,
            delta_p: f64::NAN,
            delta_q: f64::NAN,
            h_max_est: f64::NAN,
            h_max_point: f64::NAN,
            h_low_est: f64::NAN,
            h_low_point: f64::NAN,
            h_min_monitor: f64::NAN,
            secure_bits_emitted: 0,
            aborted: None,
            wall_time: 0.0,
        }
    }

    pub const CSV_HEADER: &'static str = "block,phase,decision,shot_var,dark_var,delta_p,delta_q,\
h_max_est,h_max_point,h_low_est,h_low_point,h_min_monitor,secure_bits_emitted,aborted,abort_reason,wall_time";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.block,
            self.phase,
            self.decision,
            self.shot_var,
            self.dark_var,
            self.delta_p,
            self.delta_q,
            self.h_max_est,
            self.h_max_point,
            self.h_low_est,
            self.h_low_point,
            self.h_min_monitor,
            self.secure_bits_emitted,
            self.aborted.is_some(),
            self.aborted.map_or(String::new(), |r| r.to_string()),
            self.wall_time,
        )
    }
}

/// Most recent calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub shot_var: f64,
    pub dark_var: f64,
    /// SNU bin width implied by the digitizer's raw bin width.
    pub delta: f64,
}

/// FIFO of extracted bits reserved for phase decisions.
#[derive(Debug, Clone, Default)]
pub struct BitReservoir {
    bits: BitVec,
}

impl BitReservoir {
    pub fn new() -> Self {
        BitReservoir::default()
    }

    pub fn from_bits(bits: BitVec) -> Self {
        BitReservoir { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Tops up to `capacity` from the front of `bits`; returns the rest.
    pub fn refill(&mut self, mut bits: BitVec, capacity: usize) -> BitVec {
        let want = capacity.saturating_sub(self.bits.len());
        let head = bits.take_front(want);
        self.bits.extend(&head);
        bits
    }

    /// Next 7 bits as a big-endian value, or `None` when too few remain.
    pub fn take_decision(&mut self) -> Option<u8> {
        if self.bits.len() < DECISION_BITS {
            return None;
        }
        let head = self.bits.take_front(DECISION_BITS);
        Some(head.iter().fold(0u8, |v, b| v << 1 | b as u8))
    }
}

/// Consumes 7 reservoir bits `v` and returns check iff `v < threshold`.
/// With fewer than 7 bits the block is a forced check.
pub fn decide_next_phase(reservoir: &mut BitReservoir, threshold: u8) -> (Phase, Decision) {
    match reservoir.take_decision() {
        Some(v) if v < threshold => (Phase::Check, Decision::Random),
        Some(_) => (Phase::Data, Decision::Random),
        None => {
            warn!("decision reservoir depleted; forcing a check block");
            (Phase::Check, Decision::Forced)
        }
    }
}

enum SeedSource {
    Fixed(ToeplitzSeed),
    Stream(BufReader<File>),
}

/// Derives an independent stream seed from the master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rand::Rng::random(&mut rng)
}

/// Session state; one logical owner advances it block by block.
pub struct Engine {
    config: ProtocolConfig,
    homodyne: Homodyne,
    estimator_rng: ChaCha8Rng,
    seeds: SeedSource,
    calibration: Option<Calibration>,
    /// Bound from the latest non-aborted check block.
    stored_h_low: Option<f64>,
    reservoir: BitReservoir,
    output: Option<BitWriter<Box<dyn Write>>>,
    stats: SessionStats,
    last_was_valid_check: bool,
    block: usize,
}

/// Running totals. `bits_consumed + bits_banked + reservoir = bits_emitted`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SessionStats {
    pub blocks: usize,
    pub check_blocks: usize,
    pub data_blocks: usize,
    /// Blocks whose phase came from reservoir bits, and how many were checks.
    pub random_decisions: usize,
    pub random_checks: usize,
    pub aborted_blocks: usize,
    pub bits_emitted: u64,
    pub bits_consumed: u64,
    pub bits_banked: u64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub stats: SessionStats,
    pub reservoir_remaining: u64,
    pub session_aborted: Option<AbortReason>,
    pub reports: Vec<RunReport>,
}

impl SessionReport {
    pub fn check_fraction(&self) -> f64 {
        self.stats.check_blocks as f64 / self.stats.blocks.max(1) as f64
    }

    /// Check fraction among randomly decided blocks.
    pub fn random_check_fraction(&self) -> f64 {
        self.stats.random_checks as f64 / self.stats.random_decisions.max(1) as f64
    }

    /// Secure bits per second of wall time.
    pub fn bit_rate(&self) -> f64 {
        if self.stats.wall_time > 0.0 {
            self.stats.bits_emitted as f64 / self.stats.wall_time
        } else {
            0.0
        }
    }

    pub fn accounting_balanced(&self) -> bool {
        self.stats.bits_consumed + self.stats.bits_banked + self.reservoir_remaining
            == self.stats.bits_emitted
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", RunReport::CSV_HEADER)?;
        for r in &self.reports {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

impl Engine {
    pub fn new(config: ProtocolConfig) -> Result<Self> {
        config.validate()?;
        let mut detector = config.detector;
        detector.seed = derive_seed(config.seed, 1);
        let homodyne = Homodyne::new(detector);
        let estimator_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
        let (l_max, n_raw) = (config.effective_l_max(), config.n_raw());
        let seeds = match (&config.seed_mode, &config.toeplitz_seed_file) {
            (SeedMode::Stream(path), _) => {
                let f = File::open(path)
                    .map_err(|e| Error::Config(format!("seed stream {}: {e}", path.display())))?;
                SeedSource::Stream(BufReader::new(f))
            }
            (SeedMode::Reuse, Some(path)) => {
                let f = File::open(path)
                    .map_err(|e| Error::Config(format!("seed file {}: {e}", path.display())))?;
                warn!("one Toeplitz seed is reused for every data block");
                SeedSource::Fixed(ToeplitzSeed::read_from(BufReader::new(f), l_max, n_raw)?)
            }
            (SeedMode::Reuse, None) => {
                warn!("one Toeplitz seed is reused for every data block");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3));
                SeedSource::Fixed(ToeplitzSeed::random(l_max, n_raw, &mut rng)?)
            }
        };
        Ok(Engine {
            config,
            homodyne,
            estimator_rng,
            seeds,
            calibration: None,
            stored_h_low: None,
            reservoir: BitReservoir::new(),
            output: None,
            stats: SessionStats::default(),
            last_was_valid_check: false,
            block: 0,
        })
    }

    /// Streams banked secure bits to `w`.
    pub fn with_output(mut self, w: Box<dyn Write>, ascii: bool) -> Self {
        self.output = Some(BitWriter::new(w, ascii));
        self
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn stored_h_low(&self) -> Option<f64> {
        self.stored_h_low
    }

    pub fn calibration(&self) -> Option<Calibration> {
        self.calibration
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn reservoir_len(&self) -> usize {
        self.reservoir.len()
    }

    /// Overrides the stored bound; meant for tests and replays.
    pub fn set_stored_h_low(&mut self, h_low: Option<f64>) {
        self.stored_h_low = h_low;
    }

    fn scheme(&self, delta: f64) -> Result<BinningScheme> {
        BinningScheme::new(self.config.m, delta)
    }

    /// Dark and shot-noise stages. The flag is false when the shot-noise
    /// variance does not exceed the dark variance.
    fn calibrate(&mut self) -> Result<(Calibration, bool)> {
        let n = self.config.effective_calibration_samples();
        let dark = self.homodyne.draw_calibration(CalibrationStage::Dark, n);
        let shot = self.homodyne.draw_calibration(CalibrationStage::Shot, n);
        let dark_var = unbiased_variance(&dark)?;
        let shot_var = unbiased_variance(&shot)?;
        let gain = shot_var - dark_var;
        let cal = Calibration {
            shot_var,
            dark_var,
            delta: self.config.effective_raw_bin_width() / gain.max(0.0).sqrt(),
        };
        Ok((cal, gain > 0.0))
    }

    /// Normalized samples of one quadrature, or the abort reason.
    fn measure(
        &mut self,
        quad: Quadrature,
        cal: &Calibration,
    ) -> std::result::Result<Vec<f64>, AbortReason> {
        let raw = self
            .homodyne
            .draw_block(&self.config.source, quad, self.config.n);
        if raw.saturated {
            return Err(AbortReason::Saturation);
        }
        let mut snu = crate::discretization::normalize_snu(&raw.samples, cal.shot_var, cal.dark_var)
            .map_err(|_| AbortReason::CalibrationFailure)?;
        if self.config.subtract_mean {
            let mean = snu.iter().sum::<f64>() / snu.len() as f64;
            snu.iter_mut().for_each(|x| *x -= mean);
        }
        Ok(snu)
    }

    /// Calibration plus a check-quadrature measurement and a new bound.
    pub fn run_check_block(&mut self, decision: Decision) -> Result<RunReport> {
        let start = Instant::now();
        let mut rep = RunReport::new(self.block, Phase::Check, decision);
        // any failure below leaves no usable bound
        self.stored_h_low = None;

        let (cal, ok) = self.calibrate()?;
        rep.shot_var = cal.shot_var;
        rep.dark_var = cal.dark_var;
        if !ok {
            rep.aborted = Some(AbortReason::CalibrationFailure);
            return Ok(self.finish(rep, start));
        }
        self.calibration = Some(cal);
        rep.delta_p = cal.delta;
        rep.delta_q = cal.delta;

        let snu = match self.measure(Quadrature::Check, &cal) {
            Ok(s) => s,
            Err(reason) => {
                rep.aborted = Some(reason);
                return Ok(self.finish(rep, start));
            }
        };
        let scheme = self.scheme(cal.delta)?;
        let hist = accumulate(&snu, &scheme);
        if extreme_bin_check(&hist) == ExtremeBins::Violated {
            rep.aborted = Some(AbortReason::ExtremeBin);
            return Ok(self.finish(rep, start));
        }
        rep.h_min_monitor = h_min_freq(&hist)?.value;

        let variance = match self.config.variance_mode {
            VarianceMode::RawSamples => unbiased_variance(&snu)?,
            VarianceMode::BinCenters => bin_center_variance(&hist)?,
        };
        let data = CheckData {
            histogram: &hist,
            variance,
        };
        let est = confidence_bound(
            self.config.estimator,
            &data,
            self.config.failure_rate,
            &self.config.confidence,
            &mut self.estimator_rng,
        )?;
        let c = incompatibility_constant(cal.delta, cal.delta, self.config.constant_mode)?;
        rep.h_max_point = est.value;
        rep.h_max_est = est.upper();
        rep.h_low_point = h_low(est.value, c);
        rep.h_low_est = h_low(est.upper(), c);
        self.stored_h_low = Some(rep.h_low_est);
        Ok(self.finish(rep, start))
    }

    /// Data-quadrature measurement hashed with the stored bound. Converts to
    /// a check block when no usable bound exists.
    pub fn run_data_block(&mut self, decision: Decision) -> Result<RunReport> {
        let (Some(h), Some(cal)) = (self.stored_h_low, self.calibration) else {
            return self.run_check_block(Decision::Forced);
        };
        let start = Instant::now();
        let mut rep = RunReport::new(self.block, Phase::Data, decision);
        rep.shot_var = cal.shot_var;
        rep.dark_var = cal.dark_var;
        rep.delta_p = cal.delta;
        rep.delta_q = cal.delta;
        rep.h_low_est = h;

        let snu = match self.measure(Quadrature::Data, &cal) {
            Ok(s) => s,
            Err(reason) => {
                rep.aborted = Some(reason);
                return Ok(self.finish(rep, start));
            }
        };
        let scheme = self.scheme(cal.delta)?;
        let hist = accumulate(&snu, &scheme);
        rep.h_min_monitor = h_min_freq(&hist)?.value;
        if !(h > 0.0) {
            rep.aborted = Some(AbortReason::NegativeBound);
            return Ok(self.finish(rep, start));
        }

        let indices: Vec<i64> = snu.iter().map(|&x| bin_sample(x, &scheme)).collect();
        let block = samples_to_bits(&indices, self.config.bits_per_sample())?;
        let seed = match &mut self.seeds {
            SeedSource::Fixed(s) => s.clone(),
            SeedSource::Stream(r) => {
                ToeplitzSeed::read_from(r, self.config.effective_l_max(), self.config.n_raw())?
            }
        };
        let out = extract_block(&block, h, self.config.epsilon, &seed)?;
        rep.secure_bits_emitted = out.len() as u64;
        self.stats.bits_emitted += out.len() as u64;

        let rest = self.reservoir.refill(out, self.config.reservoir_bits);
        self.stats.bits_banked += rest.len() as u64;
        if let Some(w) = &mut self.output {
            w.write_bits(&rest)?;
        }
        Ok(self.finish(rep, start))
    }

    fn finish(&mut self, mut rep: RunReport, start: Instant) -> RunReport {
        rep.wall_time = start.elapsed().as_secs_f64();
        self.stats.blocks += 1;
        self.stats.wall_time += rep.wall_time;
        match rep.phase {
            Phase::Check => self.stats.check_blocks += 1,
            _ => self.stats.data_blocks += 1,
        }
        if rep.decision == Decision::Random {
            self.stats.random_decisions += 1;
            if rep.phase == Phase::Check {
                self.stats.random_checks += 1;
            }
        }
        if rep.aborted.is_some() {
            self.stats.aborted_blocks += 1;
        }
        self.last_was_valid_check = rep.phase == Phase::Check && rep.aborted.is_none();
        self.block += 1;
        rep
    }

    /// Chooses and runs the next block.
    pub fn step(&mut self) -> Result<RunReport> {
        if self.block == 0 {
            return self.run_check_block(Decision::Forced);
        }
        if self.reservoir.len() < DECISION_BITS {
            // A fresh bound with nothing to decide from: the only way to
            // refill the reservoir is a data block.
            return if self.last_was_valid_check {
                self.run_data_block(Decision::Forced)
            } else {
                warn!("decision reservoir depleted; forcing a check block");
                self.run_check_block(Decision::Forced)
            };
        }
        let (phase, decision) = decide_next_phase(&mut self.reservoir, self.config.check_threshold());
        self.stats.bits_consumed += DECISION_BITS as u64;
        match phase {
            Phase::Check => self.run_check_block(decision),
            _ => self.run_data_block(decision),
        }
    }

    /// Runs up to `blocks` blocks, stopping after the configured number of
    /// consecutive aborts.
    pub fn run(mut self, blocks: usize) -> Result<SessionReport> {
        if blocks == 0 {
            return Err(Error::InvalidParameter("blocks must be >= 1".into()));
        }
        let mut reports = Vec::with_capacity(blocks);
        let mut streak = 0;
        let mut session_aborted = None;
        for _ in 0..blocks {
            let rep = self.step()?;
            info!(
                "block {} {} h_low={:.4} bits={}{}",
                rep.block,
                rep.phase,
                rep.h_low_est,
                rep.secure_bits_emitted,
                rep.aborted.map_or(String::new(), |r| format!(" aborted={r}"))
            );
            let abort = rep.aborted;
            reports.push(rep);
            match abort {
                Some(reason) => {
                    streak += 1;
                    if streak >= self.config.max_consecutive_aborts {
                        warn!("{streak} consecutive aborts ({reason}); stopping session");
                        session_aborted = Some(reason);
                        break;
                    }
                }
                None => streak = 0,
            }
        }
        if let Some(w) = self.output.take() {
            w.finish()?;
        }
        Ok(SessionReport {
            stats: self.stats,
            reservoir_remaining: self.reservoir.len() as u64,
            session_aborted,
            reports,
        })
    }
}

/// Builds an engine for `config` and runs `config.blocks` blocks.
pub fn run_session(config: ProtocolConfig) -> Result<SessionReport> {
    let blocks = config.blocks;
    Engine::new(config)?.run(blocks)
}
