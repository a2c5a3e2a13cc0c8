//! Entropic uncertainty bound and the ε-secure output length.
//!
//! For discretized quadratures with bin widths `dq` and `dp`, the min-entropy
//! of Q conditioned on any side information satisfies
//!
//! ```text
//! H_min(Q | E) >= H_low(P) = -H_max(P) - log2 c(dq, dp)
//! c(dq, dp) = dq dp / (4 pi) * R_00(dq dp / 8)^2
//! ```
//!
//! with `R_00` the radial prolate spheroidal function at unit argument.

pub mod spheroidal;

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// How `c(dq, dp)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantMode {
    /// `dq dp / (4 pi)`. Never smaller than the exact value.
    #[default]
    LeadingOrder,
    /// Full spheroidal expansion.
    Precise,
}

/// Largest `dq * dp` accepted in leading-order mode.
pub const LEADING_ORDER_LIMIT: f64 = 0.1;

/// Default security parameter.
pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub delta_q: f64,
    pub delta_p: f64,
    pub epsilon: f64,
}

impl BoundParams {
    pub fn new(delta_q: f64, delta_p: f64, epsilon: f64) -> Result<Self> {
        if !(delta_q > 0.0 && delta_p > 0.0) {
            return Err(Error::InvalidParameter("bin widths must be positive".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(BoundParams {
            delta_q,
            delta_p,
            epsilon,
        })
    }
}

pub fn incompatibility_constant(delta_q: f64, delta_p: f64, mode: ConstantMode) -> Result<f64> {
    if !(delta_q > 0.0 && delta_p > 0.0) {
        return Err(Error::InvalidParameter("bin widths must be positive".into()));
    }
    let area = delta_q * delta_p;
    match mode {
        ConstantMode::LeadingOrder => {
            if area > LEADING_ORDER_LIMIT {
                return Err(Error::Precision(area));
            }
            Ok(area / (4.0 * PI))
        }
        ConstantMode::Precise => {
            let r = spheroidal::radial_s0(area / 8.0);
            Ok((area / (4.0 * PI) * r * r).min(1.0))
        }
    }
}

/// `-h_max - log2 c`. Negative values mean no secure randomness.
pub fn h_low(h_max: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0 && c <= 1.0, "c = {c}");
    -h_max - c.log2()
}

/// Extractable length for `n` samples, each with `h_low_per_sample` bits of
/// conditional min-entropy: `max(0, floor(n h_low - 2 log2(1/eps)))`.
///
/// This is the n-sample leftover-hash form of the single-shot bound.
pub fn secure_length(n: u64, h_low_per_sample: f64, epsilon: f64) -> u64 {
    if !(h_low_per_sample > 0.0) {
        return 0;
    }
    let penalty = 2.0 * (1.0 / epsilon).log2();
    let raw = (n as f64 * h_low_per_sample - penalty).floor();
    if raw > 0.0 {
        raw as u64
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_order_examples() {
        let c = incompatibility_constant(0.0155607, 0.0155607, ConstantMode::LeadingOrder).unwrap();
        assert!((c / 1.9269e-5 - 1.0).abs() < 1e-4, "{c}");
        assert!((-c.log2() - 15.663).abs() < 1e-3);
        let c = incompatibility_constant(14.45e-3, 14.45e-3, ConstantMode::LeadingOrder).unwrap();
        assert!((c / 1.6616e-5 - 1.0).abs() < 1e-4, "{c}");
        assert!((-c.log2() - 15.877).abs() < 1e-3);
    }

    #[test]
    fn leading_order_rejects_large_cells() {
        assert!(matches!(
            incompatibility_constant(0.5, 0.5, ConstantMode::LeadingOrder),
            Err(Error::Precision(_))
        ));
        assert!(incompatibility_constant(0.5, 0.5, ConstantMode::Precise).is_ok());
    }

    #[test]
    fn precise_ratio_tends_to_one() {
        let mut last = 0.0;
        for a in [0.1, 0.01, 1e-3, 1e-4] {
            let d = f64::sqrt(a);
            let lo = incompatibility_constant(d, d, ConstantMode::LeadingOrder).unwrap();
            let pr = incompatibility_constant(d, d, ConstantMode::Precise).unwrap();
            let ratio = pr / lo;
            assert!(ratio <= 1.0 && ratio > last);
            last = ratio;
        }
        assert!(1.0 - last < 1e-9);
    }

    #[test]
    fn constant_monotone_in_widths() {
        let mut prev = 0.0;
        for i in 1..40 {
            let d = 0.05 * i as f64;
            let c = incompatibility_constant(d, 0.7, ConstantMode::Precise).unwrap();
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn h_low_examples() {
        assert_eq!(h_low(0.0, 1.0), 0.0);
        assert!((h_low(8.3316, 1.9269e-5) - 7.3315).abs() < 1e-3);
        assert!((h_low(20.0, 1.9269e-5) + 4.337).abs() < 1e-3);
    }

    #[test]
    fn secure_length_examples() {
        assert_eq!(secure_length(16_000, 7.0, 1e-10), 111_933);
        assert_eq!(secure_length(16_000, 0.0, 1e-10), 0);
        assert_eq!(secure_length(16_000, -3.0, 1e-10), 0);
        assert_eq!(secure_length(16_000, 7.0, 1.0), 112_000);
        assert_eq!(secure_length(1, 7.0, 1e-10), 0);
    }

    #[test]
    fn secure_length_monotone() {
        let mut prev = 0;
        for n in (1000..20_000).step_by(977) {
            let l = secure_length(n, 6.5, 1e-10);
            assert!(l >= prev);
            prev = l;
        }
        let mut prev = 0;
        for i in 0..100 {
            let l = secure_length(16_000, i as f64 * 0.1, 1e-10);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn params_validation() {
        assert!(BoundParams::new(0.01, 0.01, 1e-10).is_ok());
        assert!(BoundParams::new(0.0, 0.01, 1e-10).is_err());
        assert!(BoundParams::new(0.01, 0.01, 1.0).is_err());
    }
}
