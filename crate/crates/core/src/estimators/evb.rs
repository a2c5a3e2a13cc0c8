//! Extremal variance-based bound: the largest `H_max` of any pmf on a given
//! lattice whose second moment equals `V`.
//!
//! Stationarity of the Lagrangian gives `p_k ∝ (1 + γ (x_k² − V))^-2`, a
//! discretized Student's t with three degrees of freedom, where `γ` solves
//!
//! ```text
//! f(γ) = sum_k a_k / (1 + γ a_k)^2 = 0,   a_k = x_k² − V
//! ```
//!
//! On the interval where every denominator is positive `f` is strictly
//! decreasing (`f' = -2 sum a_k² / (1 + γ a_k)^3`), so the root there is
//! unique. Roots outside that interval give negative denominators somewhere
//! and are not pmfs of the stationary form.

use log::warn;

use super::{h_max_probs, EntropyEstimate, EstimateAux, EstimatorTag};
use crate::bound::h_low;
use crate::discretization::{Lattice, Pmf};
use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EvbSolution {
    pub gamma: f64,
    pub variance: f64,
    /// Student-t scale `sqrt((1 - γV)/γ)`, defined for `γ > 0`.
    pub s: Option<f64>,
    pub pmf: Pmf,
}

/// Admissible open interval for `γ` and the shifted squares `a_k`.
fn setup(lattice: &Lattice, v: f64) -> Result<(f64, f64, Vec<f64>)> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("variance must be > 0, got {v}")));
    }
    let a: Vec<f64> = lattice.positions().map(|x| x * x - v).collect();
    let a_max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let a_min = a.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(a_max > 0.0) {
        return Err(Error::EstimatorFailure(format!(
            "variance {v} not below the largest squared support point"
        )));
    }
    if !(a_min < 0.0) {
        return Err(Error::EstimatorFailure(format!(
            "variance {v} not above the smallest squared support point"
        )));
    }
    Ok((-1.0 / a_max, -1.0 / a_min, a))
}

/// `(f(γ), f'(γ))`.
fn residual_and_slope(a: &[f64], gamma: f64) -> (f64, f64) {
    let mut f = 0.0;
    let mut df = 0.0;
    for &ak in a {
        let d = 1.0 / (1.0 + gamma * ak);
        let d2 = d * d;
        f += ak * d2;
        df -= 2.0 * ak * ak * d2 * d;
    }
    (f, df)
}

/// Stationarity residual `f(γ) / m`.
pub fn evb_residual(lattice: &Lattice, v: f64, gamma: f64) -> f64 {
    let a: Vec<f64> = lattice.positions().map(|x| x * x - v).collect();
    residual_and_slope(&a, gamma).0 / a.len() as f64
}

/// Solves for the admissible `γ` by safeguarded Newton inside a shrinking
/// bisection bracket, starting from zero.
pub fn evb_gamma(lattice: &Lattice, v: f64) -> Result<f64> {
    let (mut lo, mut hi, a) = setup(lattice, v)?;
    let m = a.len() as f64;
    let mut x = 0.0;
    for _ in 0..MAX_ITER {
        let (f, df) = residual_and_slope(&a, x);
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / df;
        let next = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == x {
            break;
        }
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let r = residual_and_slope(&a, x).0 / m;
    if r.abs() < RESIDUAL_TOL {
        Ok(x)
    } else {
        Err(Error::EstimatorFailure(format!(
            "gamma solver stalled at {x} with residual {r:e}"
        )))
    }
}

pub fn evb_distribution(lattice: &Lattice, v: f64) -> Result<EvbSolution> {
    let gamma = evb_gamma(lattice, v)?;
    let weights: Vec<f64> = lattice
        .positions()
        .map(|x| {
            let d = 1.0 + gamma * (x * x - v);
            1.0 / (d * d)
        })
        .collect();
    let pmf = Pmf::from_weights(*lattice, &weights)?;
    let s = (gamma > 0.0).then(|| ((1.0 - gamma * v) / gamma).sqrt());
    Ok(EvbSolution {
        gamma,
        variance: v,
        s,
        pmf,
    })
}

/// Second moment of the uniform pmf on the lattice. Above it the
/// unconstrained maximum `log2 m` is already consistent with the data.
fn uniform_second_moment(lattice: &Lattice) -> f64 {
    lattice.positions().map(|x| x * x).sum::<f64>() / lattice.len() as f64
}

/// `H_max` of the extremal pmf. Capped at `log2 m` once `V` reaches the
/// uniform pmf's second moment, which keeps the bound non-decreasing in `V`.
pub fn h_max_evb(lattice: &Lattice, v: f64) -> Result<EntropyEstimate> {
    let log_m = (lattice.len() as f64).log2();
    if v.is_finite() && v >= uniform_second_moment(lattice) {
        let mut est = EntropyEstimate::new(log_m, EstimatorTag::Evb, 0);
        est.aux = EstimateAux::Evb { gamma: 0.0, variance: v };
        return Ok(est);
    }
    let sol = evb_distribution(lattice, v)?;
    let value = h_max_probs(sol.pmf.probs()).clamp(0.0, log_m);
    let mut est = EntropyEstimate::new(value, EstimatorTag::Evb, 0);
    est.aux = EstimateAux::Evb {
        gamma: sol.gamma,
        variance: v,
    };
    Ok(est)
}

/// [`h_max_evb`], returning the conservative `log2 m` if the solver fails.
pub fn h_max_evb_or_fallback(lattice: &Lattice, v: f64) -> EntropyEstimate {
    match h_max_evb(lattice, v) {
        Ok(est) => est,
        Err(e) => {
            warn!("EVB solver failed ({e}); using log2 m");
            let mut est =
                EntropyEstimate::new((lattice.len() as f64).log2(), EstimatorTag::Evb, 0);
            est.aux = EstimateAux::EvbFallback { variance: v };
            est
        }
    }
}

/// `H_low` from the EVB bound and incompatibility constant `c`.
pub fn h_low_evb(lattice: &Lattice, v: f64, c: f64) -> Result<EntropyEstimate> {
    let mut est = h_max_evb(lattice, v)?;
    est.value = h_low(est.value, c);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{discretized_gaussian_pmf, BinningScheme};
    use crate::estimators::h_max_pmf;
    use proptest::prelude::*;

    fn three() -> Lattice {
        Lattice::symmetric(1, 1.0).unwrap()
    }

    #[test]
    fn three_point_uniform_case() {
        let g = evb_gamma(&three(), 2.0 / 3.0).unwrap();
        assert!(g.abs() < 1e-14, "{g}");
        let sol = evb_distribution(&three(), 2.0 / 3.0).unwrap();
        for p in sol.pmf.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        // at the uniform second moment the cap applies
        let h = h_max_evb(&three(), 2.0 / 3.0).unwrap().value;
        assert!((h - 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn three_point_grid_oracle() {
        // On {-1, 0, 1} with second moment V the symmetric pmfs are
        // (V/2, 1-V, V/2); with a grid over asymmetric splits the maximum is
        // still symmetric.
        for v in [0.1, 0.3, 0.5] {
            let mut best = 0.0f64;
            for i in 0..=2000 {
                let t = i as f64 / 2000.0;
                let (pl, pr) = (v * t, v * (1.0 - t));
                let s = pl.sqrt() + (1.0 - v).sqrt() + pr.sqrt();
                best = best.max(2.0 * s.log2());
            }
            let h = h_max_evb(&three(), v).unwrap().value;
            assert!((h - best).abs() < 1e-9, "{v}: {h} vs {best}");
        }
    }

    #[test]
    fn unachievable_variance_is_an_error() {
        assert!(matches!(
            evb_gamma(&three(), 1.0),
            Err(Error::EstimatorFailure(_))
        ));
        assert!(evb_gamma(&three(), 3.0).is_err());
        assert!(evb_gamma(&three(), 0.0).is_err());
        // no zero point on the lattice and V below the smallest square
        let lat = Lattice::new(1, 3, 1.0).unwrap();
        assert!(evb_gamma(&lat, 0.5).is_err());
    }

    #[test]
    fn solution_satisfies_constraint() {
        let lat = BinningScheme::new(4096, 0.0155607).unwrap().lattice();
        for v in [0.05, 0.5, 1.0, 3.0, 100.0] {
            let sol = evb_distribution(&lat, v).unwrap();
            assert!(evb_residual(&lat, v, sol.gamma).abs() < 1e-9);
            let m2 = sol.pmf.second_moment();
            assert!((m2 / v - 1.0).abs() < 1e-6, "{v}: {m2}");
            assert!((sol.pmf.variance() / v - 1.0).abs() < 1e-6);
            for x in lat.positions() {
                assert!(1.0 + sol.gamma * (x * x - v) > 0.0);
            }
        }
    }

    #[test]
    fn symmetric_support_gives_symmetric_pmf() {
        let lat = Lattice::symmetric(50, 0.1).unwrap();
        let sol = evb_distribution(&lat, 2.0).unwrap();
        let p = sol.pmf.probs();
        for i in 0..p.len() {
            assert_eq!(p[i], p[p.len() - 1 - i]);
        }
    }

    #[test]
    fn matches_student_t_in_the_continuum() {
        // delta = 1e-3 over 2^20 points; the pmf should match the t3 density
        // with scale parameter s (p ∝ (1 + x²/s²)^-2) times delta.
        let lat = Lattice::new(-(1 << 19), (1 << 19) - 1, 1e-3).unwrap();
        let sol = evb_distribution(&lat, 1.0).unwrap();
        let s = sol.s.unwrap();
        // truncation at |x| = 524 inflates s slightly
        assert!((s - 1.0).abs() < 3e-3, "{s}");
        let norm = 2.0 / (std::f64::consts::PI * s);
        for k in (-5000..=5000).step_by(250) {
            let x = k as f64 * 1e-3;
            let dens = norm / (1.0 + x * x / (s * s)).powi(2);
            let p = sol.pmf.prob_at(k);
            assert!((p / (dens * 1e-3) - 1.0).abs() < 1e-4, "{x}: {p} vs {}", dens * 1e-3);
        }
    }

    #[test]
    fn evb_dominates_the_gaussian() {
        let scheme = BinningScheme::new(4096, 0.0155607).unwrap();
        let g = discretized_gaussian_pmf(1.0, &scheme).unwrap();
        let evb = h_max_evb(&scheme.lattice(), g.variance()).unwrap().value;
        let gauss = h_max_pmf(&g);
        assert!(evb > gauss, "{evb} vs {gauss}");
        // Continuous densities of unit variance: 2 log2 of the integral of
        // sqrt(p) is log2(2 pi) for t3 and log2(2 pi)/2 + 1 for the Gaussian.
        let continuum = 0.5 * (2.0 * std::f64::consts::PI).log2() - 1.0;
        assert!(evb - gauss < continuum, "{}", evb - gauss);
        // a wider support recovers most of the truncated t3 tail
        let wide = BinningScheme::new(1 << 16, 0.0155607).unwrap();
        let g = discretized_gaussian_pmf(1.0, &wide).unwrap();
        let evb = h_max_evb(&wide.lattice(), g.variance()).unwrap().value;
        assert!((evb - h_max_pmf(&g) - continuum).abs() < 0.01, "{}", evb - h_max_pmf(&g));
    }

    #[test]
    fn collapses_as_variance_vanishes() {
        let lat = BinningScheme::new(4096, 0.0155607).unwrap().lattice();
        let mut prev = f64::INFINITY;
        for v in [1e-3, 1e-6, 1e-9, 1e-12] {
            let h = h_max_evb(&lat, v).unwrap().value;
            assert!(h < prev);
            prev = h;
        }
        assert!(prev < 1e-3, "{prev}");
    }

    #[test]
    fn fallback_is_log_m() {
        let lat = BinningScheme::new(16, 1.0).unwrap().lattice();
        let est = h_max_evb_or_fallback(&lat, -1.0);
        assert_eq!(est.value, 4.0);
        assert!(matches!(est.aux, EstimateAux::EvbFallback { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn increasing_in_variance(v in 0.01f64..30.0, dv in 1e-3f64..1.0) {
            let lat = BinningScheme::new(512, 0.05).unwrap().lattice();
            let lo = h_max_evb(&lat, v).unwrap().value;
            let hi = h_max_evb(&lat, v + dv).unwrap().value;
            if v + dv < uniform_second_moment(&lat) {
                prop_assert!(hi > lo);
            } else {
                prop_assert!(hi >= lo);
            }
        }

        #[test]
        fn stays_within_log_m(v in 1e-4f64..200.0) {
            let lat = BinningScheme::new(256, 0.1).unwrap().lattice();
            let h = h_max_evb(&lat, v).unwrap().value;
            prop_assert!((0.0..=8.0).contains(&h));
        }
    }
}
