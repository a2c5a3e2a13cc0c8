//! Pmf transformations used to reduce the extremal problem to symmetric,
//! centred distributions.

use crate::discretization::Pmf;
use crate::error::{Error, Result};

/// `(q_k + q_{-k}) / 2`. The support must be symmetric about zero.
pub fn symmetrize(p: &Pmf) -> Result<Pmf> {
    let lat = *p.lattice();
    if !lat.is_symmetric() {
        return Err(Error::Dimension(format!(
            "symmetrize needs a symmetric support, got [{}, {}]",
            lat.k_min, lat.k_max
        )));
    }
    let q = p.probs();
    let n = q.len();
    let probs = (0..n).map(|i| 0.5 * (q[i] + q[n - 1 - i])).collect();
    Pmf::new(lat, probs)
}

/// Permutes the probabilities so the largest sits nearest zero and the rest
/// fill outward, `+1, -1, +2, -2, ...`. The multiset of probabilities (and
/// with it `H_max`) is unchanged.
pub fn rearrange_bins_min_variance(p: &Pmf) -> Pmf {
    let lat = *p.lattice();
    let mut sorted = p.probs().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));

    // Slots ordered by distance from zero, positive side first on ties.
    let mut slots: Vec<i64> = (lat.k_min..=lat.k_max).collect();
    slots.sort_by_key(|&k| (k.abs(), k < 0));

    let mut probs = vec![0.0; sorted.len()];
    for (q, k) in sorted.into_iter().zip(slots) {
        probs[(k - lat.k_min) as usize] = q;
    }
    Pmf::new(lat, probs).expect("permutation of a valid pmf")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Lattice;
    use crate::estimators::h_max_pmf;
    use proptest::prelude::*;

    fn on(half: i64, probs: &[f64]) -> Pmf {
        Pmf::new(Lattice::symmetric(half, 1.0).unwrap(), probs.to_vec()).unwrap()
    }

    #[test]
    fn symmetrize_examples() {
        let p = on(1, &[0.6, 0.2, 0.2]);
        assert_eq!(symmetrize(&p).unwrap().probs(), &[0.4, 0.2, 0.4]);
        let s = on(1, &[0.25, 0.5, 0.25]);
        assert_eq!(symmetrize(&s).unwrap(), s);
        let point = on(2, &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(symmetrize(&point).unwrap().probs(), &[0.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn symmetrize_rejects_asymmetric_support() {
        let p = Pmf::new(Lattice::new(-2, 1, 1.0).unwrap(), vec![0.25; 4]).unwrap();
        assert!(symmetrize(&p).is_err());
    }

    #[test]
    fn rearrange_three_points() {
        let p = on(1, &[0.5, 0.3, 0.2]);
        let r = rearrange_bins_min_variance(&p);
        assert_eq!(r.probs(), &[0.2, 0.5, 0.3]);
        assert!((r.variance() - 0.49).abs() < 1e-12);
        assert!((p.variance() - 0.61).abs() < 1e-12);
        // brute force over all six placements
        let vals = [0.5, 0.3, 0.2];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|pm| on(1, &[vals[pm[0]], vals[pm[1]], vals[pm[2]]]).variance())
            .fold(f64::INFINITY, f64::min);
        assert!((r.variance() - best).abs() < 1e-12);
    }

    #[test]
    fn rearrange_uniform_is_unchanged() {
        let p = on(3, &[1.0 / 7.0; 7]);
        let r = rearrange_bins_min_variance(&p);
        assert_eq!(r.variance(), p.variance());
    }

    fn random_pmf(half: i64) -> impl Strategy<Value = Pmf> {
        proptest::collection::vec(0.0f64..1.0, (2 * half + 1) as usize).prop_filter_map(
            "zero weights",
            move |w| Pmf::from_weights(Lattice::symmetric(half, 1.0).unwrap(), &w).ok(),
        )
    }

    proptest! {
        #[test]
        fn rearrange_keeps_h_max_and_lowers_variance(p in random_pmf(4)) {
            let r = rearrange_bins_min_variance(&p);
            prop_assert!((h_max_pmf(&r) - h_max_pmf(&p)).abs() < 1e-12);
            prop_assert!(r.variance() <= p.variance() + 1e-12);
            let mut a = p.probs().to_vec();
            let mut b = r.probs().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn symmetrize_keeps_second_moment_and_raises_h_max(p in random_pmf(4)) {
            let s = symmetrize(&p).unwrap();
            prop_assert!((s.second_moment() - p.second_moment()).abs() < 1e-12);
            prop_assert!(h_max_pmf(&s) >= h_max_pmf(&p) - 1e-12);
            prop_assert!(s.mean().abs() < 1e-12);
        }
    }
}
