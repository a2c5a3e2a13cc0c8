//! Radial prolate spheroidal function `R_00^(1)(c, 1)` of the first kind.
//!
//! The angular function is expanded in even Legendre polynomials,
//! `S_00(c, eta) = sum_r d_r P_r(eta)`, whose coefficients solve the three-term
//! recurrence
//!
//! ```text
//! a_r d_{r+2} + (b_r - lambda) d_r + g_r d_{r-2} = 0
//! ```
//!
//! The radial function then follows from the spherical Bessel series
//! `R = sum_r (-1)^{r/2} d_r j_r(c) / sum_r d_r`.

fn alpha(r: f64, c2: f64) -> f64 {
    (r + 2.0) * (r + 1.0) * c2 / ((2.0 * r + 3.0) * (2.0 * r + 5.0))
}

fn beta(r: f64, c2: f64) -> f64 {
    r * (r + 1.0) + c2 * (2.0 * r * (r + 1.0) - 1.0) / ((2.0 * r - 1.0) * (2.0 * r + 3.0))
}

fn gamma(r: f64, c2: f64) -> f64 {
    r * (r - 1.0) * c2 / ((2.0 * r - 3.0) * (2.0 * r - 1.0))
}

fn truncation(c: f64) -> usize {
    24 + (1.5 * c) as usize
}

/// Number of eigenvalues of the symmetric tridiagonal `(diag, off)` below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let sub = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] / q };
        q = diag[i] - x - sub;
        if q == 0.0 {
            q = f64::EPSILON * (diag[i].abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solves `(S - shift) y = rhs` for symmetric tridiagonal `S`.
fn tridiagonal_solve(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    let mut denom = diag[0] - shift;
    if denom == 0.0 {
        denom = 1e-300;
    }
    c_prime[0] = if n > 1 { off[0] / denom } else { 0.0 };
    d_prime[0] = rhs[0] / denom;
    for i in 1..n {
        let mut m = diag[i] - shift - off[i - 1] * c_prime[i - 1];
        if m == 0.0 {
            m = 1e-300;
        }
        if i + 1 < n {
            c_prime[i] = off[i] / m;
        }
        d_prime[i] = (rhs[i] - off[i - 1] * d_prime[i - 1]) / m;
    }
    let mut y = vec![0.0; n];
    y[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        y[i] = d_prime[i] - c_prime[i] * y[i + 1];
    }
    y
}

/// Lowest eigenvalue `lambda_00(c)` and Legendre coefficients `d_0, d_2, ...`
/// normalized so that `d_0 = 1`.
pub fn legendre_coefficients(c: f64) -> (f64, Vec<f64>) {
    let n = truncation(c);
    let c2 = c * c;
    let diag: Vec<f64> = (0..n).map(|i| beta(2.0 * i as f64, c2)).collect();
    let upper: Vec<f64> = (0..n - 1).map(|i| alpha(2.0 * i as f64, c2)).collect();
    let lower: Vec<f64> = (0..n - 1).map(|i| gamma(2.0 * (i + 1) as f64, c2)).collect();
    let off: Vec<f64> = upper
        .iter()
        .zip(&lower)
        .map(|(a, g)| (a * g).sqrt())
        .collect();

    // Gershgorin bracket, then bisection on the Sturm count.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1] } else { 0.0 } + if i + 1 < n { off[i] } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(&diag, &off, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);

    // Inverse iteration for the symmetric eigenvector.
    let shift = lambda - 1e-10 * (1.0 + lambda.abs());
    let mut v = vec![1.0; n];
    for _ in 0..4 {
        v = tridiagonal_solve(&diag, &off, shift, &v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }

    // Undo the diagonal similarity: d_{i+1} / v_{i+1} = (d_i / v_i) sqrt(g / a).
    let mut scale = 1.0;
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            scale *= (lower[i - 1] / upper[i - 1]).sqrt();
        }
        d.push(v[i] * scale);
    }
    let d0 = d[0];
    d.iter_mut().for_each(|x| *x /= d0);
    (lambda, d)
}

/// Spherical Bessel functions `j_0(x) .. j_{n_max}(x)` by Miller's downward
/// recurrence, normalized against the closed forms of `j_0` or `j_1`.
pub fn spherical_bessel_j(n_max: usize, x: f64) -> Vec<f64> {
    if x == 0.0 {
        let mut out = vec![0.0; n_max + 1];
        out[0] = 1.0;
        return out;
    }
    if x.abs() < 1e-3 {
        // short power series; the recurrence loses precision here
        return (0..=n_max)
            .map(|n| {
                let mut dfact = 1.0;
                for k in 0..=n {
                    dfact *= (2 * k + 1) as f64;
                }
                let lead = x.powi(n as i32) / dfact;
                let y = x * x / 2.0;
                let t1 = y / (2 * n + 3) as f64;
                let t2 = t1 * y / (2.0 * (2 * n + 5) as f64);
                lead * (1.0 - t1 + t2)
            })
            .collect();
    }
    let start = n_max + 20 + x.abs() as usize;
    let mut f = vec![0.0; start + 2];
    f[start] = 1e-300;
    for k in (1..=start).rev() {
        f[k - 1] = (2 * k + 1) as f64 / x * f[k] - f[k + 1];
        if f[k - 1].abs() > 1e250 {
            let s = f[k - 1].abs();
            f[k - 1..].iter_mut().for_each(|v| *v /= s);
        }
    }
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() > j1.abs() { j0 / f[0] } else { j1 / f[1] };
    f.truncate(n_max + 1);
    f.iter().map(|v| v * scale).collect()
}

/// `R_00^(1)(c, xi = 1)`.
pub fn radial_s0(c: f64) -> f64 {
    if c == 0.0 {
        return 1.0;
    }
    let (_, d) = legendre_coefficients(c);
    let j = spherical_bessel_j(2 * d.len(), c);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, di) in d.iter().enumerate() {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        num += sign * di * j[2 * i];
        den += di;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalue_small_c_expansion() {
        for c in [1e-3, 0.05, 0.2] {
            let (l, d) = legendre_coefficients(c);
            // second-order perturbation lowers the ground state
            let series = c * c / 3.0 - 2.0 * c.powi(4) / 135.0 + 4.0 * c.powi(6) / 8505.0;
            assert!((l - series).abs() < 1e-6 * c.powi(4) + 1e-12, "{c}: {l} vs {series}");
            assert_eq!(d[0], 1.0);
            assert!(d[1].abs() < c * c);
        }
    }

    #[test]
    fn bessel_closed_forms() {
        for x in [1e-4, 0.01, 0.5, 1.0, 3.0, std::f64::consts::PI, 7.5] {
            let j = spherical_bessel_j(4, x);
            let j0 = x.sin() / x;
            // the closed form of j1 cancels badly for small x
            let j1 = if x < 0.1 {
                x / 3.0 * (1.0 - x * x / 10.0 + x.powi(4) / 280.0)
            } else {
                x.sin() / (x * x) - x.cos() / x
            };
            let j2 = (3.0 / (x * x) - 1.0) * x.sin() / x - 3.0 * x.cos() / (x * x);
            assert!((j[0] - j0).abs() < 1e-13, "{x}");
            assert!((j[1] - j1).abs() < 1e-12, "{x}");
            if x > 0.1 {
                assert!((j[2] - j2).abs() < 1e-11, "{x}: {} vs {j2}", j[2]);
            }
        }
    }

    #[test]
    fn radial_function_tends_to_one() {
        assert_eq!(radial_s0(0.0), 1.0);
        let r = radial_s0(3e-5);
        assert!((r - 1.0).abs() < 1e-9);
        assert!(radial_s0(0.1) < 1.0);
    }
}
