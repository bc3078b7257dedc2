//! Standard normal distribution helpers and bivariate normal orthant
//! probabilities.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)`.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile. Returns `±∞` at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step; erfc_inv alone is good to about 1e-12
    let e = if x < 0.0 { cdf(x) - p } else { (1.0 - p) - sf(x) };
    let d = e / pdf(x);
    if d.is_finite() {
        x - d / (1.0 + 0.5 * x * d)
    } else {
        x
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / dp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// Integrates `f` over `[lo, hi]` with composite 20-point Gauss–Legendre on
/// panels no wider than `panel`.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panel: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let (nodes, weights) = gl20();
    let panels = ((hi - lo) / panel).ceil().max(1.0) as usize;
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        let mid = a + 0.5 * h;
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            s += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * s;
    }
    total
}

const TAIL: f64 = 9.0;

/// `P(X > a, Y > b)` for a standard bivariate normal with correlation `rho`.
///
/// Integrates the conditional tail `Φ̄((b − ρx)/√(1−ρ²))` against `φ(x)` over
/// `x > a` by composite Gauss–Legendre quadrature.
pub fn bvn_upper(a: f64, b: f64, rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    if 1.0 - rho.abs() < 1e-12 {
        return if rho > 0.0 {
            sf(a.max(b))
        } else {
            (cdf(-b) - cdf(a)).max(0.0)
        };
    }
    if a >= TAIL || b >= TAIL {
        return 0.0;
    }
    let lo = a.max(-TAIL);
    let s = (1.0 - rho * rho).sqrt();
    let p = integrate(|x| pdf(x) * sf((b - rho * x) / s), lo, TAIL, 0.5);
    p.clamp(0.0, 1.0)
}

/// `P(X ≤ a, Y ≤ b)` for a standard bivariate normal with correlation `rho`.
pub fn bvn_lower(a: f64, b: f64, rho: f64) -> f64 {
    bvn_upper(-a, -b, rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 1.0 - 1e-9] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-14 * p.max(1e-3) * 1e3);
        }
        assert!((quantile(0.975) - 1.959963984540054).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bvn_known_values() {
        // independence factorises
        assert!((bvn_upper(0.3, -0.7, 0.0) - sf(0.3) * sf(-0.7)).abs() < 1e-13);
        // orthant probability 1/4 + asin(rho)/(2 pi)
        for &r in &[-0.9, -0.5, 0.2, 0.7, 0.95] {
            let exact = 0.25 + f64::asin(r) / (2.0 * PI);
            assert!((bvn_upper(0.0, 0.0, r) - exact).abs() < 1e-10, "rho {r}");
        }
        assert!((bvn_upper(1.0, 2.0, 1.0) - sf(2.0)).abs() < 1e-15);
    }
}
