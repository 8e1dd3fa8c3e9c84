//! Gauss rules for each basis family.
//!
//! Nodes come from Newton iteration on the three-term recurrence of the relevant
//! orthogonal polynomial (100-iteration cap, 1e-14 step tolerance). Weights are
//! returned as Lebesgue weights: the Gaussian or exponential weight is folded back
//! in, so `Σ wₖ g(xₖ) ≈ ∫ g(x) dx`.

use std::f64::consts::PI;

use super::{hermite_functions, laguerre_functions, BasisDescriptor, BasisFamily};
use crate::error::{invalid, Error, Result};

const MAX_NEWTON: usize = 100;
const NEWTON_TOL: f64 = 1e-14;

/// Nodes in increasing order with matching positive Lebesgue weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss rule of the family of `desc` with `q` nodes, mapped to physical coordinates.
///
/// Hermite: Gauss–Hermite on y with x = x_L + y/β. Laguerre: interior Gauss–Laguerre
/// nodes with x = y/β (x = 0 is never a node). Chebyshev: Chebyshev–Gauss–Lobatto
/// nodes including ±1, with Clenshaw–Curtis weights. Mapped Gegenbauer (λ = 0):
/// Chebyshev–Gauss nodes ξ mapped by x = ξ / (β√(1−ξ²)).
pub fn quadrature_rule(desc: &BasisDescriptor, q: usize) -> Result<QuadratureRule> {
    desc.validate()?;
    if q == 0 {
        return Err(invalid("q", "at least one node is required"));
    }
    let beta = desc.scaling;
    match desc.family {
        BasisFamily::Hermite => {
            let (y, w) = gauss_hermite(q)?;
            Ok(QuadratureRule {
                nodes: y.iter().map(|y| desc.translation + y / beta).collect(),
                weights: w.iter().map(|w| w / beta).collect(),
            })
        }
        BasisFamily::Laguerre => {
            let (y, w) = gauss_laguerre(q)?;
            Ok(QuadratureRule {
                nodes: y.iter().map(|y| y / beta).collect(),
                weights: w.iter().map(|w| w / beta).collect(),
            })
        }
        BasisFamily::Chebyshev => {
            if q < 2 {
                return Err(invalid("q", "Chebyshev–Gauss–Lobatto needs at least 2 nodes"));
            }
            Ok(QuadratureRule {
                nodes: chebyshev_gauss_lobatto(q),
                weights: clenshaw_curtis_weights(q),
            })
        }
        BasisFamily::MappedGegenbauer => {
            if desc.lambda != 0.0 {
                return Err(Error::Unsupported(
                    "quadrature for mapped Gegenbauer functions with λ ≠ 0".into(),
                ));
            }
            let mut nodes = Vec::with_capacity(q);
            let mut weights = Vec::with_capacity(q);
            for k in (0..q).rev() {
                let xi = ((2 * k + 1) as f64 * PI / (2 * q) as f64).cos();
                let s = 1.0 - xi * xi;
                nodes.push(xi / (beta * s.sqrt()));
                weights.push(PI / (q as f64 * beta * s));
            }
            Ok(QuadratureRule { nodes, weights })
        }
    }
}

/// Chebyshev–Gauss–Lobatto points cos(kπ/(q−1)), returned in increasing order.
pub fn chebyshev_gauss_lobatto(q: usize) -> Vec<f64> {
    assert!(q >= 2);
    let n = (q - 1) as f64;
    (0..q)
        .rev()
        .map(|k| {
            // exact symmetric values, and an exact zero for odd q
            let v = (k as f64 * PI / n).cos();
            if 2 * k == q - 1 {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Clenshaw–Curtis weights on the Lobatto points, ordered like [`chebyshev_gauss_lobatto`].
fn clenshaw_curtis_weights(q: usize) -> Vec<f64> {
    let n = q - 1;
    let nf = n as f64;
    let mut w = vec![0.0; q];
    for (k, wk) in w.iter_mut().enumerate() {
        let theta = k as f64 * PI / nf;
        let mut s = 0.0;
        for j in 1..=n / 2 {
            let b = if 2 * j == n { 1.0 } else { 2.0 };
            s += b / (4.0 * (j * j) as f64 - 1.0) * (2.0 * j as f64 * theta).cos();
        }
        let c = if k == 0 || k == n { 1.0 } else { 2.0 };
        *wk = c / nf * (1.0 - s);
    }
    w.reverse();
    w
}

/// Gauss–Hermite nodes (increasing) and Lebesgue weights for functions decaying like e^{−y²}.
pub fn gauss_hermite(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(invalid("q", "at least one node is required"));
    }
    let n = q;
    let m = n.div_ceil(2);
    let nf = n as f64;
    // ψₙ and ψₙ′ = √(2n) ψₙ₋₁ − y ψₙ; the Gaussian factor keeps large n finite
    let eval = |z: f64| {
        let psi = hermite_functions(n, z);
        (psi[n], (2.0 * nf).sqrt() * psi[n - 1] - z * psi[n])
    };
    // Zeros are at least ~π/√(2n+1) apart and below √(2n+1); scan for sign changes
    // on a finer grid, then polish each bracket with bisection-guarded Newton.
    let h = 0.1 * PI / (2.0 * nf + 1.0).sqrt();
    let top = (2.0 * nf + 1.0).sqrt() + 1.0;
    let mut positive = Vec::with_capacity(m);
    let mut lo = if n % 2 == 1 { 0.5 * h } else { 0.0 };
    let mut f_lo = eval(lo).0;
    while lo < top && positive.len() < n / 2 {
        let hi = lo + h;
        let f_hi = eval(hi).0;
        if f_lo == 0.0 || f_lo * f_hi < 0.0 {
            positive.push(polish(&eval, lo, hi, "Gauss–Hermite root")?);
        }
        lo = hi;
        f_lo = f_hi;
    }
    if positive.len() != n / 2 {
        return Err(Error::NoConvergence {
            what: "Gauss–Hermite root bracketing",
            iterations: positive.len(),
        });
    }
    // store as the largest-first list the assembly below expects
    let mut roots: Vec<f64> = positive.into_iter().rev().collect();
    if n % 2 == 1 {
        roots.push(0.0);
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    // roots are found from the largest downward
    for &r in roots.iter() {
        nodes.push(-r);
    }
    let mid = if n % 2 == 1 { m - 1 } else { m };
    for &r in roots[..mid].iter().rev() {
        nodes.push(r);
    }
    for &x in &nodes {
        let psi = hermite_functions(n - 1, x);
        let p = psi[n - 1];
        weights.push(1.0 / (nf * p * p));
    }
    Ok((nodes, weights))
}

/// Gauss–Laguerre nodes (increasing) and Lebesgue weights for functions decaying like e^{−y}.
pub fn gauss_laguerre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(invalid("q", "at least one node is required"));
    }
    let n = q;
    let nf = n as f64;
    let mut nodes: Vec<f64> = Vec::with_capacity(n);
    let mut z = 0.0_f64;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * nf),
            1 => z + 15.0 / (1.0 + 2.5 * nf),
            _ => {
                let ai = (i - 1) as f64;
                z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
            }
        };
        let mut converged = false;
        for _ in 0..MAX_NEWTON {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            let pp = (nf * p1 - nf * p2) / z;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= NEWTON_TOL * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || !(z > 0.0) {
            return Err(Error::NoConvergence {
                what: "Gauss–Laguerre root",
                iterations: MAX_NEWTON,
            });
        }
        nodes.push(z);
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let l = laguerre_functions(n - 1, x)[n - 1];
            x / (nf * nf * l * l)
        })
        .collect();
    Ok((nodes, weights))
}

/// Gauss–Legendre nodes (increasing) and weights on [−1, 1].
pub fn gauss_legendre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(invalid("q", "at least one node is required"));
    }
    let n = q;
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut converged = false;
        let mut pp = 0.0;
        for _ in 0..MAX_NEWTON {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / pp;
            z -= step;
            if step.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                what: "Gauss–Legendre root",
                iterations: MAX_NEWTON,
            });
        }
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[m - 1] = 0.0;
    }
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_point_hermite_rule() {
        let r = quadrature_rule(&BasisDescriptor::hermite(1.0, 0.0), 1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_abs_diff_eq!(r.weights[0], PI.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights[0], 1.772454, epsilon = 1e-6);
    }

    #[test]
    fn three_point_lobatto_nodes() {
        let r = quadrature_rule(&BasisDescriptor::chebyshev(), 3).unwrap();
        assert_eq!(r.nodes, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn one_point_laguerre_rule() {
        let r = quadrature_rule(&BasisDescriptor::laguerre(1.0), 1).unwrap();
        assert_abs_diff_eq!(r.nodes[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights[0], std::f64::consts::E, epsilon = 1e-13);
    }

    #[test]
    fn rules_are_sorted_and_positive() {
        for q in [1, 2, 3, 7, 16, 33, 64, 128, 200] {
            for desc in [
                BasisDescriptor::hermite(0.8, 0.3),
                BasisDescriptor::laguerre(1.7),
                BasisDescriptor::chebyshev(),
                BasisDescriptor::mapped_gegenbauer(0.0, 0.5),
            ] {
                if desc.family == BasisFamily::Chebyshev && q < 2 {
                    continue;
                }
                if desc.family == BasisFamily::Laguerre && q > 128 {
                    continue;
                }
                let r = quadrature_rule(&desc, q).unwrap();
                assert_eq!(r.nodes.len(), q);
                assert!(r.nodes.windows(2).all(|w| w[0] < w[1]), "{desc:?} q={q}");
                assert!(r.weights.iter().all(|&w| w > 0.0 && w.is_finite()), "{desc:?} q={q}");
            }
        }
    }

    #[test]
    fn weighted_polynomials_are_integrated_exactly() {
        // ∫ yᵏ e^{−y²} dy = Γ((k+1)/2) for even k; Σ wᵢ e^{−yᵢ²} yᵢᵏ must match up to degree 2q−1.
        let q = 6;
        let (y, w) = gauss_hermite(q).unwrap();
        let gamma_half = |m: usize| {
            // Γ(m + 1/2) = (2m)! √π / (4ᵐ m!)
            let mut v = PI.sqrt();
            for j in 0..m {
                v *= j as f64 + 0.5;
            }
            v
        };
        for k in 0..2 * q {
            let got: f64 = y.iter().zip(&w).map(|(y, w)| w * (-y * y).exp() * y.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { gamma_half(k / 2) };
            assert_abs_diff_eq!(got, exact, epsilon = 1e-12 * exact.max(1.0));
        }
        // ∫₀^∞ yᵏ e^{−y} dy = k!
        let (y, w) = gauss_laguerre(q).unwrap();
        let mut fact = 1.0;
        for k in 0..2 * q {
            if k > 0 {
                fact *= k as f64;
            }
            let got: f64 = y.iter().zip(&w).map(|(y, w)| w * (-y).exp() * y.powi(k as i32)).sum();
            assert_abs_diff_eq!(got, fact, epsilon = 1e-12 * fact);
        }
        let (x, w) = gauss_legendre(q).unwrap();
        for k in 0..2 * q {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert_abs_diff_eq!(got, exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn clenshaw_curtis_integrates_polynomials() {
        let r = quadrature_rule(&BasisDescriptor::chebyshev(), 9).unwrap();
        for k in 0..9 {
            let got = r.integrate(|x| x.powi(k));
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert_abs_diff_eq!(got, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_nodes_is_an_error() {
        assert!(quadrature_rule(&BasisDescriptor::hermite(1.0, 0.0), 0).is_err());
        assert!(quadrature_rule(&BasisDescriptor::chebyshev(), 1).is_err());
        assert!(quadrature_rule(&BasisDescriptor::mapped_gegenbauer(1.0, 1.0), 4).is_err());
    }
}

fn polish(eval: &impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, what: &'static str) -> Result<f64> {
    let f_lo = eval(lo).0;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..MAX_NEWTON {
        let (f, df) = eval(z);
        if f == 0.0 {
            return Ok(z);
        }
        if (f < 0.0) == (f_lo < 0.0) {
            lo = z;
        } else {
            hi = z;
        }
        let mut next = z - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = next - z;
        z = next;
        if step.abs() <= NEWTON_TOL * z.abs().max(1.0) {
            return Ok(z);
        }
    }
    Err(Error::NoConvergence {
        what,
        iterations: MAX_NEWTON,
    })
}
