//! Spectral basis families on bounded and unbounded domains.
//!
//! Four families are supported:
//!
//! - generalized Hermite functions on ℝ, scaled by β and centred at `x_L`,
//! - generalized Laguerre functions on ℝ⁺, scaled by β,
//! - Chebyshev polynomials on [−1, 1],
//! - modified mapped Gegenbauer functions (MMGF) on ℝ, with algebraic decay.
//!
//! Hermite and Laguerre functions carry a `√β` factor so that they are
//! orthonormal under the plain Lebesgue inner product. That keeps L² norms
//! equal to coefficient norms.

mod derivative;
mod quadrature;
mod transform;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

pub use derivative::{derivative_map, DerivativeMap};
pub use quadrature::{
    chebyshev_gauss_lobatto, gauss_hermite, gauss_laguerre, gauss_legendre, quadrature_rule,
    QuadratureRule,
};
pub use transform::{project, project_fn, transfer_matrix, Transform};

/// Tolerance used when deciding whether a point lies on a closed domain boundary.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    Hermite,
    Laguerre,
    Chebyshev,
    MappedGegenbauer,
}

impl BasisFamily {
    pub fn name(self) -> &'static str {
        match self {
            BasisFamily::Hermite => "hermite",
            BasisFamily::Laguerre => "laguerre",
            BasisFamily::Chebyshev => "chebyshev",
            BasisFamily::MappedGegenbauer => "mapped-gegenbauer",
        }
    }
}

/// Family tag plus the scaling β, translation `x_L` and Gegenbauer parameter λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub family: BasisFamily,
    pub scaling: f64,
    #[serde(default)]
    pub translation: f64,
    #[serde(default)]
    pub lambda: f64,
}

impl BasisDescriptor {
    pub fn hermite(scaling: f64, translation: f64) -> Self {
        Self {
            family: BasisFamily::Hermite,
            scaling,
            translation,
            lambda: 0.0,
        }
    }

    pub fn laguerre(scaling: f64) -> Self {
        Self {
            family: BasisFamily::Laguerre,
            scaling,
            translation: 0.0,
            lambda: 0.0,
        }
    }

    pub fn chebyshev() -> Self {
        Self {
            family: BasisFamily::Chebyshev,
            scaling: 1.0,
            translation: 0.0,
            lambda: 0.0,
        }
    }

    pub fn mapped_gegenbauer(lambda: f64, scaling: f64) -> Self {
        Self {
            family: BasisFamily::MappedGegenbauer,
            scaling,
            translation: 0.0,
            lambda,
        }
    }

    pub fn with_scaling(mut self, scaling: f64) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn with_translation(mut self, translation: f64) -> Self {
        self.translation = translation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scaling.is_finite() && self.scaling > 0.0) {
            return Err(invalid("scaling", format!("must be positive, got {}", self.scaling)));
        }
        if !self.translation.is_finite() {
            return Err(invalid("translation", "must be finite"));
        }
        match self.family {
            BasisFamily::Laguerre if self.translation != 0.0 => {
                Err(invalid("translation", "Laguerre functions live on x ≥ 0 with x_L = 0"))
            }
            BasisFamily::MappedGegenbauer if !(self.lambda.is_finite() && self.lambda >= -0.5) => {
                Err(invalid("lambda", format!("must be ≥ -1/2, got {}", self.lambda)))
            }
            _ => Ok(()),
        }
    }

    fn domain_name(&self) -> &'static str {
        match self.family {
            BasisFamily::Hermite | BasisFamily::MappedGegenbauer => "real-line",
            BasisFamily::Laguerre => "half-line",
            BasisFamily::Chebyshev => "[-1, 1]",
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self.family {
            BasisFamily::Hermite | BasisFamily::MappedGegenbauer => true,
            BasisFamily::Laguerre => x >= -DOMAIN_SLACK,
            BasisFamily::Chebyshev => x.abs() <= 1.0 + DOMAIN_SLACK,
        }
    }

    fn check_point(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                x,
                domain: self.domain_name(),
            })
        }
    }

    /// Squared norm of element `i` in the inner product used for projection.
    ///
    /// Hermite and Laguerre functions are orthonormal. Chebyshev polynomials use the
    /// weight (1−x²)^{−1/2}, giving γ₀ = π and γᵢ = π/2. MMGF with λ = 0 are orthogonal
    /// in plain L² with norms γᵢ/β.
    pub fn norm_squared(&self, i: usize) -> f64 {
        match self.family {
            BasisFamily::Hermite | BasisFamily::Laguerre => 1.0,
            BasisFamily::Chebyshev => chebyshev_gamma(i),
            BasisFamily::MappedGegenbauer => chebyshev_gamma(i) / self.scaling,
        }
    }

    /// Weight γᵢ entering the frequency indicator.
    pub fn indicator_weight(&self, i: usize) -> f64 {
        match self.family {
            BasisFamily::Chebyshev => chebyshev_gamma(i),
            _ => 1.0,
        }
    }

    /// Evaluates φ₀(x), …, φₙ(x).
    pub fn eval_all(&self, n: usize, x: f64) -> Result<Vec<f64>> {
        self.validate()?;
        self.check_point(x)?;
        let beta = self.scaling;
        Ok(match self.family {
            BasisFamily::Hermite => {
                let mut v = hermite_functions(n, beta * (x - self.translation));
                let s = beta.sqrt();
                v.iter_mut().for_each(|p| *p *= s);
                v
            }
            BasisFamily::Laguerre => {
                let mut v = laguerre_functions(n, beta * x.max(0.0));
                let s = beta.sqrt();
                v.iter_mut().for_each(|p| *p *= s);
                v
            }
            BasisFamily::Chebyshev => chebyshev_t(n, x.clamp(-1.0, 1.0)),
            BasisFamily::MappedGegenbauer => {
                let y = beta * x;
                let r2 = 1.0 + y * y;
                let xi = y / r2.sqrt();
                if self.lambda == 0.0 {
                    let f = r2.powf(-0.5);
                    chebyshev_t(n, xi).into_iter().map(|t| f * t).collect()
                } else {
                    let f = r2.powf(-(self.lambda + 1.0) / 2.0);
                    gegenbauer(n, self.lambda, xi).into_iter().map(|c| f * c).collect()
                }
            }
        })
    }

    /// Evaluates φ₀′(x), …, φₙ′(x).
    pub fn eval_all_derivative(&self, n: usize, x: f64) -> Result<Vec<f64>> {
        self.validate()?;
        self.check_point(x)?;
        let beta = self.scaling;
        match self.family {
            BasisFamily::Hermite => {
                let psi = hermite_functions(n + 1, beta * (x - self.translation));
                let s = beta * beta.sqrt();
                Ok((0..=n)
                    .map(|j| {
                        let down = if j > 0 { (j as f64 / 2.0).sqrt() * psi[j - 1] } else { 0.0 };
                        s * (down - ((j + 1) as f64 / 2.0).sqrt() * psi[j + 1])
                    })
                    .collect())
            }
            BasisFamily::Laguerre => {
                let l = laguerre_functions(n, beta * x.max(0.0));
                let s = beta * beta.sqrt();
                let mut partial = 0.0;
                Ok((0..=n)
                    .map(|j| {
                        let d = s * (-partial - 0.5 * l[j]);
                        partial += l[j];
                        d
                    })
                    .collect())
            }
            BasisFamily::Chebyshev => {
                let x = x.clamp(-1.0, 1.0);
                let u = chebyshev_u(n, x);
                Ok((0..=n)
                    .map(|j| if j == 0 { 0.0 } else { j as f64 * u[j - 1] })
                    .collect())
            }
            BasisFamily::MappedGegenbauer => Err(Error::Unsupported(
                "derivatives of mapped Gegenbauer functions".into(),
            )),
        }
    }
}

/// Evaluates basis element `i` of `desc` at `x`.
pub fn eval_basis(desc: &BasisDescriptor, i: usize, x: f64) -> Result<f64> {
    Ok(desc.eval_all(i, x)?[i])
}

pub(crate) fn chebyshev_gamma(i: usize) -> f64 {
    if i == 0 {
        PI
    } else {
        PI / 2.0
    }
}

/// Orthonormal Hermite functions ψ₀(y), …, ψₙ(y) with weight e^{−y²/2} folded in.
pub(crate) fn hermite_functions(n: usize, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let p0 = PI.powf(-0.25) * (-0.5 * y * y).exp();
    out.push(p0);
    if n == 0 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * y * p0);
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * y * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
        out.push(next);
    }
    out
}

/// Laguerre functions Lₖ(y)·e^{−y/2}, k = 0..=n.
pub(crate) fn laguerre_functions(n: usize, y: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let e = (-0.5 * y).exp();
    out.push(e);
    if n == 0 {
        return out;
    }
    out.push((1.0 - y) * e);
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - y) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

pub(crate) fn chebyshev_t(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n == 0 {
        return out;
    }
    out.push(x);
    for k in 1..n {
        out.push(2.0 * x * out[k] - out[k - 1]);
    }
    out
}

fn chebyshev_u(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n == 0 {
        return out;
    }
    out.push(2.0 * x);
    for k in 1..n {
        out.push(2.0 * x * out[k] - out[k - 1]);
    }
    out
}

fn gegenbauer(n: usize, lambda: f64, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n == 0 {
        return out;
    }
    out.push(2.0 * lambda * x);
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 * x * (kf + lambda) * out[k] - (kf + 2.0 * lambda - 1.0) * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chebyshev_t3_at_half() {
        let v = eval_basis(&BasisDescriptor::chebyshev(), 3, 0.5).unwrap();
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn mmgf_zero_at_origin() {
        let d = BasisDescriptor::mapped_gegenbauer(0.0, 0.5);
        assert_abs_diff_eq!(eval_basis(&d, 0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hermite_ground_state_value() {
        let d = BasisDescriptor::hermite(1.0, 0.0);
        assert_abs_diff_eq!(eval_basis(&d, 0, 0.0).unwrap(), PI.powf(-0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(PI.powf(-0.25), 0.751126, epsilon = 1e-6);
    }

    #[test]
    fn hermite_matches_closed_form() {
        // √β (2ⁱ i! √π)^{−1/2} Hᵢ(β(x−x_L)) e^{−β²(x−x_L)²/2} with H₃(y) = 8y³ − 12y.
        let d = BasisDescriptor::hermite(0.7, 0.3);
        let x = 1.1;
        let y = 0.7 * (1.1 - 0.3);
        let h3 = 8.0 * y * y * y - 12.0 * y;
        let expected = 0.7_f64.sqrt() * (8.0 * 6.0 * PI.sqrt()).powf(-0.5) * h3 * (-y * y / 2.0).exp();
        assert_abs_diff_eq!(eval_basis(&d, 3, x).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn laguerre_matches_closed_form() {
        // L₂(y) = (y² − 4y + 2)/2
        let d = BasisDescriptor::laguerre(1.5);
        let x = 0.8;
        let y = 1.5 * x;
        let expected = 1.5_f64.sqrt() * (y * y - 4.0 * y + 2.0) / 2.0 * (-y / 2.0).exp();
        assert_abs_diff_eq!(eval_basis(&d, 2, x).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn general_gegenbauer_lambda() {
        // C₂^λ(x) = 2λ(λ+1)x² − λ
        let lambda = 1.5;
        let d = BasisDescriptor::mapped_gegenbauer(lambda, 0.5);
        let x = 2.0;
        let y: f64 = 1.0;
        let xi = y / 2.0_f64.sqrt();
        let c2 = 2.0 * lambda * (lambda + 1.0) * xi * xi - lambda;
        let expected = 2.0_f64.powf(-(lambda + 1.0) / 2.0) * c2;
        assert_abs_diff_eq!(eval_basis(&d, 2, x).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn domain_violations_are_errors() {
        assert!(matches!(
            eval_basis(&BasisDescriptor::chebyshev(), 1, 1.5),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(matches!(
            eval_basis(&BasisDescriptor::laguerre(1.0), 1, -0.1),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(eval_basis(&BasisDescriptor::hermite(1.0, 0.0), 1, f64::NAN).is_err());
    }

    #[test]
    fn invalid_descriptors_are_rejected() {
        assert!(BasisDescriptor::hermite(0.0, 0.0).validate().is_err());
        assert!(BasisDescriptor::hermite(-1.0, 0.0).validate().is_err());
        assert!(BasisDescriptor::mapped_gegenbauer(-0.6, 1.0).validate().is_err());
        let mut lag = BasisDescriptor::laguerre(1.0);
        lag.translation = 1.0;
        assert!(lag.validate().is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let descs = [
            BasisDescriptor::hermite(0.8, 0.4),
            BasisDescriptor::laguerre(1.3),
            BasisDescriptor::chebyshev(),
        ];
        let h = 1e-6;
        for d in descs {
            for &x in &[0.1, 0.35, 0.7] {
                let der = d.eval_all_derivative(10, x).unwrap();
                let plus = d.eval_all(10, x + h).unwrap();
                let minus = d.eval_all(10, x - h).unwrap();
                for i in 0..=10 {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    assert!(
                        (fd - der[i]).abs() <= 1e-6 * der[i].abs().max(1.0),
                        "{:?} i={i} x={x}: {fd} vs {}",
                        d.family,
                        der[i]
                    );
                }
            }
        }
    }
}
