//! Spectral expansions u_N = Σ wᵢ φᵢ and the quantities derived from them.

mod field;
mod multi;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{quadrature_rule, transfer_matrix, BasisDescriptor};
use crate::error::{invalid, Error, Result};

pub use field::Field;
pub use multi::{hyperbolic_index_set, Hyperbolicity, MultiExpansion, MultiIndexSet};

/// Nodes used when re-projecting between bases of order `n`.
///
/// N + 10 nodes leave errors near 1e-7 in the top modes once β changes by a factor 2;
/// 4N + 24 brings them below 1e-12 for the orders used here.
pub fn reprojection_nodes(n: usize) -> usize {
    4 * n + 24
}

/// A one-dimensional expansion of order N, optionally complex-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralExpansion {
    pub basis: BasisDescriptor,
    re: Vec<f64>,
    im: Option<Vec<f64>>,
}

impl SpectralExpansion {
    pub fn new(basis: BasisDescriptor, coeffs: Vec<f64>) -> Result<Self> {
        Self::build(basis, coeffs, None)
    }

    pub fn new_complex(basis: BasisDescriptor, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::LengthMismatch {
                expected: re.len(),
                got: im.len(),
            });
        }
        Self::build(basis, re, Some(im))
    }

    fn build(basis: BasisDescriptor, re: Vec<f64>, im: Option<Vec<f64>>) -> Result<Self> {
        basis.validate()?;
        if re.is_empty() {
            return Err(invalid("coefficients", "an expansion needs at least one coefficient"));
        }
        let finite = re.iter().chain(im.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("expansion coefficients"));
        }
        Ok(Self { basis, re, im })
    }

    pub fn zeros(basis: BasisDescriptor, order: usize, complex: bool) -> Result<Self> {
        let im = complex.then(|| vec![0.0; order + 1]);
        Self::build(basis, vec![0.0; order + 1], im)
    }

    /// Builds from a flat vector `[re…, im…]` as produced by [`to_vector`](Self::to_vector).
    pub fn from_vector(basis: BasisDescriptor, v: &[f64], complex: bool) -> Result<Self> {
        if complex {
            if v.len() % 2 != 0 {
                return Err(invalid("coefficients", "complex vector must have even length"));
            }
            let h = v.len() / 2;
            Self::new_complex(basis, v[..h].to_vec(), v[h..].to_vec())
        } else {
            Self::new(basis, v.to_vec())
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.re.clone();
        if let Some(im) = &self.im {
            v.extend_from_slice(im);
        }
        v
    }

    pub fn order(&self) -> usize {
        self.re.len() - 1
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.re
    }

    pub fn imaginary(&self) -> Option<&[f64]> {
        self.im.as_deref()
    }

    /// Squared magnitudes |wᵢ|².
    pub fn energies(&self) -> Vec<f64> {
        match &self.im {
            Some(im) => self.re.iter().zip(im).map(|(a, b)| a * a + b * b).collect(),
            None => self.re.iter().map(|a| a * a).collect(),
        }
    }

    /// Real part of u_N(x).
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        Ok(self.evaluate_complex(x)?.re)
    }

    pub fn evaluate_complex(&self, x: f64) -> Result<Complex64> {
        let phi = self.basis.eval_all(self.order(), x)?;
        let re = phi.iter().zip(&self.re).map(|(p, w)| p * w).sum();
        let im = match &self.im {
            Some(im) => phi.iter().zip(im).map(|(p, w)| p * w).sum(),
            None => 0.0,
        };
        Ok(Complex64::new(re, im))
    }

    /// Proportion of energy in the top ⌊N/3⌋ modes, in [0, 1].
    pub fn frequency_indicator(&self) -> f64 {
        indicator_from_energies(&self.energies(), |i| self.basis.indicator_weight(i))
    }

    /// Re-expresses the expansion in `new_basis` with order `new_n`.
    ///
    /// With an unchanged basis this is exact truncation or zero padding; otherwise point
    /// values are projected with a [`reprojection_nodes`] rule of the new basis.
    pub fn reproject(&self, new_basis: &BasisDescriptor, new_n: usize) -> Result<Self> {
        if self.basis.family != new_basis.family {
            return Err(Error::BasisMismatch(format!(
                "cannot re-project {} onto {}",
                self.basis.family.name(),
                new_basis.family.name()
            )));
        }
        new_basis.validate()?;
        if *new_basis == self.basis {
            let resize = |v: &Vec<f64>| {
                let mut out = v.clone();
                out.resize(new_n + 1, 0.0);
                out
            };
            return Ok(Self {
                basis: *new_basis,
                re: resize(&self.re),
                im: self.im.as_ref().map(resize),
            });
        }
        let q = reprojection_nodes(self.order().max(new_n));
        let t = transfer_matrix(&self.basis, self.order(), new_basis, new_n, q)?;
        Self::build(*new_basis, t.matvec(&self.re), self.im.as_ref().map(|im| t.matvec(im)))
    }

    /// Discrete L² distance to `reference` on a `q`-point rule of the expansion's basis.
    pub fn l2_error(&self, reference: impl Fn(f64) -> f64, q: usize) -> Result<f64> {
        self.l2_error_complex(|x| Complex64::new(reference(x), 0.0), q)
    }

    pub fn l2_error_complex(&self, reference: impl Fn(f64) -> Complex64, q: usize) -> Result<f64> {
        let rule = quadrature_rule(&self.basis, q)?;
        let mut s = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            s += w * (self.evaluate_complex(x)? - reference(x)).norm_sqr();
        }
        Ok(s.sqrt())
    }
}

pub(crate) fn indicator_from_energies(energies: &[f64], weight: impl Fn(usize) -> f64) -> f64 {
    let n = energies.len() - 1;
    let start = n - n / 3 + 1;
    let total: f64 = energies.iter().enumerate().map(|(i, e)| weight(i) * e).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let high: f64 = energies
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, e)| weight(i) * e)
        .sum();
    (high / total).sqrt().clamp(0.0, 1.0)
}

/// Frequency indicator of `e` (free-function form).
pub fn frequency_indicator(e: &SpectralExpansion) -> f64 {
    e.frequency_indicator()
}
