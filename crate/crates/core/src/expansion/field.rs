use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{reprojection_nodes, MultiExpansion, MultiIndexSet, SpectralExpansion};
use crate::basis::{transfer_matrix, BasisDescriptor};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// The spatial state a time stepper carries: a 1-D expansion (real or complex) or a
/// multi-dimensional one. Coefficients flatten to `[re…, im…]` or multi-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Field {
    Line(SpectralExpansion),
    Grid(MultiExpansion),
}

impl Field {
    pub fn dim(&self) -> usize {
        match self {
            Field::Line(_) => 1,
            Field::Grid(m) => m.dim(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Field::Line(e) if e.is_complex())
    }

    pub fn len(&self) -> usize {
        match self {
            Field::Line(e) => e.to_vector().len(),
            Field::Grid(m) => m.coefficients().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vector(&self) -> Vec<f64> {
        match self {
            Field::Line(e) => e.to_vector(),
            Field::Grid(m) => m.coefficients().to_vec(),
        }
    }

    /// Same discretization, new coefficients.
    pub fn with_vector(&self, v: &[f64]) -> Result<Field> {
        if v.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: v.len(),
            });
        }
        Ok(match self {
            Field::Line(e) => Field::Line(SpectralExpansion::from_vector(e.basis, v, e.is_complex())?),
            Field::Grid(m) => Field::Grid(MultiExpansion::new(m.bases.clone(), m.set.clone(), v.to_vec())?),
        })
    }

    pub fn bases(&self) -> Vec<BasisDescriptor> {
        match self {
            Field::Line(e) => vec![e.basis],
            Field::Grid(m) => m.bases.clone(),
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Field::Line(e) => e.order(),
            Field::Grid(m) => m.set.cap(),
        }
    }

    /// Frequency indicator per spatial dimension.
    pub fn indicators(&self) -> Vec<f64> {
        match self {
            Field::Line(e) => vec![e.frequency_indicator()],
            Field::Grid(m) => m.directional_indicators(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Complex64> {
        match self {
            Field::Line(e) => {
                if x.len() != 1 {
                    return Err(Error::LengthMismatch { expected: 1, got: x.len() });
                }
                e.evaluate_complex(x[0])
            }
            Field::Grid(m) => Ok(Complex64::new(m.evaluate(x)?, 0.0)),
        }
    }

    pub fn l2_error(&self, reference: impl Fn(&[f64]) -> Complex64, q: usize) -> Result<f64> {
        match self {
            Field::Line(e) => e.l2_error_complex(|x| reference(&[x]), q),
            Field::Grid(m) => m.l2_error(|x| reference(x).re, q),
        }
    }

    /// Re-expresses the field with new per-dimension bases and order `n`, keeping the
    /// index-set shape of grid fields.
    pub fn reproject(&self, bases: &[BasisDescriptor], n: usize) -> Result<Field> {
        let t = self.transfer(bases, n)?;
        let v = t.matvec(&self.to_vector());
        self.target(bases, n)?.with_vector(&v)
    }

    /// Zero field on the target discretization.
    fn target(&self, bases: &[BasisDescriptor], n: usize) -> Result<Field> {
        if bases.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: bases.len(),
            });
        }
        Ok(match self {
            Field::Line(e) => Field::Line(SpectralExpansion::zeros(bases[0], n, e.is_complex())?),
            Field::Grid(m) => {
                let set = if n == m.set.cap() {
                    m.set.clone()
                } else {
                    super::hyperbolic_index_set(m.dim(), n, m.set.hyperbolicity())?
                };
                Field::Grid(MultiExpansion::zeros(bases.to_vec(), set)?)
            }
        })
    }

    /// Linear map taking this field's coefficients to those of [`reproject`](Self::reproject).
    pub fn transfer(&self, bases: &[BasisDescriptor], n: usize) -> Result<DenseMatrix> {
        match (self, self.target(bases, n)?) {
            (Field::Line(e), Field::Line(_)) => {
                let new = bases[0];
                if e.basis.family != new.family {
                    return Err(Error::BasisMismatch(format!(
                        "cannot re-project {} onto {}",
                        e.basis.family.name(),
                        new.family.name()
                    )));
                }
                let m = e.order() + 1;
                let t = if e.basis == new {
                    DenseMatrix::from_fn(n + 1, m, |i, j| if i == j { 1.0 } else { 0.0 })
                } else {
                    transfer_matrix(&e.basis, e.order(), &new, n, reprojection_nodes(e.order().max(n)))?
                };
                if !e.is_complex() {
                    return Ok(t);
                }
                // real and imaginary parts transform independently
                Ok(DenseMatrix::from_fn(2 * (n + 1), 2 * m, |i, j| {
                    match (i <= n, j < m) {
                        (true, true) => t[(i, j)],
                        (false, false) => t[(i - n - 1, j - m)],
                        _ => 0.0,
                    }
                }))
            }
            (Field::Grid(g), Field::Grid(target)) => g.transfer(bases, &target.set),
            _ => unreachable!("target keeps the field kind"),
        }
    }

    pub fn index_set(&self) -> Option<&MultiIndexSet> {
        match self {
            Field::Line(_) => None,
            Field::Grid(m) => Some(&m.set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{hyperbolic_index_set, Hyperbolicity};
    use approx::assert_abs_diff_eq;

    #[test]
    fn complex_line_round_trip_and_transfer() {
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let e = SpectralExpansion::new_complex(b, vec![1.0, 0.5, 0.0], vec![0.0, -0.2, 0.3]).unwrap();
        let f = Field::Line(e.clone());
        assert_eq!(f.len(), 6);
        assert!(f.is_complex());
        assert_eq!(f.with_vector(&f.to_vector()).unwrap(), f);
        let nb = b.with_scaling(0.9);
        let g = f.reproject(&[nb], 5).unwrap();
        let re = SpectralExpansion::new(b, vec![1.0, 0.5, 0.0]).unwrap().reproject(&nb, 5).unwrap();
        let im = SpectralExpansion::new(b, vec![0.0, -0.2, 0.3]).unwrap().reproject(&nb, 5).unwrap();
        let v = g.to_vector();
        for i in 0..6 {
            assert_abs_diff_eq!(v[i], re.coefficients()[i], epsilon = 1e-14);
            assert_abs_diff_eq!(v[6 + i], im.coefficients()[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_reproject_changes_cap() {
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let set = hyperbolic_index_set(2, 4, Hyperbolicity::Gamma(0.0)).unwrap();
        let mut c = vec![0.0; set.len()];
        c[0] = 1.0;
        let f = Field::Grid(MultiExpansion::new(vec![b, b], set, c).unwrap());
        let g = f.reproject(&[b, b], 6).unwrap();
        let want = hyperbolic_index_set(2, 6, Hyperbolicity::Gamma(0.0)).unwrap().len();
        assert_eq!(g.len(), want);
        assert_eq!(g.to_vector()[0], 1.0);
        assert!(g.to_vector()[1..].iter().all(|&v| v == 0.0));
    }
}
