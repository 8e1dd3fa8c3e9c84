use std::f64::consts::PI;

use super::{quadrature_rule, BasisDescriptor, BasisFamily, QuadratureRule};
use crate::error::{invalid, Error, Result};
use crate::linalg::DenseMatrix;

/// Discrete forward/backward transform between coefficients and node values.
#[derive(Debug, Clone)]
pub struct Transform {
    pub desc: BasisDescriptor,
    pub order: usize,
    pub rule: QuadratureRule,
    /// `vandermonde[(k, i)] = φᵢ(xₖ)`
    pub vandermonde: DenseMatrix,
    /// `projection[(i, k)]`, so that coefficients = projection · values.
    pub projection: DenseMatrix,
}

impl Transform {
    pub fn new(desc: &BasisDescriptor, order: usize, q: usize) -> Result<Self> {
        if q < order + 1 {
            return Err(invalid(
                "q",
                format!("projection of order {order} needs at least {} nodes, got {q}", order + 1),
            ));
        }
        let rule = quadrature_rule(desc, q)?;
        Self::with_rule(desc, order, rule)
    }

    pub fn with_rule(desc: &BasisDescriptor, order: usize, rule: QuadratureRule) -> Result<Self> {
        let q = rule.len();
        if q < order + 1 {
            return Err(invalid("q", "fewer nodes than coefficients"));
        }
        let mut vandermonde = DenseMatrix::zeros(q, order + 1);
        for (k, &x) in rule.nodes.iter().enumerate() {
            let vals = desc.eval_all(order, x)?;
            for (i, v) in vals.into_iter().enumerate() {
                vandermonde[(k, i)] = v;
            }
        }
        let (weights, norms) = projection_weights(desc, order, &rule);
        let projection =
            DenseMatrix::from_fn(order + 1, q, |i, k| weights[k] * vandermonde[(k, i)] / norms[i]);
        Ok(Self {
            desc: *desc,
            order,
            rule,
            vandermonde,
            projection,
        })
    }

    pub fn forward(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.rule.len() {
            return Err(Error::LengthMismatch {
                expected: self.rule.len(),
                got: values.len(),
            });
        }
        Ok(self.projection.matvec(values))
    }

    pub fn backward(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.order + 1 {
            return Err(Error::LengthMismatch {
                expected: self.order + 1,
                got: coeffs.len(),
            });
        }
        Ok(self.vandermonde.matvec(coeffs))
    }
}

/// Quadrature weights and element norms of the projection inner product.
///
/// Chebyshev projection is the discrete Chebyshev transform on the Lobatto points:
/// weights π/n inside and π/(2n) at the ends, with the last element's discrete norm
/// equal to π so that interpolation is exact.
fn projection_weights(desc: &BasisDescriptor, order: usize, rule: &QuadratureRule) -> (Vec<f64>, Vec<f64>) {
    let q = rule.len();
    match desc.family {
        BasisFamily::Chebyshev => {
            let n = (q - 1) as f64;
            let w = (0..q)
                .map(|k| if k == 0 || k == q - 1 { PI / (2.0 * n) } else { PI / n })
                .collect();
            let norms = (0..=order)
                .map(|i| if i == q - 1 { PI } else { desc.norm_squared(i) })
                .collect();
            (w, norms)
        }
        _ => (
            rule.weights.clone(),
            (0..=order).map(|i| desc.norm_squared(i)).collect(),
        ),
    }
}

/// Projects node values (on the family's `values.len()`-point rule) onto order `n`.
pub fn project(values: &[f64], desc: &BasisDescriptor, n: usize) -> Result<Vec<f64>> {
    let t = Transform::new(desc, n, values.len())?;
    t.forward(values)
}

/// Projects a callable onto order `n` with a `q`-point rule.
pub fn project_fn(f: impl Fn(f64) -> f64, desc: &BasisDescriptor, n: usize, q: usize) -> Result<Vec<f64>> {
    let t = Transform::new(desc, n, q)?;
    let values: Vec<f64> = t.rule.nodes.iter().map(|&x| f(x)).collect();
    t.forward(&values)
}

/// Matrix mapping order-`old_n` coefficients in `old` to order-`new_n` coefficients in `new`,
/// computed by projecting point values on a `q`-point rule of the new basis.
pub fn transfer_matrix(
    old: &BasisDescriptor,
    old_n: usize,
    new: &BasisDescriptor,
    new_n: usize,
    q: usize,
) -> Result<DenseMatrix> {
    if old.family != new.family {
        return Err(Error::BasisMismatch(format!(
            "cannot re-project {} onto {}",
            old.family.name(),
            new.family.name()
        )));
    }
    let t = Transform::new(new, new_n, q)?;
    let mut vals = DenseMatrix::zeros(t.rule.len(), old_n + 1);
    for (k, &x) in t.rule.nodes.iter().enumerate() {
        for (j, v) in old.eval_all(old_n, x)?.into_iter().enumerate() {
            vals[(k, j)] = v;
        }
    }
    Ok(t.projection.matmul(&vals))
}
