use std::collections::BTreeMap;

use super::{BasisDescriptor, BasisFamily};
use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};

/// Exact derivative of an order-N expansion, expressed in coefficient space.
///
/// Entry `(i, j)` is the coefficient of φᵢ in φⱼ^{(order)}. Hermite derivatives leave
/// the span (ψ_N″ has a ψ_{N+2} component), so those maps have `N + 1 + order` rows;
/// [`DerivativeMap::galerkin`] drops the extra rows, which is the Galerkin projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMap {
    pub order: u8,
    rows: usize,
    cols: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl DerivativeMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    /// Derivative coefficients (length [`rows`](Self::rows)).
    pub fn apply(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.cols {
            return Err(Error::LengthMismatch {
                expected: self.cols,
                got: coeffs.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for (&(i, j), &v) in &self.entries {
            out[i] += v * coeffs[j];
        }
        Ok(out)
    }

    /// Square `(N+1) × (N+1)` map with components outside the span dropped.
    pub fn galerkin(&self) -> CsrMatrix {
        let t: Vec<_> = self
            .entries
            .iter()
            .filter(|((i, _), _)| *i < self.cols)
            .map(|(&(i, j), &v)| (i, j, v))
            .collect();
        CsrMatrix::from_triplets(self.cols, self.cols, &t)
    }

    fn from_dense(order: u8, d: &DenseMatrix) -> Self {
        let mut entries = BTreeMap::new();
        for i in 0..d.rows() {
            for j in 0..d.cols() {
                if d[(i, j)] != 0.0 {
                    entries.insert((i, j), d[(i, j)]);
                }
            }
        }
        Self {
            order,
            rows: d.rows(),
            cols: d.cols(),
            entries,
        }
    }
}

/// Coefficient-space derivative map of the given order (1 or 2) for expansions of order `n`.
pub fn derivative_map(desc: &BasisDescriptor, order: u8, n: usize) -> Result<DerivativeMap> {
    desc.validate()?;
    if !(order == 1 || order == 2) {
        return Err(Error::Unsupported(format!("derivative order {order}")));
    }
    let beta = desc.scaling;
    match desc.family {
        BasisFamily::Hermite => {
            let mut entries = BTreeMap::new();
            let b2 = beta * beta;
            for j in 0..=n {
                let jf = j as f64;
                if order == 1 {
                    if j >= 1 {
                        entries.insert((j - 1, j), beta * (jf / 2.0).sqrt());
                    }
                    entries.insert((j + 1, j), -beta * ((jf + 1.0) / 2.0).sqrt());
                } else {
                    if j >= 2 {
                        entries.insert((j - 2, j), b2 * (jf * (jf - 1.0)).sqrt() / 2.0);
                    }
                    entries.insert((j, j), -b2 * (jf + 0.5));
                    entries.insert((j + 2, j), b2 * ((jf + 1.0) * (jf + 2.0)).sqrt() / 2.0);
                }
            }
            Ok(DerivativeMap {
                order,
                rows: n + 1 + order as usize,
                cols: n + 1,
                entries,
            })
        }
        BasisFamily::Laguerre => {
            // L̂ⱼ′ = β(−½L̂ⱼ − Σ_{k<j} L̂ₖ)
            let d1 = DenseMatrix::from_fn(n + 1, n + 1, |i, j| {
                if i == j {
                    -0.5 * beta
                } else if i < j {
                    -beta
                } else {
                    0.0
                }
            });
            Ok(power(order, d1))
        }
        BasisFamily::Chebyshev => {
            // Tⱼ′ = Σ_{i<j, i+j odd} (2j / cᵢ) Tᵢ with c₀ = 2, cᵢ = 1 otherwise
            let d1 = DenseMatrix::from_fn(n + 1, n + 1, |i, j| {
                if j > i && (i + j) % 2 == 1 {
                    let c = if i == 0 { 2.0 } else { 1.0 };
                    2.0 * j as f64 / c
                } else {
                    0.0
                }
            });
            Ok(power(order, d1))
        }
        BasisFamily::MappedGegenbauer => Err(Error::Unsupported(
            "derivative maps for mapped Gegenbauer functions".into(),
        )),
    }
}

fn power(order: u8, d1: DenseMatrix) -> DerivativeMap {
    if order == 1 {
        DerivativeMap::from_dense(1, &d1)
    } else {
        DerivativeMap::from_dense(2, &d1.matmul(&d1))
    }
}
