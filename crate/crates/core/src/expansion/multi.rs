use serde::{Deserialize, Serialize};

use super::{indicator_from_energies, reprojection_nodes};
use crate::basis::{quadrature_rule, transfer_matrix, BasisDescriptor, Transform};
use crate::error::{invalid, Error, Result};
use crate::linalg::DenseMatrix;

/// Shape of a multi-dimensional index set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hyperbolicity {
    /// Every index in [0, N]^d.
    Full,
    /// Hyperbolic cross with parameter γ < 1.
    Gamma(f64),
}

/// Sorted set of multi-indices n ∈ [0, N]^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    cap: usize,
    hyperbolicity: Hyperbolicity,
    indices: Vec<Vec<usize>>,
}

/// Enumerates [0, N]^d keeping every n with |n|_mix ‖n‖_∞^{−γ} ≤ N^{1−γ}.
///
/// |n|_mix = Π max(nₖ, 1). The zero index is always kept.
pub fn hyperbolic_index_set(d: usize, n: usize, hyperbolicity: Hyperbolicity) -> Result<MultiIndexSet> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if let Hyperbolicity::Gamma(g) = hyperbolicity {
        if !(g < 1.0) || !g.is_finite() {
            return Err(invalid("hyperbolicity", format!("γ must be finite and < 1, got {g}")));
        }
    }
    let bound = match hyperbolicity {
        Hyperbolicity::Full => f64::INFINITY,
        Hyperbolicity::Gamma(g) => (n as f64).powf(1.0 - g) * (1.0 + 1e-12),
    };
    let mut indices = Vec::new();
    let mut cur = vec![0usize; d];
    loop {
        let keep = match hyperbolicity {
            Hyperbolicity::Full => true,
            Hyperbolicity::Gamma(g) => {
                let inf = *cur.iter().max().unwrap();
                if inf == 0 {
                    true
                } else {
                    let mix: f64 = cur.iter().map(|&k| k.max(1) as f64).product();
                    mix * (inf as f64).powf(-g) <= bound
                }
            }
        };
        if keep {
            indices.push(cur.clone());
        }
        // odometer increment, last dimension fastest, gives lexicographic order
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(MultiIndexSet {
                    dim: d,
                    cap: n,
                    hyperbolicity,
                    indices,
                });
            }
            k -= 1;
            if cur[k] < n {
                cur[k] += 1;
                break;
            }
            cur[k] = 0;
        }
    }
}

impl MultiIndexSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn hyperbolicity(&self) -> Hyperbolicity {
        self.hyperbolicity
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn position(&self, n: &[usize]) -> Option<usize> {
        self.indices.binary_search_by(|m| m.as_slice().cmp(n)).ok()
    }

    pub fn contains(&self, n: &[usize]) -> bool {
        self.position(n).is_some()
    }
}

/// Real expansion Σ_{n∈S} wₙ Πₖ φ_{nₖ}(xₖ) over a multi-index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpansion {
    pub bases: Vec<BasisDescriptor>,
    pub set: MultiIndexSet,
    coeffs: Vec<f64>,
}

impl MultiExpansion {
    pub fn new(bases: Vec<BasisDescriptor>, set: MultiIndexSet, coeffs: Vec<f64>) -> Result<Self> {
        if bases.len() != set.dim() {
            return Err(Error::LengthMismatch {
                expected: set.dim(),
                got: bases.len(),
            });
        }
        if coeffs.len() != set.len() {
            return Err(Error::LengthMismatch {
                expected: set.len(),
                got: coeffs.len(),
            });
        }
        for b in &bases {
            b.validate()?;
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("expansion coefficients"));
        }
        Ok(Self { bases, set, coeffs })
    }

    pub fn zeros(bases: Vec<BasisDescriptor>, set: MultiIndexSet) -> Result<Self> {
        let n = set.len();
        Self::new(bases, set, vec![0.0; n])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let n = self.set.cap();
        let tables = self
            .bases
            .iter()
            .zip(x)
            .map(|(b, &xk)| b.eval_all(n, xk))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .set
            .indices()
            .iter()
            .zip(&self.coeffs)
            .map(|(idx, w)| w * idx.iter().enumerate().map(|(k, &i)| tables[k][i]).product::<f64>())
            .sum())
    }

    /// Frequency indicator along dimension `k`, from the energy of each order in that direction.
    pub fn directional_indicator(&self, k: usize) -> f64 {
        let mut energies = vec![0.0; self.set.cap() + 1];
        for (idx, w) in self.set.indices().iter().zip(&self.coeffs) {
            energies[idx[k]] += w * w;
        }
        indicator_from_energies(&energies, |i| self.bases[k].indicator_weight(i))
    }

    pub fn directional_indicators(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.directional_indicator(k)).collect()
    }

    /// Re-expresses the expansion in new per-dimension bases over `new_set`.
    pub fn reproject(&self, new_bases: &[BasisDescriptor], new_set: &MultiIndexSet) -> Result<Self> {
        let t = self.transfer(new_bases, new_set)?;
        Self::new(new_bases.to_vec(), new_set.clone(), t.matvec(&self.coeffs))
    }

    /// Coefficient map from this expansion's space to `new_bases` over `new_set`:
    /// entry (n, m) is Πₖ Tₖ[nₖ, mₖ] with Tₖ the one-dimensional transfer matrices.
    pub fn transfer(&self, new_bases: &[BasisDescriptor], new_set: &MultiIndexSet) -> Result<DenseMatrix> {
        if new_bases.len() != self.dim() || new_set.dim() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: new_bases.len(),
            });
        }
        let old_n = self.set.cap();
        let new_n = new_set.cap();
        let q = reprojection_nodes(old_n.max(new_n));
        let transfers = self
            .bases
            .iter()
            .zip(new_bases)
            .map(|(old, new)| {
                if old == new {
                    Ok(DenseMatrix::from_fn(new_n + 1, old_n + 1, |i, j| if i == j { 1.0 } else { 0.0 }))
                } else {
                    transfer_matrix(old, old_n, new, new_n, q)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let old = self.set.indices();
        Ok(DenseMatrix::from_fn(new_set.len(), old.len(), |i, j| {
            let n = &new_set.indices()[i];
            let m = &old[j];
            (0..self.dim()).map(|k| transfers[k][(n[k], m[k])]).product()
        }))
    }

    /// Tensor-product projection of `f` with a `q`-point rule per dimension, keeping the
    /// coefficients in `set`.
    pub fn project(f: impl Fn(&[f64]) -> f64, bases: Vec<BasisDescriptor>, set: MultiIndexSet, q: usize) -> Result<Self> {
        let d = set.dim();
        if bases.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: bases.len(),
            });
        }
        let n = set.cap();
        let ts = bases
            .iter()
            .map(|b| Transform::new(b, n, q))
            .collect::<Result<Vec<_>>>()?;
        let mut vals = Vec::with_capacity(q.pow(d as u32));
        let mut cur = vec![0usize; d];
        let mut x = vec![0.0; d];
        'fill: loop {
            for k in 0..d {
                x[k] = ts[k].rule.nodes[cur[k]];
            }
            vals.push(f(&x));
            let mut k = d;
            loop {
                if k == 0 {
                    break 'fill;
                }
                k -= 1;
                if cur[k] + 1 < q {
                    cur[k] += 1;
                    break;
                }
                cur[k] = 0;
            }
        }
        // contract one axis at a time, last axis fastest
        let mut shape = vec![q; d];
        for k in 0..d {
            let outer: usize = shape[..k].iter().product();
            let inner: usize = shape[k + 1..].iter().product();
            let mut out = vec![0.0; outer * (n + 1) * inner];
            for o in 0..outer {
                for i in 0..=n {
                    let dst = (o * (n + 1) + i) * inner;
                    for j in 0..q {
                        let p = ts[k].projection[(i, j)];
                        let src = (o * q + j) * inner;
                        for r in 0..inner {
                            out[dst + r] += p * vals[src + r];
                        }
                    }
                }
            }
            vals = out;
            shape[k] = n + 1;
        }
        let coeffs = set
            .indices()
            .iter()
            .map(|idx| vals[idx.iter().fold(0, |acc, &i| acc * (n + 1) + i)])
            .collect();
        Self::new(bases, set, coeffs)
    }

    /// Discrete L² distance on the tensor product of `q`-point rules.
    pub fn l2_error(&self, reference: impl Fn(&[f64]) -> f64, q: usize) -> Result<f64> {
        let rules = self
            .bases
            .iter()
            .map(|b| quadrature_rule(b, q))
            .collect::<Result<Vec<_>>>()?;
        let d = self.dim();
        let mut s = 0.0;
        let mut cur = vec![0usize; d];
        let mut x = vec![0.0; d];
        loop {
            let mut w = 1.0;
            for k in 0..d {
                x[k] = rules[k].nodes[cur[k]];
                w *= rules[k].weights[cur[k]];
            }
            let diff = self.evaluate(&x)? - reference(&x);
            s += w * diff * diff;
            let mut k = d;
            loop {
                if k == 0 {
                    return Ok(s.sqrt());
                }
                k -= 1;
                if cur[k] + 1 < q {
                    cur[k] += 1;
                    break;
                }
                cur[k] = 0;
            }
        }
    }
}
