//! Crank–Nicolson Hermite–Galerkin solver for the constant-coefficient heat equation.

use crate::adaptivity::{AdaptiveConfig, AdaptiveState};
use crate::basis::BasisFamily;
use crate::collocation::{step_count, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::expansion::Field;
use crate::linalg::DenseMatrix;
use crate::problems::{initial_field, l2_error, source_vector, Discretization, OperatorKind, ProblemSpec};

/// Square matrix stored by diagonals; `bands[k][i]` is the entry at row i of the diagonal
/// with column offset `offsets[k]` (row `i`, column `i + offset` for positive offsets,
/// row `i − offset`, column `i` otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    size: usize,
    offsets: Vec<isize>,
    bands: Vec<Vec<f64>>,
}

impl BandMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> &[isize] {
        &self.offsets
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let off = j as isize - i as isize;
        match self.offsets.iter().position(|&o| o == off) {
            Some(k) => self.bands[k][i.min(j)],
            None => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.size, self.size, |i, j| self.get(i, j))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size];
        for (off, band) in self.offsets.iter().zip(&self.bands) {
            let d = off.unsigned_abs();
            for (k, v) in band.iter().enumerate() {
                let (i, j) = if *off >= 0 { (k, k + d) } else { (k + d, k) };
                y[i] += v * x[j];
            }
        }
        y
    }
}

/// Galerkin matrix of ∂ₓ² in the order-N Hermite basis with scaling β: diagonals
/// −β²(i + ½) and β²√((i+1)(i+2))/2 two places off the diagonal.
pub fn hermite_laplacian(n: usize, beta: f64) -> Result<BandMatrix> {
    if n < 2 {
        return Err(invalid("n", format!("must be at least 2, got {n}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid("scaling", format!("must be positive, got {beta}")));
    }
    let b2 = beta * beta;
    let diag = (0..=n).map(|i| -b2 * (i as f64 + 0.5)).collect();
    let off: Vec<f64> = (0..n - 1).map(|i| b2 * (((i + 1) * (i + 2)) as f64).sqrt() / 2.0).collect();
    Ok(BandMatrix {
        size: n + 1,
        offsets: vec![-2, 0, 2],
        bands: vec![off.clone(), diag, off],
    })
}

#[derive(Debug)]
pub struct CnOutput {
    pub records: Vec<StepRecord>,
    pub final_field: Field,
}

/// Advances U′ = κD·U + F with the trapezoidal rule, re-scaling the basis after each
/// step when `adaptive.scaling` is set. Records carry zero loss and epochs.
pub fn cn_solve(p: &ProblemSpec, disc: &Discretization, dt: f64, t_end: f64, adaptive: &AdaptiveConfig) -> Result<CnOutput> {
    if !matches!(p.operator, OperatorKind::Diffusion) || p.complex || p.dim() != 1 {
        return Err(Error::Unsupported(format!("Crank–Nicolson reference for {}", p.id)));
    }
    if disc.bases.len() != 1 || disc.bases[0].family != BasisFamily::Hermite {
        return Err(Error::Unsupported("Crank–Nicolson reference needs a Hermite basis".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("must be positive, got {dt}")));
    }
    disc.validate()?;
    adaptive.validate()?;
    let steps = step_count(t_end, dt)?;
    let scaling_only = AdaptiveConfig {
        moving: false,
        p_refine: false,
        ..*adaptive
    };
    let mut u = initial_field(p, disc)?;
    let mut state = AdaptiveState::new(u.indicators(), &scaling_only);
    let mut records = Vec::with_capacity(steps);
    for j in 0..steps {
        let t_j = j as f64 * dt;
        let t_next = (j + 1) as f64 * dt;
        let basis = u.bases()[0];
        let d = hermite_laplacian(u.order(), basis.scaling)?.to_dense().scaled(p.kappa);
        let size = d.rows();
        let lhs = DenseMatrix::from_fn(size, size, |a, b| if a == b { 1.0 } else { 0.0 } - 0.5 * dt * d[(a, b)]);
        let w = u.to_vector();
        let dw = d.matvec(&w);
        let f0 = source_vector(p, &u, t_j)?;
        let f1 = source_vector(p, &u, t_next)?;
        let rhs: Vec<f64> = (0..size)
            .map(|a| w[a] + 0.5 * dt * (dw[a] + f0[a] + f1[a]))
            .collect();
        let next = u.with_vector(&lhs.solve(&rhs)?)?;
        let (adapted, _) = state.adapt_field(&next, &scaling_only)?;
        u = adapted;
        let err = l2_error(p, &u, t_next)?;
        records.push(StepRecord::describe(j + 1, t_next, 0.0, err, &u, 0, 0.0));
    }
    Ok(CnOutput {
        records,
        final_field: u,
    })
}
