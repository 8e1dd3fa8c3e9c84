//! Gauss–Legendre collocation in time: Butcher tableaux, the step loss, and the
//! step-by-step training loop with adaptivity.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::adaptivity::{AdaptiveConfig, AdaptiveState};
use crate::basis::{chebyshev_gauss_lobatto, gauss_legendre, BasisFamily};
use crate::error::{invalid, Error, Result};
use crate::expansion::Field;
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::net::{init_mlp, train, LossEval, MlpParams, Mode, StopReason, TrainConfig};
use crate::problems::{boundary_row, initial_field, l2_error, operator_matrix, source_vector, Discretization, ProblemSpec};

pub const MAX_STAGES: usize = 10;

/// K-stage implicit Runge–Kutta coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButcherTableau {
    pub c: Vec<f64>,
    /// `a[r][s]`
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ButcherTableau {
    /// Collocation at the shifted Legendre roots: order 2K.
    pub fn gauss_legendre(k: usize) -> Result<Self> {
        if !(1..=MAX_STAGES).contains(&k) {
            return Err(invalid("stages", format!("must lie in 1..={MAX_STAGES}, got {k}")));
        }
        let (xi, w) = gauss_legendre(k)?;
        let c: Vec<f64> = xi.iter().map(|x| (x + 1.0) / 2.0).collect();
        let lagrange = |s: usize, tau: f64| {
            (0..k)
                .filter(|&m| m != s)
                .map(|m| (tau - c[m]) / (c[s] - c[m]))
                .product::<f64>()
        };
        // ℓ_s has degree K−1, so the K-point rule integrates it exactly
        let integral = |s: usize, upper: f64| {
            upper / 2.0
                * xi.iter()
                    .zip(&w)
                    .map(|(x, wq)| wq * lagrange(s, upper * (x + 1.0) / 2.0))
                    .sum::<f64>()
        };
        let a = (0..k)
            .map(|r| (0..k).map(|s| integral(s, c[r])).collect())
            .collect();
        let b = w.iter().map(|wq| wq / 2.0).collect();
        Ok(Self { c, a, b })
    }

    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// `a[r][s] − b[s]`, the coefficients tying stages to the end of the step.
    pub fn end_relative(&self) -> Vec<Vec<f64>> {
        self.a
            .iter()
            .map(|row| row.iter().zip(&self.b).map(|(a, b)| a - b).collect())
            .collect()
    }
}

pub fn gauss_legendre_tableau(k: usize) -> Result<ButcherTableau> {
    ButcherTableau::gauss_legendre(k)
}

/// Exact stage values and end value of one step of w′ = λw from `w0`.
pub fn scalar_linear_step(tab: &ButcherTableau, lambda: f64, w0: f64, dt: f64) -> Result<(Vec<f64>, f64)> {
    let k = tab.stages();
    let m = DenseMatrix::from_fn(k, k, |r, s| if r == s { 1.0 } else { 0.0 } - dt * lambda * tab.a[r][s]);
    let stages = m.solve(&vec![w0; k])?;
    let end = w0 + dt * lambda * tab.b.iter().zip(&stages).map(|(b, w)| b * w).sum::<f64>();
    Ok((stages, end))
}

/// Inner product on coefficient vectors used to measure residuals.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialNorm {
    Identity,
    Diagonal(Vec<f64>),
    Dense(DenseMatrix),
}

impl SpatialNorm {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            SpatialNorm::Identity => r.to_vec(),
            SpatialNorm::Diagonal(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
            SpatialNorm::Dense(g) => g.matvec(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Squared boundary misfits added to the loss.
    #[default]
    Penalty,
    /// Penalty plus removal of the residual at the boundary node (Chebyshev only).
    Strong,
}

/// Parseval norm for orthonormal bases; the discrete Lobatto norm for Chebyshev, with the
/// boundary node dropped in strong mode.
pub fn spatial_norm(field: &Field, mode: BoundaryMode, boundary_x: Option<f64>) -> Result<SpatialNorm> {
    let Field::Line(e) = field else {
        return Ok(SpatialNorm::Identity);
    };
    if e.basis.family != BasisFamily::Chebyshev {
        if mode == BoundaryMode::Strong {
            return Err(Error::Unsupported("strong boundary imposition needs a Chebyshev basis".into()));
        }
        return Ok(SpatialNorm::Identity);
    }
    let n = e.order();
    match (mode, boundary_x) {
        (BoundaryMode::Penalty, _) | (BoundaryMode::Strong, None) => Ok(SpatialNorm::Diagonal(
            (0..=n).map(|i| if i == 0 || i == n { PI } else { PI / 2.0 }).collect(),
        )),
        (BoundaryMode::Strong, Some(xb)) => {
            let nodes = chebyshev_gauss_lobatto(n + 1);
            let nf = n as f64;
            let mut rows = Vec::with_capacity(n + 1);
            let mut weights = Vec::with_capacity(n + 1);
            for (k, &x) in nodes.iter().enumerate() {
                rows.push(e.basis.eval_all(n, x)?);
                let w = if k == 0 || k == n { PI / (2.0 * nf) } else { PI / nf };
                weights.push(if (x - xb).abs() < 1e-12 { 0.0 } else { w });
            }
            Ok(SpatialNorm::Dense(DenseMatrix::from_fn(n + 1, n + 1, |i, j| {
                (0..=n).map(|k| weights[k] * rows[k][i] * rows[k][j]).sum()
            })))
        }
    }
}

/// Stage residuals W_s − U − Δt Σ_r C[s][r]·(θM_r W_r + F_r).
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub value: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

/// End residual W_E − U − Δt Σ_r b_r·(θM_r W_r + F_r).
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub value: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Squared misfits (ℓ·W_s − g_s)² and (ℓ·W_E − g_E)².
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTerms {
    pub row: Vec<f64>,
    pub stage_values: Vec<f64>,
    pub end_value: Option<f64>,
}

/// Sum-of-squares residual of one collocation step, as a function of the stage
/// (and end) coefficients and an operator multiplier θ.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub dt: f64,
    pub ops: Vec<CsrMatrix>,
    pub sources: Vec<Vec<f64>>,
    pub anchors: Vec<Anchor>,
    pub endpoint: Option<Endpoint>,
    pub norm: SpatialNorm,
    pub boundary: Option<BoundaryTerms>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEval {
    pub loss: f64,
    /// Residual sum of squares per anchor, then the endpoint.
    pub terms: Vec<f64>,
    pub boundary: f64,
    pub d_stages: Vec<Vec<f64>>,
    pub d_end: Option<Vec<f64>>,
    pub d_theta: f64,
}

impl StepLoss {
    /// Forward-solve loss for the step from `t_j`, anchored at `u_prev`.
    pub fn forward(
        p: &ProblemSpec,
        u_prev: &Field,
        tab: &ButcherTableau,
        t_j: f64,
        dt: f64,
        mode: BoundaryMode,
    ) -> Result<Self> {
        let k = tab.stages();
        let times: Vec<f64> = tab.c.iter().map(|c| t_j + c * dt).collect();
        let ops = times
            .iter()
            .map(|&t| operator_matrix(p, u_prev, t))
            .collect::<Result<Vec<_>>>()?;
        let sources = times
            .iter()
            .map(|&t| source_vector(p, u_prev, t))
            .collect::<Result<Vec<_>>>()?;
        let u = u_prev.to_vector();
        let boundary = match (boundary_row(p, u_prev)?, &p.boundary) {
            (Some(row), Some(b)) => Some(BoundaryTerms {
                row,
                stage_values: times.iter().map(|&t| (b.value)(t)).collect(),
                end_value: Some((b.value)(t_j + dt)),
            }),
            _ => None,
        };
        let norm = spatial_norm(u_prev, mode, p.boundary.as_ref().map(|b| b.x))?;
        let loss = Self {
            dt,
            ops,
            sources,
            anchors: vec![Anchor {
                value: u.clone(),
                coeffs: tab.a.clone(),
            }],
            endpoint: Some(Endpoint {
                value: u,
                weights: tab.b.clone(),
            }),
            norm,
            boundary,
        };
        debug_assert_eq!(loss.ops.len(), k);
        Ok(loss)
    }

    pub fn stages(&self) -> usize {
        self.ops.len()
    }

    pub fn len(&self) -> usize {
        self.ops.first().map_or(0, |m| m.cols())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evaluate(&self, stages: &[&[f64]], end: Option<&[f64]>, theta: f64) -> Result<StepEval> {
        let k = self.stages();
        let n = self.len();
        if stages.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                got: stages.len(),
            });
        }
        if let Some(w) = stages.iter().find(|w| w.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if self.endpoint.is_some() != end.is_some() {
            return Err(invalid("end", "end coefficients must be given exactly when the loss has an endpoint"));
        }
        let mw: Vec<Vec<f64>> = self.ops.iter().zip(stages).map(|(m, w)| m.matvec(w)).collect();
        let rhs: Vec<Vec<f64>> = mw
            .iter()
            .zip(&self.sources)
            .map(|(m, f)| m.iter().zip(f).map(|(a, b)| theta * a + b).collect())
            .collect();
        let mut loss = 0.0;
        let mut terms = Vec::with_capacity(self.anchors.len() + 1);
        let mut d_stages = vec![vec![0.0; n]; k];
        // y_r collects Σ_s C[s][r]·Z_s over all anchors and the endpoint
        let mut y = vec![vec![0.0; n]; k];
        let residual = |value: &[f64], w: &[f64], coeffs: &[f64], y: &mut [Vec<f64>]| -> (f64, Vec<f64>) {
            let mut r: Vec<f64> = w.iter().zip(value).map(|(a, b)| a - b).collect();
            for (c, f) in coeffs.iter().zip(&rhs) {
                if *c != 0.0 {
                    for (ri, fi) in r.iter_mut().zip(f) {
                        *ri -= self.dt * c * fi;
                    }
                }
            }
            let gr = self.norm.apply(&r);
            let sq: f64 = r.iter().zip(&gr).map(|(a, b)| a * b).sum();
            let z: Vec<f64> = gr.iter().map(|v| 2.0 * v).collect();
            for (c, yr) in coeffs.iter().zip(y.iter_mut()) {
                for (a, b) in yr.iter_mut().zip(&z) {
                    *a += c * b;
                }
            }
            (sq, z)
        };
        for anchor in &self.anchors {
            let mut term = 0.0;
            for s in 0..k {
                let (sq, z) = residual(&anchor.value, stages[s], &anchor.coeffs[s], &mut y);
                term += sq;
                for (a, b) in d_stages[s].iter_mut().zip(&z) {
                    *a += b;
                }
            }
            terms.push(term);
            loss += term;
        }
        let mut d_end = None;
        if let (Some(ep), Some(w)) = (&self.endpoint, end) {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            let (sq, z) = residual(&ep.value, w, &ep.weights, &mut y);
            terms.push(sq);
            loss += sq;
            d_end = Some(z);
        }
        let mut d_theta = 0.0;
        for r in 0..k {
            let back = self.ops[r].transpose_matvec(&y[r]);
            for (a, b) in d_stages[r].iter_mut().zip(&back) {
                *a -= self.dt * theta * b;
            }
            d_theta -= self.dt * y[r].iter().zip(&mw[r]).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut bsum = 0.0;
        if let Some(bt) = &self.boundary {
            let dotrow = |w: &[f64]| bt.row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            for s in 0..k {
                let e = dotrow(stages[s]) - bt.stage_values[s];
                bsum += e * e;
                for (a, b) in d_stages[s].iter_mut().zip(&bt.row) {
                    *a += 2.0 * e * b;
                }
            }
            if let (Some(g), Some(w), Some(dz)) = (bt.end_value, end, d_end.as_mut()) {
                let e = dotrow(w) - g;
                bsum += e * e;
                for (a, b) in dz.iter_mut().zip(&bt.row) {
                    *a += 2.0 * e * b;
                }
            }
            loss += bsum;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("step loss"));
        }
        Ok(StepEval {
            loss,
            terms,
            boundary: bsum,
            d_stages,
            d_end,
            d_theta,
        })
    }

    /// Objective over network outputs: rows are the stages, then the end (if any).
    pub fn objective(&self, theta_trainable: bool) -> impl Fn(ArrayView2<f64>, &[f64]) -> Result<LossEval> + '_ {
        move |out: ArrayView2<f64>, extra: &[f64]| {
            let k = self.stages();
            let rows: Vec<Vec<f64>> = out.rows().into_iter().map(|r| r.to_vec()).collect();
            let stages: Vec<&[f64]> = rows[..k].iter().map(|r| r.as_slice()).collect();
            let end = self.endpoint.as_ref().map(|_| rows[k].as_slice());
            let theta = if theta_trainable { extra[0] } else { 1.0 };
            let ev = self.evaluate(&stages, end, theta)?;
            let mut d = Array2::zeros(out.dim());
            for (s, g) in ev.d_stages.iter().enumerate() {
                d.row_mut(s).assign(&ndarray::ArrayView1::from(g.as_slice()));
            }
            if let Some(g) = &ev.d_end {
                d.row_mut(k).assign(&ndarray::ArrayView1::from(g.as_slice()));
            }
            Ok(LossEval {
                loss: ev.loss,
                d_outputs: d,
                d_extra: if theta_trainable { vec![ev.d_theta] } else { vec![] },
            })
        }
    }

    /// Exact minimizer without boundary terms: the linear stage system of a
    /// single-anchor forward loss, solved densely.
    pub fn direct_solve(&self, theta: f64) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
        let [anchor] = self.anchors.as_slice() else {
            return Err(Error::Unsupported("direct solve of a multi-anchor loss".into()));
        };
        let k = self.stages();
        let n = self.len();
        let dense: Vec<DenseMatrix> = self.ops.iter().map(|m| m.to_dense()).collect();
        let sys = DenseMatrix::from_fn(k * n, k * n, |i, j| {
            let (s, a) = (i / n, i % n);
            let (r, b) = (j / n, j % n);
            let id = if i == j { 1.0 } else { 0.0 };
            id - self.dt * theta * anchor.coeffs[s][r] * dense[r][(a, b)]
        });
        let mut rhs = vec![0.0; k * n];
        for s in 0..k {
            for a in 0..n {
                rhs[s * n + a] = anchor.value[a]
                    + self.dt * (0..k).map(|r| anchor.coeffs[s][r] * self.sources[r][a]).sum::<f64>();
            }
        }
        let sol = sys.solve(&rhs)?;
        let stages: Vec<Vec<f64>> = sol.chunks(n).map(|c| c.to_vec()).collect();
        let end = self.endpoint.as_ref().map(|ep| {
            let mut w = ep.value.clone();
            for r in 0..k {
                let f = self.ops[r].matvec(&stages[r]);
                for a in 0..n {
                    w[a] += self.dt * ep.weights[r] * (theta * f[a] + self.sources[r][a]);
                }
            }
            w
        });
        Ok((stages, end))
    }
}

/// Loss of the forward step from `u_prev` at `t_j` for the given stage and end coefficients.
pub fn assemble_step_loss(
    p: &ProblemSpec,
    u_prev: &Field,
    outputs: &[Vec<f64>],
    tab: &ButcherTableau,
    t_j: f64,
    dt: f64,
    mode: BoundaryMode,
) -> Result<f64> {
    let k = tab.stages();
    if outputs.len() != k + 1 {
        return Err(Error::LengthMismatch {
            expected: k + 1,
            got: outputs.len(),
        });
    }
    let loss = StepLoss::forward(p, u_prev, tab, t_j, dt, mode)?;
    let stages: Vec<&[f64]> = outputs[..k].iter().map(|v| v.as_slice()).collect();
    Ok(loss.evaluate(&stages, Some(&outputs[k]), 1.0)?.loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub train: TrainConfig,
    /// Continue from the previous step's network instead of re-initializing.
    pub warm_start: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 5,
            width: 100,
            train: TrainConfig {
                learning_rate: 5e-4,
                ..TrainConfig::default()
            },
            warm_start: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(invalid("hidden_layers", "must be at least 1"));
        }
        if self.width == 0 {
            return Err(invalid("width", "must be at least 1"));
        }
        self.train.validate()
    }

    pub fn dims(&self, inputs: usize, outputs: usize) -> Vec<usize> {
        let mut d = vec![inputs];
        d.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        d.push(outputs);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub stages: usize,
    pub dt: f64,
    pub net: NetConfig,
    pub adaptive: AdaptiveConfig,
    pub boundary_mode: BoundaryMode,
    /// Wall-clock times are recorded only when set, keeping records reproducible.
    pub record_wall_time: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            dt: 0.05,
            net: NetConfig::default(),
            adaptive: AdaptiveConfig::default(),
            boundary_mode: BoundaryMode::Penalty,
            record_wall_time: false,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_STAGES).contains(&self.stages) {
            return Err(invalid("stages", format!("must lie in 1..={MAX_STAGES}, got {}", self.stages)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        self.net.validate()?;
        self.adaptive.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub loss: f64,
    pub l2_error: Option<f64>,
    /// Per spatial dimension.
    pub indicator: Vec<f64>,
    pub beta: Vec<f64>,
    pub x_l: f64,
    pub n: usize,
    pub epochs: usize,
    pub wall_ms: f64,
}

impl StepRecord {
    pub fn describe(step: usize, t: f64, loss: f64, l2_error: Option<f64>, field: &Field, epochs: usize, wall_ms: f64) -> Self {
        let bases = field.bases();
        Self {
            step,
            t,
            loss,
            l2_error,
            indicator: field.indicators(),
            beta: bases.iter().map(|b| b.scaling).collect(),
            x_l: bases[0].translation,
            n: field.order(),
            epochs,
            wall_ms,
        }
    }
}

/// Network inputs: the stage fractions c_s, then 1 when the end is an output.
pub fn stage_inputs(tab: &ButcherTableau, with_end: bool) -> Array2<f64> {
    let mut v = tab.c.clone();
    if with_end {
        v.push(1.0);
    }
    Array2::from_shape_vec((v.len(), 1), v).expect("column shape")
}

pub(crate) fn to_array(m: &DenseMatrix) -> Array2<f64> {
    Array2::from_shape_fn((m.rows(), m.cols()), |(i, j)| m[(i, j)])
}

/// Per-step seed when networks are not carried over.
fn step_seed(base: u64, step: usize) -> u64 {
    base.wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains one step from `u_prev` at `t_j`, then adapts the basis.
///
/// `net` holds the network across steps; it is created on first use, and re-created
/// every step when warm starts are off. After an adaptation its output layer is mapped
/// onto the new coefficients.
#[allow(clippy::too_many_arguments)]
pub fn advance_step(
    p: &ProblemSpec,
    u_prev: &Field,
    t_j: f64,
    step: usize,
    tab: &ButcherTableau,
    cfg: &StepConfig,
    net: &mut Option<MlpParams>,
    state: &mut AdaptiveState,
) -> Result<(Field, StepRecord)> {
    let start = Instant::now();
    let loss = StepLoss::forward(p, u_prev, tab, t_j, cfg.dt, cfg.boundary_mode)?;
    let n = u_prev.len();
    let fresh = match net {
        Some(m) => !cfg.net.warm_start || m.output_dim() != n,
        None => true,
    };
    if fresh {
        *net = Some(init_mlp(&cfg.net.dims(1, n), step_seed(cfg.net.train.seed, step))?);
    }
    let params = net.as_mut().expect("network initialized above");
    let inputs = stage_inputs(tab, true);
    let objective = loss.objective(false);
    let report = train(params, &mut [], inputs.view(), &objective, &cfg.net.train)?;
    if let StopReason::Diverged { epoch } = report.stop {
        return Err(Error::Diverged { epoch });
    }
    let out = params.forward(inputs.view(), Mode::Train)?;
    let k = tab.stages();
    let end = out.row(k).to_vec();
    let final_loss = {
        let rows: Vec<Vec<f64>> = out.rows().into_iter().map(|r| r.to_vec()).collect();
        let stages: Vec<&[f64]> = rows[..k].iter().map(|r| r.as_slice()).collect();
        loss.evaluate(&stages, Some(&end), 1.0)?.loss
    };
    let u_next = u_prev.with_vector(&end)?;
    let (adapted, what) = state.adapt_field(&u_next, &cfg.adaptive)?;
    if what.any() {
        let bases = adapted.bases();
        let t = u_next.transfer(&bases, adapted.order())?;
        params.remap_output(&to_array(&t))?;
    }
    let t_next = t_j + cfg.dt;
    let err = l2_error(p, &adapted, t_next)?;
    let wall = if cfg.record_wall_time {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let rec = StepRecord::describe(step, t_next, final_loss, err, &adapted, report.epochs, wall);
    Ok((adapted, rec))
}

/// Records and final field of a run; `failure` is set when a step failed and the run
/// stopped early.
#[derive(Debug)]
pub struct SolveOutput {
    pub records: Vec<StepRecord>,
    pub final_field: Field,
    pub failure: Option<Error>,
}

/// Number of steps of size `dt` in `[0, t_end]`, if `t_end` is a whole multiple.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    let m = t_end / dt;
    let r = m.round();
    if !(t_end > 0.0) || !t_end.is_finite() || r < 1.0 || (m - r).abs() > 1e-12 * m.max(1.0) {
        return Err(invalid("t_end", format!("must be a positive whole multiple of dt = {dt}, got {t_end}")));
    }
    Ok(r as usize)
}

/// Advances the projected initial condition to `t_end` in uniform steps.
pub fn solve(p: &ProblemSpec, disc: &Discretization, t_end: f64, cfg: &StepConfig) -> Result<SolveOutput> {
    cfg.validate()?;
    disc.validate()?;
    let steps = step_count(t_end, cfg.dt)?;
    let tab = ButcherTableau::gauss_legendre(cfg.stages)?;
    let mut field = initial_field(p, disc)?;
    let mut state = AdaptiveState::new(field.indicators(), &cfg.adaptive);
    let mut net = None;
    let mut records = Vec::with_capacity(steps);
    for j in 0..steps {
        let t_j = j as f64 * cfg.dt;
        match advance_step(p, &field, t_j, j + 1, &tab, cfg, &mut net, &mut state) {
            Ok((next, rec)) => {
                field = next;
                records.push(rec);
            }
            Err(e) => {
                return Ok(SolveOutput {
                    records,
                    final_field: field,
                    failure: Some(e),
                })
            }
        }
    }
    Ok(SolveOutput {
        records,
        final_field: field,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisDescriptor;
    use crate::expansion::SpectralExpansion;
    use crate::problems::builtin;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_tableaux() {
        let t = ButcherTableau::gauss_legendre(1).unwrap();
        assert_abs_diff_eq!(t.c[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.a[0][0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.b[0], 1.0, epsilon = 1e-15);
        let t = ButcherTableau::gauss_legendre(2).unwrap();
        let r = 3f64.sqrt() / 6.0;
        assert_abs_diff_eq!(t.c[0], 0.5 - r, epsilon = 1e-15);
        assert_abs_diff_eq!(t.c[1], 0.5 + r, epsilon = 1e-15);
        let want = [[0.25, 0.25 - r], [0.25 + r, 0.25]];
        for i in 0..2 {
            assert_abs_diff_eq!(t.b[i], 0.5, epsilon = 1e-15);
            for j in 0..2 {
                assert_abs_diff_eq!(t.a[i][j], want[i][j], epsilon = 1e-15);
            }
        }
        assert!(ButcherTableau::gauss_legendre(0).is_err());
        assert!(ButcherTableau::gauss_legendre(11).is_err());
    }

    #[test]
    fn order_conditions() {
        for k in 1..=MAX_STAGES {
            let t = ButcherTableau::gauss_legendre(k).unwrap();
            assert!(t.c.windows(2).all(|w| w[0] < w[1]));
            assert!(t.c.iter().all(|&c| c > 0.0 && c < 1.0));
            assert_abs_diff_eq!(t.b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for r in 0..k {
                assert_abs_diff_eq!(t.a[r].iter().sum::<f64>(), t.c[r], epsilon = 1e-12);
            }
            if k <= 5 {
                for p in 1..=2 * k {
                    let s: f64 = t.b.iter().zip(&t.c).map(|(b, c)| b * c.powi(p as i32 - 1)).sum();
                    assert_abs_diff_eq!(s, 1.0 / p as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_ode_convergence_slope() {
        for k in [1usize, 2] {
            let t = ButcherTableau::gauss_legendre(k).unwrap();
            let dts = [0.2, 0.1, 0.05];
            let errs: Vec<f64> = dts
                .iter()
                .map(|&dt| (scalar_linear_step(&t, -1.0, 1.0, dt).unwrap().1 - (-dt).exp()).abs())
                .collect();
            let slope = least_squares_slope(&dts, &errs);
            assert!(slope >= 2.0 * k as f64 + 0.5, "K={k}: slope {slope}");
        }
    }

    pub(crate) fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        num / den
    }

    fn scalar_loss(tab: &ButcherTableau, lambda: f64, w0: f64, dt: f64) -> StepLoss {
        let k = tab.stages();
        StepLoss {
            dt,
            ops: vec![CsrMatrix::from_triplets(1, 1, &[(0, 0, lambda)]); k],
            sources: vec![vec![0.0]; k],
            anchors: vec![Anchor {
                value: vec![w0],
                coeffs: tab.a.clone(),
            }],
            endpoint: Some(Endpoint {
                value: vec![w0],
                weights: tab.b.clone(),
            }),
            norm: SpatialNorm::Identity,
            boundary: None,
        }
    }

    #[test]
    fn exact_stages_give_zero_loss() {
        for k in 1..=5 {
            let tab = ButcherTableau::gauss_legendre(k).unwrap();
            let (st, end) = scalar_linear_step(&tab, -1.3, 0.7, 0.1).unwrap();
            let loss = scalar_loss(&tab, -1.3, 0.7, 0.1);
            let stages: Vec<Vec<f64>> = st.iter().map(|v| vec![*v]).collect();
            let refs: Vec<&[f64]> = stages.iter().map(|v| v.as_slice()).collect();
            let ev = loss.evaluate(&refs, Some(&[end]), 1.0).unwrap();
            assert!(ev.loss <= 1e-20, "K={k}: {}", ev.loss);
        }
    }

    #[test]
    fn zero_operator_and_constant_stages() {
        let mut p = builtin("heat-source").unwrap();
        p.source = None;
        p.kappa = 0.0;
        let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
        let tab = ButcherTableau::gauss_legendre(3).unwrap();
        let outs = vec![u.to_vector(); 4];
        let l = assemble_step_loss(&p, &u, &outs, &tab, 0.0, 0.1, BoundaryMode::Penalty).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn perturbation_is_quadratic() {
        let p = builtin("heat-source").unwrap();
        let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
        let tab = ButcherTableau::gauss_legendre(2).unwrap();
        let loss = StepLoss::forward(&p, &u, &tab, 0.0, 0.1, BoundaryMode::Penalty).unwrap();
        let (st, end) = loss.direct_solve(1.0).unwrap();
        let end = end.unwrap();
        let at = |eps: f64| {
            let mut s = st.clone();
            s[1][3] += eps;
            let refs: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
            loss.evaluate(&refs, Some(&end), 1.0).unwrap().loss
        };
        assert!(at(0.0) < 1e-24);
        let r1 = at(1e-3) / 1e-6;
        let r2 = at(1e-4) / 1e-8;
        assert_abs_diff_eq!(r1, r2, epsilon = 1e-6 * r1);
    }

    fn finite_difference_check(loss: &StepLoss, with_end: bool, theta: f64) {
        let k = loss.stages();
        let n = loss.len();
        let mut rng_state = 12345u64;
        let mut rnd = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut w: Vec<Vec<f64>> = (0..k + 1).map(|_| (0..n).map(|_| rnd()).collect()).collect();
        let eval = |w: &Vec<Vec<f64>>, th: f64| {
            let refs: Vec<&[f64]> = w[..k].iter().map(|v| v.as_slice()).collect();
            loss.evaluate(&refs, with_end.then(|| w[k].as_slice()), th).unwrap()
        };
        let ev = eval(&w, theta);
        let h = 1e-6;
        for s in 0..(k + usize::from(with_end)) {
            for i in [0, n / 2, n - 1] {
                let orig = w[s][i];
                w[s][i] = orig + h;
                let lp = eval(&w, theta).loss;
                w[s][i] = orig - h;
                let lm = eval(&w, theta).loss;
                w[s][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = if s < k { ev.d_stages[s][i] } else { ev.d_end.as_ref().unwrap()[i] };
                assert_abs_diff_eq!(fd, an, epsilon = 1e-6 * (1.0 + an.abs()));
            }
        }
        let fd = (eval(&w, theta + h).loss - eval(&w, theta - h).loss) / (2.0 * h);
        assert_abs_diff_eq!(fd, ev.d_theta, epsilon = 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let tab = ButcherTableau::gauss_legendre(3).unwrap();
        for id in ["heat-source", "bounded-advection", "halfline-advection", "schrodinger", "heat2d"] {
            let p = builtin(id).unwrap();
            let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
            let loss = StepLoss::forward(&p, &u, &tab, 0.2, 0.05, BoundaryMode::Penalty).unwrap();
            finite_difference_check(&loss, true, 1.3);
        }
        let p = builtin("bounded-advection").unwrap();
        let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
        let loss = StepLoss::forward(&p, &u, &tab, 0.2, 0.05, BoundaryMode::Strong).unwrap();
        finite_difference_check(&loss, true, 1.0);
    }

    #[test]
    fn stage_relabeling_invariance() {
        let p = builtin("heat-source").unwrap();
        let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
        let tab = ButcherTableau::gauss_legendre(3).unwrap();
        let loss = StepLoss::forward(&p, &u, &tab, 0.0, 0.1, BoundaryMode::Penalty).unwrap();
        let (mut st, end) = loss.direct_solve(1.0).unwrap();
        st[0][2] += 0.01;
        st[2][5] -= 0.02;
        let refs: Vec<&[f64]> = st.iter().map(|v| v.as_slice()).collect();
        let base = loss.evaluate(&refs, end.as_deref(), 1.0).unwrap().loss;
        let perm = [2usize, 0, 1];
        let mut permuted = loss.clone();
        permuted.ops = perm.iter().map(|&i| loss.ops[i].clone()).collect();
        permuted.sources = perm.iter().map(|&i| loss.sources[i].clone()).collect();
        permuted.anchors[0].coeffs = perm
            .iter()
            .map(|&r| perm.iter().map(|&s| tab.a[r][s]).collect())
            .collect();
        permuted.endpoint.as_mut().unwrap().weights = perm.iter().map(|&i| tab.b[i]).collect();
        let prefs: Vec<&[f64]> = perm.iter().map(|&i| st[i].as_slice()).collect();
        let l = permuted.evaluate(&prefs, end.as_deref(), 1.0).unwrap().loss;
        assert_abs_diff_eq!(l, base, epsilon = 1e-14 * base);
    }

    #[test]
    fn one_collocation_step_of_heat_source_is_accurate() {
        // the exact minimizer of the loss, independent of training
        let p = builtin("heat-source").unwrap();
        let u = crate::problems::initial_field(&p, &p.discretization).unwrap();
        let tab = ButcherTableau::gauss_legendre(4).unwrap();
        let loss = StepLoss::forward(&p, &u, &tab, 0.0, 0.1, BoundaryMode::Penalty).unwrap();
        let (_, end) = loss.direct_solve(1.0).unwrap();
        let next = u.with_vector(&end.unwrap()).unwrap();
        let err = l2_error(&p, &next, 0.1).unwrap().unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn zero_data_gives_zero_step() {
        let mut p = builtin("heat-source").unwrap();
        p.source = None;
        let disc = Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 6);
        let u = Field::Line(SpectralExpansion::zeros(disc.bases[0], 6, false).unwrap());
        let tab = ButcherTableau::gauss_legendre(2).unwrap();
        let cfg = StepConfig {
            stages: 2,
            dt: 0.1,
            net: NetConfig {
                hidden_layers: 2,
                width: 10,
                train: TrainConfig {
                    learning_rate: 1e-2,
                    max_epochs: 20_000,
                    tolerance: 1e-20,
                    seed: 3,
                },
                warm_start: true,
            },
            ..StepConfig::default()
        };
        let mut net = None;
        let mut st = AdaptiveState::new(u.indicators(), &cfg.adaptive);
        let (next, rec) = advance_step(&p, &u, 0.0, 1, &tab, &cfg, &mut net, &mut st).unwrap();
        assert!(rec.loss <= 1e-10, "{}", rec.loss);
        assert!(next.to_vector().iter().all(|v| v.abs() < 1e-5));
        // no adaptivity: the record echoes the inputs
        assert_eq!(rec.beta, vec![0.8]);
        assert_eq!(rec.x_l, 0.0);
        assert_eq!(rec.n, 6);
    }

    #[test]
    fn zero_operator_returns_previous_coefficients() {
        let mut p = builtin("heat-source").unwrap();
        p.source = None;
        p.kappa = 0.0;
        let disc = Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 6);
        let u = crate::problems::initial_field(&p, &disc).unwrap();
        let tab = ButcherTableau::gauss_legendre(2).unwrap();
        let cfg = StepConfig {
            stages: 2,
            dt: 0.1,
            net: NetConfig {
                hidden_layers: 2,
                width: 10,
                train: TrainConfig {
                    learning_rate: 1e-2,
                    max_epochs: 50_000,
                    tolerance: 1e-14,
                    seed: 3,
                },
                warm_start: true,
            },
            ..StepConfig::default()
        };
        let mut net = None;
        let mut st = AdaptiveState::new(u.indicators(), &cfg.adaptive);
        let (next, rec) = advance_step(&p, &u, 0.0, 1, &tab, &cfg, &mut net, &mut st).unwrap();
        let d: f64 = next
            .to_vector()
            .iter()
            .zip(u.to_vector())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d <= 1e-6, "distance {d}, loss {}", rec.loss);
    }

    #[test]
    fn solve_counts_steps() {
        assert_eq!(step_count(0.1, 0.1).unwrap(), 1);
        assert_eq!(step_count(1.0, 0.05).unwrap(), 20);
        assert!(step_count(0.25, 0.1).is_err());
        let mut p = builtin("heat-source").unwrap();
        p.source = None;
        let disc = Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 4);
        let cfg = StepConfig {
            stages: 1,
            dt: 0.1,
            net: NetConfig {
                hidden_layers: 1,
                width: 4,
                train: TrainConfig {
                    max_epochs: 5,
                    ..TrainConfig::default()
                },
                warm_start: true,
            },
            ..StepConfig::default()
        };
        let out = solve(&p, &disc, 0.1, &cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.failure.is_none());
        let again = solve(&p, &disc, 0.1, &cfg).unwrap();
        assert_eq!(out.records, again.records);
    }
}
