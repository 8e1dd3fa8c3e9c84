//! Diffusivity inference and regularized source recovery from observed solutions.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::adaptivity::{AdaptiveConfig, AdaptiveState};
use crate::basis::{quadrature_rule, BasisDescriptor, Transform};
use crate::collocation::{stage_inputs, to_array, Anchor, ButcherTableau, NetConfig, SpatialNorm, StepLoss, StepRecord};
use crate::error::{invalid, Error, Result};
use crate::expansion::{reprojection_nodes, Field, SpectralExpansion};
use crate::net::{init_mlp, train, LossEval, MlpParams, Mode, StopReason, TrainConfig};
use crate::problems::{observe_noisy, operator_matrix, source_vector, Discretization, ProblemSpec, SpaceTimeFn};

/// Noisy node values of the analytic solution at `t`, projected onto `basis` at order `n`.
///
/// Values are taken on the basis' own `reprojection_nodes(n)`-point rule.
pub fn observe_projected(p: &ProblemSpec, basis: &BasisDescriptor, n: usize, t: f64, sigma: f64, seed: u64) -> Result<Field> {
    let tr = Transform::new(basis, n, reprojection_nodes(n))?;
    let values = observe_noisy(p, t, sigma, &tr.rule, seed)?;
    Ok(Field::Line(SpectralExpansion::new(*basis, tr.forward(&values)?)?))
}

fn observation_seed(seed: u64, time_index: usize) -> u64 {
    seed ^ (time_index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub stages: usize,
    pub dt: f64,
    pub windows: usize,
    pub sigma: f64,
    pub theta_init: f64,
    pub net: NetConfig,
    pub adaptive: AdaptiveConfig,
    /// Seeds the observation noise.
    pub seed: u64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            dt: 0.1,
            windows: 1,
            sigma: 0.0,
            theta_init: 1.0,
            net: NetConfig {
                train: TrainConfig {
                    learning_rate: 1e-3,
                    ..NetConfig::default().train
                },
                ..NetConfig::default()
            },
            adaptive: AdaptiveConfig::default(),
            seed: 0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::collocation::MAX_STAGES).contains(&self.stages) {
            return Err(invalid("stages", format!("must lie in 1..=10, got {}", self.stages)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.windows == 0 {
            return Err(invalid("windows", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be ≥ 0, got {}", self.sigma)));
        }
        if !self.theta_init.is_finite() {
            return Err(invalid("theta_init", "must be finite"));
        }
        self.net.validate()?;
        self.adaptive.validate()
    }
}

/// One window of parameter inference.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub theta: f64,
    pub sse_left: f64,
    pub sse_right: f64,
    /// Expansions at t_j + c_s·Δt.
    pub stages: Vec<Field>,
    pub record: StepRecord,
}

impl InferenceResult {
    pub fn sse(&self) -> f64 {
        self.sse_left + self.sse_right
    }
}

/// Loss tying stage coefficients to observations at both ends of a window, with the
/// operator scaled by the unknown θ. `p.kappa` is ignored; the operator is taken at κ = 1.
pub fn inference_loss(p: &ProblemSpec, left: &Field, right: &Field, tab: &ButcherTableau, t_j: f64, dt: f64) -> Result<StepLoss> {
    if left.bases() != right.bases() || left.len() != right.len() {
        return Err(Error::BasisMismatch("observations at both ends must share a basis".into()));
    }
    let mut unit = p.clone();
    unit.kappa = 1.0;
    let times: Vec<f64> = tab.c.iter().map(|c| t_j + c * dt).collect();
    Ok(StepLoss {
        dt,
        ops: times
            .iter()
            .map(|&t| operator_matrix(&unit, left, t))
            .collect::<Result<_>>()?,
        sources: times
            .iter()
            .map(|&t| source_vector(p, left, t))
            .collect::<Result<_>>()?,
        anchors: vec![
            Anchor {
                value: left.to_vector(),
                coeffs: tab.a.clone(),
            },
            Anchor {
                value: right.to_vector(),
                coeffs: tab.end_relative(),
            },
        ],
        endpoint: None,
        norm: crate::collocation::spatial_norm(left, Default::default(), None)?,
        boundary: None,
    })
}

/// Trains the stage network and θ on one window.
///
/// `net` and `theta` are updated in place so that successive windows can continue from
/// the previous estimate.
#[allow(clippy::too_many_arguments)]
pub fn infer_parameter(
    p: &ProblemSpec,
    left: &Field,
    right: &Field,
    tab: &ButcherTableau,
    t_j: f64,
    dt: f64,
    theta: &mut f64,
    net: &mut Option<MlpParams>,
    cfg: &NetConfig,
    window: usize,
) -> Result<InferenceResult> {
    let loss = inference_loss(p, left, right, tab, t_j, dt)?;
    let n = left.len();
    let fresh = match net {
        Some(m) => !cfg.warm_start || m.output_dim() != n,
        None => true,
    };
    if fresh {
        *net = Some(init_mlp(&cfg.dims(1, n), cfg.train.seed.wrapping_add(window as u64))?);
    }
    let params = net.as_mut().expect("network initialized above");
    let inputs = stage_inputs(tab, false);
    let objective = loss.objective(true);
    let mut extra = [*theta];
    let report = train(params, &mut extra, inputs.view(), &objective, &cfg.train)?;
    if let StopReason::Diverged { epoch } = report.stop {
        return Err(Error::Diverged { epoch });
    }
    *theta = extra[0];
    let out = params.forward(inputs.view(), Mode::Train)?;
    let rows: Vec<Vec<f64>> = out.rows().into_iter().map(|r| r.to_vec()).collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let ev = loss.evaluate(&refs, None, *theta)?;
    let stages = rows.iter().map(|r| left.with_vector(r)).collect::<Result<Vec<_>>>()?;
    let err = match &p.analytic {
        Some(_) => {
            let mut sq = 0.0;
            for (s, f) in stages.iter().enumerate() {
                let e = crate::problems::l2_error(p, f, t_j + tab.c[s] * dt)?.unwrap_or(0.0);
                sq += e * e;
            }
            Some((sq / stages.len() as f64).sqrt())
        }
        None => None,
    };
    let record = StepRecord::describe(window + 1, t_j + dt, ev.loss, err, right, report.epochs, 0.0);
    Ok(InferenceResult {
        theta: *theta,
        sse_left: ev.terms[0],
        sse_right: ev.terms[1],
        stages,
        record,
    })
}

/// Successive windows of length Δt from t = 0, each observed at both ends; the basis
/// scaling adapts between windows from the indicator of the latest observation.
pub fn infer_trajectory(p: &ProblemSpec, disc: &Discretization, cfg: &InferConfig) -> Result<Vec<InferenceResult>> {
    cfg.validate()?;
    disc.validate()?;
    let [basis] = disc.bases.as_slice() else {
        return Err(Error::Unsupported("parameter inference in more than one dimension".into()));
    };
    let tab = ButcherTableau::gauss_legendre(cfg.stages)?;
    let mut basis = *basis;
    let n = disc.order;
    let first = observe_projected(p, &basis, n, 0.0, cfg.sigma, observation_seed(cfg.seed, 0))?;
    let mut state = AdaptiveState::new(first.indicators(), &cfg.adaptive);
    let mut theta = cfg.theta_init;
    let mut net = None;
    let mut out = Vec::with_capacity(cfg.windows);
    for j in 0..cfg.windows {
        let t_j = j as f64 * cfg.dt;
        let left = observe_projected(p, &basis, n, t_j, cfg.sigma, observation_seed(cfg.seed, j))?;
        let right = observe_projected(p, &basis, n, t_j + cfg.dt, cfg.sigma, observation_seed(cfg.seed, j + 1))?;
        let res = infer_parameter(p, &left, &right, &tab, t_j, cfg.dt, &mut theta, &mut net, &cfg.net, j)?;
        let (adapted, what) = state.adapt_field(&right, &cfg.adaptive)?;
        if what.any() {
            basis = adapted.bases()[0];
            if let Some(params) = net.as_mut() {
                let t = right.transfer(&adapted.bases(), adapted.order())?;
                params.remap_output(&to_array(&t))?;
            }
        }
        out.push(res);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverConfig {
    pub stages: usize,
    pub dt: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            dt: 0.2,
            sigma: 0.0,
            lambda: 0.0,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

impl RecoverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::collocation::MAX_STAGES).contains(&self.stages) {
            return Err(invalid("stages", format!("must lie in 1..=10, got {}", self.stages)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be ≥ 0, got {}", self.sigma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be ≥ 0, got {}", self.lambda)));
        }
        self.net.validate()
    }
}

/// Observed solution on one window: the start, the K stage times and the end.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowObservations {
    pub t_j: f64,
    pub dt: f64,
    pub start: Field,
    pub stages: Vec<Field>,
    pub end: Field,
}

impl WindowObservations {
    pub fn observe(p: &ProblemSpec, basis: &BasisDescriptor, n: usize, tab: &ButcherTableau, t_j: f64, dt: f64, sigma: f64, seed: u64) -> Result<Self> {
        let obs = |t: f64, i: usize| observe_projected(p, basis, n, t, sigma, observation_seed(seed, i));
        Ok(Self {
            t_j,
            dt,
            start: obs(t_j, 0)?,
            stages: tab
                .c
                .iter()
                .enumerate()
                .map(|(s, c)| obs(t_j + c * dt, s + 1))
                .collect::<Result<_>>()?,
            end: obs(t_j + dt, tab.stages() + 1)?,
        })
    }
}

/// Squared residuals of the window equations with the source coefficients h_s as unknowns.
#[derive(Debug, Clone)]
pub struct SourceLoss {
    dt: f64,
    /// Constant parts W_s − U − Δt Σ_r C[s][r]·D W_r, left then right.
    offsets: [Vec<Vec<f64>>; 2],
    coeffs: [Vec<Vec<f64>>; 2],
    norm: SpatialNorm,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEval {
    pub sse_left: f64,
    pub sse_right: f64,
    pub penalty: f64,
    pub d_h: Vec<Vec<f64>>,
}

impl SourceEval {
    pub fn loss(&self) -> f64 {
        self.sse_left + self.sse_right + self.penalty
    }
}

impl SourceLoss {
    /// `p` supplies the operator (its source is ignored).
    pub fn new(p: &ProblemSpec, obs: &WindowObservations, tab: &ButcherTableau, lambda: f64) -> Result<Self> {
        let k = tab.stages();
        if obs.stages.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                got: obs.stages.len(),
            });
        }
        let dw: Vec<Vec<f64>> = obs
            .stages
            .iter()
            .enumerate()
            .map(|(r, w)| Ok(operator_matrix(p, w, obs.t_j + tab.c[r] * obs.dt)?.matvec(&w.to_vector())))
            .collect::<Result<_>>()?;
        let coeffs = [tab.a.clone(), tab.end_relative()];
        let anchors = [obs.start.to_vector(), obs.end.to_vector()];
        let offsets = [0, 1].map(|side| {
            (0..k)
                .map(|s| {
                    let mut r: Vec<f64> = obs.stages[s]
                        .to_vector()
                        .iter()
                        .zip(&anchors[side])
                        .map(|(w, u)| w - u)
                        .collect();
                    for (c, d) in coeffs[side][s].iter().zip(&dw) {
                        for (ri, di) in r.iter_mut().zip(d) {
                            *ri -= obs.dt * c * di;
                        }
                    }
                    r
                })
                .collect()
        });
        Ok(Self {
            dt: obs.dt,
            offsets,
            coeffs,
            norm: crate::collocation::spatial_norm(&obs.start, Default::default(), None)?,
            lambda,
        })
    }

    pub fn evaluate(&self, h: &[&[f64]]) -> Result<SourceEval> {
        let k = self.offsets[0].len();
        if h.len() != k {
            return Err(Error::LengthMismatch { expected: k, got: h.len() });
        }
        let n = self.offsets[0][0].len();
        let mut sse = [0.0; 2];
        let mut d_h: Vec<Vec<f64>> = h.iter().map(|hs| hs.iter().map(|v| 2.0 * self.lambda * v).collect()).collect();
        for side in 0..2 {
            for s in 0..k {
                let mut r = self.offsets[side][s].clone();
                for (c, hr) in self.coeffs[side][s].iter().zip(h) {
                    for (ri, hi) in r.iter_mut().zip(hr.iter()) {
                        *ri -= self.dt * c * hi;
                    }
                }
                let gr = match &self.norm {
                    SpatialNorm::Identity => r.clone(),
                    SpatialNorm::Diagonal(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
                    SpatialNorm::Dense(g) => g.matvec(&r),
                };
                sse[side] += r.iter().zip(&gr).map(|(a, b)| a * b).sum::<f64>();
                for (c, dr) in self.coeffs[side][s].iter().zip(d_h.iter_mut()) {
                    for i in 0..n {
                        dr[i] -= 2.0 * self.dt * c * gr[i];
                    }
                }
            }
        }
        let penalty = self.lambda * h.iter().flat_map(|hs| hs.iter()).map(|v| v * v).sum::<f64>();
        let ev = SourceEval {
            sse_left: sse[0],
            sse_right: sse[1],
            penalty,
            d_h,
        };
        if !ev.loss().is_finite() {
            return Err(Error::NonFinite("source loss"));
        }
        Ok(ev)
    }

    pub fn objective(&self) -> impl Fn(ArrayView2<f64>, &[f64]) -> Result<LossEval> + '_ {
        move |out: ArrayView2<f64>, _: &[f64]| {
            let rows: Vec<Vec<f64>> = out.rows().into_iter().map(|r| r.to_vec()).collect();
            let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let ev = self.evaluate(&refs)?;
            let d = Array2::from_shape_fn(out.dim(), |(s, i)| ev.d_h[s][i]);
            Ok(LossEval {
                loss: ev.loss(),
                d_outputs: d,
                d_extra: vec![],
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceRecoveryResult {
    /// Source coefficients at each stage time.
    pub h: Vec<Vec<f64>>,
    pub basis: BasisDescriptor,
    pub sse_left: f64,
    pub sse_right: f64,
    /// Root mean square over the stage times of ‖f − f_N‖₂; `None` without a reference source.
    pub reconstruction_error: Option<f64>,
    /// Root mean square over the stage times of the coefficient norm ‖h‖₂.
    pub h_norm: f64,
    pub epochs: usize,
}

impl SourceRecoveryResult {
    pub fn sse(&self) -> f64 {
        self.sse_left + self.sse_right
    }
}

/// Learns the source coefficients on one window from observations of u.
///
/// `p` supplies the operator and, through `p.source`, the reference used for the
/// reconstruction error.
pub fn recover_source(p: &ProblemSpec, obs: &WindowObservations, tab: &ButcherTableau, lambda: f64, net_cfg: &NetConfig) -> Result<SourceRecoveryResult> {
    net_cfg.validate()?;
    let loss = SourceLoss::new(p, obs, tab, lambda)?;
    let Field::Line(e) = &obs.start else {
        return Err(Error::Unsupported("source recovery in more than one dimension".into()));
    };
    let n = obs.start.len();
    let mut params = init_mlp(&net_cfg.dims(1, n), net_cfg.train.seed)?;
    let inputs = stage_inputs(tab, false);
    let objective = loss.objective();
    let report = train(&mut params, &mut [], inputs.view(), &objective, &net_cfg.train)?;
    if let StopReason::Diverged { epoch } = report.stop {
        return Err(Error::Diverged { epoch });
    }
    let out = params.forward(inputs.view(), Mode::Train)?;
    let h: Vec<Vec<f64>> = out.rows().into_iter().map(|r| r.to_vec()).collect();
    let refs: Vec<&[f64]> = h.iter().map(|r| r.as_slice()).collect();
    let ev = loss.evaluate(&refs)?;
    let k = h.len() as f64;
    let h_norm = (h.iter().flatten().map(|v| v * v).sum::<f64>() / k).sqrt();
    let reconstruction_error = match &p.source {
        Some(f) => {
            let mut sq = 0.0;
            for (s, hs) in h.iter().enumerate() {
                let t = obs.t_j + tab.c[s] * obs.dt;
                let fe = SpectralExpansion::new(e.basis, hs.clone())?;
                let err = fe.l2_error(|x| f(&[x], t).re, reference_nodes(e.order()))?;
                sq += err * err;
            }
            Some((sq / k).sqrt())
        }
        None => None,
    };
    Ok(SourceRecoveryResult {
        h,
        basis: e.basis,
        sse_left: ev.sse_left,
        sse_right: ev.sse_right,
        reconstruction_error,
        h_norm,
        epochs: report.epochs,
    })
}

fn reference_nodes(n: usize) -> usize {
    reprojection_nodes(4 * n)
}

/// Root mean square over `times` of ‖f − P_N f‖₂: the smallest reconstruction error
/// any coefficients in this basis can reach.
pub fn source_truncation_error(f: &SpaceTimeFn, basis: &BasisDescriptor, n: usize, times: &[f64]) -> Result<f64> {
    let q = reference_nodes(n);
    let rule = quadrature_rule(basis, q)?;
    let tr = Transform::with_rule(basis, n, rule)?;
    let mut sq = 0.0;
    for &t in times {
        let values: Vec<f64> = tr.rule.nodes.iter().map(|&x| f(&[x], t).re).collect();
        let e = SpectralExpansion::new(*basis, tr.forward(&values)?)?;
        let err = e.l2_error(|x| f(&[x], t).re, q)?;
        sq += err * err;
    }
    Ok((sq / times.len() as f64).sqrt())
}
