//! Built-in PDE problems, their operators in coefficient space, and the function-fitting task.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{derivative_map, project_fn, BasisDescriptor, QuadratureRule, Transform};
use crate::error::{invalid, Error, Result};
use crate::expansion::{
    hyperbolic_index_set, reprojection_nodes, Field, Hyperbolicity, MultiExpansion, SpectralExpansion,
};
use crate::linalg::CsrMatrix;
use crate::net::{init_mlp, parameter_count, train, LossEval, MlpParams, Mode, TrainConfig};

/// u(x, t) for a point `x` of any dimension.
pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> Complex64 + Send + Sync>;
/// a(x, t) in u_t = a·u_x.
pub type CoefficientFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

pub const PROBLEM_IDS: [&str; 7] = [
    "bounded-advection",
    "halfline-advection",
    "heat2d",
    "heat3d",
    "schrodinger",
    "heat-source",
    "diffusivity-inference",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    BoundedInterval,
    HalfLine,
    RealLine,
    RealPlane,
    Real3Space,
}

/// Spatial operator 𝓜 in u_t = 𝓜u + f.
#[derive(Clone)]
pub enum OperatorKind {
    /// a(x, t)·u_x
    Advection(CoefficientFn),
    /// κ·u_xx
    Diffusion,
    /// κ·Δu in weak form
    Laplacian,
    /// iψ_t = −ψ_xx, split as a_t = −b_xx, b_t = a_xx
    Schrodinger,
}

impl fmt::Debug for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Advection(_) => "Advection",
            OperatorKind::Diffusion => "Diffusion",
            OperatorKind::Laplacian => "Laplacian",
            OperatorKind::Schrodinger => "Schrodinger",
        })
    }
}

/// Dirichlet condition u(x, t) = g(t) at one point.
#[derive(Clone)]
pub struct Boundary {
    pub x: f64,
    pub value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Boundary").field("x", &self.x).finish_non_exhaustive()
    }
}

/// Bases, order and (for d ≥ 2) index-set shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub bases: Vec<BasisDescriptor>,
    pub order: usize,
    pub hyperbolicity: Hyperbolicity,
}

impl Discretization {
    pub fn line(basis: BasisDescriptor, order: usize) -> Self {
        Self {
            bases: vec![basis],
            order,
            hyperbolicity: Hyperbolicity::Full,
        }
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() {
            return Err(invalid("bases", "need at least one dimension"));
        }
        for b in &self.bases {
            b.validate()?;
        }
        if self.order < 1 {
            return Err(invalid("order", "must be at least 1"));
        }
        Ok(())
    }

    pub fn zero_field(&self, complex: bool) -> Result<Field> {
        self.validate()?;
        if self.dim() == 1 {
            return Ok(Field::Line(SpectralExpansion::zeros(self.bases[0], self.order, complex)?));
        }
        if complex {
            return Err(Error::Unsupported("complex fields in more than one dimension".into()));
        }
        let set = hyperbolic_index_set(self.dim(), self.order, self.hyperbolicity)?;
        Ok(Field::Grid(MultiExpansion::zeros(self.bases.clone(), set)?))
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub id: String,
    pub domain: Domain,
    pub discretization: Discretization,
    pub operator: OperatorKind,
    pub kappa: f64,
    pub source: Option<SpaceTimeFn>,
    pub boundary: Option<Boundary>,
    pub initial: SpaceTimeFn,
    pub analytic: Option<SpaceTimeFn>,
    pub complex: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("id", &self.id)
            .field("domain", &self.domain)
            .field("discretization", &self.discretization)
            .field("operator", &self.operator)
            .field("kappa", &self.kappa)
            .field("source", &self.source.is_some())
            .field("boundary", &self.boundary)
            .field("complex", &self.complex)
            .finish()
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.discretization.dim()
    }

    pub fn analytic_at(&self, x: &[f64], t: f64) -> Option<Complex64> {
        self.analytic.as_ref().map(|u| u(x, t))
    }
}

fn real(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> SpaceTimeFn {
    Arc::new(move |x, t| Complex64::new(f(x, t), 0.0))
}

/// Looks up a built-in problem with its default discretization.
pub fn builtin(id: &str) -> Result<ProblemSpec> {
    match id {
        "bounded-advection" => Ok(bounded_advection()),
        "halfline-advection" => Ok(halfline_advection()),
        "heat2d" => Ok(heat2d()),
        "heat3d" => Ok(heat3d()),
        "schrodinger" => Ok(schrodinger(1.0, 1.0)),
        "heat-source" => Ok(heat_source()),
        "diffusivity-inference" => Ok(diffusivity_inference(2.0)),
        _ => Err(Error::UnknownProblem(id.to_string())),
    }
}

/// u_t = ((x+2)/(t+1))·u_x on [−1, 1], u = cos((t+1)(x+2)).
fn bounded_advection() -> ProblemSpec {
    let u = |x: &[f64], t: f64| ((t + 1.0) * (x[0] + 2.0)).cos();
    ProblemSpec {
        id: "bounded-advection".into(),
        domain: Domain::BoundedInterval,
        discretization: Discretization::line(BasisDescriptor::chebyshev(), 8),
        operator: OperatorKind::Advection(Arc::new(|x, t| (x + 2.0) / (t + 1.0))),
        kappa: 1.0,
        source: None,
        boundary: Some(Boundary {
            x: 1.0,
            value: Arc::new(|t| (3.0 * (t + 1.0)).cos()),
        }),
        initial: real(move |x, _| u(x, 0.0)),
        analytic: Some(real(u)),
        complex: false,
    }
}

/// u_t = −(x/(t+1))·u_x on x ≥ 0, u = exp(−x/(t+1)).
fn halfline_advection() -> ProblemSpec {
    let u = |x: &[f64], t: f64| (-x[0] / (t + 1.0)).exp();
    ProblemSpec {
        id: "halfline-advection".into(),
        domain: Domain::HalfLine,
        discretization: Discretization::line(BasisDescriptor::laguerre(2.0), 8),
        operator: OperatorKind::Advection(Arc::new(|x, t| -x / (t + 1.0))),
        kappa: 1.0,
        source: None,
        boundary: Some(Boundary {
            x: 0.0,
            value: Arc::new(|_| 1.0),
        }),
        initial: real(move |x, _| u(x, 0.0)),
        analytic: Some(real(u)),
        complex: false,
    }
}

/// Product of one-dimensional heat kernels with time offsets `shifts`.
fn heat_kernel(shifts: &'static [f64]) -> impl Fn(&[f64], f64) -> f64 + Send + Sync + Copy {
    move |x: &[f64], t: f64| {
        shifts
            .iter()
            .zip(x)
            .map(|(s, xi)| (-xi * xi / (4.0 * (t + s))).exp() / (t + s).sqrt())
            .product()
    }
}

fn heat2d() -> ProblemSpec {
    let u = heat_kernel(&[3.0, 2.0]);
    ProblemSpec {
        id: "heat2d".into(),
        domain: Domain::RealPlane,
        discretization: Discretization {
            bases: vec![BasisDescriptor::hermite(0.4, 0.0), BasisDescriptor::hermite(0.5, 0.0)],
            order: 8,
            hyperbolicity: Hyperbolicity::Full,
        },
        operator: OperatorKind::Laplacian,
        kappa: 1.0,
        source: None,
        boundary: None,
        initial: real(move |x, _| u(x, 0.0)),
        analytic: Some(real(u)),
        complex: false,
    }
}

fn heat3d() -> ProblemSpec {
    let u = heat_kernel(&[3.0, 2.0, 1.0]);
    ProblemSpec {
        id: "heat3d".into(),
        domain: Domain::Real3Space,
        discretization: Discretization {
            bases: vec![
                BasisDescriptor::hermite(0.4, 0.0),
                BasisDescriptor::hermite(0.5, 0.0),
                BasisDescriptor::hermite(0.7, 0.0),
            ],
            order: 9,
            hyperbolicity: Hyperbolicity::Gamma(-1.0),
        },
        operator: OperatorKind::Laplacian,
        kappa: 1.0,
        source: None,
        boundary: None,
        initial: real(move |x, _| u(x, 0.0)),
        analytic: Some(real(u)),
        complex: false,
    }
}

/// Travelling Gaussian packet ψ = (ζ+it)^{−1/2} exp(ik(x−kt) − (x−2kt)²/(4(ζ+it))).
pub fn schrodinger(zeta: f64, k: f64) -> ProblemSpec {
    let psi = move |x: &[f64], t: f64| {
        let z = Complex64::new(zeta, t);
        let c = x[0] - 2.0 * k * t;
        let phase = Complex64::new(0.0, k * (x[0] - k * t));
        (phase - c * c / (4.0 * z)).exp() / z.sqrt()
    };
    let analytic: SpaceTimeFn = Arc::new(psi);
    ProblemSpec {
        id: "schrodinger".into(),
        domain: Domain::RealLine,
        discretization: Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 24),
        operator: OperatorKind::Schrodinger,
        kappa: 1.0,
        source: None,
        boundary: None,
        initial: Arc::new(move |x, _| psi(x, 0.0)),
        analytic: Some(analytic),
        complex: true,
    }
}

/// u = sin x · T^{−1/2} · exp(−x²/(4T)) with T = t+1, and its t- and x-derivatives.
fn spreading_sine(x: f64, t: f64) -> (f64, f64, f64) {
    let tt = t + 1.0;
    let g = (-x * x / (4.0 * tt)).exp() / tt.sqrt();
    let (s, c) = x.sin_cos();
    let u = s * g;
    let u_t = s * g * (-0.5 / tt + x * x / (4.0 * tt * tt));
    let u_xx = g * (-s - x * c / tt - s / (2.0 * tt) + x * x * s / (4.0 * tt * tt));
    (u, u_t, u_xx)
}

/// u_t = u_xx + f on ℝ with the spreading-sine solution.
fn heat_source() -> ProblemSpec {
    ProblemSpec {
        id: "heat-source".into(),
        domain: Domain::RealLine,
        discretization: Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 20),
        operator: OperatorKind::Diffusion,
        kappa: 1.0,
        source: Some(real(|x, t| {
            let tt = t + 1.0;
            (x[0] * x[0].cos() + tt * x[0].sin()) * tt.powf(-1.5) * (-x[0] * x[0] / (4.0 * tt)).exp()
        })),
        boundary: None,
        initial: real(|x, _| spreading_sine(x[0], 0.0).0),
        analytic: Some(real(|x, t| spreading_sine(x[0], t).0)),
        complex: false,
    }
}

/// u_t = κu_xx + f with the same solution as `heat-source` and f = u_t − κu_xx.
pub fn diffusivity_inference(kappa: f64) -> ProblemSpec {
    ProblemSpec {
        id: "diffusivity-inference".into(),
        domain: Domain::RealLine,
        discretization: Discretization::line(BasisDescriptor::hermite(0.8, 0.0), 20),
        operator: OperatorKind::Diffusion,
        kappa,
        source: Some(real(move |x, t| {
            let (_, u_t, u_xx) = spreading_sine(x[0], t);
            u_t - kappa * u_xx
        })),
        boundary: None,
        initial: real(|x, _| spreading_sine(x[0], 0.0).0),
        analytic: Some(real(|x, t| spreading_sine(x[0], t).0)),
        complex: false,
    }
}

fn line_of(field: &Field) -> Result<&SpectralExpansion> {
    match field {
        Field::Line(e) => Ok(e),
        Field::Grid(_) => Err(Error::Unsupported("this operator on a multi-dimensional field".into())),
    }
}

/// Matrix of 𝓜 at time `t` acting on the coefficient vector of `field`.
pub fn operator_matrix(p: &ProblemSpec, field: &Field, t: f64) -> Result<CsrMatrix> {
    match &p.operator {
        OperatorKind::Advection(a) => {
            let e = line_of(field)?;
            if e.is_complex() {
                return Err(Error::Unsupported("advection of a complex field".into()));
            }
            let n = e.order();
            let tr = Transform::new(&e.basis, n, n + 1)?;
            let mut dv = Array2::zeros((n + 1, n + 1));
            for (k, &x) in tr.rule.nodes.iter().enumerate() {
                let ak = a(x, t);
                for (j, d) in e.basis.eval_all_derivative(n, x)?.into_iter().enumerate() {
                    dv[(k, j)] = ak * d;
                }
            }
            let m = crate::linalg::DenseMatrix::from_fn(n + 1, n + 1, |i, j| {
                (0..=n).map(|k| tr.projection[(i, k)] * dv[(k, j)]).sum()
            });
            Ok(CsrMatrix::from_dense(&m))
        }
        OperatorKind::Diffusion => {
            let e = line_of(field)?;
            if e.is_complex() {
                return Err(Error::Unsupported("diffusion of a complex field".into()));
            }
            Ok(derivative_map(&e.basis, 2, e.order())?.galerkin().scaled(p.kappa))
        }
        OperatorKind::Laplacian => match field {
            Field::Line(e) if !e.is_complex() => Ok(derivative_map(&e.basis, 2, e.order())?.galerkin().scaled(p.kappa)),
            Field::Line(_) => Err(Error::Unsupported("Laplacian of a complex field".into())),
            Field::Grid(m) => {
                let n = m.set.cap();
                let d2 = m
                    .bases
                    .iter()
                    .map(|b| derivative_map(b, 2, n).map(|d| d.galerkin()))
                    .collect::<Result<Vec<_>>>()?;
                let mut trip = Vec::new();
                let mut target = vec![0usize; m.dim()];
                for (col, idx) in m.set.indices().iter().enumerate() {
                    for (k, dk) in d2.iter().enumerate() {
                        for (i, j, v) in dk.iter() {
                            if j != idx[k] {
                                continue;
                            }
                            target.copy_from_slice(idx);
                            target[k] = i;
                            // couplings leaving the index set are dropped
                            if let Some(row) = m.set.position(&target) {
                                trip.push((row, col, p.kappa * v));
                            }
                        }
                    }
                }
                Ok(CsrMatrix::from_triplets(m.set.len(), m.set.len(), &trip))
            }
        },
        OperatorKind::Schrodinger => {
            let e = line_of(field)?;
            if !e.is_complex() {
                return Err(Error::Unsupported("Schrödinger operator on a real field".into()));
            }
            let n1 = e.order() + 1;
            let d2 = derivative_map(&e.basis, 2, e.order())?.galerkin();
            let mut trip = Vec::with_capacity(2 * d2.nnz());
            for (i, j, v) in d2.iter() {
                trip.push((i, n1 + j, -v));
                trip.push((n1 + i, j, v));
            }
            Ok(CsrMatrix::from_triplets(2 * n1, 2 * n1, &trip))
        }
    }
}

/// 𝓜u as a field on the same discretization.
pub fn apply_operator(p: &ProblemSpec, field: &Field, t: f64) -> Result<Field> {
    let m = operator_matrix(p, field, t)?;
    field.with_vector(&m.matvec(&field.to_vector()))
}

/// Coefficients of f(·, t) on `field`'s discretization (zero without a source).
pub fn source_vector(p: &ProblemSpec, field: &Field, t: f64) -> Result<Vec<f64>> {
    let Some(f) = &p.source else {
        return Ok(vec![0.0; field.len()]);
    };
    let e = line_of(field)?;
    let n = e.order();
    let q = reprojection_nodes(n);
    let re = project_fn(|x| f(&[x], t).re, &e.basis, n, q)?;
    if !e.is_complex() {
        return Ok(re);
    }
    let mut v = re;
    v.extend(project_fn(|x| f(&[x], t).im, &e.basis, n, q)?);
    Ok(v)
}

/// Projection of `g(·)` onto a zero field's discretization.
pub fn project_onto(g: impl Fn(&[f64]) -> Complex64, like: &Field) -> Result<Field> {
    match like {
        Field::Line(e) => {
            let n = e.order();
            let q = reprojection_nodes(n);
            let re = project_fn(|x| g(&[x]).re, &e.basis, n, q)?;
            if e.is_complex() {
                let im = project_fn(|x| g(&[x]).im, &e.basis, n, q)?;
                Ok(Field::Line(SpectralExpansion::new_complex(e.basis, re, im)?))
            } else {
                Ok(Field::Line(SpectralExpansion::new(e.basis, re)?))
            }
        }
        Field::Grid(m) => {
            let q = m.set.cap() + 16;
            Ok(Field::Grid(MultiExpansion::project(|x| g(x).re, m.bases.clone(), m.set.clone(), q)?))
        }
    }
}

/// The initial condition projected onto `disc`.
pub fn initial_field(p: &ProblemSpec, disc: &Discretization) -> Result<Field> {
    let zero = disc.zero_field(p.complex)?;
    project_onto(|x| (p.initial)(x, 0.0), &zero)
}

/// Row ℓ with ℓ·w = u(x_b) for the problem's boundary point, if it has one.
pub fn boundary_row(p: &ProblemSpec, field: &Field) -> Result<Option<Vec<f64>>> {
    match (&p.boundary, field) {
        (None, _) => Ok(None),
        (Some(b), Field::Line(e)) if !e.is_complex() => Ok(Some(e.basis.eval_all(e.order(), b.x)?)),
        (Some(_), _) => Err(Error::Unsupported("boundary data on this field".into())),
    }
}

/// L² distance between `field` and the analytic solution at `t`, if there is one.
pub fn l2_error(p: &ProblemSpec, field: &Field, t: f64) -> Result<Option<f64>> {
    let Some(u) = &p.analytic else {
        return Ok(None);
    };
    let q = match field {
        Field::Line(e) => reprojection_nodes(e.order()),
        Field::Grid(m) => m.set.cap() + 12,
    };
    field.l2_error(|x| u(x, t), q).map(Some)
}

/// Analytic values at `rule`'s nodes plus i.i.d. N(0, σ²) noise.
pub fn observe_noisy(p: &ProblemSpec, t: f64, sigma: f64, rule: &QuadratureRule, seed: u64) -> Result<Vec<f64>> {
    let Some(u) = &p.analytic else {
        return Err(Error::Unsupported(format!("{} has no analytic solution", p.id)));
    };
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be ≥ 0, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).map_err(|e| invalid("sigma", e.to_string()))?;
    Ok(rule
        .nodes
        .iter()
        .map(|&x| {
            let xi = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            u(&[x], t).re + xi
        })
        .collect())
}

/// u(x, t) = 8x·sin(3x)·t / (x²+4)², decaying like t/|x|³.
pub fn example_target(x: f64, t: f64) -> f64 {
    8.0 * x * (3.0 * x).sin() * t / (x * x + 4.0).powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub cauchy_location: f64,
    pub cauchy_scale: f64,
    pub t_range: (f64, f64),
    pub seed: u64,
}

impl FitDataset {
    /// `n` samples with x ~ Cauchy(location, scale), t ~ U(t_range), u = target(x, t).
    pub fn sample(
        n: usize,
        cauchy_location: f64,
        cauchy_scale: f64,
        t_range: (f64, f64),
        seed: u64,
        target: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if n < 1 {
            return Err(invalid("n", "need at least one sample"));
        }
        let cauchy = Cauchy::new(cauchy_location, cauchy_scale).map_err(|e| invalid("cauchy_scale", e.to_string()))?;
        let unif = Uniform::new(t_range.0, t_range.1).map_err(|e| invalid("t_range", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            x.push(cauchy.sample(&mut rng));
            t.push(unif.sample(&mut rng));
        }
        let u: Vec<f64> = x.iter().zip(&t).map(|(&x, &t)| target(x, t)).collect();
        if u.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fit samples"));
        }
        Ok(Self {
            x,
            t,
            u,
            cauchy_location,
            cauchy_scale,
            t_range,
            seed,
        })
    }

    /// 2n samples of [`example_target`] with x ~ Cauchy(0, 12), t ~ U(0, 1).
    pub fn example(n_per_half: usize, seed: u64) -> Result<Self> {
        Self::sample(2 * n_per_half, 0.0, 12.0, (0.0, 1.0), seed, example_target)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn subset(&self, r: std::ops::Range<usize>) -> Self {
        Self {
            x: self.x[r.clone()].to_vec(),
            t: self.t[r.clone()].to_vec(),
            u: self.u[r].to_vec(),
            ..self.clone()
        }
    }

    /// First half for training, second half held out.
    pub fn split(&self) -> (Self, Self) {
        let h = self.len() / 2;
        (self.subset(0..h), self.subset(h..self.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// t ↦ coefficients of a spectral expansion in x.
    Spectral,
    /// (x, t) ↦ u.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 10,
            train: TrainConfig {
                learning_rate: 5e-4,
                max_epochs: 5000,
                tolerance: 0.0,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: MlpParams,
    /// Training MSE before each update.
    pub train_mse: Vec<f64>,
    /// Held-out MSE after each update, with running batch statistics.
    pub test_mse: Vec<f64>,
}

impl FitResult {
    pub fn final_test_mse(&self) -> f64 {
        self.test_mse.last().copied().unwrap_or(f64::NAN)
    }
}

/// Layer sizes for a fit: spectral nets see t and emit N+1 coefficients, direct nets
/// see (x, t) and emit u.
pub fn fit_dims(mode: FitMode, n: usize, hidden_layers: usize, width: usize) -> Vec<usize> {
    let (inp, out) = match mode {
        FitMode::Spectral => (1, n + 1),
        FitMode::Direct => (2, 1),
    };
    let mut dims = vec![inp];
    dims.extend(std::iter::repeat_n(width, hidden_layers));
    dims.push(out);
    dims
}

/// Width of a direct net with `hidden_layers` layers whose parameter count is closest to `target`.
pub fn matched_width(target: usize, hidden_layers: usize) -> usize {
    (1..=4 * target.max(1))
        .min_by_key(|&w| parameter_count(&fit_dims(FitMode::Direct, 0, hidden_layers, w)).abs_diff(target))
        .unwrap_or(1)
}

/// Rows of basis values φᵢ(xₛ) (spectral) or the (x, t) inputs (direct).
fn fit_inputs(data: &FitDataset, mode: FitMode, basis: &BasisDescriptor, n: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let m = data.len();
    match mode {
        FitMode::Spectral => {
            let inputs = Array2::from_shape_fn((m, 1), |(s, _)| data.t[s]);
            let mut phi = Array2::zeros((m, n + 1));
            for s in 0..m {
                for (i, v) in basis.eval_all(n, data.x[s])?.into_iter().enumerate() {
                    phi[(s, i)] = v;
                }
            }
            Ok((inputs, phi))
        }
        FitMode::Direct => Ok((
            Array2::from_shape_fn((m, 2), |(s, k)| if k == 0 { data.x[s] } else { data.t[s] }),
            Array2::zeros((m, 0)),
        )),
    }
}

fn fit_predictions(out: &Array2<f64>, phi: &Array2<f64>, mode: FitMode) -> Vec<f64> {
    match mode {
        FitMode::Spectral => (out * phi).sum_axis(ndarray::Axis(1)).to_vec(),
        FitMode::Direct => out.column(0).to_vec(),
    }
}

/// Full-batch gradient descent on the training-set MSE, tracking the held-out MSE.
pub fn fit_function(
    train_set: &FitDataset,
    test_set: &FitDataset,
    mode: FitMode,
    basis: &BasisDescriptor,
    n: usize,
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<FitResult> {
    if train_set.len() < 2 || test_set.is_empty() {
        return Err(invalid("data", "need at least two training samples and one test sample"));
    }
    cfg.validate()?;
    let (xin, phi) = fit_inputs(train_set, mode, basis, n)?;
    let (xtest, phi_test) = fit_inputs(test_set, mode, basis, n)?;
    let mut p = init_mlp(dims, cfg.seed)?;
    let expect_out = if mode == FitMode::Spectral { n + 1 } else { 1 };
    if p.output_dim() != expect_out || p.input_dim() != xin.ncols() {
        return Err(invalid("dims", format!("{mode:?} fit needs {} inputs and {expect_out} outputs", xin.ncols())));
    }
    let u = &train_set.u;
    let inv_n = 1.0 / u.len() as f64;
    let objective = |out: ndarray::ArrayView2<f64>, _: &[f64]| -> Result<LossEval> {
        let out = out.to_owned();
        let pred = fit_predictions(&out, &phi, mode);
        let r: Vec<f64> = pred.iter().zip(u).map(|(a, b)| a - b).collect();
        let loss = r.iter().map(|v| v * v).sum::<f64>() * inv_n;
        let d_outputs = match mode {
            FitMode::Spectral => Array2::from_shape_fn(out.dim(), |(s, i)| 2.0 * inv_n * r[s] * phi[(s, i)]),
            FitMode::Direct => Array2::from_shape_fn(out.dim(), |(s, _)| 2.0 * inv_n * r[s]),
        };
        Ok(LossEval {
            loss,
            d_outputs,
            d_extra: vec![],
        })
    };
    let one = TrainConfig { max_epochs: 1, ..*cfg };
    let mut train_mse = Vec::with_capacity(cfg.max_epochs);
    let mut test_mse = Vec::with_capacity(cfg.max_epochs);
    for _ in 0..cfg.max_epochs {
        let rep = train(&mut p, &mut [], xin.view(), &objective, &one)?;
        if let crate::net::StopReason::Diverged { epoch } = rep.stop {
            return Err(Error::Diverged { epoch: train_mse.len() + epoch });
        }
        train_mse.extend(rep.history);
        let out = p.forward(xtest.view(), Mode::Eval)?;
        let pred = fit_predictions(&out, &phi_test, mode);
        let mse = pred.iter().zip(&test_set.u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / test_set.len() as f64;
        test_mse.push(mse);
        if rep.stop == crate::net::StopReason::Converged {
            break;
        }
    }
    Ok(FitResult {
        params: p,
        train_mse,
        test_mse,
    })
}
