//! Fully connected network t ↦ coefficients, with batch normalization and manual gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

/// Weights, biases and batch-norm state of an MLP.
///
/// `weights[l]` has shape `(dims[l+1], dims[l])`. Every layer but the last is followed
/// by batch normalization and a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub bn_scale: Vec<Array1<f64>>,
    pub bn_shift: Vec<Array1<f64>>,
    pub running_mean: Vec<Array1<f64>>,
    pub running_var: Vec<Array1<f64>>,
}

/// Gradients with the same layout as the trainable parts of [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub bn_scale: Vec<Array1<f64>>,
    pub bn_shift: Vec<Array1<f64>>,
}

/// `dims = [input, H, …, H, output]`; weights ~ U(−√a, √a) with a = 1/fan_in.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpParams> {
    if dims.len() < 2 {
        return Err(invalid("dims", "need at least an input and an output size"));
    }
    if dims.contains(&0) {
        return Err(invalid("dims", "layer sizes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let s = (1.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
            loop {
                let v: f64 = rng.random_range(-s..s);
                if v != -s {
                    break v;
                }
            }
        }));
        biases.push(Array1::zeros(fan_out));
    }
    let hidden = &dims[1..dims.len() - 1];
    Ok(MlpParams {
        dims: dims.to_vec(),
        weights,
        biases,
        bn_scale: hidden.iter().map(|&h| Array1::ones(h)).collect(),
        bn_shift: hidden.iter().map(|&h| Array1::zeros(h)).collect(),
        running_mean: hidden.iter().map(|&h| Array1::zeros(h)).collect(),
        running_var: hidden.iter().map(|&h| Array1::ones(h)).collect(),
    })
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    /// acts[0] is the input; acts[l] the output of hidden layer l.
    acts: Vec<Array2<f64>>,
    xhat: Vec<Array2<f64>>,
    /// post-normalization, pre-rectifier values
    y: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    batch_mean: Vec<Array1<f64>>,
    batch_var: Vec<Array1<f64>>,
    pub output: Array2<f64>,
}

impl MlpParams {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.dims.len() - 2
    }

    /// Number of trainable scalars (weights, biases, batch-norm scale and shift).
    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.dims)
    }

    pub fn forward(&self, inputs: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        Ok(self.forward_cached(inputs, mode)?.output)
    }

    pub fn forward_cached(&self, inputs: ArrayView2<f64>, mode: Mode) -> Result<ForwardCache> {
        let b = inputs.nrows();
        if b == 0 {
            return Err(invalid("inputs", "batch must not be empty"));
        }
        if inputs.ncols() != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        if mode == Mode::Train && b < 2 && self.hidden_layers() > 0 {
            return Err(invalid("inputs", "batch statistics need a batch of at least 2"));
        }
        let mut cache = ForwardCache {
            mode,
            acts: vec![inputs.to_owned()],
            xhat: Vec::new(),
            y: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            output: Array2::zeros((0, 0)),
        };
        let layers = self.weights.len();
        for l in 0..layers {
            let a = cache.acts.last().unwrap();
            let z = a.dot(&self.weights[l].t()) + &self.biases[l];
            if l + 1 == layers {
                cache.output = z;
                break;
            }
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = z.mean_axis(Axis(0)).unwrap();
                    let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                    (mean, var)
                }
                Mode::Eval => (self.running_mean[l].clone(), self.running_var[l].clone()),
            };
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let y = &xhat * &self.bn_scale[l] + &self.bn_shift[l];
            let act = y.mapv(|v| v.max(0.0));
            cache.xhat.push(xhat);
            cache.y.push(y);
            cache.inv_std.push(inv_std);
            cache.batch_mean.push(mean);
            cache.batch_var.push(var);
            cache.acts.push(act);
        }
        Ok(cache)
    }

    /// Reverse pass from `d_output` (same shape as the output).
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<f64>) -> Gradients {
        let layers = self.weights.len();
        let mut g = Gradients::zeros_like(self);
        let mut d = d_output.to_owned();
        for l in (0..layers).rev() {
            // d is dL/dz for layer l
            let a = &cache.acts[l];
            g.weights[l] = d.t().dot(a);
            g.biases[l] = d.sum_axis(Axis(0));
            if l == 0 {
                break;
            }
            let da = d.dot(&self.weights[l]);
            let h = l - 1;
            let dy = &da * &cache.y[h].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let xhat = &cache.xhat[h];
            g.bn_scale[h] = (&dy * xhat).sum_axis(Axis(0));
            g.bn_shift[h] = dy.sum_axis(Axis(0));
            let dxhat = &dy * &self.bn_scale[h];
            d = match cache.mode {
                Mode::Train => {
                    let bf = d.nrows() as f64;
                    let s1 = dxhat.sum_axis(Axis(0));
                    let s2 = (&dxhat * xhat).sum_axis(Axis(0));
                    let inner = &dxhat * bf - &s1 - &(xhat * &s2);
                    inner * &(&cache.inv_std[h] / bf)
                }
                Mode::Eval => dxhat * &cache.inv_std[h],
            };
        }
        g
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for h in 0..self.hidden_layers() {
            self.running_mean[h] = &self.running_mean[h] * (1.0 - BN_MOMENTUM) + &cache.batch_mean[h] * BN_MOMENTUM;
            self.running_var[h] = &self.running_var[h] * (1.0 - BN_MOMENTUM) + &cache.batch_var[h] * BN_MOMENTUM;
        }
    }

    /// θ ← θ − η·g.
    pub fn apply_gradient(&mut self, g: &Gradients, eta: f64) {
        for l in 0..self.weights.len() {
            self.weights[l].scaled_add(-eta, &g.weights[l]);
            self.biases[l].scaled_add(-eta, &g.biases[l]);
        }
        for h in 0..self.hidden_layers() {
            self.bn_scale[h].scaled_add(-eta, &g.bn_scale[h]);
            self.bn_shift[h].scaled_add(-eta, &g.bn_shift[h]);
        }
    }

    /// Whether θ − η·g has only finite entries.
    fn step_stays_finite(&self, g: &Gradients, eta: f64) -> bool {
        fn ok<'a>(x: impl Iterator<Item = &'a f64>, d: impl Iterator<Item = &'a f64>, eta: f64) -> bool {
            x.zip(d).all(|(x, d)| (x - eta * d).is_finite())
        }
        (0..self.weights.len())
            .all(|l| ok(self.weights[l].iter(), g.weights[l].iter(), eta) && ok(self.biases[l].iter(), g.biases[l].iter(), eta))
            && (0..self.hidden_layers()).all(|h| {
                ok(self.bn_scale[h].iter(), g.bn_scale[h].iter(), eta)
                    && ok(self.bn_shift[h].iter(), g.bn_shift[h].iter(), eta)
            })
    }

    /// Trainable parameters, layer by layer: W (row-major), b, then BN scale and shift.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases, &self.bn_scale, &self.bn_shift)
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.parameter_count() {
            return Err(Error::LengthMismatch {
                expected: self.parameter_count(),
                got: v.len(),
            });
        }
        let mut it = v.iter().copied();
        for l in 0..self.weights.len() {
            self.weights[l].iter_mut().for_each(|x| *x = it.next().unwrap());
            self.biases[l].iter_mut().for_each(|x| *x = it.next().unwrap());
            if l < self.hidden_layers() {
                self.bn_scale[l].iter_mut().for_each(|x| *x = it.next().unwrap());
                self.bn_shift[l].iter_mut().for_each(|x| *x = it.next().unwrap());
            }
        }
        Ok(())
    }

    /// Replaces the output layer by `map · (W, b)`, so outputs become `map · old outputs`.
    pub fn remap_output(&mut self, map: &Array2<f64>) -> Result<()> {
        let last = self.weights.len() - 1;
        if map.ncols() != self.output_dim() {
            return Err(Error::LengthMismatch {
                expected: self.output_dim(),
                got: map.ncols(),
            });
        }
        self.weights[last] = map.dot(&self.weights[last]);
        self.biases[last] = map.dot(&self.biases[last]);
        *self.dims.last_mut().unwrap() = map.nrows();
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            version: SNAPSHOT_VERSION,
            dims: self.dims.clone(),
            params: self.to_flat(),
            running_mean: self.running_mean.iter().flatten().copied().collect(),
            running_var: self.running_var.iter().flatten().copied().collect(),
        }
    }

    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        if s.version != SNAPSHOT_VERSION {
            return Err(Error::Unsupported(format!("snapshot version {}", s.version)));
        }
        let mut p = init_mlp(&s.dims, 0)?;
        p.set_flat(&s.params)?;
        let hidden_total: usize = s.dims[1..s.dims.len() - 1].iter().sum();
        if s.running_mean.len() != hidden_total || s.running_var.len() != hidden_total {
            return Err(Error::LengthMismatch {
                expected: hidden_total,
                got: s.running_mean.len().min(s.running_var.len()),
            });
        }
        let mut off = 0;
        for h in 0..p.hidden_layers() {
            let w = s.dims[h + 1];
            p.running_mean[h] = Array1::from(s.running_mean[off..off + w].to_vec());
            p.running_var[h] = Array1::from(s.running_var[off..off + w].to_vec());
            off += w;
        }
        Ok(p)
    }
}

/// Trainable parameter count of an MLP with the given layer sizes.
pub fn parameter_count(dims: &[usize]) -> usize {
    let affine: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let bn: usize = dims[1..dims.len().saturating_sub(1)].iter().map(|h| 2 * h).sum();
    affine + bn
}

fn flatten(w: &[Array2<f64>], b: &[Array1<f64>], s: &[Array1<f64>], t: &[Array1<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..w.len() {
        out.extend(w[l].iter());
        out.extend(b[l].iter());
        if l < s.len() {
            out.extend(s[l].iter());
            out.extend(t[l].iter());
        }
    }
    out
}

impl Gradients {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: p.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            bn_scale: p.bn_scale.iter().map(|b| Array1::zeros(b.len())).collect(),
            bn_shift: p.bn_shift.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases, &self.bn_scale, &self.bn_shift)
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && [&self.biases, &self.bn_scale, &self.bn_shift]
                .iter()
                .all(|vs| vs.iter().all(|v| v.iter().all(|x| x.is_finite())))
    }
}

/// Flat, versioned parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub dims: Vec<usize>,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Value and gradient of a loss defined on network outputs and extra trainable scalars.
pub struct LossEval {
    pub loss: f64,
    /// dL/d(outputs), same shape as the outputs.
    pub d_outputs: Array2<f64>,
    /// dL/d(extra)
    pub d_extra: Vec<f64>,
}

pub trait Objective {
    fn evaluate(&self, outputs: ArrayView2<f64>, extra: &[f64]) -> Result<LossEval>;
}

impl<F> Objective for F
where
    F: Fn(ArrayView2<f64>, &[f64]) -> Result<LossEval>,
{
    fn evaluate(&self, outputs: ArrayView2<f64>, extra: &[f64]) -> Result<LossEval> {
        self(outputs, extra)
    }
}

pub struct GradientEval {
    pub loss: f64,
    pub grads: Gradients,
    pub d_extra: Vec<f64>,
    pub cache: ForwardCache,
}

/// Loss and exact gradients with respect to every trainable parameter and `extra`.
pub fn loss_gradient(
    p: &MlpParams,
    inputs: ArrayView2<f64>,
    mode: Mode,
    objective: &dyn Objective,
    extra: &[f64],
) -> Result<GradientEval> {
    let ev = raw_gradient(p, inputs, mode, objective, extra)?;
    if !ev.loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(ev)
}

fn raw_gradient(
    p: &MlpParams,
    inputs: ArrayView2<f64>,
    mode: Mode,
    objective: &dyn Objective,
    extra: &[f64],
) -> Result<GradientEval> {
    let cache = p.forward_cached(inputs, mode)?;
    let le = objective.evaluate(cache.output.view(), extra)?;
    if le.d_outputs.dim() != cache.output.dim() {
        return Err(Error::LengthMismatch {
            expected: cache.output.len(),
            got: le.d_outputs.len(),
        });
    }
    let grads = p.backward(&cache, le.d_outputs.view());
    Ok(GradientEval {
        loss: le.loss,
        grads,
        d_extra: le.d_extra,
        cache,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the loss is at or below this; an infinite tolerance never stops early.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 100_000,
            tolerance: 1e-12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid(
                "learning_rate",
                format!("must be finite and ≥ 0, got {}", self.learning_rate),
            ));
        }
        if self.max_epochs == 0 {
            return Err(invalid("max_epochs", "must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance", format!("must be ≥ 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
    /// The loss became non-finite at this epoch; parameters are the last finite state.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before each update.
    pub history: Vec<f64>,
    pub epochs: usize,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Full-batch gradient descent on `p` and `extra` in train mode.
pub fn train(
    p: &mut MlpParams,
    extra: &mut [f64],
    inputs: ArrayView2<f64>,
    objective: &dyn Objective,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.max_epochs.min(1 << 16));
    for epoch in 0..cfg.max_epochs {
        let ev = match raw_gradient(p, inputs, Mode::Train, objective, extra) {
            Err(Error::NonFinite(_)) => {
                return Ok(TrainReport {
                    history,
                    epochs: epoch,
                    stop: StopReason::Diverged { epoch },
                })
            }
            r => r?,
        };
        let finite = ev.loss.is_finite() && ev.grads.all_finite() && ev.d_extra.iter().all(|g| g.is_finite());
        if !finite {
            return Ok(TrainReport {
                history,
                epochs: epoch,
                stop: StopReason::Diverged { epoch },
            });
        }
        history.push(ev.loss);
        if cfg.tolerance.is_finite() && ev.loss <= cfg.tolerance {
            return Ok(TrainReport {
                history,
                epochs: epoch,
                stop: StopReason::Converged,
            });
        }
        let eta = cfg.learning_rate;
        let stays_finite = p.step_stays_finite(&ev.grads, eta)
            && extra.iter().zip(&ev.d_extra).all(|(x, g)| (x - eta * g).is_finite());
        if !stays_finite {
            return Ok(TrainReport {
                history,
                epochs: epoch,
                stop: StopReason::Diverged { epoch },
            });
        }
        p.update_running_stats(&ev.cache);
        p.apply_gradient(&ev.grads, eta);
        for (x, g) in extra.iter_mut().zip(&ev.d_extra) {
            *x -= eta * g;
        }
    }
    Ok(TrainReport {
        history,
        epochs: cfg.max_epochs,
        stop: StopReason::MaxEpochs,
    })
}
