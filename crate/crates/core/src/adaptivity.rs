//! Between-step controllers for the scaling factor β, the center x_L and the order N.

use serde::{Deserialize, Serialize};

use crate::basis::BasisFamily;
use crate::error::{invalid, Error, Result};
use crate::expansion::{Field, SpectralExpansion};

/// Smallest order reachable by an order decrease.
pub const MIN_ORDER: usize = 4;

/// Number of displacement magnitudes tried on each side by [`move_update`].
pub const MOVE_GRID: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// β ← q·β when scaling triggers.
    pub q: f64,
    /// Scaling triggers when F grows by more than this ratio.
    pub nu: f64,
    pub rho: f64,
    pub rho0: f64,
    /// ρ ← γ·ρ after an order increase.
    pub gamma: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub move_threshold: f64,
    pub scaling: bool,
    pub moving: bool,
    pub p_refine: bool,
    pub p_decrease: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            q: 0.95,
            nu: 1.0 / 0.95,
            rho: 2.0,
            rho0: 2.0,
            gamma: 1.4,
            d_min: 0.004,
            d_max: 0.1,
            move_threshold: 1.001,
            scaling: false,
            moving: false,
            p_refine: false,
            p_decrease: false,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid("q", format!("must lie in (0, 1), got {}", self.q)));
        }
        if !(self.nu > 1.0) || !self.nu.is_finite() {
            return Err(invalid("nu", format!("must be > 1, got {}", self.nu)));
        }
        if !(self.rho > 1.0) || !self.rho.is_finite() {
            return Err(invalid("rho", format!("must be > 1, got {}", self.rho)));
        }
        if !(self.rho0 > 1.0) || !self.rho0.is_finite() {
            return Err(invalid("rho0", format!("must be > 1, got {}", self.rho0)));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(invalid("gamma", format!("must be ≥ 1, got {}", self.gamma)));
        }
        if !(self.d_min > 0.0) || !self.d_min.is_finite() {
            return Err(invalid("d_min", format!("must be positive, got {}", self.d_min)));
        }
        if !(self.d_max >= self.d_min) || !self.d_max.is_finite() {
            return Err(invalid(
                "d_max",
                format!("must be finite and ≥ d_min = {}, got {}", self.d_min, self.d_max),
            ));
        }
        if !(self.move_threshold > 1.0) || !self.move_threshold.is_finite() {
            return Err(invalid(
                "move_threshold",
                format!("must be > 1, got {}", self.move_threshold),
            ));
        }
        Ok(())
    }
}

/// Returns q·β when F_curr / F_prev > ν, otherwise β.
pub fn scaling_update(f_prev: f64, f_curr: f64, beta: f64, cfg: &AdaptiveConfig) -> f64 {
    if f_prev > 0.0 && f_curr / f_prev > cfg.nu {
        cfg.q * beta
    } else {
        beta
    }
}

/// Returns the new order and ρ.
pub fn p_refine_update(f_prev: f64, f_curr: f64, n: usize, rho: f64, cfg: &AdaptiveConfig) -> (usize, f64) {
    if f_prev > 0.0 && f_curr > rho * f_prev {
        (n + 1, rho * cfg.gamma)
    } else if cfg.p_decrease && f_curr < f_prev / cfg.rho0 && n > MIN_ORDER {
        (n - 1, rho)
    } else {
        (n, rho)
    }
}

/// Candidate displacements ±δ for δ on a uniform grid over [d_min, d_max].
pub fn move_candidates(cfg: &AdaptiveConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * MOVE_GRID);
    for j in 0..MOVE_GRID {
        let d = cfg.d_min + (cfg.d_max - cfg.d_min) * j as f64 / (MOVE_GRID - 1) as f64;
        out.push(d);
        out.push(-d);
    }
    out
}

/// New center for a Hermite expansion: the candidate shift with the smallest indicator,
/// accepted when F(current) / F(candidate) exceeds the moving threshold.
pub fn move_update(e: &SpectralExpansion, cfg: &AdaptiveConfig) -> Result<f64> {
    if e.basis.family != BasisFamily::Hermite {
        return Err(Error::Unsupported(format!(
            "moving a {} basis",
            e.basis.family.name()
        )));
    }
    let x_l = e.basis.translation;
    let f_cur = e.frequency_indicator();
    if f_cur == 0.0 {
        return Ok(x_l);
    }
    let mut best: Option<(f64, f64)> = None;
    for d in move_candidates(cfg) {
        let cand = e.basis.with_translation(x_l + d);
        let f = e.reproject(&cand, e.order())?.frequency_indicator();
        if best.is_none_or(|(_, bf)| f < bf) {
            best = Some((d, f));
        }
    }
    let (d, f_best) = best.expect("candidate grid is never empty");
    if f_cur > cfg.move_threshold * f_best {
        Ok(x_l + d)
    } else {
        Ok(x_l)
    }
}

/// Reference indicators and ρ, per spatial dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub f_ref: Vec<f64>,
    pub rho: Vec<f64>,
}

/// What one adaptation pass changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adaptation {
    pub moved: bool,
    pub scaled: bool,
    pub order_changed: bool,
}

impl Adaptation {
    pub fn any(&self) -> bool {
        self.moved || self.scaled || self.order_changed
    }
}

impl AdaptiveState {
    pub fn new(f_ref: Vec<f64>, cfg: &AdaptiveConfig) -> Self {
        let rho = vec![cfg.rho; f_ref.len()];
        Self { f_ref, rho }
    }

    /// Applies moving, then scaling, then order refinement to a one-dimensional expansion.
    ///
    /// The reference indicator is reset to the indicator of the re-projected expansion
    /// whenever anything changes.
    pub fn adapt(&mut self, e: &SpectralExpansion, cfg: &AdaptiveConfig) -> Result<(SpectralExpansion, Adaptation)> {
        let mut out = e.clone();
        let mut what = Adaptation::default();
        if cfg.moving && out.basis.family == BasisFamily::Hermite {
            let x_l = move_update(&out, cfg)?;
            if x_l != out.basis.translation {
                out = out.reproject(&out.basis.with_translation(x_l), out.order())?;
                what.moved = true;
            }
        }
        let f_curr = out.frequency_indicator();
        if cfg.scaling && out.basis.family != BasisFamily::Chebyshev {
            let beta = scaling_update(self.f_ref[0], f_curr, out.basis.scaling, cfg);
            if beta != out.basis.scaling {
                out = out.reproject(&out.basis.with_scaling(beta), out.order())?;
                what.scaled = true;
            }
        }
        if cfg.p_refine {
            let (n, rho) = p_refine_update(self.f_ref[0], f_curr, out.order(), self.rho[0], cfg);
            if n != out.order() {
                out = out.reproject(&out.basis, n)?;
                self.rho[0] = rho;
                what.order_changed = true;
            }
        }
        if what.any() {
            self.f_ref[0] = out.frequency_indicator();
        }
        Ok((out, what))
    }

    /// [`adapt`](Self::adapt) for any field. Grid fields are scaled per dimension from
    /// their directional indicators and share one order cap, raised when any dimension
    /// triggers. Moving applies to one-dimensional fields only.
    pub fn adapt_field(&mut self, f: &Field, cfg: &AdaptiveConfig) -> Result<(Field, Adaptation)> {
        let m = match f {
            Field::Line(e) => {
                let (out, what) = self.adapt(e, cfg)?;
                return Ok((Field::Line(out), what));
            }
            Field::Grid(m) => m,
        };
        if self.f_ref.len() != m.dim() {
            return Err(Error::LengthMismatch {
                expected: m.dim(),
                got: self.f_ref.len(),
            });
        }
        let f_curr = m.directional_indicators();
        let mut bases = m.bases.clone();
        let mut n = m.set.cap();
        let mut what = Adaptation::default();
        if cfg.scaling {
            for (k, b) in bases.iter_mut().enumerate() {
                if b.family == BasisFamily::Chebyshev {
                    continue;
                }
                let beta = scaling_update(self.f_ref[k], f_curr[k], b.scaling, cfg);
                if beta != b.scaling {
                    *b = b.with_scaling(beta);
                    what.scaled = true;
                }
            }
        }
        if cfg.p_refine {
            let mut grow = false;
            let mut shrink = true;
            for k in 0..m.dim() {
                let (nk, rho) = p_refine_update(self.f_ref[k], f_curr[k], n, self.rho[k], cfg);
                if nk > n {
                    grow = true;
                    self.rho[k] = rho;
                }
                shrink &= nk < n;
            }
            if grow {
                n += 1;
            } else if shrink {
                n -= 1;
            }
            what.order_changed = n != m.set.cap();
        }
        if !what.any() {
            return Ok((f.clone(), what));
        }
        let out = f.reproject(&bases, n)?;
        self.f_ref = out.indicators();
        Ok((out, what))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{project_fn, BasisDescriptor};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> AdaptiveConfig {
        AdaptiveConfig::default()
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scaling_update(0.10, 0.10, 2.0, &cfg()), 2.0);
        assert_abs_diff_eq!(scaling_update(0.10, 0.12, 2.0, &cfg()), 1.9, epsilon = 1e-15);
        assert_eq!(scaling_update(0.0, 0.5, 2.0, &cfg()), 2.0);
    }

    #[test]
    fn p_refine_examples() {
        let c = AdaptiveConfig {
            rho: 1.5,
            gamma: 1.3,
            ..cfg()
        };
        let (n, rho) = p_refine_update(0.01, 0.02, 8, 1.5, &c);
        assert_eq!(n, 9);
        assert_abs_diff_eq!(rho, 1.95, epsilon = 1e-15);
        assert_eq!(p_refine_update(0.01, 0.012, 8, 1.5, &c), (8, 1.5));
        let d = AdaptiveConfig {
            rho0: 2.0,
            p_decrease: true,
            ..c
        };
        assert_eq!(p_refine_update(0.02, 0.005, 8, 1.5, &d), (7, 1.5));
        assert_eq!(p_refine_update(0.02, 0.005, 4, 1.5, &d), (4, 1.5));
        // decrease is off by default
        assert_eq!(p_refine_update(0.02, 0.005, 8, 1.5, &c), (8, 1.5));
    }

    #[test]
    fn symmetric_expansion_does_not_move() {
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let mut c = vec![0.0; 9];
        c[0] = 1.0;
        let e = SpectralExpansion::new(b, c).unwrap();
        assert_eq!(move_update(&e, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn shifted_gaussian_moves_right() {
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let g = |x: f64| (-(x - 0.5) * (x - 0.5) / 2.0).exp();
        let e = SpectralExpansion::new(b, project_fn(g, &b, 8, 40).unwrap()).unwrap();
        let x_l = move_update(&e, &cfg()).unwrap();
        assert!(x_l > 0.0);
        // oracle: the chosen shift lowers the indicator
        let moved = e.reproject(&b.with_translation(x_l), 8).unwrap();
        assert!(moved.frequency_indicator() < e.frequency_indicator());
    }

    #[test]
    fn threshold_blocks_small_improvements() {
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let g = |x: f64| (-(x - 0.5) * (x - 0.5) / 2.0).exp();
        let e = SpectralExpansion::new(b, project_fn(g, &b, 8, 40).unwrap()).unwrap();
        let f_cur = e.frequency_indicator();
        let best = move_candidates(&cfg())
            .into_iter()
            .map(|d| e.reproject(&b.with_translation(d), 8).unwrap().frequency_indicator())
            .fold(f64::INFINITY, f64::min);
        let ratio = f_cur / best;
        let strict = AdaptiveConfig {
            move_threshold: ratio * 1.0005,
            ..cfg()
        };
        assert_eq!(move_update(&e, &strict).unwrap(), 0.0);
    }

    #[test]
    fn moving_requires_hermite() {
        let e = SpectralExpansion::zeros(BasisDescriptor::laguerre(1.0), 4, false).unwrap();
        assert!(move_update(&e, &cfg()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(AdaptiveConfig { q: 1.0, ..cfg() }.validate().is_err());
        assert!(AdaptiveConfig { nu: 1.0, ..cfg() }.validate().is_err());
        assert!(AdaptiveConfig { d_min: 0.2, ..cfg() }.validate().is_err());
        assert!(AdaptiveConfig { gamma: 0.9, ..cfg() }.validate().is_err());
    }

    #[test]
    fn adapt_scales_and_resets_reference() {
        let b = BasisDescriptor::hermite(2.0, 0.0);
        let g = |x: f64| (-x * x / 8.0).exp();
        let e = SpectralExpansion::new(b, project_fn(g, &b, 8, 40).unwrap()).unwrap();
        let c = AdaptiveConfig { scaling: true, ..cfg() };
        let mut st = AdaptiveState::new(vec![e.frequency_indicator() / 2.0], &c);
        let (out, what) = st.adapt(&e, &c).unwrap();
        assert!(what.scaled && !what.moved && !what.order_changed);
        assert_abs_diff_eq!(out.basis.scaling, 1.9, epsilon = 1e-15);
        assert_eq!(st.f_ref[0], out.frequency_indicator());
        // no change leaves the reference alone
        let before = st.clone();
        let (same, what) = st.adapt(&out, &AdaptiveConfig::default()).unwrap();
        assert!(!what.any());
        assert_eq!(same, out);
        assert_eq!(st, before);
    }

    #[test]
    fn grid_scaling_is_per_dimension() {
        use crate::expansion::{hyperbolic_index_set, Hyperbolicity, MultiExpansion};
        let b = BasisDescriptor::hermite(1.0, 0.0);
        let set = hyperbolic_index_set(2, 6, Hyperbolicity::Full).unwrap();
        let cx = project_fn(|x| (-x * x / 6.0).exp(), &b, 6, 40).unwrap();
        let cy = project_fn(|y| (-y * y / 6.0).exp(), &b, 6, 40).unwrap();
        let coeffs = set.indices().iter().map(|n| cx[n[0]] * cy[n[1]]).collect();
        let f = Field::Grid(MultiExpansion::new(vec![b, b], set, coeffs).unwrap());
        let ind = f.indicators();
        let c = AdaptiveConfig { scaling: true, ..cfg() };
        let mut st = AdaptiveState::new(vec![ind[0] / 2.0, ind[1]], &c);
        let (out, what) = st.adapt_field(&f, &c).unwrap();
        assert!(what.scaled && !what.order_changed);
        let betas: Vec<f64> = out.bases().iter().map(|b| b.scaling).collect();
        assert_abs_diff_eq!(betas[0], 0.95, epsilon = 1e-15);
        assert_eq!(betas[1], 1.0);
        assert_eq!(st.f_ref, out.indicators());
    }

    proptest! {
        #[test]
        fn beta_is_non_increasing_and_positive(fs in prop::collection::vec(0.0..1.0f64, 2..30)) {
            let mut beta = 2.0;
            for w in fs.windows(2) {
                let nb = scaling_update(w[0], w[1], beta, &cfg());
                prop_assert!(nb <= beta && nb > 0.0);
                beta = nb;
            }
        }

        #[test]
        fn order_moves_by_at_most_one(fp in 0.0..1.0f64, fc in 0.0..1.0f64, n in 1usize..30) {
            let c = AdaptiveConfig { p_decrease: true, ..cfg() };
            let (m, _) = p_refine_update(fp, fc, n, 1.5, &c);
            prop_assert!(m.abs_diff(n) <= 1);
        }

        #[test]
        fn displacement_is_zero_or_in_bounds(center in -1.0..1.0f64, width in 0.3..2.0f64) {
            let b = BasisDescriptor::hermite(1.0, 0.0);
            let g = |x: f64| (-(x - center) * (x - center) / width).exp();
            let e = SpectralExpansion::new(b, project_fn(g, &b, 8, 40).unwrap()).unwrap();
            let c = cfg();
            let d = move_update(&e, &c).unwrap().abs();
            prop_assert!(d == 0.0 || (d >= c.d_min - 1e-15 && d <= c.d_max + 1e-15));
        }
    }
}
