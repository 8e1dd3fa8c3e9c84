use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spinn_core::adaptivity::AdaptiveConfig;
use spinn_core::basis::{BasisDescriptor, BasisFamily};
use spinn_core::collocation::{step_count, BoundaryMode, NetConfig, MAX_STAGES};
use spinn_core::expansion::Hyperbolicity;
use spinn_core::net::TrainConfig;
use spinn_core::problems::{builtin, diffusivity_inference, Discretization, ProblemSpec, PROBLEM_IDS};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stepping {
    pub stages: usize,
    pub dt: f64,
    pub t_end: f64,
    pub boundary_mode: BoundaryMode,
}

impl Default for Stepping {
    fn default() -> Self {
        Self {
            stages: 4,
            dt: 0.05,
            t_end: 1.0,
            boundary_mode: BoundaryMode::Penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSettings {
    /// True diffusivity generating the observations.
    pub kappa: f64,
    /// Noise levels swept by `infer` and `recover`.
    pub sigmas: Vec<f64>,
    /// Penalties swept by `recover`.
    pub lambdas: Vec<f64>,
    pub theta_init: f64,
    pub windows: usize,
}

impl Default for InverseSettings {
    fn default() -> Self {
        Self {
            kappa: 2.0,
            sigmas: vec![0.0],
            lambdas: vec![0.0],
            theta_init: 1.0,
            windows: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub points_per_half: usize,
    pub basis: BasisDescriptor,
    pub order: usize,
    pub spectral_hidden_layers: usize,
    pub direct_hidden_layers: usize,
    pub width: usize,
    pub train: TrainConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            points_per_half: 200,
            basis: BasisDescriptor::mapped_gegenbauer(0.0, 0.5),
            order: 9,
            spectral_hidden_layers: 4,
            direct_hidden_layers: 5,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table2Settings {
    pub dim: usize,
    pub order: usize,
    /// `null` stands for the full tensor set (γ = −∞).
    pub gammas: Vec<Option<f64>>,
}

impl Default for Table2Settings {
    fn default() -> Self {
        Self {
            dim: 3,
            order: 9,
            gammas: vec![None, Some(-1.0), Some(0.0), Some(0.5)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnSettings {
    pub dts: Vec<f64>,
}

impl Default for CnSettings {
    fn default() -> Self {
        Self {
            dts: vec![0.2, 0.1, 0.05, 0.02],
        }
    }
}

/// Everything a run needs. Unset basis fields fall back to the problem's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub bases: Option<Vec<BasisDescriptor>>,
    pub order: Option<usize>,
    /// γ× for d ≥ 2; `null` keeps the problem default.
    pub hyperbolicity: Option<f64>,
    pub stepping: Stepping,
    pub adaptive: AdaptiveConfig,
    pub net: NetConfig,
    pub inverse: InverseSettings,
    pub fit: FitSettings,
    pub table2: Table2Settings,
    pub cn: CnSettings,
    /// Base seed; sweep point i uses `seed + i` unless `seeds` lists them.
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub record_wall_time: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "heat-source".into(),
            bases: None,
            order: None,
            hyperbolicity: None,
            stepping: Stepping::default(),
            adaptive: AdaptiveConfig::default(),
            net: NetConfig::default(),
            inverse: InverseSettings::default(),
            fit: FitSettings::default(),
            table2: Table2Settings::default(),
            cn: CnSettings::default(),
            seed: 0,
            seeds: Vec::new(),
            record_wall_time: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// The problem a command runs on: `infer` always uses the diffusivity problem with
    /// `inverse.kappa`, every other command uses `problem`.
    pub fn problem_for(&self, command: Command) -> Result<ProblemSpec, CliError> {
        if command == Command::Infer {
            return Ok(diffusivity_inference(self.inverse.kappa));
        }
        builtin(&self.problem).map_err(|_| unknown_problem(&self.problem))
    }

    /// The problem's default discretization with the configured overrides applied.
    pub fn discretization(&self, p: &ProblemSpec) -> Discretization {
        let mut d = p.discretization.clone();
        if let Some(b) = &self.bases {
            d.bases = b.clone();
        }
        if let Some(n) = self.order {
            d.order = n;
        }
        if let Some(g) = self.hyperbolicity {
            d.hyperbolicity = Hyperbolicity::Gamma(g);
        }
        d
    }

    /// Checks every field a command reads, naming the first offender by its dotted path.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        if self.out.as_ref().is_some_and(|o| o.as_os_str().is_empty()) {
            return Err(field("out", "must not be empty"));
        }
        match command {
            Command::Table2 => return self.validate_table2(),
            Command::Fit => return self.validate_fit(),
            _ => {}
        }
        let inv = &self.inverse;
        if command == Command::Infer && !(inv.kappa > 0.0 && inv.kappa.is_finite()) {
            return Err(field("inverse.kappa", format!("must be positive, got {}", inv.kappa)));
        }
        let p = self.problem_for(command)?;
        self.validate_discretization(&p)?;
        section("adaptive", self.adaptive.validate())?;
        match command {
            Command::Solve => {
                self.validate_stepping()?;
                step_count(self.stepping.t_end, self.stepping.dt).map_err(|e| field("stepping.t_end", reason(e)))?;
                if self.stepping.boundary_mode == BoundaryMode::Strong
                    && self.discretization(&p).bases.iter().any(|b| b.family != BasisFamily::Chebyshev)
                {
                    return Err(field("stepping.boundary_mode", "strong boundary conditions need a Chebyshev basis"));
                }
                self.validate_net()?;
            }
            Command::Infer => {
                self.validate_stepping()?;
                self.validate_net()?;
                self.validate_sigmas()?;
                if !inv.theta_init.is_finite() {
                    return Err(field("inverse.theta_init", "must be finite"));
                }
                if inv.windows == 0 {
                    return Err(field("inverse.windows", "must be at least 1"));
                }
            }
            Command::Recover => {
                self.validate_stepping()?;
                self.validate_net()?;
                self.validate_sigmas()?;
                if inv.lambdas.is_empty() {
                    return Err(field("inverse.lambdas", "need at least one value"));
                }
                for (i, l) in inv.lambdas.iter().enumerate() {
                    if !(*l >= 0.0 && l.is_finite()) {
                        return Err(field(&format!("inverse.lambdas[{i}]"), format!("must be ≥ 0, got {l}")));
                    }
                }
            }
            Command::Cn => {
                if self.cn.dts.is_empty() {
                    return Err(field("cn.dts", "need at least one value"));
                }
                for (i, dt) in self.cn.dts.iter().enumerate() {
                    if !(*dt > 0.0 && dt.is_finite()) {
                        return Err(field(&format!("cn.dts[{i}]"), format!("must be positive, got {dt}")));
                    }
                    step_count(self.stepping.t_end, *dt).map_err(|e| field("stepping.t_end", reason(e)))?;
                }
            }
            Command::Fit | Command::Table2 => {}
        }
        Ok(())
    }

    fn validate_discretization(&self, p: &ProblemSpec) -> Result<(), CliError> {
        let d = self.discretization(p);
        if d.bases.len() != p.dim() {
            return Err(field("bases", format!("need {} entries for {}, got {}", p.dim(), p.id, d.bases.len())));
        }
        for (k, b) in d.bases.iter().enumerate() {
            section(&format!("bases[{k}]"), b.validate())?;
        }
        if d.order < 2 {
            return Err(field("order", format!("must be at least 2, got {}", d.order)));
        }
        if let Some(g) = self.hyperbolicity {
            if !(g < 1.0) || !g.is_finite() {
                return Err(field("hyperbolicity", format!("must be finite and < 1, got {g}")));
            }
        }
        Ok(())
    }

    fn validate_stepping(&self) -> Result<(), CliError> {
        let s = &self.stepping;
        if !(1..=MAX_STAGES).contains(&s.stages) {
            return Err(field("stepping.stages", format!("must lie in 1..={MAX_STAGES}, got {}", s.stages)));
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(field("stepping.dt", format!("must be positive, got {}", s.dt)));
        }
        Ok(())
    }

    fn validate_net(&self) -> Result<(), CliError> {
        if self.net.hidden_layers == 0 {
            return Err(field("net.hidden_layers", "must be at least 1"));
        }
        if self.net.width == 0 {
            return Err(field("net.width", "must be at least 1"));
        }
        section("net.train", self.net.train.validate())
    }

    fn validate_sigmas(&self) -> Result<(), CliError> {
        if self.inverse.sigmas.is_empty() {
            return Err(field("inverse.sigmas", "need at least one value"));
        }
        for (i, s) in self.inverse.sigmas.iter().enumerate() {
            if !(*s >= 0.0 && s.is_finite()) {
                return Err(field(&format!("inverse.sigmas[{i}]"), format!("must be ≥ 0, got {s}")));
            }
        }
        Ok(())
    }

    fn validate_fit(&self) -> Result<(), CliError> {
        let f = &self.fit;
        if f.points_per_half < 2 {
            return Err(field("fit.points_per_half", "must be at least 2"));
        }
        section("fit.basis", f.basis.validate())?;
        if f.order < 1 {
            return Err(field("fit.order", "must be at least 1"));
        }
        if f.spectral_hidden_layers == 0 {
            return Err(field("fit.spectral_hidden_layers", "must be at least 1"));
        }
        if f.direct_hidden_layers == 0 {
            return Err(field("fit.direct_hidden_layers", "must be at least 1"));
        }
        if f.width == 0 {
            return Err(field("fit.width", "must be at least 1"));
        }
        section("fit.train", f.train.validate())
    }

    fn validate_table2(&self) -> Result<(), CliError> {
        let t = &self.table2;
        if t.dim == 0 {
            return Err(field("table2.dim", "must be at least 1"));
        }
        if t.order == 0 {
            return Err(field("table2.order", "must be at least 1"));
        }
        for (i, g) in t.gammas.iter().enumerate() {
            if let Some(g) = g {
                if !(*g < 1.0) || !g.is_finite() {
                    return Err(field(&format!("table2.gammas[{i}]"), format!("must be finite and < 1, got {g}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Fit,
    Infer,
    Recover,
    Table2,
    Cn,
}

fn field(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Invalid(format!("{path}: {}", msg.into()))
}

fn unknown_problem(id: &str) -> CliError {
    field("problem", format!("unknown id `{id}`, expected one of {}", PROBLEM_IDS.join(", ")))
}

fn reason(e: spinn_core::Error) -> String {
    match e {
        spinn_core::Error::InvalidParameter { reason, .. } => reason,
        other => other.to_string(),
    }
}

/// Prefixes a core validation error with the config section it came from.
fn section(prefix: &str, r: spinn_core::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| match e {
        spinn_core::Error::InvalidParameter { name, reason } => field(&format!("{prefix}.{name}"), reason),
        other => field(prefix, other.to_string()),
    })
}

/// Defaults, then the config file, then `key=value` overrides on dotted paths.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
        merge(&mut doc, file);
    }
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("--set {o}: expected key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut doc, key, value)?;
    }
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        CliError::Invalid(format!("{path}: {}", e.into_inner()))
    })
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    set_parts(doc, key, &parts, value)
}

fn set_parts(cur: &mut Value, key: &str, parts: &[&str], value: Value) -> Result<(), CliError> {
    let Some((part, rest)) = parts.split_first() else {
        *cur = value;
        return Ok(());
    };
    if cur.is_null() {
        *cur = Value::Object(Default::default());
    }
    let slot = match cur {
        Value::Array(items) => {
            let len = items.len();
            let idx: usize = part
                .parse()
                .map_err(|_| CliError::Invalid(format!("{key}: `{part}` is not an index")))?;
            items
                .get_mut(idx)
                .ok_or_else(|| CliError::Invalid(format!("{key}: index {idx} out of range (length {len})")))?
        }
        Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
        _ => return Err(CliError::Invalid(format!("{key}: `{part}` is not inside an object"))),
    };
    set_parts(slot, key, rest, value)
}
