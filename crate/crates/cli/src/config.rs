//! Run configuration: a TOML document with one table per module.
//!
//! Unknown keys are rejected everywhere. Coefficients are either built-ins
//! selected by `kind` or, for the diffusion profile, a CSV table with
//! columns `x,k`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use degenctrl_core::coefficients::{constant_profile, table_profile, DEFAULT_GRADING, DEFAULT_MESH_POINTS};
use degenctrl_core::scenarios::{standard_rates, DataFn2, DataFn3, CONTROL_S};
use degenctrl_core::{power_law_profile, ControlWindow, DegeneracyProfile, MemoryKernel, RateSet, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub profile: ProfileConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub window: WindowConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub carleman: CarlemanConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub t_final: f64,
    pub a_max: f64,
    pub a_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub na: usize,
    #[serde(default = "default_grading")]
    pub grading: f64,
    /// Multiplies `nx`, `na` and hence `nt`.
    #[serde(default = "one")]
    pub refine: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    PowerLaw {
        m1: f64,
        m2: f64,
    },
    Constant {
        value: f64,
    },
    /// CSV with columns `x,k`; a relative path is resolved against the
    /// config file's directory.
    Table {
        path: String,
        m1: f64,
        m2: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatesConfig {
    /// `beta = beta0 r^2 (1 + x/2)` past `a_bar` with `r = (a - a_bar)/(A - a_bar)`,
    /// `mu = mu0 (1 + a + x(1-x))`.
    Standard { beta0: f64, mu0: f64 },
    Constant { beta: f64, mu: f64 },
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig::Standard { beta0: 2.0, mu0: 0.2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    GaussianKernel {
        amp: f64,
        center: f64,
        width: f64,
    },
    /// Certified at `s` (default: the control `s`) with `|p|` computed from
    /// the weights unless given.
    AdmissibleDecayKernel {
        b0: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_norm: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub alpha: f64,
    pub rho_w: f64,
}

/// `smooth` is a fixed closed form, `random` a seeded smooth random
/// combination of low modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataChoice {
    Zero,
    Smooth,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub y0: DataChoice,
    /// Prescribed forward control; `zero` means none.
    pub control: DataChoice,
    pub g: DataChoice,
    pub v_t: DataChoice,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { y0: DataChoice::Smooth, control: DataChoice::Smooth, g: DataChoice::Smooth, v_t: DataChoice::Smooth }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    pub mesh_points: usize,
    pub mesh_grading: f64,
    /// Sample counts `(t, a, x)` for the rate checks.
    pub rate_samples: [usize; 3],
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { mesh_points: DEFAULT_MESH_POINTS, mesh_grading: DEFAULT_GRADING, rate_samples: [32, 32, 32] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub s0: f64,
    pub gamma0: f64,
    /// `None` selects `kappa_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig { s0: 1.0, gamma0: 0.0, kappa: None }
    }
}

impl WeightsConfig {
    pub fn s(&self) -> f64 {
        self.s0.max(self.gamma0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarlemanConfig {
    pub s_values: Vec<f64>,
    /// Estimate names; empty means all.
    #[serde(default)]
    pub estimates: Vec<String>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig { s_values: vec![1.0, 3.0, 10.0], estimates: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Defaults to the weights' `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub fixpoint_tol: f64,
    pub fixpoint_max_iter: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig { s: None, eps: 1e-4, cg_tol: 1e-8, cg_max_iter: 500, fixpoint_tol: 1e-6, fixpoint_max_iter: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Forward,
    Adjoint,
    Carleman,
    Control,
    Fixpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Penalties for the control sweep (used when `presets` is empty).
    pub eps: Vec<f64>,
    /// Built-in scenario names, each run through `stages`.
    #[serde(default)]
    pub presets: Vec<String>,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { eps: vec![1e-2, 1e-4, 1e-6], presets: Vec::new(), stages: default_stages() }
    }
}

fn default_grading() -> f64 {
    DEFAULT_GRADING
}

fn one() -> usize {
    1
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Validate, Stage::Forward, Stage::Adjoint, Stage::Carleman]
}

pub const PRESETS: [&str; 7] = ["wd_left", "sd_left", "wd_right", "sd_right", "uniform", "wd_control", "sd_control"];

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config: {e}"))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads the file and resolves table paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        if let ProfileConfig::Table { path: p, .. } = &mut cfg.profile {
            let base = path.parent().unwrap_or(Path::new("."));
            let resolved: PathBuf = base.join(&*p);
            *p = resolved.to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Structural checks that need no numerics.
    pub fn check(&self) -> anyhow::Result<()> {
        let d = &self.domain;
        if !(d.t_final > 0.0 && d.a_max > 0.0) {
            bail!("domain: t_final and a_max must be positive");
        }
        if self.grid.refine == 0 {
            bail!("grid.refine must be at least 1");
        }
        if self.carleman.s_values.iter().any(|s| !(*s > 0.0)) {
            bail!("carleman.s_values must be positive");
        }
        for name in &self.carleman.estimates {
            if degenctrl_core::EstimateId::parse(name).is_none() {
                bail!("carleman.estimates: unknown estimate `{name}`");
            }
        }
        if self.sweep.eps.iter().any(|e| !(*e > 0.0)) {
            bail!("sweep.eps entries must be positive");
        }
        for p in &self.sweep.presets {
            if !PRESETS.contains(&p.as_str()) {
                bail!("sweep.presets: unknown preset `{p}` (known: {})", PRESETS.join(", "));
            }
        }
        Ok(())
    }

    /// Built-in scenario configurations mirroring the core scenario suite.
    pub fn preset(name: &str) -> Option<Self> {
        let (m1, m2) = match name {
            "wd_left" | "wd_control" => (0.5, 0.0),
            "sd_left" | "sd_control" => (1.5, 0.0),
            "wd_right" => (0.0, 0.5),
            "sd_right" => (0.0, 1.5),
            "uniform" => (0.0, 0.0),
            _ => return None,
        };
        let mut cfg = RunConfig {
            name: name.to_string(),
            seed: 0,
            out: None,
            domain: DomainConfig { t_final: 1.0, a_max: 1.0, a_bar: 0.5 },
            grid: GridConfig { nx: 24, na: 10, grading: DEFAULT_GRADING, refine: 1 },
            profile: ProfileConfig::PowerLaw { m1, m2 },
            rates: RatesConfig::default(),
            kernel: KernelConfig::GaussianKernel { amp: 0.3, center: 0.5, width: 0.25 },
            window: WindowConfig { alpha: 0.3, rho_w: 0.8 },
            data: DataConfig::default(),
            validation: ValidationConfig::default(),
            weights: WeightsConfig::default(),
            carleman: CarlemanConfig::default(),
            control: ControlConfig::default(),
            sweep: SweepConfig::default(),
        };
        if name.ends_with("_control") {
            cfg.grid.nx = 32;
            cfg.grid.na = 16;
            cfg.data.control = DataChoice::Zero;
            cfg.control.s = Some(CONTROL_S);
            cfg.kernel = KernelConfig::AdmissibleDecayKernel { b0: 0.5, s: None, p_norm: Some(1.0 / (2.0 - m1)) };
        }
        Some(cfg)
    }

    pub fn control_s(&self) -> f64 {
        self.control.s.unwrap_or_else(|| self.weights.s())
    }

    pub fn profile(&self) -> anyhow::Result<DegeneracyProfile> {
        Ok(match &self.profile {
            ProfileConfig::PowerLaw { m1, m2 } => power_law_profile(*m1, *m2)?,
            ProfileConfig::Constant { value } => constant_profile(*value)?,
            ProfileConfig::Table { path, m1, m2 } => {
                let (xs, ks) = read_table(Path::new(path))?;
                table_profile(xs, ks, *m1, *m2)?
            }
        })
    }

    pub fn rates(&self) -> RateSet {
        let d = &self.domain;
        match self.rates {
            RatesConfig::Standard { beta0, mu0 } => standard_rates(beta0, mu0, d.a_bar, d.a_max),
            RatesConfig::Constant { beta, mu } => RateSet::new(move |_, _| beta, move |_, _, _| mu, d.a_bar),
        }
    }

    /// The kernel; `p_norm` is only consulted for the admissible kernel
    /// when the config leaves it open.
    pub fn kernel(&self, p_norm: impl FnOnce() -> anyhow::Result<f64>) -> anyhow::Result<MemoryKernel> {
        Ok(match &self.kernel {
            KernelConfig::Zero => MemoryKernel::zero(),
            KernelConfig::Constant { value } => MemoryKernel::constant(*value),
            KernelConfig::GaussianKernel { amp, center, width } => MemoryKernel::gaussian(*amp, *center, *width),
            KernelConfig::AdmissibleDecayKernel { b0, s, p_norm: p } => {
                let p = match p {
                    Some(p) => *p,
                    None => p_norm()?,
                };
                MemoryKernel::admissible_decay(*b0, s.unwrap_or_else(|| self.control_s()), p, self.domain.t_final)
            }
        })
    }

    /// The solver-level scenario.
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let profile = self.profile()?;
        let window = ControlWindow::new(self.window.alpha, self.window.rho_w)?;
        let mut sc = Scenario {
            name: self.name.clone(),
            profile,
            rates: self.rates(),
            window,
            kernel: MemoryKernel::zero(),
            t_final: self.domain.t_final,
            a_max: self.domain.a_max,
            nx: self.grid.nx,
            na: self.grid.na,
            grading: self.grid.grading,
            kappa: self.weights.kappa,
            y0: data2(self.data.y0, self.seed, 1, |a, x| (1.0 + a) * (1.0 - a) * (PI * x).sin()),
            control: match self.data.control {
                DataChoice::Zero => None,
                c => Some(data3(c, self.seed, 2, |t, a, x| (1.0 - t) * a * (2.0 * PI * x).sin())),
            },
            g: data3(self.data.g, self.seed, 3, |t, a, x| t * (1.0 - a) * x * (1.0 - x)),
            v_t: data2(self.data.v_t, self.seed, 4, |a, x| (1.0 - a) * (PI * x).sin()),
        };
        let s = self.control_s();
        let orientation = sc.natural_orientation();
        sc.kernel = self.kernel(|| Ok(sc.weights(orientation, s)?.p_norm))?;
        Ok(sc)
    }
}

fn read_table(path: &Path) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    #[derive(Deserialize)]
    struct Row {
        x: f64,
        k: f64,
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading profile table {}", path.display()))?;
    let mut xs = Vec::new();
    let mut ks = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), line + 1))?;
        xs.push(row.x);
        ks.push(row.k);
    }
    Ok((xs, ks))
}

/// Coefficients of `sum c_{pq} sin((p+1) pi x) cos(q pi a)`, `p, q < 3`,
/// drawn from a stream keyed by `(seed, stream)`.
fn random_modes(seed: u64, stream: u64) -> [[f64; 3]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut c = [[0.0; 3]; 3];
    for row in &mut c {
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    c
}

fn modes_eval(c: &[[f64; 3]; 3], a: f64, x: f64) -> f64 {
    let mut s = 0.0;
    for (p, row) in c.iter().enumerate() {
        let sx = ((p + 1) as f64 * PI * x).sin();
        for (q, v) in row.iter().enumerate() {
            s += v * sx * (q as f64 * PI * a).cos();
        }
    }
    s
}

fn data2(choice: DataChoice, seed: u64, stream: u64, smooth: fn(f64, f64) -> f64) -> DataFn2 {
    match choice {
        DataChoice::Zero => Arc::new(|_, _| 0.0),
        DataChoice::Smooth => Arc::new(smooth),
        DataChoice::Random => {
            let c = random_modes(seed, stream);
            Arc::new(move |a, x| modes_eval(&c, a, x))
        }
    }
}

fn data3(choice: DataChoice, seed: u64, stream: u64, smooth: fn(f64, f64, f64) -> f64) -> DataFn3 {
    match choice {
        DataChoice::Zero => Arc::new(|_, _, _| 0.0),
        DataChoice::Smooth => Arc::new(smooth),
        DataChoice::Random => {
            let c = random_modes(seed, stream);
            Arc::new(move |t, a, x| (1.0 - 0.5 * t) * modes_eval(&c, a, x))
        }
    }
}
