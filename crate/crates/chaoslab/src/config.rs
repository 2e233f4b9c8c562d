//! Experiment configuration: a TOML document, checked key by key and then
//! against every module precondition before any compute starts.

use chaoslab_core::chaos::SweepConfig;
use chaoslab_core::lde::EtaMode;
use chaoslab_core::meanfield::{Mode, PdeConfig, Stepper};
use chaoslab_core::particles::{Interaction, SimConfig};
use chaoslab_core::{builtin_diffusion, builtin_drift, DensityGrid, KernelSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    SolvePde,
    ChaosStudy,
    LdeAudit,
    Enumerate,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::SolvePde => "solve_pde",
            ExperimentKind::ChaosStudy => "chaos_study",
            ExperimentKind::LdeAudit => "lde_audit",
            ExperimentKind::Enumerate => "enumerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelBlock {
    pub dim: usize,
    pub drift: String,
    pub drift_params: Vec<f64>,
    pub diffusion: String,
    pub diffusion_params: Vec<f64>,
}

impl Default for KernelBlock {
    fn default() -> Self {
        KernelBlock {
            dim: 1,
            drift: "trig_drift".into(),
            drift_params: vec![0.2, 1.0],
            diffusion: "trig_sigma".into(),
            diffusion_params: vec![1.0, 0.1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub wave: Vec<i32>,
    pub amp: f64,
}

/// `ρ̄₀ = 1 + Σ amp·cos(2π wave·x)`; waves shorter than `dim` are padded with zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialBlock {
    pub modes: Vec<ModeSpec>,
    /// `ε` in the particle initial law `ρ̄₀ + ε cos(2πx₁)`.
    pub perturbation: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        InitialBlock {
            modes: vec![ModeSpec { wave: vec![1], amp: 0.3 }],
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepperName {
    ExplicitRk2,
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    March,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscretizationBlock {
    /// PDE nodes per axis (power of two).
    pub n: usize,
    /// Particle time step.
    pub dt: f64,
    /// PDE time step; `0` picks the largest CFL-admissible step dividing `dt`.
    pub pde_dt: f64,
    pub t_end: f64,
    pub stepper: StepperName,
    pub mode: SolveMode,
    pub picard_max_iters: usize,
    pub picard_tol: f64,
    pub dealias: bool,
    pub c_cfl: f64,
    /// Output times; empty means `[t_end]`.
    pub checkpoints: Vec<f64>,
    /// Spectral low-pass cutoff of the initial data; `0` disables.
    pub mollify: usize,
}

impl Default for DiscretizationBlock {
    fn default() -> Self {
        DiscretizationBlock {
            n: 64,
            dt: 1e-3,
            pde_dt: 0.0,
            t_end: 0.25,
            stepper: StepperName::ExplicitRk2,
            mode: SolveMode::March,
            picard_max_iters: 50,
            picard_tol: 1e-8,
            dealias: true,
            c_cfl: 0.2,
            checkpoints: Vec::new(),
            mollify: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionName {
    Direct,
    Pairwise,
    CellList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleBlock {
    #[serde(rename = "N_list")]
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub interaction: InteractionName,
    pub cutoff: f64,
    pub include_self: bool,
    /// Also write `CHSNAP01` binary snapshots.
    pub binary_snapshots: bool,
}

impl Default for ParticleBlock {
    fn default() -> Self {
        ParticleBlock {
            n_list: vec![16, 32, 64],
            replicas: 64,
            interaction: InteractionName::Direct,
            cutoff: 0.5,
            include_self: true,
            binary_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsBlock {
    /// Bins per axis; `0` picks `n^{1/(d+2)}` from the smallest `N·M`.
    pub bins: usize,
    pub bootstrap: usize,
    pub pair_cap: usize,
    pub universal_c: f64,
}

impl Default for MetricsBlock {
    fn default() -> Self {
        MetricsBlock {
            bins: 0,
            bootstrap: 200,
            pair_cap: 2_000_000,
            universal_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundName {
    /// `ρ̄₀` itself.
    Initial,
    /// The solved `ρ̄(t_end)`.
    Pde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdeBlock {
    pub background: BackgroundName,
    pub probes: usize,
    pub quad_n: usize,
    /// Scaling of φ₂; absent means `1/(12e²B)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub mc_samples: usize,
    pub mc_n_list: Vec<usize>,
    pub mc_resamples: usize,
    /// Nodes per axis of the `N = 2` tensor quadrature; `0` skips it.
    pub quadrature_nodes: usize,
    pub term_n_list: Vec<usize>,
    pub term_m: Vec<u32>,
}

impl Default for LdeBlock {
    fn default() -> Self {
        LdeBlock {
            background: BackgroundName::Initial,
            probes: 64,
            quad_n: 128,
            eta: None,
            mc_samples: 10_000,
            mc_n_list: vec![8, 32, 128],
            mc_resamples: 200,
            quadrature_nodes: 64,
            term_n_list: vec![3, 16],
            term_m: vec![1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerateBlock {
    /// `[m, N]` pairs.
    pub cases: Vec<[u32; 2]>,
    /// Cross-check every triple against the quadrature oracle (`d = 1`).
    pub oracle: bool,
    pub oracle_quad_n: usize,
}

impl Default for EnumerateBlock {
    fn default() -> Self {
        EnumerateBlock {
            cases: vec![[1, 2], [1, 3], [1, 4], [2, 2], [2, 3]],
            oracle: true,
            oracle_quad_n: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub kernel: KernelBlock,
    pub initial: InitialBlock,
    pub discretization: DiscretizationBlock,
    pub particles: ParticleBlock,
    pub metrics: MetricsBlock,
    pub lde: LdeBlock,
    pub enumerate: EnumerateBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::ChaosStudy,
            seed: 0,
            output: None,
            kernel: KernelBlock::default(),
            initial: InitialBlock::default(),
            discretization: DiscretizationBlock::default(),
            particles: ParticleBlock::default(),
            metrics: MetricsBlock::default(),
            lde: LdeBlock::default(),
            enumerate: EnumerateBlock::default(),
        }
    }
}

/// Every violation found in a config document.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} configuration violation(s):\n  - {}", .0.len(), .0.join("\n  - "))]
pub struct ConfigError(pub Vec<String>);

const TOP_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "output",
    "kernel",
    "initial",
    "discretization",
    "particles",
    "metrics",
    "lde",
    "enumerate",
];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "kernel" => &["dim", "drift", "drift_params", "diffusion", "diffusion_params"],
        "initial" => &["modes", "perturbation"],
        "initial.modes" => &["wave", "amp"],
        "discretization" => &[
            "n",
            "dt",
            "pde_dt",
            "t_end",
            "stepper",
            "mode",
            "picard_max_iters",
            "picard_tol",
            "dealias",
            "c_cfl",
            "checkpoints",
            "mollify",
        ],
        "particles" => &["N_list", "replicas", "interaction", "cutoff", "include_self", "binary_snapshots"],
        "metrics" => &["bins", "bootstrap", "pair_cap", "universal_c"],
        "lde" => &[
            "background",
            "probes",
            "quad_n",
            "eta",
            "mc_samples",
            "mc_n_list",
            "mc_resamples",
            "quadrature_nodes",
            "term_n_list",
            "term_m",
        ],
        "enumerate" => &["cases", "oracle", "oracle_quad_n"],
        _ => return None,
    })
}

/// Every documented key as `section.key`.
pub fn documented_keys() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for top in TOP_KEYS {
        match section_keys(top) {
            Some(keys) => out.extend(keys.iter().map(|k| format!("{top}.{k}"))),
            None => out.push(top.to_string()),
        }
    }
    out.extend(section_keys("initial.modes").unwrap().iter().map(|k| format!("initial.modes[].{k}")));
    out
}

fn nearest<'a>(key: &str, valid: &[&'a str]) -> Option<&'a str> {
    valid
        .iter()
        .map(|v| (strsim::levenshtein(key, v), *v))
        .min()
        .map(|(_, v)| v)
}

fn unknown_key(path: &str, key: &str, valid: &[&str]) -> String {
    match nearest(key, valid) {
        Some(v) => format!("unknown key `{path}{key}`; nearest valid key is `{path}{v}`"),
        None => format!("unknown key `{path}{key}`"),
    }
}

fn check_keys(table: &toml::Table, errors: &mut Vec<String>) {
    for (key, value) in table {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(unknown_key("", key, TOP_KEYS));
            continue;
        }
        let Some(valid) = section_keys(key) else { continue };
        let Some(sub) = value.as_table() else {
            errors.push(format!("`{key}` must be a table"));
            continue;
        };
        for (k, v) in sub {
            if !valid.contains(&k.as_str()) {
                errors.push(unknown_key(&format!("{key}."), k, valid));
            } else if key == "initial" && k == "modes" {
                let mode_keys = section_keys("initial.modes").unwrap();
                for entry in v.as_array().into_iter().flatten() {
                    for mk in entry.as_table().into_iter().flat_map(|t| t.keys()) {
                        if !mode_keys.contains(&mk.as_str()) {
                            errors.push(unknown_key("initial.modes[].", mk, mode_keys));
                        }
                    }
                }
            }
        }
    }
}

/// Parse and validate a config document. `kind` supplies the experiment
/// when the document omits it and must agree with it otherwise.
pub fn parse_config_for(text: &str, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError(vec![format!("malformed TOML: {}", e.message())]))?;
    let mut errors = Vec::new();
    check_keys(&table, &mut errors);
    let has_kind = table.contains_key("experiment");
    let mut cfg: ExperimentConfig = match ExperimentConfig::deserialize(toml::Value::Table(table)) {
        Ok(c) => c,
        Err(e) => {
            errors.push(e.message().to_string());
            return Err(ConfigError(errors));
        }
    };
    match (has_kind, kind) {
        (false, None) => errors.push("missing key `experiment`".into()),
        (false, Some(k)) => cfg.experiment = k,
        (true, Some(k)) if k != cfg.experiment => errors.push(format!(
            "config declares experiment `{}` but `{}` was requested",
            cfg.experiment.as_str(),
            k.as_str()
        )),
        _ => {}
    }
    errors.extend(cfg.violations());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError(errors))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_for(text, None)
}

fn multiple_of(t: f64, dt: f64) -> bool {
    let q = t / dt;
    (q - q.round()).abs() <= 1e-6 * q.round().max(1.0)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn kernel_spec(&self) -> chaoslab_core::Result<KernelSpec> {
        let k = &self.kernel;
        KernelSpec::new(
            builtin_drift(&k.drift, k.dim, &k.drift_params)?,
            builtin_diffusion(&k.diffusion, k.dim, &k.diffusion_params)?,
        )
    }

    pub fn initial_density(&self) -> chaoslab_core::Result<DensityGrid> {
        let d = self.kernel.dim;
        let modes: Vec<(Vec<i32>, f64)> = self
            .initial
            .modes
            .iter()
            .map(|m| {
                let mut w = m.wave.clone();
                if w.len() < d {
                    w.resize(d, 0);
                }
                (w, m.amp)
            })
            .collect();
        DensityGrid::cosine_family(d, self.discretization.n, &modes)
    }

    /// Output times, `[t_end]` when none are listed.
    pub fn checkpoints(&self) -> Vec<f64> {
        if self.discretization.checkpoints.is_empty() {
            vec![self.discretization.t_end]
        } else {
            self.discretization.checkpoints.clone()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let p = &self.particles;
        let mut sim = SimConfig::new(self.discretization.dt, self.discretization.t_end, self.seed);
        sim.interaction = match p.interaction {
            InteractionName::Direct => Interaction::Direct,
            InteractionName::Pairwise => Interaction::Pairwise,
            InteractionName::CellList => Interaction::CellList { cutoff: p.cutoff },
        };
        sim.include_self = p.include_self;
        sim
    }

    /// PDE settings; the automatic step divides the particle step so every
    /// particle checkpoint is also a PDE output time.
    pub fn pde_config(&self, spec: &KernelSpec) -> PdeConfig {
        let d = &self.discretization;
        let dt = if d.pde_dt > 0.0 {
            d.pde_dt
        } else {
            let limit = PdeConfig::cfl_limit(spec, d.n, d.c_cfl);
            d.dt / (d.dt / limit * (1.0 + 1e-12)).ceil()
        };
        let mut cfg = PdeConfig::new(dt, d.t_end);
        cfg.stepper = match d.stepper {
            StepperName::ExplicitRk2 => Stepper::ExplicitRk2,
            StepperName::SemiImplicit => Stepper::SemiImplicit,
        };
        cfg.mode = match d.mode {
            SolveMode::March => Mode::DirectMarch,
            SolveMode::Picard => Mode::Picard {
                max_iters: d.picard_max_iters,
                tol: d.picard_tol,
            },
        };
        cfg.dealias = d.dealias;
        cfg.c_cfl = d.c_cfl;
        cfg.checkpoints = self
            .checkpoints()
            .into_iter()
            .filter(|&t| t > 0.0 && t < d.t_end)
            .collect();
        cfg.mollify = (d.mollify > 0).then_some(d.mollify);
        cfg
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            n_list: self.particles.n_list.clone(),
            replicas: self.particles.replicas,
            checkpoints: self.checkpoints(),
            sim: self.sim_config(),
            bins: self.metrics.bins,
            bootstrap: self.metrics.bootstrap,
            pair_cap: self.metrics.pair_cap,
            universal_c: self.metrics.universal_c,
            initial_perturbation: self.initial.perturbation,
        }
    }

    pub fn eta_mode(&self) -> EtaMode {
        match self.lde.eta {
            Some(e) => EtaMode::Given(e),
            None => EtaMode::Certified,
        }
    }

    fn uses_particles(&self) -> bool {
        matches!(self.experiment, ExperimentKind::Simulate | ExperimentKind::ChaosStudy)
    }

    fn uses_pde(&self) -> bool {
        matches!(self.experiment, ExperimentKind::SolvePde | ExperimentKind::ChaosStudy)
            || (self.experiment == ExperimentKind::LdeAudit && self.lde.background == BackgroundName::Pde)
    }

    /// Every precondition violated by this config, phrased after the module
    /// that owns it.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut push = |module: &str, msg: String| v.push(format!("{module}: {msg}"));
        let d = &self.discretization;
        let kind = self.experiment;

        let spec = match self.kernel_spec() {
            Ok(s) => Some(s),
            Err(e) => {
                push("kernels", e.to_string());
                None
            }
        };
        if self.seed > i64::MAX as u64 {
            push("particles", format!("seed must be at most {}, got {}", i64::MAX, self.seed));
        }
        if !(1..=2).contains(&self.kernel.dim) && kind != ExperimentKind::Enumerate {
            push("kernels", format!("dim must be 1 or 2, got {}", self.kernel.dim));
        }
        if !(d.n >= 8 && d.n.is_power_of_two()) {
            push("meanfield", format!("n must be a power of two >= 8, got {}", d.n));
        } else if kind != ExperimentKind::Enumerate && (1..=2).contains(&self.kernel.dim) {
            if let Err(e) = self.initial_density() {
                push("meanfield", format!("initial density: {e}"));
            }
        }
        for m in &self.initial.modes {
            if m.wave.len() > self.kernel.dim {
                push("meanfield", format!("initial wave {:?} longer than dim {}", m.wave, self.kernel.dim));
            }
        }

        if self.uses_particles() || self.uses_pde() {
            if !(d.dt > 0.0 && d.dt.is_finite()) {
                push("particles", format!("dt must be positive (dt > 0), got {}", d.dt));
            }
            if !(d.t_end > 0.0 && d.t_end.is_finite()) {
                push("particles", format!("t_end must be positive, got {}", d.t_end));
            }
            if d.dt > 0.0 && d.t_end > 0.0 {
                if d.dt > d.t_end {
                    push("particles", format!("dt = {} exceeds t_end = {}", d.dt, d.t_end));
                } else if !multiple_of(d.t_end, d.dt) {
                    push("particles", format!("t_end = {} is not a multiple of dt = {}", d.t_end, d.dt));
                }
                let mut last = 0.0;
                for &t in &d.checkpoints {
                    if !(t > 0.0 && t <= d.t_end * (1.0 + 1e-12)) {
                        push("particles", format!("checkpoint {t} outside (0, t_end]"));
                    } else if !multiple_of(t, d.dt) {
                        push("particles", format!("checkpoint {t} is not a multiple of dt = {}", d.dt));
                    }
                    if t < last {
                        push("particles", "checkpoints must be sorted".into());
                    }
                    last = t;
                }
            }
        }
        if self.uses_pde() {
            if !(d.c_cfl > 0.0) {
                push("meanfield", format!("c_cfl must be positive, got {}", d.c_cfl));
            }
            if d.pde_dt < 0.0 || !d.pde_dt.is_finite() {
                push("meanfield", format!("pde_dt must be >= 0, got {}", d.pde_dt));
            }
            if let Some(spec) = &spec {
                if d.pde_dt > 0.0 && d.stepper == StepperName::ExplicitRk2 && d.n.is_power_of_two() {
                    let limit = PdeConfig::cfl_limit(spec, d.n, d.c_cfl);
                    if d.pde_dt > limit * (1.0 + 1e-12) {
                        push(
                            "meanfield",
                            format!("pde_dt = {:e} violates the CFL bound {limit:e} (c_cfl·h²/‖σ‖²_W2∞)", d.pde_dt),
                        );
                    }
                }
            }
            if d.pde_dt > 0.0 && d.dt > 0.0 && self.uses_particles() && !multiple_of(d.dt, d.pde_dt) {
                push("meanfield", format!("dt = {} is not a multiple of pde_dt = {}", d.dt, d.pde_dt));
            }
            if d.mode == SolveMode::Picard && (d.picard_max_iters == 0 || !(d.picard_tol > 0.0)) {
                push("meanfield", "Picard needs picard_max_iters >= 1 and picard_tol > 0".into());
            }
        }

        if self.uses_particles() {
            let p = &self.particles;
            if p.n_list.is_empty() {
                push("particles", "N_list must not be empty".into());
            }
            if p.n_list.iter().any(|&n| n < 2) {
                push("particles", "every N must be >= 2".into());
            }
            if p.replicas == 0 {
                push("particles", "replicas must be >= 1".into());
            }
            if let Some(spec) = &spec {
                if d.dt > 0.0 && d.t_end > 0.0 && d.dt <= d.t_end {
                    if let Err(e) = self.sim_config().validate(spec) {
                        push("particles", e.to_string());
                    }
                }
            }
            if self.initial.perturbation != 0.0 && self.initial.perturbation.abs() >= 1.0 - self.initial_amp_sum() {
                push(
                    "chaos",
                    format!("initial perturbation {} would make the initial law nonpositive", self.initial.perturbation),
                );
            }
        }
        if kind == ExperimentKind::ChaosStudy {
            let p = &self.particles;
            if p.n_list.len() < 2 {
                push("chaos", format!("N_list needs at least two values, got {:?}", p.n_list));
            } else if p.n_list.windows(2).any(|w| w[1] <= w[0]) {
                push("chaos", "N_list must be strictly increasing".into());
            }
            if p.replicas < 2 {
                push("chaos", "the bootstrap needs replicas >= 2".into());
            }
            if self.metrics.bins == 1 {
                push("chaos", "bins must be 0 (automatic) or >= 2".into());
            }
            if !(self.metrics.universal_c > 0.0) {
                push("chaos", "universal_c must be positive".into());
            }
            if self.metrics.pair_cap == 0 {
                push("chaos", "pair_cap must be positive".into());
            }
        }
        if kind == ExperimentKind::LdeAudit {
            let l = &self.lde;
            if l.probes == 0 {
                push("lde", "probes must be >= 1".into());
            }
            if l.quad_n < 8 {
                push("lde", format!("quad_n must be >= 8, got {}", l.quad_n));
            }
            if let Some(e) = l.eta {
                if !(e > 0.0 && e.is_finite()) {
                    push("lde", format!("eta must be positive, got {e}"));
                }
            }
            if l.mc_samples < 1000 {
                push("lde", format!("mc_samples must be >= 1000, got {}", l.mc_samples));
            }
            if l.mc_n_list.iter().chain(&l.term_n_list).any(|&n| n < 2) {
                push("lde", "every Monte Carlo N must be >= 2".into());
            }
            if l.term_m.iter().any(|&m| m == 0) {
                push("lde", "term_m entries must be >= 1".into());
            }
            if l.quadrature_nodes != 0 && (l.quadrature_nodes < 4 || self.kernel.dim != 1) {
                push("lde", "quadrature_nodes must be 0, or >= 4 with dim = 1".into());
            }
        }
        if kind == ExperimentKind::Enumerate {
            let e = &self.enumerate;
            if e.cases.is_empty() {
                push("lde", "enumerate.cases must not be empty".into());
            }
            if e.cases.iter().any(|c| c[0] == 0 || c[1] == 0) {
                push("lde", "enumeration needs m >= 1 and N >= 1".into());
            }
            if e.oracle && e.oracle_quad_n < 32 {
                push("lde", format!("oracle_quad_n must be >= 32, got {}", e.oracle_quad_n));
            }
            if e.oracle && self.kernel.dim != 1 {
                push("lde", "the quadrature oracle needs dim = 1".into());
            }
        }
        v
    }

    fn initial_amp_sum(&self) -> f64 {
        self.initial.modes.iter().map(|m| m.amp.abs()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_chaos_config_gets_defaults() {
        let cfg = parse_config("experiment = \"chaos_study\"\n").unwrap();
        assert_eq!(cfg.particles.replicas, 64);
        assert_eq!(cfg.kernel.drift, "trig_drift");
        assert_eq!(cfg.checkpoints(), vec![0.25]);
    }

    #[test]
    fn violations_are_collected() {
        let text = "experiment = \"chaos_study\"\n[discretization]\ndt = 0\n[particles]\nN_list = [16]\nreplcas = 3\n";
        let err = parse_config(text).unwrap_err();
        let all = err.0.join("\n");
        assert!(all.contains("particles: dt must be positive"), "{all}");
        assert!(all.contains("N_list needs at least two values"), "{all}");
        assert!(all.contains("nearest valid key is `particles.replicas`"), "{all}");
    }

    #[test]
    fn round_trip() {
        let mut cfg = parse_config("experiment = \"lde_audit\"\nseed = 9\n[lde]\neta = 1e-6\n").unwrap();
        cfg.output = Some("x".into());
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn kind_must_agree() {
        assert!(parse_config_for("experiment = \"simulate\"\n", Some(ExperimentKind::Enumerate)).is_err());
        let c = parse_config_for("seed = 1\n", Some(ExperimentKind::Enumerate)).unwrap();
        assert_eq!(c.experiment, ExperimentKind::Enumerate);
        assert!(parse_config("seed = 1\n").is_err());
    }

    #[test]
    fn auto_pde_step_divides_particle_step() {
        let cfg = parse_config("experiment = \"chaos_study\"\n").unwrap();
        let spec = cfg.kernel_spec().unwrap();
        let pde = cfg.pde_config(&spec);
        assert!(multiple_of(cfg.discretization.dt, pde.dt));
        assert!(pde.dt <= PdeConfig::cfl_limit(&spec, 64, 0.2) * (1.0 + 1e-12));
    }
}
