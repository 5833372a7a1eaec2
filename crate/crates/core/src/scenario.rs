//! Declarative scenarios: TOML configuration, the solve/functional/monitor
//! pipeline, tolerance calibration, refinement studies and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::discretize::{quadrature, Discretization, Grid};
use crate::error::{Error, Result};
use crate::flows::{time_reparametrization, Coupling, FlowKind, FlowSpec};
use crate::functionals::{
    boltzmann_entropy, finite_difference, fisher, w_entropy, w_k, w_mk_rhs, DkVariant, Gauge,
};
use crate::geometry::{Dim, ModelKind, Potential, RadialModel, SSignVariant};
use crate::heatflow::{
    make_initial, spectral_reference, HeatState, InitialKind, RunConfig, Scheme,
};
use crate::monitors::{
    classify, coevolve, evaluate, persistence, verify_premise, Context, FieldSet, History,
    Location, MonitorSeries, MonitorSpec, Premise, PremiseVerdict, RefinementVerdict, Tolerance,
    Verdict, ViolationReport, MAX_DYNAMIC_RANGE,
};

/// Functional columns of `series.csv`, in order, after `t`.
pub const FUNCTIONAL_HEADERS: [&str; 17] = [
    "H", "fisher", "H_m", "W_m", "dWm_fd", "dWm_rhs", "H_K", "W_K", "dWK_fd", "dWK_rhs", "H_mK",
    "W_mK", "dWmK_fd", "dWmK_rhs", "W_tilde", "dWt_fd", "dWt_rhs",
];

/// Identity checks as `(name, fd column, rhs column)`.
const IDENTITIES: [(&str, usize, usize); 4] = [
    ("W_m", 4, 5),
    ("W_K", 8, 9),
    ("W_mK", 12, 13),
    ("W_tilde", 15, 16),
];

const ORACLE_MODES: usize = 64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_nodes() -> usize {
    400
}

/// Named potentials with closed-form derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialPreset {
    Constant {
        #[serde(default)]
        a: f64,
    },
    /// `a r²/2`
    Quadratic { a: f64 },
    /// `a cos r`
    Cosine { a: f64 },
}

impl Default for PotentialPreset {
    fn default() -> Self {
        PotentialPreset::Constant { a: 0.0 }
    }
}

impl PotentialPreset {
    pub fn build(self) -> Potential {
        match self {
            PotentialPreset::Constant { a } => Potential::Constant(a),
            PotentialPreset::Quadratic { a } => Potential::Quadratic(a),
            PotentialPreset::Cosine { a } => Potential::Cosine(a),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowPreset {
    #[default]
    Static,
    Exponential {
        lambda: f64,
    },
    ShrinkingSphere,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(flatten)]
    pub preset: FlowPreset,
    #[serde(default)]
    pub coupling: Coupling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_output_dt")]
    pub output_dt: f64,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    1.0
}

fn default_output_dt() -> f64 {
    0.05
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalsConfig {
    pub m: f64,
    /// `K` of `W_{m,K}` and `W̃_{m,K}`, with `Ric_{m,n}(L) ≥ −K`.
    #[serde(default)]
    pub k_mk: f64,
    /// `K` of `W_K`, with `Ric(L) ≥ K`.
    #[serde(default)]
    pub k_wk: f64,
    #[serde(default)]
    pub d_k_variant: DkVariant,
    #[serde(default)]
    pub s_sign_variant: SSignVariant,
    /// Kernel-time window of the identity checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceMode {
    #[default]
    Calibrate,
    Fixed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    #[serde(default)]
    pub mode: ToleranceMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementConfig {
    #[serde(default)]
    pub levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub potential: PotentialPreset,
    #[serde(default)]
    pub flow: FlowConfig,
    pub initial: InitialKind,
    pub solve: SolveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functionals: Option<FunctionalsConfig>,
    #[serde(default)]
    pub monitors: Vec<MonitorSpec>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub refinement: RefinementConfig,
}

fn unknown_keys(raw: &toml::Value, typed: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (raw, typed) {
        (toml::Value::Table(a), toml::Value::Table(b)) => {
            for (k, v) in a {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &path, out),
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(a), toml::Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

impl ScenarioConfig {
    /// Parses TOML, rejecting keys the schema does not know.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Value = toml::from_str(text)
            .map_err(|e| Error::config(span_path(text, &e), e.message().to_string()))?;
        let cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| Error::config(span_path(text, &e), e.message().to_string()))?;
        let typed = toml::Value::try_from(&cfg).map_err(|e| Error::config("", e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&raw, &typed, "", &mut unknown);
        if let Some(first) = unknown.first() {
            return Err(Error::config(first.clone(), "unknown key"));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

fn span_path(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].lines().count().max(1);
            format!("line {line}")
        }
        None => String::new(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Overrides `refinement.levels`.
    pub refine: Option<usize>,
    pub seed: u64,
}

/// A validated scenario.
pub struct Scenario {
    pub config: ScenarioConfig,
    flow: FlowSpec,
    output_every: usize,
    premises: Vec<Premise>,
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let mc = &config.model;
        let n = match (mc.kind, mc.n) {
            (ModelKind::Circle | ModelKind::Interval, None) => 1,
            (_, Some(n)) => n,
            (_, None) => {
                return Err(Error::config(
                    "model.n",
                    "dimension is required for this model",
                ))
            }
        };
        let model = RadialModel::new(mc.kind, n, mc.r_max).map_err(at("model"))?;
        if mc.nodes < crate::discretize::MIN_NODES {
            return Err(Error::config(
                "model.nodes",
                format!("need at least {} nodes", crate::discretize::MIN_NODES),
            ));
        }
        let s = &config.solve;
        for (key, v) in [
            ("solve.dt", s.dt),
            ("solve.horizon", s.horizon),
            ("solve.output_dt", s.output_dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        let output_every = (s.output_dt / s.dt).round();
        if output_every < 1.0 || (output_every * s.dt - s.output_dt).abs() > 1e-9 * s.output_dt {
            return Err(Error::config(
                "solve.output_dt",
                "must be a multiple of solve.dt",
            ));
        }
        let outputs = (s.horizon / s.output_dt).round();
        if (outputs * s.output_dt - s.horizon).abs() > 1e-9 * s.horizon {
            return Err(Error::config(
                "solve.horizon",
                "must be a multiple of solve.output_dt",
            ));
        }
        let kind = match config.flow.preset {
            FlowPreset::Static => FlowKind::Static,
            FlowPreset::Exponential { lambda } => FlowKind::Exponential { lambda },
            FlowPreset::ShrinkingSphere => FlowKind::ShrinkingSphere,
        };
        let potential = config.potential.build();
        let flow = FlowSpec::new(kind, model, potential, config.flow.coupling, s.horizon)
            .map_err(at("flow"))?;
        if let Some(f) = &config.functionals {
            Dim::Finite(f.m)
                .validate(n, flow.potential())
                .map_err(at("functionals.m"))?;
            for (key, v) in [("functionals.k_mk", f.k_mk), ("functionals.k_wk", f.k_wk)] {
                if !v.is_finite() {
                    return Err(Error::config(key, "must be finite"));
                }
            }
        }
        match config.tolerances {
            ToleranceConfig {
                mode: ToleranceMode::Fixed,
                c1: Some(a),
                c2: Some(b),
            } if a >= 0.0 && b >= 0.0 => {}
            ToleranceConfig {
                mode: ToleranceMode::Fixed,
                ..
            } => {
                return Err(Error::config(
                    "tolerances",
                    "fixed mode needs non-negative c1 and c2",
                ))
            }
            ToleranceConfig {
                mode: ToleranceMode::Calibrate,
                c1: None,
                c2: None,
            } => {}
            _ => {
                return Err(Error::config(
                    "tolerances",
                    "c1 and c2 are only read in fixed mode",
                ))
            }
        }
        let mut premises = Vec::new();
        for (i, spec) in config.monitors.iter().enumerate() {
            let path = format!("monitors[{i}]");
            premises.push(
                verify_premise(spec, &flow, s.horizon)
                    .map_err(|e| Error::config(&path, e.to_string()))?,
            );
        }
        let mut labels: Vec<String> = config.monitors.iter().map(|m| m.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(
                "monitors",
                format!("duplicate monitor id {}; set `id`", w[0]),
            ));
        }
        let scenario = Scenario {
            config,
            flow,
            output_every: output_every as usize,
            premises,
        };
        // catches unresolved burn-in widths and similar data problems up front
        let disc = scenario
            .discretization(scenario.config.model.nodes)
            .map_err(at("model"))?;
        let init = make_initial(&disc, scenario.config.initial).map_err(at("initial"))?;
        if scenario.fields().fisher {
            let (lo, hi) = init
                .u
                .iter()
                .fold((f64::INFINITY, 0.0_f64), |(a, b), &v| (a.min(v), b.max(v)));
            if hi / lo > MAX_DYNAMIC_RANGE {
                return Err(Error::config(
                    "initial",
                    format!("datum range {:e} exceeds {MAX_DYNAMIC_RANGE:e}, which the lsi monitor needs", hi / lo),
                ));
            }
        }
        Ok(scenario)
    }

    pub fn flow(&self) -> &FlowSpec {
        &self.flow
    }

    pub fn premises(&self) -> &[Premise] {
        &self.premises
    }

    fn discretization(&self, nodes: usize) -> Result<Discretization> {
        Discretization::new(self.flow.clone(), nodes)
    }

    fn fields(&self) -> FieldSet {
        let mut f = FieldSet {
            entropy: self.config.functionals.is_some(),
            fisher: false,
        };
        for m in &self.config.monitors {
            let need = m.check.needs();
            f.entropy |= need.entropy;
            f.fisher |= need.fisher;
        }
        f
    }

    fn s_sign(&self) -> SSignVariant {
        self.config
            .functionals
            .map(|f| f.s_sign_variant)
            .unwrap_or_default()
    }

    /// Solves and evaluates everything at one resolution; `level` halves
    /// `dr` and `dt` that many times, `space`/`time` halve one of them once.
    fn simulate(&self, nodes: usize, dt: f64, output_every: usize, seed: u64) -> Result<Level> {
        let disc = self.discretization(nodes)?;
        let init = make_initial(&disc, self.config.initial)?;
        let cfg = RunConfig {
            dt,
            horizon: self.config.solve.horizon,
            scheme: self.config.solve.scheme,
            output_every,
        };
        let history = coevolve(&disc, init.u, init.clock_offset, self.fields(), &cfg)?;
        let (table, notes) = functional_table(&disc, &history, self.config.functionals.as_ref())?;
        let ctx = Context {
            disc: &disc,
            history: &history,
            horizon: cfg.horizon,
            s_sign: self.s_sign(),
            seed,
        };
        let monitors = self
            .config
            .monitors
            .iter()
            .map(|m| evaluate(&ctx, m))
            .collect::<Result<Vec<_>>>()?;
        let oracle_error = self.oracle_error(&disc, &history)?;
        let mass_drift = history
            .frames
            .iter()
            .map(|f| {
                disc.weights(f.s)
                    .map(|w| ((quadrature(&f.u, &w) - history.mass0) / history.mass0).abs())
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(Level {
            nodes,
            dr: disc.grid().dr,
            dt,
            history,
            table,
            notes,
            monitors,
            oracle_error,
            mass_drift,
        })
    }

    /// Sup error at the final time against an exact solution, when one is
    /// available: the Gaussian on euclidean space, or an eigen-expansion on
    /// the compact models, carried through `τ(t)` on exponential flows.
    fn oracle_error(&self, disc: &Discretization, history: &History) -> Result<Option<f64>> {
        let flow = &self.flow;
        let model = flow.model();
        let homothety = flow.is_static()
            || (matches!(flow.kind(), FlowKind::Exponential { .. })
                && flow.coupling() == Coupling::Independent);
        if !homothety || !flow.potential().is_spatially_constant() {
            return Ok(None);
        }
        let last = history
            .frames
            .last()
            .expect("history has the initial frame");
        let tau = time_reparametrization(flow, last.s)?;
        let r = &disc.grid().r;
        let exact: Vec<f64> = match (model.kind, self.config.initial) {
            (ModelKind::Euclidean, InitialKind::KernelBurnin { t0 }) => {
                let t = tau + t0;
                let n = model.n as f64;
                r.iter()
                    .map(|r| {
                        (4.0 * std::f64::consts::PI * t).powf(-0.5 * n) * (-r * r / (4.0 * t)).exp()
                    })
                    .collect()
            }
            (ModelKind::Circle | ModelKind::Interval | ModelKind::Sphere, kind) => {
                let profile = kind.profile(model)?;
                let u0 = &history.frames[0].u;
                let peak = (0..u0.len())
                    .max_by(|&a, &b| u0[a].total_cmp(&u0[b]))
                    .unwrap_or(0);
                let scale = u0[peak] / profile(r[peak]);
                let reference = spectral_reference(model, true, &*profile, tau, r, ORACLE_MODES)?;
                reference.values.iter().map(|v| v * scale).collect()
            }
            _ => return Ok(None),
        };
        let limit = match model.kind {
            ModelKind::Euclidean | ModelKind::Hyperbolic => model.r_min + 0.5 * model.length(),
            _ => f64::INFINITY,
        };
        Ok(Some(
            r.iter()
                .zip(&last.u)
                .zip(&exact)
                .filter(|((r, _), _)| **r <= limit)
                .map(|((_, u), e)| (u - e).abs())
                .fold(0.0, f64::max),
        ))
    }

    fn refined(&self, level: usize) -> (usize, f64, usize) {
        let periodic = self.flow.model().is_periodic();
        let mut nodes = self.config.model.nodes;
        for _ in 0..level {
            nodes = Grid::refined_nodes(nodes, periodic);
        }
        let factor = 1usize << level;
        (
            nodes,
            self.config.solve.dt / factor as f64,
            self.output_every * factor,
        )
    }

    /// Tolerance constants from one space and one time halving.
    pub fn calibrate(&self, seed: u64) -> Result<Calibration> {
        let base = self.simulate_level(0, seed).map_err(at("solve"))?;
        self.calibrate_from(&base, seed).map_err(at("solve"))
    }

    fn simulate_level(&self, level: usize, seed: u64) -> Result<Level> {
        let (nodes, dt, every) = self.refined(level);
        info!(
            "{}: solving with {nodes} nodes, dt = {dt:e}",
            self.config.name
        );
        self.simulate(nodes, dt, every, seed)
    }

    fn calibrate_from(&self, base: &Level, seed: u64) -> Result<Calibration> {
        if let ToleranceConfig {
            mode: ToleranceMode::Fixed,
            c1: Some(c1),
            c2: Some(c2),
        } = self.config.tolerances
        {
            let fixed = Tolerance { c1, c2 };
            return Ok(Calibration {
                monitors: vec![fixed; self.config.monitors.len()],
                identities: vec![fixed; IDENTITIES.len()],
            });
        }
        let periodic = self.flow.model().is_periodic();
        let space = self.simulate(
            Grid::refined_nodes(base.nodes, periodic),
            base.dt,
            self.output_every,
            seed,
        )?;
        let time = self.simulate(base.nodes, 0.5 * base.dt, 2 * self.output_every, seed)?;
        let monitors = (0..self.config.monitors.len())
            .map(|i| {
                Tolerance::calibrate(
                    &base.monitors[i].worst,
                    &space.monitors[i].worst,
                    &time.monitors[i].worst,
                    base.dr,
                    base.dt,
                )
            })
            .collect();
        let identities = IDENTITIES
            .iter()
            .map(|&(_, fd, rhs)| {
                let res = |l: &Level| self.identity_residuals(l, fd, rhs);
                Tolerance::calibrate(&res(base), &res(&space), &res(&time), base.dr, base.dt)
            })
            .collect();
        Ok(Calibration {
            monitors,
            identities,
        })
    }

    fn identity_residuals(&self, level: &Level, fd: usize, rhs: usize) -> Vec<f64> {
        let window = self
            .config
            .functionals
            .map(|f| (f.t_min, f.t_max))
            .unwrap_or((None, None));
        level
            .history
            .frames
            .iter()
            .zip(&level.table)
            .map(|(f, row)| {
                let inside = window.0.map_or(true, |a| f.t >= a - 1e-12)
                    && window.1.map_or(true, |b| f.t <= b + 1e-12);
                if inside {
                    row[fd] - row[rhs]
                } else {
                    f64::NAN
                }
            })
            .collect()
    }

    /// Runs the full pipeline.
    pub fn run(&self, opts: &RunOptions) -> Result<Outcome> {
        self.run_inner(opts).map_err(at("solve"))
    }

    fn run_inner(&self, opts: &RunOptions) -> Result<Outcome> {
        let seed = opts.seed;
        let base = self.simulate_level(0, seed)?;
        let calibration = self.calibrate_from(&base, seed)?;
        let levels = opts.refine.unwrap_or(self.config.refinement.levels);
        let mut refined: Vec<Level> = Vec::new();
        let tolerances: Vec<f64> = calibration
            .monitors
            .iter()
            .map(|t| t.budget(base.dr, base.dt))
            .collect();
        let needs_refinement = self
            .config
            .monitors
            .iter()
            .zip(&base.monitors)
            .zip(&tolerances)
            .any(|((spec, series), tau)| {
                spec.negative_control
                    || series
                        .worst()
                        .is_some_and(|(_, w)| classify(w, *tau) == Verdict::Violated)
            });
        let wanted = levels.max(needs_refinement as usize);
        for level in 1..=wanted {
            refined.push(self.simulate_level(level, seed)?);
        }
        let report = self.report(&base, refined.first(), &calibration);
        let series = series_csv(&self.config, &base);
        let mut refinement = Vec::new();
        for (i, level) in refined.iter().enumerate().take(levels) {
            let level_report = self.report(level, refined.get(i + 1), &calibration);
            refinement.push(LevelArtifacts {
                level: i + 1,
                series: series_csv(&self.config, level),
                report: level_report,
            });
        }
        let convergence = (levels > 0).then(|| {
            let all: Vec<&Level> = std::iter::once(&base)
                .chain(refined.iter().take(levels))
                .collect();
            convergence(&all)
        });
        Ok(Outcome {
            exit_code: report.exit_code,
            series,
            report,
            refinement,
            convergence,
        })
    }

    fn report(&self, base: &Level, refined: Option<&Level>, cal: &Calibration) -> Report {
        let mut monitors = Vec::new();
        let mut controls = Vec::new();
        let mut exit_code = EXIT_OK;
        for (i, spec) in self.config.monitors.iter().enumerate() {
            let series = &base.monitors[i];
            let tau = cal.monitors[i].budget(base.dr, base.dt);
            let (worst, location) = match series.worst() {
                Some((j, w)) => (
                    w,
                    Location {
                        t: base.history.frames[j].t,
                        r: series.worst_r[j],
                    },
                ),
                None => (
                    f64::NAN,
                    Location {
                        t: f64::NAN,
                        r: f64::NAN,
                    },
                ),
            };
            let verdict = if worst.is_nan() {
                Verdict::Holds
            } else {
                classify(worst, tau)
            };
            let refinement_verdict = match (verdict, refined) {
                (Verdict::Violated, Some(fine)) => {
                    let fine_worst = fine.monitors[i].worst().map_or(f64::NAN, |(_, w)| w);
                    Some(persistence(
                        worst,
                        fine_worst,
                        cal.monitors[i].budget(fine.dr, fine.dt),
                    ))
                }
                _ => None,
            };
            let report = ViolationReport {
                inequality: spec.label(),
                kind: spec.check.name(),
                negative_control: spec.negative_control,
                premise: self.premises[i].clone(),
                worst_margin: worst,
                worst_location: location,
                tolerance: tau,
                calibration: cal.monitors[i],
                verdict,
                refinement_verdict,
            };
            let detected = report.verdict == Verdict::Violated
                && report.refinement_verdict == Some(RefinementVerdict::Persistent);
            if spec.negative_control {
                if !detected {
                    warn!(
                        "negative control {} did not produce a persistent violation",
                        spec.label()
                    );
                }
                controls.push(ControlOutcome {
                    monitor: spec.label(),
                    detected,
                });
            } else if self.premises[i].verdict == PremiseVerdict::Verified
                && report.is_persistent_violation()
            {
                exit_code = EXIT_VIOLATION;
            }
            monitors.push(report);
        }
        let identities = if self.config.functionals.is_some() {
            IDENTITIES
                .iter()
                .zip(&cal.identities)
                .map(|(&(name, fd, rhs), tol)| {
                    let res = self.identity_residuals(base, fd, rhs);
                    let worst = res
                        .iter()
                        .filter(|v| v.is_finite())
                        .fold(f64::NAN, |a: f64, b| a.max(b.abs()));
                    let tolerance = tol.budget(base.dr, base.dt);
                    let max_fd = base
                        .history
                        .frames
                        .iter()
                        .zip(&base.table)
                        .zip(&res)
                        .filter(|(_, r)| r.is_finite())
                        .map(|((_, row), _)| row[fd])
                        .fold(f64::NAN, f64::max);
                    IdentityReport {
                        name,
                        worst_residual: worst,
                        tolerance,
                        calibration: *tol,
                        within_tolerance: worst.is_finite() && worst <= tolerance,
                        max_derivative_fd: max_fd,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Report {
            scenario: self.config.name.clone(),
            resolution: Resolution {
                nodes: base.nodes,
                dr: base.dr,
                dt: base.dt,
                output_dt: self.config.solve.output_dt,
            },
            diagnostics: RunDiagnostics {
                fallbacks: base.history.fallbacks,
                max_mass_drift: base.mass_drift,
                sup: base.history.sup,
            },
            functional_notes: base.notes.clone(),
            identities,
            monitors,
            negative_controls: controls,
            oracle_sup_error: base.oracle_error,
            exit_code,
        }
    }
}

struct Level {
    nodes: usize,
    dr: f64,
    dt: f64,
    history: History,
    table: Vec<[f64; 17]>,
    notes: Vec<String>,
    monitors: Vec<MonitorSeries>,
    oracle_error: Option<f64>,
    mass_drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub monitors: Vec<Tolerance>,
    pub identities: Vec<Tolerance>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolution {
    pub nodes: usize,
    pub dr: f64,
    pub dt: f64,
    pub output_dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunDiagnostics {
    pub fallbacks: usize,
    pub max_mass_drift: f64,
    pub sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub name: &'static str,
    pub worst_residual: f64,
    pub tolerance: f64,
    pub calibration: Tolerance,
    pub within_tolerance: bool,
    pub max_derivative_fd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlOutcome {
    pub monitor: String,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub resolution: Resolution,
    pub diagnostics: RunDiagnostics,
    pub functional_notes: Vec<String>,
    pub identities: Vec<IdentityReport>,
    pub monitors: Vec<ViolationReport>,
    pub negative_controls: Vec<ControlOutcome>,
    pub oracle_sup_error: Option<f64>,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub nodes: usize,
    pub dt: f64,
    /// Sup error against the exact solution, or the sup difference to the
    /// next level at shared nodes when no exact solution exists.
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Convergence {
    pub reference: &'static str,
    pub levels: Vec<LevelSummary>,
    pub orders: Vec<f64>,
}

pub struct LevelArtifacts {
    pub level: usize,
    pub series: String,
    pub report: Report,
}

pub struct Outcome {
    pub exit_code: i32,
    pub series: String,
    pub report: Report,
    pub refinement: Vec<LevelArtifacts>,
    pub convergence: Option<Convergence>,
}

impl Outcome {
    /// Writes `series.csv`, `report.json` and, with refinement, `refine/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| Error::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let put = |path: &Path, text: &str| fs::write(path, text).map_err(io(path));
        put(&dir.join("series.csv"), &self.series)?;
        put(&dir.join("report.json"), &to_json(&self.report))?;
        if let Some(conv) = &self.convergence {
            let refine = dir.join("refine");
            for level in &self.refinement {
                let sub = refine.join(format!("level_{}", level.level));
                fs::create_dir_all(&sub).map_err(io(&sub))?;
                put(&sub.join("series.csv"), &level.series)?;
                put(&sub.join("report.json"), &to_json(&level.report))?;
            }
            fs::create_dir_all(&refine).map_err(io(&refine))?;
            put(&refine.join("convergence.json"), &to_json(conv))?;
        }
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn convergence(levels: &[&Level]) -> Convergence {
    let exact: Option<Vec<f64>> = levels.iter().map(|l| l.oracle_error).collect();
    let (reference, errors): (&str, Vec<Option<f64>>) = match exact {
        Some(e) => ("exact", e.into_iter().map(Some).collect()),
        None => {
            let diffs = levels
                .windows(2)
                .map(|w| {
                    let (a, b) = (&w[0].history.frames, &w[1].history.frames);
                    let (ua, ub) = (&a.last().unwrap().u, &b.last().unwrap().u);
                    let stride = (ub.len() / ua.len()).max(1);
                    Some(
                        ua.iter()
                            .enumerate()
                            .map(|(i, v)| (v - ub[i * stride]).abs())
                            .fold(0.0, f64::max),
                    )
                })
                .chain(std::iter::once(None))
                .collect();
            ("successive", diffs)
        }
    };
    let summaries: Vec<LevelSummary> = levels
        .iter()
        .zip(&errors)
        .enumerate()
        .map(|(i, (l, e))| LevelSummary {
            level: i,
            nodes: l.nodes,
            dt: l.dt,
            error: *e,
        })
        .collect();
    let orders = errors
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
            _ => None,
        })
        .collect();
    Convergence {
        reference,
        levels: summaries,
        orders,
    }
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn series_csv(cfg: &ScenarioConfig, level: &Level) -> String {
    let mut out = String::from("t");
    for h in FUNCTIONAL_HEADERS {
        out.push(',');
        out.push_str(h);
    }
    for m in &cfg.monitors {
        let _ = write!(out, ",{}", m.label());
    }
    out.push('\n');
    for (j, frame) in level.history.frames.iter().enumerate() {
        out.push_str(&fmt_value(frame.t));
        for v in &level.table[j] {
            out.push(',');
            out.push_str(&fmt_value(*v));
        }
        for m in &level.monitors {
            out.push(',');
            out.push_str(&fmt_value(m.worst[j]));
        }
        out.push('\n');
    }
    out
}

fn skip_unsupported(r: Result<f64>, notes: &mut Vec<String>, what: &str) -> Result<f64> {
    match r {
        Ok(v) => Ok(v),
        Err(Error::Unsupported(msg)) => {
            let note = format!("{what}: {msg}");
            if !notes.contains(&note) {
                notes.push(note);
            }
            Ok(f64::NAN)
        }
        Err(e) => Err(e),
    }
}

/// Every functional column at every frame, on the mass-normalized state.
fn functional_table(
    disc: &Discretization,
    history: &History,
    cfg: Option<&FunctionalsConfig>,
) -> Result<(Vec<[f64; 17]>, Vec<String>)> {
    let mut notes = Vec::new();
    let mut table = Vec::with_capacity(history.frames.len());
    let mut state_part = Vec::with_capacity(history.frames.len());
    for frame in &history.frames {
        let mut row = [f64::NAN; 17];
        let v: Vec<f64> = frame.u.iter().map(|u| u / history.mass0).collect();
        let state = HeatState::new(disc, v, frame.s, frame.t - frame.s)?;
        row[0] = boltzmann_entropy(&state);
        row[1] = fisher(disc, &state)?;
        let mut part = f64::NAN;
        if let (Some(c), true) = (cfg, frame.t > 0.0) {
            let (m, k) = (c.m, c.k_mk);
            for (gauge, cols) in [
                (Gauge::Phi { m, k: 0.0 }, [2, 3]),
                (Gauge::Phi { m, k }, [10, 11]),
                (Gauge::Tilde { m, k }, [usize::MAX, 14]),
            ] {
                match w_entropy(disc, &state, gauge) {
                    Ok(w) => {
                        if cols[0] != usize::MAX {
                            row[cols[0]] = w.h;
                        }
                        row[cols[1]] = w.w;
                        part = w.state_part;
                    }
                    Err(e) => {
                        skip_unsupported(Err(e), &mut notes, "W-entropy")?;
                    }
                }
            }
            row[5] = skip_unsupported(
                w_mk_rhs(disc, &state, m, 0.0, true),
                &mut notes,
                "W_m identity",
            )?;
            row[13] = skip_unsupported(
                w_mk_rhs(disc, &state, m, k, true),
                &mut notes,
                "W_mK identity",
            )?;
            row[16] = skip_unsupported(
                w_mk_rhs(disc, &state, m, k, false),
                &mut notes,
                "W_tilde identity",
            )?;
            if let (Some(q), true) = (&frame.q, frame.s > 0.0) {
                match w_k(disc, &state.u, q, frame.s, c.k_wk, c.d_k_variant) {
                    Ok(w) => {
                        row[6] = w.h_k;
                        row[7] = w.w_k;
                        row[9] = w.dw_k_rhs;
                    }
                    Err(e) => {
                        skip_unsupported(Err(e), &mut notes, "W_K")?;
                    }
                }
            }
        }
        state_part.push(part);
        table.push(row);
    }
    if let Some(c) = cfg {
        let times: Vec<f64> = history.frames.iter().map(|f| f.t).collect();
        let solver: Vec<f64> = history.frames.iter().map(|f| f.s).collect();
        let (m, k) = (c.m, c.k_mk);
        for (gauge, col) in [
            (Gauge::Phi { m, k: 0.0 }, 4),
            (Gauge::Phi { m, k }, 12),
            (Gauge::Tilde { m, k }, 15),
        ] {
            if let Some(d) = fd_suffix(&times, &state_part, |j, d| d - gauge.curvature(times[j])) {
                for (j, v) in d {
                    table[j][col] = v;
                }
            }
        }
        let wk: Vec<f64> = table.iter().map(|r| r[7]).collect();
        if let Some(d) = fd_suffix(&solver, &wk, |_, d| d) {
            for (j, v) in d {
                table[j][8] = v;
            }
        }
    }
    Ok((table, notes))
}

/// Finite differences over the longest all-finite tail of `values`.
fn fd_suffix(
    times: &[f64],
    values: &[f64],
    adjust: impl Fn(usize, f64) -> f64,
) -> Option<Vec<(usize, f64)>> {
    let start = values
        .iter()
        .rposition(|v| !v.is_finite())
        .map_or(0, |i| i + 1);
    if values.len() - start < 5 {
        return None;
    }
    let d = finite_difference(&times[start..], &values[start..]).ok()?;
    Some(
        d.into_iter()
            .enumerate()
            .map(|(i, v)| (start + i, adjust(start + i, v)))
            .collect(),
    )
}

/// One catalog entry.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub anchor: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Catalog {
    pub models: Vec<CatalogEntry>,
    pub flows: Vec<CatalogEntry>,
    pub potentials: Vec<CatalogEntry>,
    pub initial_data: Vec<CatalogEntry>,
    pub functionals: Vec<CatalogEntry>,
    pub monitors: Vec<CatalogEntry>,
}

macro_rules! entries {
    ($(($n:expr, $a:expr)),* $(,)?) => { vec![$(CatalogEntry { name: $n, anchor: $a }),*] };
}

pub fn catalog() -> Catalog {
    Catalog {
        models: entries![
            (
                "euclidean",
                "flat space, psi = r, truncated at r_max with a reflecting wall"
            ),
            ("sphere", "round sphere, psi = sin r on [0, pi]"),
            (
                "hyperbolic",
                "hyperbolic space, psi = sinh r, truncated at r_max"
            ),
            ("circle", "flat circle of given length"),
            ("interval", "flat interval with reflecting ends"),
        ],
        flows: entries![
            ("static", "fixed metric and potential"),
            (
                "exponential",
                "homothety c(t) = exp(2 lambda t), h = lambda g"
            ),
            (
                "shrinking_sphere",
                "Ricci flow on round sphere, c(t) = 1 - 2(n-1)t"
            ),
        ],
        potentials: entries![
            ("constant", "phi = a"),
            ("quadratic", "phi = a r^2 / 2"),
            ("cosine", "phi = a cos r"),
        ],
        initial_data: entries![
            ("uniform", "constant density of mass 1"),
            (
                "gaussian_bump",
                "normalized Gaussian bump about a center radius"
            ),
            (
                "kernel_burnin",
                "small-time kernel about the pole (exact on hyperbolic 3-space), clock shifted by t0"
            ),
            (
                "eigen_perturbation",
                "1 + amplitude times a radial eigenfunction"
            ),
        ],
        functionals: entries![
            ("H", "Boltzmann entropy -int u log u"),
            ("fisher", "Fisher information int |grad log u|^2 u"),
            ("H_m", "H - (m/2)(1 + log 4 pi t)"),
            ("W_m", "W_m = d/dt(t H_m), with its dissipation formula"),
            ("H_K", "D_K(t) int (P_t(f log f) - P_t f log P_t f)"),
            (
                "W_K",
                "H_K + sinh(2Kt)/(2K) dH_K/dt, with its dissipation formula"
            ),
            ("H_mK", "H - Phi_mK(t)"),
            (
                "W_mK",
                "d/dt(t H_mK), with its dissipation formula under CD(-K, m)"
            ),
            (
                "W_tilde",
                "d/dt(t (H - Psi(t))), the K-shifted variant without the defect term"
            ),
        ],
        monitors: entries![
            (
                "lsi",
                "semigroup log-Sobolev inequality under h + Ric(L) >= -K"
            ),
            (
                "rlsi",
                "reverse semigroup log-Sobolev inequality under h + Ric(L) >= -K"
            ),
            (
                "li_yau",
                "|grad u|^2/u^2 - alpha u_t/u <= bound; static and backward-super-flow variants"
            ),
            ("hamilton", "|grad u|^2/u^2 <= 2K/(1 - e^(-2Kt)) log(A/u)"),
            (
                "lyh",
                "u_t/u - e^(-2Kt)|grad u|^2/u^2 + e^(2Kt) m/2t >= 0, static and flow variants"
            ),
            (
                "second_order",
                "Lu/u + |grad u|^2/u^2 <= K/(1 - e^(-Kt)) (m + 4 log(A/u)), static and flow"
            ),
            ("cor1", "same-time two-point Harnack inequality"),
            ("cor2", "two-time two-point Harnack inequality"),
        ],
    }
}

pub fn catalog_text() -> String {
    let c = catalog();
    let mut out = String::new();
    for (title, list) in [
        ("models", &c.models),
        ("flows", &c.flows),
        ("potentials", &c.potentials),
        ("initial data", &c.initial_data),
        ("functionals", &c.functionals),
        ("monitors", &c.monitors),
    ] {
        let _ = writeln!(out, "{title}:");
        for e in list {
            let _ = writeln!(out, "  {} - {}", e.name, e.anchor);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"
name = "sphere-uniform"

[model]
kind = "sphere"
n = 2
nodes = 64

[initial]
kind = "uniform"

[solve]
dt = 0.01
horizon = 0.2
output_dt = 0.02

[functionals]
m = 2.0
"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ScenarioConfig::from_toml(SPHERE).unwrap();
        assert_eq!(cfg.flow.preset, FlowPreset::Static);
        assert_eq!(cfg.potential, PotentialPreset::Constant { a: 0.0 });
        assert_eq!(cfg.tolerances.mode, ToleranceMode::Calibrate);
        let s = Scenario::new(cfg).unwrap();
        assert_eq!(s.output_every, 2);
    }

    #[test]
    fn unknown_keys_are_reported_with_path() {
        let text = SPHERE.replace("nodes = 64", "nodes = 64\nnodez = 3");
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "model.nodez"),
            other => panic!("{other:?}"),
        }
        let text = format!("{SPHERE}\n[[monitors]]\nkind = \"hamilton\"\nkk = 1.0\n");
        match ScenarioConfig::from_toml(&text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "monitors[0].kk"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn m_below_n_is_a_config_error() {
        let text = SPHERE.replace("m = 2.0", "m = 1.5");
        let err = Scenario::new(ScenarioConfig::from_toml(&text).unwrap())
            .err()
            .unwrap();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "functionals.m");
                assert!(message.contains("m >= n"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uniform_series_is_exact() {
        let s = Scenario::new(ScenarioConfig::from_toml(SPHERE).unwrap()).unwrap();
        let out = s.run(&RunOptions::default()).unwrap();
        let mut lines = out.series.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("t,H,fisher,H_m,W_m,dWm_fd"));
        let last: Vec<f64> = lines
            .last()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        let t = last[0];
        assert!((t - 0.2).abs() < 1e-12);
        assert!((last[1] - (4.0 * std::f64::consts::PI).ln()).abs() < 1e-9);
        // dWm/dt on a uniform state is -m/2t both ways
        assert!((last[6] + 1.0 / t).abs() < 1e-9, "{}", last[6]);
        assert!((last[5] + 1.0 / t).abs() < 1e-6, "{}", last[5]);
        assert_eq!(out.exit_code, EXIT_OK);
    }
}
