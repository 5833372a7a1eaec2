//! Pointwise and integrated Harnack-type inequality monitors, the
//! semigroup log-Sobolev checks, and the tolerance model used to turn
//! margins into verdicts.

use std::fmt;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretize::Discretization;
use crate::error::{Error, Result};
use crate::flows::FlowSpec;
use crate::geometry::{flow_condition_check, s_tensor, Condition, Dim, ModelKind, SSignVariant};
use crate::heatflow::{advance, RunConfig};

/// Width, in cells, of the band next to a pole that pointwise checks skip.
pub const POLE_BAND: usize = 3;
/// Node subset size for the two-point corollaries.
pub const PAIR_NODES: usize = 48;
const PREMISE_TIMES: usize = 129;
const PREMISE_EPS: f64 = 1e-12;
const SAFETY: f64 = 2.0;
const TOLERANCE_FLOOR: f64 = 1e-12;
/// Largest `max f / min f` accepted when `|∇f|²/f` is co-evolved.
pub const MAX_DYNAMIC_RANGE: f64 = 1e12;

/// One stored output time of a lockstep run.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Solver time.
    pub s: f64,
    /// Kernel time `s + t₀`.
    pub t: f64,
    pub u: Vec<f64>,
    /// `P_s(f log f)` with `f = u₀ / mass`.
    pub q: Option<Vec<f64>>,
    /// `P_s(|∇f|²/f)`.
    pub g: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub frames: Vec<Frame>,
    pub mass0: f64,
    /// Space-time maximum of `u`, initial datum included.
    pub sup: f64,
    pub fallbacks: usize,
}

impl History {
    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FieldSet {
    pub entropy: bool,
    pub fisher: bool,
}

/// Advances `u₀` together with `f log f` and `|∇f|²/f` (as requested) under
/// the same operator sequence, `f = u₀ / ∫u₀`.
pub fn coevolve(
    disc: &Discretization,
    u0: Vec<f64>,
    clock_offset: f64,
    fields: FieldSet,
    cfg: &RunConfig,
) -> Result<History> {
    let steps = cfg.steps()?;
    if u0.len() != disc.len() {
        return Err(Error::invalid(format!(
            "datum has {} values for {} nodes",
            u0.len(),
            disc.len()
        )));
    }
    let (lo, hi) = u0
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if !(lo > 0.0) {
        return Err(Error::NonPositive(format!(
            "initial datum has minimum {lo}"
        )));
    }
    if fields.fisher && hi / lo > MAX_DYNAMIC_RANGE {
        return Err(Error::invalid(format!(
            "datum range {:e} exceeds {MAX_DYNAMIC_RANGE:e}; |∇f|²/f is not resolvable",
            hi / lo
        )));
    }
    let mass0 = crate::discretize::quadrature(&u0, &disc.weights(0.0)?);
    let f: Vec<f64> = u0.iter().map(|v| v / mass0).collect();
    let mut state = vec![u0];
    let mut positive = vec![true];
    if fields.entropy {
        state.push(f.iter().map(|v| v * v.ln()).collect());
        positive.push(false);
    }
    if fields.fisher {
        let g = disc.grad_sq(&f, 0.0);
        state.push(g.iter().zip(&f).map(|(g, f)| g / f).collect());
        positive.push(false);
    }
    let frame = |s: f64, state: &[Vec<f64>]| {
        let mut it = state.iter().skip(1);
        Frame {
            s,
            t: s + clock_offset,
            u: state[0].clone(),
            q: if fields.entropy {
                it.next().cloned()
            } else {
                None
            },
            g: if fields.fisher {
                it.next().cloned()
            } else {
                None
            },
        }
    };
    let mut sup = hi;
    let mut frames = vec![frame(0.0, &state)];
    let mut fallbacks = 0;
    for k in 1..=steps {
        let s = (k - 1) as f64 * cfg.dt;
        let report = advance(disc, &mut state, &positive, s, cfg.dt, cfg.scheme)?;
        fallbacks += report.fell_back as usize;
        sup = state[0].iter().cloned().fold(sup, f64::max);
        if k % cfg.output_every == 0 || k == steps {
            frames.push(frame(k as f64 * cfg.dt, &state));
        }
    }
    Ok(History {
        frames,
        mass0,
        sup,
        fallbacks,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiYauVariant {
    /// `Ric_{m,n}(L) ≥ 0`, bound `mα²/2t`, `α ≥ 1`.
    #[default]
    StaticCd0m,
    /// `Ric_{m,n}(L) ≥ −K`, bound `mα²/2t + mα²K/(√2(α−1))`, `α > 1`.
    StaticLyk,
    /// Backward `(α, K, m)`-super flow with the `A`, `B`, `γ` bound.
    FlowThm18,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyhVariant {
    #[default]
    StaticThm14,
    FlowThm19,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondOrderVariant {
    #[default]
    StaticHh3,
    FlowHhh,
}

fn one() -> f64 {
    1.0
}

/// The inequality a monitor checks, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    Lsi {
        k: f64,
    },
    Rlsi {
        k: f64,
    },
    LiYau {
        m: f64,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default)]
        k: f64,
        #[serde(default)]
        variant: LiYauVariant,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
    Hamilton {
        #[serde(default)]
        k: f64,
    },
    Lyh {
        m: f64,
        #[serde(default)]
        k: f64,
        #[serde(default)]
        variant: LyhVariant,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
    SecondOrder {
        m: f64,
        #[serde(default)]
        k: f64,
        #[serde(default)]
        variant: SecondOrderVariant,
        #[serde(default)]
        alpha: f64,
    },
    Cor1 {
        #[serde(default = "one")]
        delta: f64,
        #[serde(default)]
        k: f64,
    },
    Cor2 {
        m: f64,
        #[serde(default)]
        k: f64,
    },
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Lsi { .. } => "lsi",
            Check::Rlsi { .. } => "rlsi",
            Check::LiYau { .. } => "li_yau",
            Check::Hamilton { .. } => "hamilton",
            Check::Lyh { .. } => "lyh",
            Check::SecondOrder { .. } => "second_order",
            Check::Cor1 { .. } => "cor1",
            Check::Cor2 { .. } => "cor2",
        }
    }

    pub fn needs(&self) -> FieldSet {
        match self {
            Check::Lsi { .. } => FieldSet {
                entropy: true,
                fisher: true,
            },
            Check::Rlsi { .. } => FieldSet {
                entropy: true,
                fisher: false,
            },
            _ => FieldSet::default(),
        }
    }

    fn is_static_only(&self) -> bool {
        matches!(
            self,
            Check::LiYau {
                variant: LiYauVariant::StaticCd0m | LiYauVariant::StaticLyk,
                ..
            } | Check::Lyh {
                variant: LyhVariant::StaticThm14,
                ..
            } | Check::SecondOrder {
                variant: SecondOrderVariant::StaticHh3,
                ..
            } | Check::Cor2 { .. }
        )
    }

    fn validate(&self, n: usize) -> Result<()> {
        let finite_m = |m: f64| {
            if !(m.is_finite() && m >= n as f64) {
                return Err(Error::invalid(format!(
                    "dimension m = {m} must satisfy m >= n = {n}"
                )));
            }
            Ok(())
        };
        let nonneg_k = |k: f64| {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::invalid(format!("this check needs K >= 0, got {k}")));
            }
            Ok(())
        };
        match *self {
            Check::Lsi { k } | Check::Rlsi { k } => {
                if !k.is_finite() {
                    return Err(Error::invalid("K must be finite"));
                }
            }
            Check::LiYau {
                m,
                alpha,
                k,
                variant,
                gamma,
            } => {
                finite_m(m)?;
                nonneg_k(k)?;
                match variant {
                    LiYauVariant::StaticCd0m => {
                        if !(alpha >= 1.0) {
                            return Err(Error::invalid(format!(
                                "Li-Yau needs alpha >= 1, got {alpha}"
                            )));
                        }
                        if k != 0.0 {
                            return Err(Error::invalid("static_cd0m takes K = 0; use static_lyk"));
                        }
                    }
                    _ => {
                        if !(alpha > 1.0) {
                            return Err(Error::invalid(format!(
                                "{variant:?} needs alpha > 1, got {alpha}"
                            )));
                        }
                    }
                }
                if let Some(g) = gamma {
                    if !(g > 0.0) {
                        return Err(Error::invalid(format!("gamma must be positive, got {g}")));
                    }
                }
            }
            Check::Hamilton { k } => nonneg_k(k)?,
            Check::Lyh { m, k, gamma, .. } => {
                finite_m(m)?;
                nonneg_k(k)?;
                if let Some(g) = gamma {
                    if !(g > 0.0) {
                        return Err(Error::invalid(format!("gamma must be positive, got {g}")));
                    }
                }
            }
            Check::SecondOrder {
                m,
                k,
                variant,
                alpha,
            } => {
                finite_m(m)?;
                nonneg_k(k)?;
                if variant == SecondOrderVariant::FlowHhh {
                    if !(m > n as f64) {
                        return Err(Error::invalid(format!("flow_hhh needs m > n = {n}")));
                    }
                    if !(k > 0.0) {
                        return Err(Error::invalid("flow_hhh needs K > 0"));
                    }
                    if !(0.0..1.0).contains(&alpha) {
                        return Err(Error::invalid(format!(
                            "flow_hhh needs alpha in [0, 1), got {alpha}"
                        )));
                    }
                }
            }
            Check::Cor1 { delta, k } => {
                nonneg_k(k)?;
                if !(delta > 0.0) {
                    return Err(Error::invalid(format!(
                        "delta must be positive, got {delta}"
                    )));
                }
            }
            Check::Cor2 { m, k } => {
                finite_m(m)?;
                nonneg_k(k)?;
            }
        }
        Ok(())
    }

    /// The tensor condition the underlying theorem assumes, as
    /// `(condition, dimension, signed k)` for [`flow_condition_check`].
    fn premise(&self) -> (Condition, Dim, f64) {
        match *self {
            Check::Lsi { k }
            | Check::Rlsi { k }
            | Check::Hamilton { k }
            | Check::Cor1 { k, .. } => (Condition::SuperPerelman, Dim::Infinite, k),
            Check::LiYau {
                m,
                alpha,
                k,
                variant,
                ..
            } => match variant {
                LiYauVariant::StaticCd0m => (Condition::CurvatureDimension, Dim::Finite(m), 0.0),
                LiYauVariant::StaticLyk => (Condition::CurvatureDimension, Dim::Finite(m), 0.0 - k),
                LiYauVariant::FlowThm18 => (Condition::BackwardSuper { alpha }, Dim::Finite(m), k),
            },
            Check::Lyh { m, k, variant, .. } => match variant {
                LyhVariant::StaticThm14 => (Condition::CurvatureDimension, Dim::Finite(m), 0.0 - k),
                LyhVariant::FlowThm19 => (Condition::LyhFlow { alpha_k: 0.0 }, Dim::Finite(m), k),
            },
            Check::SecondOrder { m, k, variant, .. } => match variant {
                SecondOrderVariant::StaticHh3 => {
                    (Condition::CurvatureDimension, Dim::Finite(m), 0.0 - k)
                }
                SecondOrderVariant::FlowHhh => (Condition::SecondOrderFlow, Dim::Finite(m), k),
            },
            Check::Cor2 { m, k } => (Condition::CurvatureDimension, Dim::Finite(m), 0.0 - k),
        }
    }
}

/// A configured monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSpec {
    /// Column and report name; defaults to the check name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(flatten)]
    pub check: Check,
    /// The premise is known to fail; the monitor must detect a violation.
    #[serde(default)]
    pub negative_control: bool,
    /// Kernel-time window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Outermost radius checked; truncated models default to half the domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max_check: Option<f64>,
}

impl MonitorSpec {
    pub fn new(check: Check) -> Self {
        MonitorSpec {
            id: None,
            check,
            negative_control: false,
            t_min: None,
            t_max: None,
            r_max_check: None,
        }
    }

    pub fn label(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| self.check.name().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseVerdict {
    Verified,
    /// Falsified as intended by a negative control.
    Falsified,
    /// A negative control whose premise nevertheless holds.
    HoldsDespiteControl,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Premise {
    pub condition: &'static str,
    pub k: f64,
    pub verdict: PremiseVerdict,
    pub worst_margin: f64,
    pub worst_t: f64,
    pub worst_r: f64,
}

/// Checks the monitor's premise on the flow over `[0, horizon]`.
pub fn verify_premise(spec: &MonitorSpec, flow: &FlowSpec, horizon: f64) -> Result<Premise> {
    spec.check.validate(flow.model().n)?;
    if spec.check.is_static_only() && !flow.is_static() {
        return Err(Error::invalid(format!(
            "{} with this variant assumes a static metric; the flow is {}",
            spec.check.name(),
            flow.label()
        )));
    }
    let flow_m = match spec.check {
        Check::LiYau {
            m,
            variant: LiYauVariant::FlowThm18,
            ..
        }
        | Check::Lyh {
            m,
            variant: LyhVariant::FlowThm19,
            ..
        }
        | Check::SecondOrder {
            m,
            variant: SecondOrderVariant::FlowHhh,
            ..
        } => Some(m),
        _ => None,
    };
    if let Some(m) = flow_m {
        flow_constants(flow, m, horizon, SSignVariant::default())?;
    }
    let (condition, dim, k) = spec.check.premise();
    let times: Vec<f64> = if flow.is_static() && flow.potential().is_time_independent() {
        vec![0.0]
    } else {
        (0..PREMISE_TIMES)
            .map(|i| horizon * i as f64 / (PREMISE_TIMES - 1) as f64)
            .collect()
    };
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    for &t in &times {
        let c = flow_condition_check(flow, dim, k, t, condition, PREMISE_EPS)?;
        if c.worst_margin < worst.0 {
            worst = (c.worst_margin, t, c.worst_r);
        }
    }
    let holds = worst.0 >= -PREMISE_EPS;
    let verdict = match (holds, spec.negative_control) {
        (true, false) => PremiseVerdict::Verified,
        (false, true) => PremiseVerdict::Falsified,
        (true, true) => {
            warn!("negative control {} has a premise that holds", spec.label());
            PremiseVerdict::HoldsDespiteControl
        }
        (false, false) => {
            return Err(Error::invalid(format!(
                "premise {} (k = {k}) of monitor {} fails by {:.3e} at t = {}, r = {}; flag it as a negative control",
                condition.name(),
                spec.label(),
                -worst.0,
                worst.1,
                worst.2
            )))
        }
    };
    Ok(Premise {
        condition: condition.name(),
        k,
        verdict,
        worst_margin: worst.0,
        worst_t: worst.1,
        worst_r: worst.2,
    })
}

/// Worst margin at each frame; `NaN` outside the monitor's window.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorSeries {
    pub worst: Vec<f64>,
    pub worst_r: Vec<f64>,
}

impl MonitorSeries {
    /// Overall worst margin with its frame index.
    pub fn worst(&self) -> Option<(usize, f64)> {
        self.worst
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .fold(None, |acc, (i, &v)| match acc {
                Some((_, w)) if w <= v => acc,
                _ => Some((i, v)),
            })
    }
}

fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let g = |x: f64| f(x.exp());
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = g(d);
        }
    }
    let x = 0.5 * (a + b);
    (x.exp(), g(x))
}

/// `A² = max[|h|² + (Tr h)²/(m − n)]` and `B = max |S|` over the space-time
/// sample used for premise checks.
pub fn flow_constants(
    flow: &FlowSpec,
    m: f64,
    horizon: f64,
    variant: SSignVariant,
) -> Result<(f64, f64)> {
    let n = flow.model().n;
    let times: Vec<f64> = (0..PREMISE_TIMES)
        .map(|i| horizon * i as f64 / (PREMISE_TIMES - 1) as f64)
        .collect();
    let dim = Dim::Finite(m);
    match dim.inv_gap(n) {
        Some(inv) => {
            let a2 = times
                .iter()
                .map(|&t| flow.h_norm_sq(t) + flow.trace_h(t).powi(2) * inv)
                .fold(0.0, f64::max);
            let model = flow.model();
            let mut b: f64 = 0.0;
            for &t in &times {
                for i in 0..=200 {
                    let r = model.r_min + model.length() * i as f64 / 200.0;
                    b = b.max(s_tensor(flow, dim, r, t, variant)?.abs());
                }
            }
            Ok((a2, b))
        }
        None => {
            if flow.is_static() && flow.potential().is_spatially_constant() {
                Ok((0.0, 0.0))
            } else {
                Err(Error::invalid(format!(
                    "m = n = {n} leaves A and B undefined on this flow; use m > n"
                )))
            }
        }
    }
}

/// Inputs shared by all checks on one history.
pub struct Context<'a> {
    pub disc: &'a Discretization,
    pub history: &'a History,
    pub horizon: f64,
    pub s_sign: SSignVariant,
    pub seed: u64,
}

fn default_r_limit(disc: &Discretization) -> f64 {
    let m = disc.model();
    match m.kind {
        ModelKind::Euclidean | ModelKind::Hyperbolic => m.r_min + 0.5 * m.length(),
        _ => f64::INFINITY,
    }
}

fn node_mask(ctx: &Context, spec: &MonitorSpec) -> Vec<bool> {
    let limit = spec
        .r_max_check
        .unwrap_or_else(|| default_r_limit(ctx.disc));
    ctx.disc
        .away_from_poles(POLE_BAND)
        .into_iter()
        .zip(&ctx.disc.grid().r)
        .map(|(ok, &r)| ok && r <= limit + 1e-12)
        .collect()
}

fn in_window(spec: &MonitorSpec, f: &Frame) -> bool {
    f.s > 0.0
        && spec.t_min.map_or(true, |a| f.t >= a - 1e-12)
        && spec.t_max.map_or(true, |b| f.t <= b + 1e-12)
}

/// `|∇ log u|²` and `Lu/u` at a frame.
fn log_ratios(disc: &Discretization, f: &Frame) -> Result<(Vec<f64>, Vec<f64>)> {
    let logu: Vec<f64> = f.u.iter().map(|v| v.ln()).collect();
    let grad = disc.grad_sq(&logu, f.s);
    let lu = disc.assemble(f.s)?.apply(&f.u);
    let ratio = lu.iter().zip(&f.u).map(|(l, u)| l / u).collect();
    Ok((grad, ratio))
}

/// `1/t` continued to `2K/(1 − e^{−2Kt})`-type factors: `c/(1 − e^{−c t})`.
fn rate(c: f64, t: f64) -> f64 {
    if c == 0.0 {
        1.0 / t
    } else {
        c / (-(-c * t).exp_m1())
    }
}

fn distance(disc: &Discretization, s: f64, a: f64, b: f64) -> f64 {
    let model = disc.model();
    let mut d = (a - b).abs();
    if model.is_periodic() {
        d = d.min(model.length() - d);
    }
    disc.flow().scale(s).sqrt() * d
}

/// Evaluates a monitor over the history.
pub fn evaluate(ctx: &Context, spec: &MonitorSpec) -> Result<MonitorSeries> {
    let frames = &ctx.history.frames;
    let mask = node_mask(ctx, spec);
    let r = &ctx.disc.grid().r;
    let mut worst = vec![f64::NAN; frames.len()];
    let mut worst_r = vec![f64::NAN; frames.len()];
    let mut record = |j: usize, i: usize, margin: f64| {
        if margin.is_nan() {
            return;
        }
        if worst[j].is_nan() || margin < worst[j] {
            worst[j] = margin;
            worst_r[j] = r[i];
        }
    };
    let log_sup = ctx.history.sup.ln();
    match spec.check {
        Check::Cor1 { .. } | Check::Cor2 { .. } => {
            return evaluate_pairs(ctx, spec, &mask);
        }
        _ => {}
    }
    let bound_fn = pointwise_bound(ctx, &spec.check)?;
    for (j, f) in frames.iter().enumerate() {
        if !in_window(spec, f) {
            continue;
        }
        match spec.check {
            Check::Lsi { k } | Check::Rlsi { k } => {
                let q =
                    f.q.as_ref()
                        .ok_or_else(|| Error::invalid("entropy field was not co-evolved"))?;
                let v: Vec<f64> = f.u.iter().map(|u| u / ctx.history.mass0).collect();
                let deficit: Vec<f64> = q.iter().zip(&v).map(|(q, v)| q - v * v.ln()).collect();
                if matches!(spec.check, Check::Lsi { .. }) {
                    let g =
                        f.g.as_ref()
                            .ok_or_else(|| Error::invalid("fisher field was not co-evolved"))?;
                    let factor = if k == 0.0 {
                        f.s
                    } else {
                        (2.0 * k * f.s).exp_m1() / (2.0 * k)
                    };
                    for i in (0..v.len()).filter(|&i| mask[i]) {
                        record(j, i, factor * g[i] - deficit[i]);
                    }
                } else {
                    let grad = ctx.disc.grad_sq(&v, f.s);
                    let factor = rate(2.0 * k, f.s);
                    for i in (0..v.len()).filter(|&i| mask[i]) {
                        record(j, i, factor * deficit[i] - grad[i] / v[i]);
                    }
                }
            }
            _ => {
                let (grad, lu) = log_ratios(ctx.disc, f)?;
                for i in (0..f.u.len()).filter(|&i| mask[i]) {
                    let log_a_u = log_sup - f.u[i].ln();
                    record(j, i, bound_fn(f.t, grad[i], lu[i], log_a_u));
                }
            }
        }
    }
    Ok(MonitorSeries { worst, worst_r })
}

type PointMargin = Box<dyn Fn(f64, f64, f64, f64) -> f64>;

/// Margin as a function of `(t, |∇log u|², Lu/u, log(A/u))`.
fn pointwise_bound(ctx: &Context, check: &Check) -> Result<PointMargin> {
    let flow = ctx.disc.flow();
    let horizon_t = ctx.horizon + ctx.history.frames[0].t;
    Ok(match *check {
        Check::LiYau {
            m,
            alpha,
            k,
            variant,
            gamma,
        } => {
            let a2 = alpha * alpha;
            match variant {
                LiYauVariant::StaticCd0m => {
                    Box::new(move |t, g, lu, _| m * a2 / (2.0 * t) - (g - alpha * lu))
                }
                LiYauVariant::StaticLyk => {
                    let extra = m * a2 * k / (2f64.sqrt() * (alpha - 1.0));
                    Box::new(move |t, g, lu, _| m * a2 / (2.0 * t) + extra - (g - alpha * lu))
                }
                LiYauVariant::FlowThm18 => {
                    let (big_a2, b) = flow_constants(flow, m, ctx.horizon, ctx.s_sign)?;
                    let bracket = |gm: f64| {
                        (2.0 * k + gm).powi(2) / (alpha - 1.0).powi(2)
                            + if b > 0.0 { 2.0 * b * b / gm } else { 0.0 }
                    };
                    let inner = match gamma {
                        Some(gm) => bracket(gm),
                        None if b == 0.0 => bracket(0.0),
                        None => golden_min(bracket, 1e-8, 1e8).1,
                    };
                    let root = (1.0 + horizon_t.powi(2) / m * (4.0 * big_a2 + inner)).sqrt();
                    Box::new(move |t, g, lu, _| {
                        m * a2 / (4.0 * t) * (1.0 + root) - (g - alpha * lu)
                    })
                }
            }
        }
        Check::Hamilton { k } => Box::new(move |t, g, _, la| {
            let tight = rate(2.0 * k, t) * la - g;
            let linear = (1.0 / t + 2.0 * k) * la - g;
            tight.min(linear)
        }),
        Check::Lyh {
            m,
            k,
            variant,
            gamma,
        } => match variant {
            LyhVariant::StaticThm14 => Box::new(move |t, g, lu, _| {
                lu - (-2.0 * k * t).exp() * g + (2.0 * k * t).exp() * m / (2.0 * t)
            }),
            LyhVariant::FlowThm19 => {
                let root = lyh_flow_root(ctx, m, k, gamma)?;
                Box::new(move |t, g, lu, _| {
                    m * (4.0 * k * t).exp() / (2.0 * t) * (1.0 + root)
                        - (g - (2.0 * k * t).exp() * lu)
                })
            }
        },
        Check::SecondOrder {
            m,
            k,
            variant,
            alpha,
        } => match variant {
            SecondOrderVariant::StaticHh3 => {
                Box::new(move |t, g, lu, la| rate(k, t) * (m + 4.0 * la) - (lu + g))
            }
            SecondOrderVariant::FlowHhh => {
                let (hmax, b) = flow_constants(flow, m, ctx.horizon, ctx.s_sign)?;
                if b > 0.0 && alpha == 0.0 {
                    return Err(Error::invalid("flow_hhh with B > 0 needs alpha in (0, 1)"));
                }
                let c = if b > 0.0 {
                    (1.0 - alpha).powi(2) * b * b / (8.0 * alpha * k * k)
                } else {
                    0.0
                } + (1.0 - alpha) / (2.0 * k) * hmax;
                Box::new(move |t, g, lu, la| {
                    rate(k, t) / (1.0 - alpha) * (m + 4.0 * la + c * t) - (lu + g)
                })
            }
        },
        Check::Lsi { .. } | Check::Rlsi { .. } | Check::Cor1 { .. } | Check::Cor2 { .. } => {
            Box::new(|_, _, _, _| f64::NAN)
        }
    })
}

/// The square root in the flow LYH bound, with `α_K(t)` chosen as the
/// admissible value closest to `γ/2` and `γ` optimized unless fixed.
fn lyh_flow_root(ctx: &Context, m: f64, k: f64, gamma: Option<f64>) -> Result<f64> {
    let flow = ctx.disc.flow();
    let (a2, b) = flow_constants(flow, m, ctx.horizon, ctx.s_sign)?;
    let big_t = ctx.horizon + ctx.history.frames[0].t;
    let samples: Vec<(f64, f64)> = (1..PREMISE_TIMES)
        .map(|i| {
            let t = ctx.horizon * i as f64 / (PREMISE_TIMES - 1) as f64;
            flow_condition_check(
                flow,
                Dim::Finite(m),
                k,
                t,
                Condition::LyhFlow { alpha_k: 0.0 },
                0.0,
            )
            .map(|c| (t, c.worst_margin))
        })
        .collect::<Result<_>>()?;
    let alpha_term = |gm: f64| {
        samples
            .iter()
            .map(|&(t, mu)| {
                let num = (2.0 * mu.min(0.5 * gm) - gm).powi(2);
                if num == 0.0 {
                    return 0.0;
                }
                let den = 4.0 * (-4.0 * k * t).exp() * (-(-2.0 * k * t).exp_m1()).powi(2);
                t * t * num / den
            })
            .fold(0.0, f64::max)
    };
    let b_term = |gm: f64| {
        if b == 0.0 {
            return 0.0;
        }
        samples
            .iter()
            .map(|&(t, _)| t * t * (-4.0 * k * t).exp() * b * b / (2.0 * m * gm))
            .fold(0.0, f64::max)
    };
    let total = |gm: f64| a2 * big_t * big_t / m + alpha_term(gm) + b_term(gm);
    let inner = match gamma {
        Some(gm) => total(gm),
        None if b == 0.0 => total(0.0),
        None => golden_min(total, 1e-8, 1e8).1,
    };
    Ok(inner.sqrt())
}

fn evaluate_pairs(ctx: &Context, spec: &MonitorSpec, mask: &[bool]) -> Result<MonitorSeries> {
    let frames = &ctx.history.frames;
    let r = &ctx.disc.grid().r;
    let eligible: Vec<usize> = (0..r.len()).filter(|&i| mask[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut nodes: Vec<usize> = if eligible.len() <= PAIR_NODES {
        eligible.clone()
    } else {
        sample(&mut rng, eligible.len(), PAIR_NODES)
            .into_iter()
            .map(|i| eligible[i])
            .collect()
    };
    nodes.sort_unstable();
    let mut worst = vec![f64::NAN; frames.len()];
    let mut worst_r = vec![f64::NAN; frames.len()];
    let log_sup = ctx.history.sup.ln();
    let mut record = |j: usize, i: usize, margin: f64| {
        if worst[j].is_nan() || margin < worst[j] {
            worst[j] = margin;
            worst_r[j] = r[i];
        }
    };
    match spec.check {
        Check::Cor1 { delta, k } => {
            let w = (1.0 + 1.0 / delta) / (4.0 * (1.0 + delta));
            for (j, f) in frames
                .iter()
                .enumerate()
                .filter(|(_, f)| in_window(spec, f))
            {
                let factor = rate(2.0 * k, f.t);
                for &x in &nodes {
                    for &y in &nodes {
                        let d = distance(ctx.disc, f.s, r[x], r[y]);
                        let bound = f.u[y].ln() / (1.0 + delta)
                            + delta / (1.0 + delta) * log_sup
                            + w * factor * d * d;
                        record(j, x, bound - f.u[x].ln());
                    }
                }
            }
        }
        Check::Cor2 { m, k } => {
            for (jt, late) in frames
                .iter()
                .enumerate()
                .filter(|(_, f)| in_window(spec, f))
            {
                for early in frames[..jt].iter().filter(|f| in_window(spec, f)) {
                    let (tau, big_t) = (early.t, late.t);
                    let spread = if k == 0.0 {
                        1.0 / (4.0 * (big_t - tau))
                    } else {
                        k / (2.0 * ((-2.0 * k * tau).exp() - (-2.0 * k * big_t).exp()))
                    };
                    let drift = 0.5
                        * m
                        * ((big_t / tau).ln() + (2.0 * k * big_t).exp() - (2.0 * k * tau).exp());
                    for &x in &nodes {
                        for &y in &nodes {
                            let d = distance(ctx.disc, late.s, r[x], r[y]);
                            let bound = drift + late.u[y].ln() + spread * d * d;
                            record(jt, x, bound - early.u[x].ln());
                        }
                    }
                }
            }
        }
        _ => unreachable!("pair evaluation for a pointwise check"),
    }
    Ok(MonitorSeries { worst, worst_r })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Coefficient of `Δr²`.
    pub c1: f64,
    /// Coefficient of `Δt²`.
    pub c2: f64,
}

impl Tolerance {
    /// `τ = 2(C₁Δr² + C₂Δt²) + 10⁻¹²`.
    pub fn budget(&self, dr: f64, dt: f64) -> f64 {
        SAFETY * (self.c1 * dr * dr + self.c2 * dt * dt) + TOLERANCE_FLOOR
    }

    /// Richardson calibration from a quantity computed on the base grid and
    /// with `Δr` and `Δt` halved separately: for a second-order error
    /// `e(h) − e(h/2) = ¾ e(h)`.
    pub fn calibrate(base: &[f64], space: &[f64], time: &[f64], dr: f64, dt: f64) -> Tolerance {
        let spread = |other: &[f64]| {
            base.iter()
                .zip(other)
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        Tolerance {
            c1: 4.0 / 3.0 * spread(space) / (dr * dr),
            c2: 4.0 / 3.0 * spread(time) / (dt * dt),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    HoldsWithinTolerance,
    Violated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::HoldsWithinTolerance => "holds-within-tolerance",
            Verdict::Violated => "violated",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementVerdict {
    Persistent,
    /// The refined margin is within its tolerance or improved by at least 2×.
    Resolved,
}

/// Verdict before any refinement.
pub fn classify(worst: f64, tolerance: f64) -> Verdict {
    if worst >= 0.0 {
        Verdict::Holds
    } else if worst >= -tolerance {
        Verdict::HoldsWithinTolerance
    } else {
        Verdict::Violated
    }
}

/// Persistence of a violation under one simultaneous halving of `Δr`, `Δt`.
pub fn persistence(base: f64, refined: f64, refined_tolerance: f64) -> RefinementVerdict {
    if refined < -refined_tolerance && refined <= 0.5 * base {
        RefinementVerdict::Persistent
    } else {
        RefinementVerdict::Resolved
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Location {
    pub t: f64,
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ViolationReport {
    pub inequality: String,
    pub kind: &'static str,
    pub negative_control: bool,
    pub premise: Premise,
    pub worst_margin: f64,
    pub worst_location: Location,
    pub tolerance: f64,
    pub calibration: Tolerance,
    pub verdict: Verdict,
    pub refinement_verdict: Option<RefinementVerdict>,
}

impl ViolationReport {
    /// A violation that survived refinement, or was not refined.
    pub fn is_persistent_violation(&self) -> bool {
        self.verdict == Verdict::Violated
            && self.refinement_verdict != Some(RefinementVerdict::Resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{Coupling, FlowKind};
    use crate::geometry::{Potential, RadialModel};
    use crate::heatflow::{make_initial, InitialKind, Scheme};
    use approx::assert_relative_eq;

    fn static_disc(model: RadialModel, nodes: usize) -> Discretization {
        Discretization::new(
            FlowSpec::fixed(model, Potential::default(), 1.0).unwrap(),
            nodes,
        )
        .unwrap()
    }

    fn history(
        disc: &Discretization,
        kind: InitialKind,
        fields: FieldSet,
        horizon: f64,
    ) -> History {
        let s = make_initial(disc, kind).unwrap();
        let cfg = RunConfig {
            dt: 1e-3,
            horizon,
            scheme: Scheme::CrankNicolson,
            output_every: 50,
        };
        coevolve(disc, s.u, s.clock_offset, fields, &cfg).unwrap()
    }

    fn run_check(disc: &Discretization, h: &History, spec: &MonitorSpec) -> MonitorSeries {
        let ctx = Context {
            disc,
            history: h,
            horizon: 1.0,
            s_sign: SSignVariant::default(),
            seed: 0,
        };
        evaluate(&ctx, spec).unwrap()
    }

    #[test]
    fn constant_datum_is_an_equality_case() {
        let d = static_disc(RadialModel::sphere(2).unwrap(), 200);
        let h = history(
            &d,
            InitialKind::Uniform,
            FieldSet {
                entropy: true,
                fisher: true,
            },
            0.2,
        );
        for f in &h.frames {
            let q = f.q.as_ref().unwrap();
            let v = f.u[10] / h.mass0;
            assert_relative_eq!(q[10], v * v.ln(), epsilon = 1e-13);
        }
        for check in [
            Check::Lsi { k: -1.0 },
            Check::Rlsi { k: -1.0 },
            Check::Hamilton { k: 0.0 },
        ] {
            let s = run_check(&d, &h, &MonitorSpec::new(check));
            let (_, w) = s.worst().unwrap();
            assert!(w.abs() < 1e-10, "{w}");
        }
        let s = run_check(
            &d,
            &h,
            &MonitorSpec::new(Check::LiYau {
                m: 2.0,
                alpha: 1.0,
                k: 0.0,
                variant: LiYauVariant::StaticCd0m,
                gamma: None,
            }),
        );
        let last = *s.worst.last().unwrap();
        assert_relative_eq!(last, 2.0 / (2.0 * 0.2), epsilon = 1e-9);
    }

    #[test]
    fn coevolve_rejects_wide_range() {
        let d = static_disc(RadialModel::sphere(2).unwrap(), 200);
        let mut u0 = vec![1.0; 200];
        u0[5] = 1e-14;
        let cfg = RunConfig {
            dt: 1e-3,
            horizon: 0.01,
            scheme: Scheme::CrankNicolson,
            output_every: 1,
        };
        assert!(coevolve(
            &d,
            u0.clone(),
            0.0,
            FieldSet {
                entropy: true,
                fisher: true
            },
            &cfg
        )
        .is_err());
        assert!(coevolve(&d, u0, 0.0, FieldSet::default(), &cfg).is_ok());
    }

    #[test]
    fn premise_gating() {
        let h3 = FlowSpec::fixed(
            RadialModel::hyperbolic(3, 6.0).unwrap(),
            Potential::default(),
            1.0,
        )
        .unwrap();
        let mut spec = MonitorSpec::new(Check::Hamilton { k: 0.0 });
        assert!(verify_premise(&spec, &h3, 1.0).is_err());
        spec.negative_control = true;
        assert_eq!(
            verify_premise(&spec, &h3, 1.0).unwrap().verdict,
            PremiseVerdict::Falsified
        );
        let ok = MonitorSpec::new(Check::Hamilton { k: 2.0 });
        assert_eq!(
            verify_premise(&ok, &h3, 1.0).unwrap().verdict,
            PremiseVerdict::Verified
        );

        let moving = FlowSpec::new(
            FlowKind::Exponential { lambda: 0.5 },
            RadialModel::sphere(2).unwrap(),
            Potential::default(),
            Coupling::Independent,
            1.0,
        )
        .unwrap();
        let lyh = MonitorSpec::new(Check::Lyh {
            m: 2.0,
            k: 0.0,
            variant: LyhVariant::StaticThm14,
            gamma: None,
        });
        assert!(verify_premise(&lyh, &moving, 1.0).is_err());
        let bad_alpha = MonitorSpec::new(Check::LiYau {
            m: 2.0,
            alpha: 1.0,
            k: 0.0,
            variant: LiYauVariant::FlowThm18,
            gamma: None,
        });
        assert!(verify_premise(&bad_alpha, &moving, 1.0).is_err());
    }

    #[test]
    fn tolerance_and_verdicts() {
        let tol = Tolerance::calibrate(
            &[1.0, f64::NAN, 2.0],
            &[1.0 + 3e-4, 0.0, 2.0],
            &[1.0, 5.0, 2.0 - 6e-6],
            0.01,
            0.001,
        );
        assert_relative_eq!(tol.c1, 4.0, epsilon = 1e-9);
        assert_relative_eq!(tol.c2, 8.0, epsilon = 1e-9);
        let tau = tol.budget(0.01, 0.001);
        assert_relative_eq!(tau, 2.0 * (4e-4 + 8e-6) + 1e-12, epsilon = 1e-15);
        assert_eq!(classify(0.1, tau), Verdict::Holds);
        assert_eq!(classify(-1e-4, tau), Verdict::HoldsWithinTolerance);
        assert_eq!(classify(-1.0, tau), Verdict::Violated);
        assert_eq!(persistence(-1.0, -0.9, 0.01), RefinementVerdict::Persistent);
        assert_eq!(persistence(-1.0, -0.4, 0.01), RefinementVerdict::Resolved);
        assert_eq!(persistence(-1.0, -0.005, 0.01), RefinementVerdict::Resolved);
    }

    #[test]
    fn golden_section_finds_convex_minimum() {
        let (x, v) = golden_min(|g| (1.0 + g).powi(2) + 2.0 / g, 1e-8, 1e8);
        // derivative 2(1 + g) − 2/g² vanishes at g³ + g² − 1 = 0
        assert_relative_eq!(x * x * x + x * x, 1.0, epsilon = 1e-6);
        assert!(v < (1.0 + 1.0f64).powi(2) + 2.0);
    }

    #[test]
    fn spec_parses_flat_tables() {
        let spec: MonitorSpec = toml::from_str(
            "kind = \"li_yau\"\nm = 2.0\nalpha = 2.0\nvariant = \"static_cd0m\"\nnegative_control = true\n",
        )
        .unwrap();
        assert_eq!(spec.label(), "li_yau");
        assert!(spec.negative_control);
        assert!(matches!(spec.check, Check::LiYau { alpha, .. } if alpha == 2.0));
    }
}
