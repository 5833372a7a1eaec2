//! Rotationally symmetric model manifolds, potentials and the curvature
//! tensors evaluated on them.
//!
//! A model is the warped product `dr² + ψ(r)² g_{S^{n-1}}` on a radial
//! interval. All tensor eigenvalues returned here are measured against the
//! current metric `g(t) = c(t) g₀` supplied by a [`FlowSpec`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::FlowSpec;

/// Default outer radius of the truncated hyperbolic model.
pub const HYPERBOLIC_DEFAULT_RMAX: f64 = 6.0;

/// Number of uniformly spaced radii used by [`flow_condition_check`].
pub const CONDITION_SAMPLES: usize = 401;

const POLE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Euclidean,
    Sphere,
    Hyperbolic,
    Circle,
    Interval,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Euclidean,
        ModelKind::Sphere,
        ModelKind::Hyperbolic,
        ModelKind::Circle,
        ModelKind::Interval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Euclidean => "euclidean",
            ModelKind::Sphere => "sphere",
            ModelKind::Hyperbolic => "hyperbolic",
            ModelKind::Circle => "circle",
            ModelKind::Interval => "interval",
        }
    }

    /// Constant sectional curvature of the warp (0 for the flat 1-D kinds).
    fn sectional(self) -> f64 {
        match self {
            ModelKind::Sphere => 1.0,
            ModelKind::Hyperbolic => -1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    PoleRegular,
    Reflecting,
    Periodic,
}

/// Warp value and its first two derivatives at a radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warp {
    pub psi: f64,
    pub dpsi: f64,
    pub d2psi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadialModel {
    pub kind: ModelKind,
    pub n: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub left: Boundary,
    pub right: Boundary,
}

impl RadialModel {
    /// Builds a model of the given kind. `r_max` is the outer radius for
    /// euclidean/hyperbolic, the length for circle/interval, and must be
    /// `None` or `π` for the sphere.
    pub fn new(kind: ModelKind, n: usize, r_max: Option<f64>) -> Result<Self> {
        match kind {
            ModelKind::Euclidean => {
                let r_max = r_max
                    .ok_or_else(|| Error::invalid("euclidean model needs an explicit r_max"))?;
                Self::euclidean(n, r_max)
            }
            ModelKind::Sphere => {
                if let Some(r) = r_max {
                    if (r - PI).abs() > 1e-12 {
                        return Err(Error::invalid(format!(
                            "sphere domain is [0, pi]; got r_max = {r}"
                        )));
                    }
                }
                Self::sphere(n)
            }
            ModelKind::Hyperbolic => Self::hyperbolic(n, r_max.unwrap_or(HYPERBOLIC_DEFAULT_RMAX)),
            ModelKind::Circle => {
                require_one_dim(kind, n)?;
                Self::circle(r_max.unwrap_or(2.0 * PI))
            }
            ModelKind::Interval => {
                require_one_dim(kind, n)?;
                Self::interval(r_max.unwrap_or(PI))
            }
        }
    }

    pub fn euclidean(n: usize, r_max: f64) -> Result<Self> {
        require_multi_dim(ModelKind::Euclidean, n)?;
        require_length(r_max)?;
        Ok(Self {
            kind: ModelKind::Euclidean,
            n,
            r_min: 0.0,
            r_max,
            left: Boundary::PoleRegular,
            right: Boundary::Reflecting,
        })
    }

    pub fn sphere(n: usize) -> Result<Self> {
        require_multi_dim(ModelKind::Sphere, n)?;
        Ok(Self {
            kind: ModelKind::Sphere,
            n,
            r_min: 0.0,
            r_max: PI,
            left: Boundary::PoleRegular,
            right: Boundary::PoleRegular,
        })
    }

    pub fn hyperbolic(n: usize, r_max: f64) -> Result<Self> {
        require_multi_dim(ModelKind::Hyperbolic, n)?;
        require_length(r_max)?;
        Ok(Self {
            kind: ModelKind::Hyperbolic,
            n,
            r_min: 0.0,
            r_max,
            left: Boundary::PoleRegular,
            right: Boundary::Reflecting,
        })
    }

    pub fn circle(length: f64) -> Result<Self> {
        require_length(length)?;
        Ok(Self {
            kind: ModelKind::Circle,
            n: 1,
            r_min: 0.0,
            r_max: length,
            left: Boundary::Periodic,
            right: Boundary::Periodic,
        })
    }

    pub fn interval(length: f64) -> Result<Self> {
        require_length(length)?;
        Ok(Self {
            kind: ModelKind::Interval,
            n: 1,
            r_min: 0.0,
            r_max: length,
            left: Boundary::Reflecting,
            right: Boundary::Reflecting,
        })
    }

    pub fn length(&self) -> f64 {
        self.r_max - self.r_min
    }

    pub fn is_periodic(&self) -> bool {
        self.left == Boundary::Periodic
    }

    pub fn warp(&self, r: f64) -> Warp {
        match self.kind {
            ModelKind::Euclidean => Warp {
                psi: r,
                dpsi: 1.0,
                d2psi: 0.0,
            },
            ModelKind::Sphere => {
                let (s, c) = r.sin_cos();
                Warp {
                    psi: s,
                    dpsi: c,
                    d2psi: -s,
                }
            }
            ModelKind::Hyperbolic => Warp {
                psi: r.sinh(),
                dpsi: r.cosh(),
                d2psi: r.sinh(),
            },
            ModelKind::Circle | ModelKind::Interval => Warp {
                psi: 1.0,
                dpsi: 0.0,
                d2psi: 0.0,
            },
        }
    }

    /// Volume of the unit `S^{n-1}`; 1 for one-dimensional models.
    pub fn sphere_area(&self) -> f64 {
        unit_sphere_area(self.n)
    }

    /// True when `r` sits on a pole-regular endpoint.
    pub fn is_pole(&self, r: f64) -> bool {
        (self.left == Boundary::PoleRegular && (r - self.r_min).abs() < POLE_EPS)
            || (self.right == Boundary::PoleRegular && (r - self.r_max).abs() < POLE_EPS)
    }

    pub fn contains(&self, r: f64) -> bool {
        r.is_finite() && r >= self.r_min - POLE_EPS && r <= self.r_max + POLE_EPS
    }

    /// `ψ′/ψ` with the regular limit `±∞·0` resolved by the caller; at a pole
    /// this returns `None`.
    pub fn log_warp_slope(&self, r: f64) -> Option<f64> {
        if self.n == 1 {
            return Some(0.0);
        }
        if self.is_pole(r) {
            return None;
        }
        let w = self.warp(r);
        Some(w.dpsi / w.psi)
    }

    /// Ricci eigenvalues of `g₀` (radial, tangential), including pole limits.
    fn ricci_any(&self, r: f64) -> Result<(f64, f64)> {
        if self.n == 1 {
            return Ok((0.0, 0.0));
        }
        let nm1 = (self.n - 1) as f64;
        if self.is_pole(r) {
            let k = self.kind.sectional();
            return Ok((nm1 * k, nm1 * k));
        }
        let w = self.warp(r);
        if !(w.psi > 0.0) {
            return Err(Error::Degenerate(format!(
                "warp psi({r}) = {} is not positive",
                w.psi
            )));
        }
        let rr = -nm1 * w.d2psi / w.psi;
        let tan = -w.d2psi / w.psi + (nm1 - 1.0) * (1.0 - w.dpsi * w.dpsi) / (w.psi * w.psi);
        Ok((rr, tan))
    }
}

fn require_one_dim(kind: ModelKind, n: usize) -> Result<()> {
    if n != 1 {
        return Err(Error::invalid(format!(
            "{kind} model has n = 1, got n = {n}"
        )));
    }
    Ok(())
}

fn require_multi_dim(kind: ModelKind, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "{kind} model needs n >= 2, got n = {n}"
        )));
    }
    Ok(())
}

fn require_length(len: f64) -> Result<()> {
    if !(len.is_finite() && len > 0.0) {
        return Err(Error::invalid(format!(
            "domain length must be positive, got {len}"
        )));
    }
    Ok(())
}

/// `|S^{n-1}| = 2π^{n/2} / Γ(n/2)`, with the convention 1 for `n = 1`.
pub fn unit_sphere_area(n: usize) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / half_integer_gamma(n)
}

/// `Γ(k/2)` for positive integer `k`.
fn half_integer_gamma(k: usize) -> f64 {
    let (mut g, mut x) = if k % 2 == 0 {
        (1.0, 1.0)
    } else {
        (PI.sqrt(), 0.5)
    };
    let target = k as f64 / 2.0;
    while x < target - 0.25 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Ricci eigenvalues of the warped metric at an interior radius.
/// One-dimensional models return `(0, 0)`.
pub fn ricci_radial(model: &RadialModel, r: f64) -> Result<(f64, f64)> {
    let interior = if model.is_periodic() {
        r.is_finite() && r >= model.r_min && r < model.r_max
    } else {
        r > model.r_min && r < model.r_max
    };
    if !interior {
        return Err(Error::invalid(format!(
            "radius {r} outside the open domain ({}, {})",
            model.r_min, model.r_max
        )));
    }
    model.ricci_any(r)
}

/// Value and first derivatives of a potential at `(r, t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PotentialJet {
    pub value: f64,
    pub dr: f64,
    pub drr: f64,
    pub dt: f64,
    pub drt: f64,
}

pub type PotentialFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Potential `φ(r, t)`.
///
/// Presets carry closed-form derivatives. `Custom` closures are
/// differentiated by fourth-order central differences with step `h`:
/// truncation error is about `h⁴·|φ⁽⁵⁾|/30` for first and `h⁴·|φ⁽⁶⁾|/90`
/// for second derivatives, plus rounding of order `ε|φ|/h` and `ε|φ|/h²`.
/// The closure must accept arguments up to `2h` outside the domain and the
/// time window (extend radial profiles evenly).
#[derive(Clone)]
pub enum Potential {
    Constant(f64),
    /// `a r² / 2`
    Quadratic(f64),
    /// `a cos r`
    Cosine(f64),
    Custom {
        f: PotentialFn,
        h: f64,
    },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Constant(a) => write!(f, "Constant({a})"),
            Potential::Quadratic(a) => write!(f, "Quadratic({a})"),
            Potential::Cosine(a) => write!(f, "Cosine({a})"),
            Potential::Custom { h, .. } => write!(f, "Custom {{ h: {h} }}"),
        }
    }
}

impl Default for Potential {
    fn default() -> Self {
        Potential::Constant(0.0)
    }
}

impl Potential {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, h: f64) -> Self {
        Potential::Custom { f: Arc::new(f), h }
    }

    pub fn is_spatially_constant(&self) -> bool {
        match self {
            Potential::Constant(_) => true,
            Potential::Quadratic(a) | Potential::Cosine(a) => *a == 0.0,
            Potential::Custom { .. } => false,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        !matches!(self, Potential::Custom { .. })
    }

    pub fn value(&self, r: f64, t: f64) -> f64 {
        match self {
            Potential::Constant(a) => *a,
            Potential::Quadratic(a) => 0.5 * a * r * r,
            Potential::Cosine(a) => a * r.cos(),
            Potential::Custom { f, .. } => f(r, t),
        }
    }

    pub fn jet(&self, r: f64, t: f64) -> PotentialJet {
        match self {
            Potential::Constant(a) => PotentialJet {
                value: *a,
                ..Default::default()
            },
            Potential::Quadratic(a) => PotentialJet {
                value: 0.5 * a * r * r,
                dr: a * r,
                drr: *a,
                ..Default::default()
            },
            Potential::Cosine(a) => {
                let (s, c) = r.sin_cos();
                PotentialJet {
                    value: a * c,
                    dr: -a * s,
                    drr: -a * c,
                    ..Default::default()
                }
            }
            Potential::Custom { f, h } => {
                let h = *h;
                let d1 = |g: &dyn Fn(f64) -> f64, x: f64| {
                    (-g(x + 2.0 * h) + 8.0 * g(x + h) - 8.0 * g(x - h) + g(x - 2.0 * h))
                        / (12.0 * h)
                };
                let fr = |x: f64| f(x, t);
                let ft = |s: f64| f(r, s);
                let drr = (-fr(r + 2.0 * h) + 16.0 * fr(r + h) - 30.0 * fr(r) + 16.0 * fr(r - h)
                    - fr(r - 2.0 * h))
                    / (12.0 * h * h);
                let dr_at = |s: f64| d1(&|x: f64| f(x, s), r);
                PotentialJet {
                    value: f(r, t),
                    dr: d1(&fr, r),
                    drr,
                    dt: d1(&ft, t),
                    drt: d1(&dr_at, t),
                }
            }
        }
    }
}

/// Dimension parameter `m ∈ [n, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dim {
    Finite(f64),
    Infinite,
}

impl Dim {
    /// `1/(m − n)`, zero for `m = ∞`, `None` when `m = n`.
    pub fn inv_gap(self, n: usize) -> Option<f64> {
        match self {
            Dim::Infinite => Some(0.0),
            Dim::Finite(m) => {
                let gap = m - n as f64;
                (gap > 0.0).then(|| 1.0 / gap)
            }
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Dim::Finite(m) => m,
            Dim::Infinite => f64::INFINITY,
        }
    }

    /// Checks `m ≥ n`, and `m = n` only for spatially constant potentials.
    pub fn validate(self, n: usize, potential: &Potential) -> Result<()> {
        if let Dim::Finite(m) = self {
            if !m.is_finite() || m < n as f64 {
                return Err(Error::invalid(format!(
                    "dimension m = {m} must satisfy m >= n = {n}"
                )));
            }
            if m == n as f64 && !potential.is_spatially_constant() {
                return Err(Error::invalid(format!(
                    "m = n = {n} requires a constant potential"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Finite(m) => write!(f, "{m}"),
            Dim::Infinite => f.write_str("inf"),
        }
    }
}

/// Radial and tangential eigenvalues of a rotationally symmetric tensor.
/// `tangential` is absent for one-dimensional models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigen {
    pub radial: f64,
    pub tangential: Option<f64>,
}

impl Eigen {
    fn new(radial: f64, tangential: f64, n: usize) -> Self {
        Eigen {
            radial,
            tangential: (n > 1).then_some(tangential),
        }
    }

    fn min(&self) -> (f64, bool) {
        match self.tangential {
            Some(t) if t < self.radial => (t, false),
            _ => (self.radial, true),
        }
    }

    fn combine(&self, other: &Eigen, f: impl Fn(f64, f64) -> f64) -> Eigen {
        Eigen {
            radial: f(self.radial, other.radial),
            tangential: match (self.tangential, other.tangential) {
                (Some(a), Some(b)) => Some(f(a, b)),
                _ => None,
            },
        }
    }
}

/// Curvature and flow tensors at `(r, t)`, in units of `g(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureSample {
    pub r: f64,
    pub t: f64,
    pub ric: Eigen,
    pub hess_phi: Eigen,
    pub ric_l: Eigen,
    pub ric_mn: Eigen,
    pub h: Eigen,
    pub tr_h: f64,
}

/// Bakry-Émery tensors `Ric(L) = Ric + ∇²φ` and
/// `Ric_{m,n}(L) = Ric(L) − ∇φ⊗∇φ/(m − n)`.
pub fn bakry_emery(flow: &FlowSpec, m: Dim, r: f64, t: f64) -> Result<CurvatureSample> {
    let model = flow.model();
    m.validate(model.n, flow.potential())?;
    if !model.contains(r) {
        return Err(Error::invalid(format!(
            "radius {r} outside [{}, {}]",
            model.r_min, model.r_max
        )));
    }
    let n = model.n;
    let c = flow.scale(t);
    let (ric_rr, ric_tan) = model.ricci_any(r)?;
    let jet = flow.potential().jet(r, t);
    let hess_tan = match model.log_warp_slope(r) {
        Some(s) => s * jet.dr,
        None => jet.drr,
    };
    let ric = Eigen::new(ric_rr / c, ric_tan / c, n);
    let hess_phi = Eigen::new(jet.drr / c, hess_tan / c, n);
    let ric_l = ric.combine(&hess_phi, |a, b| a + b);
    let inv_gap = m.inv_gap(n).unwrap_or(0.0);
    let ric_mn = Eigen {
        radial: ric_l.radial - jet.dr * jet.dr * inv_gap / c,
        tangential: ric_l.tangential,
    };
    let hf = flow.h_factor(t);
    Ok(CurvatureSample {
        r,
        t,
        ric,
        hess_phi,
        ric_l,
        ric_mn,
        h: Eigen::new(hf, hf, n),
        tr_h: n as f64 * hf,
    })
}

/// Sign convention for the `∇Tr h` and `∇∂_tφ` terms of `S`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SSignVariant {
    /// `−⟨2 div h − ∇Tr h + ∇∂_tφ, ·⟩`, as produced by the commutator `[∂_t, L]`.
    #[default]
    Commutator,
    /// `⟨−2 div h − ∇Tr h + ∇∂_tφ, ·⟩`, the alternate displayed form.
    Display,
}

/// Radial component of `S` on the `g(t)`-unit radial vector.
pub fn s_tensor(flow: &FlowSpec, m: Dim, r: f64, t: f64, variant: SSignVariant) -> Result<f64> {
    let n = flow.model().n;
    let inv_gap = m
        .inv_gap(n)
        .ok_or_else(|| Error::invalid(format!("S needs m > n = {n}, got m = {m}")))?;
    if !flow.model().contains(r) {
        return Err(Error::invalid(format!(
            "radius {r} outside the model domain"
        )));
    }
    let c = flow.scale(t);
    let hf = flow.h_factor(t);
    let jet = flow.potential().jet(r, t);
    // homotheties: div h = 0 and ∇Tr h = 0; the coupling term is spatially constant
    let grad_phi_t = jet.drt;
    let drift = match variant {
        SSignVariant::Commutator => -grad_phi_t,
        SSignVariant::Display => grad_phi_t,
    };
    let tr_h = n as f64 * hf;
    Ok((2.0 * hf * jet.dr + drift + 2.0 * tr_h * inv_gap * jet.dr) / c.sqrt())
}

/// Tensor inequalities checked eigenvalue-wise against `k·g` with signed `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    /// `Ric_{m,n}(L) ≥ k g`
    CurvatureDimension,
    /// `h + Ric(L) ≥ −k g`
    SuperPerelman,
    /// `(1 − α) h + Ric_{m,n}(L) ≥ −k g`
    BackwardSuper { alpha: f64 },
    /// `e^{−4kt}(h + Ric_{m,n}(L) + k g) − e^{−2kt} h ≥ α_K g`
    LyhFlow { alpha_k: f64 },
    /// `2h + Ric_{m,n}(L) ≥ −k g`
    SecondOrderFlow,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::CurvatureDimension => "curvature_dimension",
            Condition::SuperPerelman => "super_perelman",
            Condition::BackwardSuper { .. } => "backward_super",
            Condition::LyhFlow { .. } => "lyh_flow",
            Condition::SecondOrderFlow => "second_order_flow",
        }
    }

    /// Smallest eigenvalue of `LHS − RHS` at one sample.
    fn margin(&self, s: &CurvatureSample, k: f64) -> (f64, bool) {
        let t = s.t;
        let shifted = match *self {
            Condition::CurvatureDimension => s.ric_mn.combine(&s.ric_mn, |a, _| a - k),
            Condition::SuperPerelman => s.h.combine(&s.ric_l, |h, r| h + r + k),
            Condition::BackwardSuper { alpha } => {
                s.h.combine(&s.ric_mn, |h, r| (1.0 - alpha) * h + r + k)
            }
            Condition::LyhFlow { alpha_k } => s.h.combine(&s.ric_mn, |h, r| {
                (-4.0 * k * t).exp() * (h + r + k) - (-2.0 * k * t).exp() * h - alpha_k
            }),
            Condition::SecondOrderFlow => s.h.combine(&s.ric_mn, |h, r| 2.0 * h + r + k),
        };
        shifted.min()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub worst_margin: f64,
    pub worst_r: f64,
    /// Whether the worst eigen-direction was the radial one.
    pub radial: bool,
}

/// Evaluates `condition` on [`CONDITION_SAMPLES`] uniform radii at time `t`.
pub fn flow_condition_check(
    flow: &FlowSpec,
    m: Dim,
    k: f64,
    t: f64,
    condition: Condition,
    eps: f64,
) -> Result<ConditionCheck> {
    let model = flow.model();
    let count = if model.is_periodic() {
        CONDITION_SAMPLES - 1
    } else {
        CONDITION_SAMPLES
    };
    let dr = model.length() / (CONDITION_SAMPLES - 1) as f64;
    let mut worst = ConditionCheck {
        holds: true,
        worst_margin: f64::INFINITY,
        worst_r: model.r_min,
        radial: true,
    };
    for i in 0..count {
        let r = if i + 1 == CONDITION_SAMPLES {
            model.r_max
        } else {
            model.r_min + i as f64 * dr
        };
        let sample = bakry_emery(flow, m, r, t)?;
        let (margin, radial) = condition.margin(&sample, k);
        if margin < worst.worst_margin {
            worst.worst_margin = margin;
            worst.worst_r = r;
            worst.radial = radial;
        }
    }
    worst.holds = worst.worst_margin >= -eps;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{Coupling, FlowKind, FlowSpec};
    use approx::assert_relative_eq;

    fn static_flow(model: RadialModel, phi: Potential) -> FlowSpec {
        FlowSpec::new(FlowKind::Static, model, phi, Coupling::Independent, 1.0).unwrap()
    }

    #[test]
    fn ricci_of_space_forms() {
        let s2 = RadialModel::sphere(2).unwrap();
        let (a, b) = ricci_radial(&s2, PI / 2.0).unwrap();
        assert_relative_eq!(a, 1.0, epsilon = 1e-15);
        assert_relative_eq!(b, 1.0, epsilon = 1e-15);

        let r3 = RadialModel::euclidean(3, 5.0).unwrap();
        assert_eq!(ricci_radial(&r3, 1.0).unwrap(), (0.0, 0.0));

        let h3 = RadialModel::hyperbolic(3, 6.0).unwrap();
        let (a, b) = ricci_radial(&h3, 1.0).unwrap();
        assert_relative_eq!(a, -2.0, epsilon = 1e-13);
        assert_relative_eq!(b, -2.0, epsilon = 1e-13);
    }

    #[test]
    fn ricci_rejects_endpoints() {
        let s2 = RadialModel::sphere(2).unwrap();
        assert!(matches!(
            ricci_radial(&s2, 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            ricci_radial(&s2, 4.0),
            Err(Error::InvalidInput(_))
        ));
        let circle = RadialModel::circle(2.0 * PI).unwrap();
        assert_eq!(ricci_radial(&circle, 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(unit_sphere_area(2), 2.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(3), 4.0 * PI, epsilon = 1e-14);
        assert_relative_eq!(unit_sphere_area(4), 2.0 * PI * PI, epsilon = 1e-13);
        assert_relative_eq!(unit_sphere_area(5), 8.0 * PI * PI / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn bakry_emery_examples() {
        let r2 = RadialModel::euclidean(2, 5.0).unwrap();
        let flow = static_flow(r2, Potential::Quadratic(1.0));
        let s = bakry_emery(&flow, Dim::Finite(4.0), 1.0, 0.0).unwrap();
        assert_relative_eq!(s.ric_mn.radial, 0.5, epsilon = 1e-15);

        let flow = static_flow(RadialModel::sphere(2).unwrap(), Potential::default());
        for r in [0.0, 0.3, 1.7, PI] {
            let s = bakry_emery(&flow, Dim::Finite(2.0), r, 0.0).unwrap();
            assert_relative_eq!(s.ric_mn.radial, 1.0, epsilon = 1e-14);
        }

        let flow = static_flow(
            RadialModel::hyperbolic(3, 6.0).unwrap(),
            Potential::default(),
        );
        let s = bakry_emery(&flow, Dim::Infinite, 1.0, 0.0).unwrap();
        assert_relative_eq!(s.ric_l.radial, -2.0, epsilon = 1e-13);
    }

    #[test]
    fn bakry_emery_rejects_bad_dimension() {
        let flow = static_flow(
            RadialModel::euclidean(2, 5.0).unwrap(),
            Potential::Quadratic(1.0),
        );
        assert!(bakry_emery(&flow, Dim::Finite(1.5), 1.0, 0.0).is_err());
        assert!(bakry_emery(&flow, Dim::Finite(2.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn pole_hessian_uses_limit() {
        let flow = static_flow(
            RadialModel::euclidean(2, 5.0).unwrap(),
            Potential::Quadratic(3.0),
        );
        let s = bakry_emery(&flow, Dim::Infinite, 0.0, 0.0).unwrap();
        assert_eq!(s.hess_phi.tangential, Some(3.0));
        let flow = static_flow(RadialModel::sphere(3).unwrap(), Potential::Cosine(0.5));
        let s = bakry_emery(&flow, Dim::Infinite, PI, 0.0).unwrap();
        assert_relative_eq!(s.hess_phi.tangential.unwrap(), 0.5, epsilon = 1e-12);
        let near = bakry_emery(&flow, Dim::Infinite, PI - 1e-6, 0.0).unwrap();
        assert_relative_eq!(near.hess_phi.tangential.unwrap(), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn one_dimensional_has_no_tangential() {
        let flow = static_flow(
            RadialModel::circle(2.0 * PI).unwrap(),
            Potential::Cosine(1.0),
        );
        let s = bakry_emery(&flow, Dim::Infinite, 0.0, 0.0).unwrap();
        assert!(s.ric.tangential.is_none());
        assert_relative_eq!(s.ric_l.radial, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn s_tensor_examples() {
        let r2 = RadialModel::euclidean(2, 5.0).unwrap();
        let flow = FlowSpec::new(
            FlowKind::Exponential { lambda: 1.0 },
            r2.clone(),
            Potential::Quadratic(1.0),
            Coupling::Independent,
            1.0,
        )
        .unwrap();
        let s = s_tensor(&flow, Dim::Finite(4.0), 1.0, 0.0, SSignVariant::Commutator).unwrap();
        assert_relative_eq!(s, 4.0, epsilon = 1e-14);

        let stat = static_flow(r2.clone(), Potential::Quadratic(1.0));
        for r in [0.0, 0.5, 2.0] {
            assert_eq!(
                s_tensor(&stat, Dim::Finite(3.0), r, 0.3, SSignVariant::Commutator).unwrap(),
                0.0
            );
        }
        let flat = FlowSpec::new(
            FlowKind::Exponential { lambda: 0.7 },
            r2,
            Potential::Constant(2.0),
            Coupling::MeasurePreserving,
            1.0,
        )
        .unwrap();
        assert_eq!(
            s_tensor(&flat, Dim::Finite(3.0), 1.0, 0.4, SSignVariant::Display).unwrap(),
            0.0
        );
        assert!(s_tensor(&flat, Dim::Finite(2.0), 1.0, 0.4, SSignVariant::Display).is_err());
    }

    #[test]
    fn s_tensor_sign_variants_differ_by_time_gradient() {
        let model = RadialModel::euclidean(2, 5.0).unwrap();
        let phi = Potential::custom(|r, t| 0.5 * r * r * (1.0 + t), 1e-3);
        let flow = static_flow(model, phi);
        let a = s_tensor(&flow, Dim::Infinite, 1.0, 0.2, SSignVariant::Commutator).unwrap();
        let b = s_tensor(&flow, Dim::Infinite, 1.0, 0.2, SSignVariant::Display).unwrap();
        assert_relative_eq!(a, -1.0, epsilon = 1e-9);
        assert_relative_eq!(b, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn condition_examples() {
        let sph = RadialModel::sphere(2).unwrap();
        let flow = FlowSpec::new(
            FlowKind::ShrinkingSphere,
            sph,
            Potential::default(),
            Coupling::MeasurePreserving,
            0.2,
        )
        .unwrap();
        let chk = flow_condition_check(
            &flow,
            Dim::Finite(2.0),
            0.0,
            0.1,
            Condition::SuperPerelman,
            1e-12,
        )
        .unwrap();
        assert!(chk.holds);
        assert!(chk.worst_margin.abs() < 1e-14);

        let flat = static_flow(
            RadialModel::euclidean(2, 4.0).unwrap(),
            Potential::default(),
        );
        for m in [2.0, 3.0, 10.0] {
            let chk = flow_condition_check(
                &flat,
                Dim::Finite(m),
                0.0,
                0.0,
                Condition::CurvatureDimension,
                0.0,
            )
            .unwrap();
            assert!(chk.holds);
            assert_eq!(chk.worst_margin, 0.0);
        }

        let hyp = static_flow(
            RadialModel::hyperbolic(3, 6.0).unwrap(),
            Potential::default(),
        );
        let chk = flow_condition_check(
            &hyp,
            Dim::Infinite,
            -1.9,
            0.0,
            Condition::CurvatureDimension,
            1e-9,
        )
        .unwrap();
        assert!(!chk.holds);
        assert_relative_eq!(chk.worst_margin, -0.1, epsilon = 1e-12);
    }

    #[test]
    fn custom_potential_matches_closed_form() {
        let exact = Potential::Cosine(0.7);
        let fd = Potential::custom(|r, _| 0.7 * r.cos(), 2e-3);
        for r in [0.2, 1.0, 2.5] {
            let a = exact.jet(r, 0.3);
            let b = fd.jet(r, 0.3);
            assert_relative_eq!(a.dr, b.dr, epsilon = 1e-11);
            assert_relative_eq!(a.drr, b.drr, epsilon = 1e-9);
            assert!(b.dt.abs() < 1e-12 && b.drt.abs() < 1e-10);
        }
    }
}
