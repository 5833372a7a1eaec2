//! Entropy functionals, their W-entropies and the dissipation formulas.
//!
//! All integrals are node quadratures against the measure weights carried by
//! the state. Time-only gauge terms are handled in closed form so that
//! finite differences only ever act on state-dependent quantities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discretize::{quadrature, Discretization};
use crate::error::{Error, Result};
use crate::flows::Coupling;
use crate::geometry::Dim;
use crate::heatflow::HeatState;
use crate::quadrature::adaptive_simpson;

/// `H(u) = −∫ u log u dμ`.
pub fn boltzmann_entropy(state: &HeatState) -> f64 {
    -state
        .u
        .iter()
        .zip(&state.weights)
        .map(|(u, w)| w * u * u.ln())
        .sum::<f64>()
}

/// `∫ |∇ log u|² u dμ` through the discrete Dirichlet form
/// `Σ κ Δu Δlog u`, the exact counterpart of `−∫ L u · log u dμ`.
pub fn fisher(disc: &Discretization, state: &HeatState) -> Result<f64> {
    let op = disc.assemble(state.t)?;
    let logu: Vec<f64> = state.u.iter().map(|v| v.ln()).collect();
    Ok(op.dirichlet(&state.u, &logu))
}

/// `∫ |∇u|²/u dμ` from pointwise gradients.
pub fn fisher_pointwise(disc: &Discretization, state: &HeatState) -> f64 {
    let g = disc.grad_sq(&state.u, state.t);
    let v: Vec<f64> = g.iter().zip(&state.u).map(|(g, u)| g / u).collect();
    quadrature(&v, &state.weights)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipationMode {
    /// `dH_m/dt = ∫(|∇log u|² − m/2t) u dμ`.
    #[default]
    Formula,
    /// `W_m = ∫ [t|∇f|² + f − m] u dμ`, `f = −log u − (m/2) log 4πt`.
    ClosedForm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WmValues {
    pub h_m: f64,
    pub dh_m: f64,
    pub w_m: f64,
}

fn require_positive_time(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!(
            "entropy time must be positive, got {t}"
        )));
    }
    Ok(())
}

fn finite_m(m: Dim, n: usize) -> Result<f64> {
    match m {
        Dim::Finite(v) if v >= n as f64 => Ok(v),
        other => Err(Error::invalid(format!(
            "W-entropy needs finite m >= n = {n}, got {other}"
        ))),
    }
}

/// `H_m`, its time derivative and `W_m` at the state's kernel time.
pub fn w_m(
    disc: &Discretization,
    state: &HeatState,
    m: f64,
    mode: DissipationMode,
) -> Result<WmValues> {
    require_flow_identity(disc)?;
    let t = state.kernel_time();
    require_positive_time(t)?;
    let n = disc.model().n;
    Dim::Finite(m).validate(n, disc.flow().potential())?;
    let h = boltzmann_entropy(state);
    let h_m = h - 0.5 * m * (1.0 + (4.0 * PI * t).ln());
    match mode {
        DissipationMode::Formula => {
            let dh_m = fisher(disc, state)? - 0.5 * m / t * state.mass;
            Ok(WmValues {
                h_m,
                dh_m,
                w_m: h_m + t * dh_m,
            })
        }
        DissipationMode::ClosedForm => {
            let logu: Vec<f64> = state.u.iter().map(|v| v.ln()).collect();
            let g = disc.grad_sq(&logu, state.t);
            let shift = 0.5 * m * (4.0 * PI * t).ln();
            let integrand: Vec<f64> = g
                .iter()
                .zip(&state.u)
                .zip(&logu)
                .map(|((g, u), l)| (t * g - l - shift - m) * u)
                .collect();
            let w = quadrature(&integrand, &state.weights);
            Ok(WmValues {
                h_m,
                dh_m: (w - h_m) / t,
                w_m: w,
            })
        }
    }
}

/// `Φ_{m,K}(t) = (m/2)(1 + log 4πt) + (m/2)∫₁ᵗ (e^{4Ks} − 1)/s ds`.
pub fn phi_gauge(m: f64, k: f64, t: f64) -> f64 {
    let base = 0.5 * m * (1.0 + (4.0 * PI * t).ln());
    if k == 0.0 {
        return base;
    }
    base + 0.5 * m * (ein(4.0 * k * t) - ein(4.0 * k))
}

/// `Ein(x) = ∫₀ˣ (eᵘ − 1)/u du`.
fn ein(x: f64) -> f64 {
    let f = |u: f64| if u == 0.0 { 1.0 } else { u.exp_m1() / u };
    adaptive_simpson(f, 0.0, x, 1e-13 * (1.0 + x.abs()))
}

/// `(m/2t)[e^{4Kt}(1 + 4Kt) − (1 + Kt)²]`.
pub fn defect(m: f64, k: f64, t: f64) -> f64 {
    0.5 * m / t * ((4.0 * k * t).exp() * (1.0 + 4.0 * k * t) - (1.0 + k * t).powi(2))
}

/// Which time-only gauge a W-entropy carries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gauge {
    /// `Φ_{m,K}`; `K = 0` gives the classical `H_m`.
    Phi { m: f64, k: f64 },
    /// `(m/2)(1 + log 4πt) + (mKt/2)(1 + Kt/6)`.
    Tilde { m: f64, k: f64 },
}

impl Gauge {
    fn value(&self, t: f64) -> f64 {
        match *self {
            Gauge::Phi { m, k } => phi_gauge(m, k, t),
            Gauge::Tilde { m, k } => {
                0.5 * m * (1.0 + (4.0 * PI * t).ln()) + 0.5 * m * k * t * (1.0 + k * t / 6.0)
            }
        }
    }

    fn rate(&self, t: f64) -> f64 {
        match *self {
            Gauge::Phi { m, k } => 0.5 * m / t * (4.0 * k * t).exp(),
            Gauge::Tilde { m, k } => 0.5 * m / t + 0.5 * m * k * (1.0 + k * t / 3.0),
        }
    }

    /// `d²/dt² (t · gauge)`.
    pub fn curvature(&self, t: f64) -> f64 {
        match *self {
            Gauge::Phi { m, k } => 0.5 * m / t * (4.0 * k * t).exp() * (1.0 + 4.0 * k * t),
            Gauge::Tilde { m, k } => 0.5 * m / t * (1.0 + k * t).powi(2),
        }
    }
}

/// Pieces of `W = d/dt(t(H − gauge))` at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WEntropy {
    /// `H − gauge`.
    pub h: f64,
    pub w: f64,
    /// `H + t dH/dt`, the state-dependent part of `W`.
    pub state_part: f64,
}

/// Evaluates `H − gauge` and its W-entropy using the Dirichlet-form
/// derivative of `H` (mass conservation assumed).
pub fn w_entropy(disc: &Discretization, state: &HeatState, gauge: Gauge) -> Result<WEntropy> {
    require_flow_identity(disc)?;
    let t = state.kernel_time();
    require_positive_time(t)?;
    let h = boltzmann_entropy(state);
    let dh = fisher(disc, state)?;
    let state_part = h + t * dh;
    Ok(WEntropy {
        h: h - gauge.value(t),
        w: state_part - gauge.value(t) - t * gauge.rate(t),
        state_part,
    })
}

/// `dW/dt` from finite differences of the state parts on a uniform time
/// grid, with the gauge contribution added analytically.
pub fn w_derivative_fd(times: &[f64], state_parts: &[f64], gauge: Gauge) -> Result<Vec<f64>> {
    let d = finite_difference(times, state_parts)?;
    Ok(d.iter()
        .zip(times)
        .map(|(d, t)| d - gauge.curvature(*t))
        .collect())
}

/// Fourth-order derivative on a uniform grid: five-point centered stencil
/// in the interior, one-sided five-point stencils at the two ends.
pub fn finite_difference(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 5 || times.len() != n {
        return Err(Error::invalid(
            "finite differences need at least five equally sized samples",
        ));
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    for w in times.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1e-300) {
            return Err(Error::invalid(
                "finite differences need a uniform time grid",
            ));
        }
    }
    let f = values;
    let mut d = vec![0.0; n];
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    }
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5])
        / (12.0 * h);
    d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
        + 3.0 * f[n - 5])
        / (12.0 * h);
    Ok(d)
}

fn require_flow_identity(disc: &Discretization) -> Result<()> {
    let flow = disc.flow();
    if !flow.is_static() && flow.coupling() != Coupling::MeasurePreserving {
        return Err(Error::Unsupported(
            "dissipation formulas on a moving metric need measure-preserving coupling".into(),
        ));
    }
    Ok(())
}

/// Right-hand side of the `W_{m,K}` dissipation formula:
/// `−2t∫[|∇²log u + (K/2 + 1/2t)g|² + (Ric_{m,n}(L) + K + h)(∇log u, ∇log u)]u
///  − (2t/(m−n))∫(∇φ·∇log u − (m−n)(1+Kt)/2t)² u − defect`.
/// With `include_defect = false` this is the `W̃_{m,K}` formula. The `h`
/// term vanishes on static flows.
pub fn w_mk_rhs(
    disc: &Discretization,
    state: &HeatState,
    m: f64,
    k: f64,
    include_defect: bool,
) -> Result<f64> {
    require_flow_identity(disc)?;
    let t = state.kernel_time();
    require_positive_time(t)?;
    let n = disc.model().n;
    let dim = Dim::Finite(finite_m(Dim::Finite(m), n)?);
    dim.validate(n, disc.flow().potential())?;
    let s = state.t;
    let flow = disc.flow();
    let c = flow.scale(s);
    let hf = flow.h_factor(s);
    let logu: Vec<f64> = state.u.iter().map(|v| v.ln()).collect();
    let hess = disc.hessian_sq(&logu, s, 0.5 * k + 0.5 / t);
    let dlog = disc.derivative(&logu);
    let gap = m - n as f64;
    let third = gap > 0.0;
    let mut first = Vec::with_capacity(logu.len());
    let mut second = Vec::with_capacity(logu.len());
    for (i, &r) in disc.grid().r.iter().enumerate() {
        let sample = crate::geometry::bakry_emery(flow, dim, r, s)?;
        let grad_sq = dlog[i] * dlog[i] / c;
        first.push((hess[i] + (sample.ric_mn.radial + k + hf) * grad_sq) * state.u[i]);
        if third {
            let dphi = flow.potential().jet(r, s).dr;
            let x = dphi * dlog[i] / c - gap * (1.0 + k * t) / (2.0 * t);
            second.push(x * x * state.u[i]);
        }
    }
    let mut rhs = -2.0 * t * quadrature(&first, &state.weights);
    if third {
        rhs -= 2.0 * t / gap * quadrature(&second, &state.weights);
    }
    if include_defect {
        rhs -= defect(m, k, t);
    }
    Ok(rhs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DkVariant {
    /// `D_K = 2|K| / |1 − e^{−2Kt}|`, for which `D_K′ = −C_K D_K` and `D_0 = 1/t`.
    #[default]
    Derivation,
    /// `D_K = 1 / |1 − e^{−2Kt}|`.
    Statement,
}

/// `C_K(t) = 2K/(e^{2Kt} − 1)`, with `C_0 = 1/t`.
pub fn c_k(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        1.0 / t
    } else {
        2.0 * k / (2.0 * k * t).exp_m1()
    }
}

pub fn d_k(k: f64, t: f64, variant: DkVariant) -> f64 {
    if k == 0.0 {
        return 1.0 / t;
    }
    let base = 1.0 / (-(-2.0 * k * t).exp_m1()).abs();
    match variant {
        DkVariant::Derivation => 2.0 * k.abs() * base,
        DkVariant::Statement => base,
    }
}

/// `α_K(t) = K tanh(Kt)`.
pub fn alpha_k(k: f64, t: f64) -> f64 {
    k * (k * t).tanh()
}

/// `β_K(t) = sinh(2Kt)/(2K)`, with `β_0 = t`.
pub fn beta_k(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        t
    } else {
        (2.0 * k * t).sinh() / (2.0 * k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WkValues {
    pub h_k: f64,
    pub dh_k: f64,
    pub w_k: f64,
    pub dw_k_rhs: f64,
}

/// `H_K`, `dH_K/dt`, `W_K` and the dissipation formula for `dW_K/dt`,
/// from the co-evolved fields `v = P_t f` and `q = P_t(f log f)` at time `t`.
pub fn w_k(
    disc: &Discretization,
    v: &[f64],
    q: &[f64],
    t: f64,
    k: f64,
    variant: DkVariant,
) -> Result<WkValues> {
    require_flow_identity(disc)?;
    require_positive_time(t)?;
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::NonPositive(format!("P_t f takes the value {bad}")));
    }
    let weights = disc.weights(t)?;
    let op = disc.assemble(t)?;
    let logv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let deficit: Vec<f64> = q
        .iter()
        .zip(v)
        .zip(&logv)
        .map(|((q, v), l)| q - v * l)
        .collect();
    let e = quadrature(&deficit, &weights);
    let f = op.dirichlet(v, &logv);
    let dk = d_k(k, t, variant);
    let h_k = dk * e;
    let dh_k = dk * (f - c_k(k, t) * e);
    let w_k = h_k + beta_k(k, t) * dh_k;

    let flow = disc.flow();
    let c = flow.scale(t);
    let hf = flow.h_factor(t);
    let hess = disc.hessian_sq(&logv, t, 0.0);
    let dlog = disc.derivative(&logv);
    let mut integrand = Vec::with_capacity(v.len());
    for (i, &r) in disc.grid().r.iter().enumerate() {
        let sample = crate::geometry::bakry_emery(flow, Dim::Infinite, r, t)?;
        let grad_sq = dlog[i] * dlog[i] / c;
        integrand.push((hess[i] + (sample.ric_l.radial - k + hf) * grad_sq) * v[i]);
    }
    let factor = if k == 0.0 {
        2.0 * t
    } else {
        (2.0 * k * t).sinh() / k
    };
    let dw_k_rhs = -factor * dk * quadrature(&integrand, &weights);
    Ok(WkValues {
        h_k,
        dh_k,
        w_k,
        dw_k_rhs,
    })
}
