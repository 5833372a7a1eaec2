//! Implicit time stepping of `∂_t u = L_t u`, initial data and a spectral
//! reference solution.

use std::f64::consts::PI;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::discretize::{quadrature, Discretization};
use crate::error::{Error, Result};
use crate::geometry::{Boundary, ModelKind, RadialModel};
use crate::quadrature::GaussRule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    CrankNicolson,
    BackwardEuler,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::BackwardEuler => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatState {
    pub u: Vec<f64>,
    /// Solver time.
    pub t: f64,
    /// Added to `t` wherever the state stands in for a fundamental solution.
    pub clock_offset: f64,
    pub weights: Vec<f64>,
    pub mass: f64,
}

impl HeatState {
    pub fn new(disc: &Discretization, u: Vec<f64>, t: f64, clock_offset: f64) -> Result<Self> {
        if u.len() != disc.len() {
            return Err(Error::invalid(format!(
                "state has {} values for {} nodes",
                u.len(),
                disc.len()
            )));
        }
        let weights = disc.weights(t)?;
        let mass = quadrature(&u, &weights);
        Ok(Self {
            u,
            t,
            clock_offset,
            weights,
            mass,
        })
    }

    /// Time at which formulas for the fundamental solution are evaluated.
    pub fn kernel_time(&self) -> f64 {
        self.t + self.clock_offset
    }

    pub fn min(&self) -> f64 {
        self.u.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.u.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub fell_back: bool,
    /// Jacobi-type positivity bound for Crank–Nicolson at this step.
    pub cn_bound: f64,
}

/// Advances several fields by one step with the operator at `t + Δt/2`.
/// If Crank–Nicolson leaves any field flagged in `positive` non-positive,
/// the whole step is redone with backward Euler so that the fields stay in
/// lockstep.
pub fn advance(
    disc: &Discretization,
    fields: &mut [Vec<f64>],
    positive: &[bool],
    t: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<StepReport> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let op = disc.assemble(t + 0.5 * dt)?;
    let cn_bound = op.crank_nicolson_bound();
    let solve_all = |scheme: Scheme| -> Result<Vec<Vec<f64>>> {
        let theta = scheme.theta();
        let matrix = op.implicit_matrix(theta * dt);
        fields
            .iter()
            .map(|u| {
                let ku = op.stiffness(u);
                let rhs: Vec<f64> = u
                    .iter()
                    .zip(&op.weights)
                    .zip(&ku)
                    .map(|((ui, wi), ki)| wi * ui + (1.0 - theta) * dt * ki)
                    .collect();
                matrix.solve(&rhs)
            })
            .collect()
    };
    let mut next = solve_all(scheme)?;
    let bad = |next: &[Vec<f64>]| {
        next.iter()
            .zip(positive)
            .any(|(u, p)| *p && u.iter().any(|v| !(*v > 0.0)))
    };
    let mut fell_back = false;
    if scheme == Scheme::CrankNicolson && bad(&next) {
        warn!("crank-nicolson lost positivity at t = {t}, dt = {dt} (bound {cn_bound:e}); retrying with backward euler");
        next = solve_all(Scheme::BackwardEuler)?;
        fell_back = true;
    }
    if bad(&next) {
        return Err(Error::NonPositive(format!(
            "solution lost positivity at t = {}",
            t + dt
        )));
    }
    for (f, n) in fields.iter_mut().zip(next) {
        *f = n;
    }
    Ok(StepReport {
        fell_back,
        cn_bound,
    })
}

pub fn step(
    disc: &Discretization,
    state: &HeatState,
    dt: f64,
    scheme: Scheme,
) -> Result<(HeatState, StepReport)> {
    let mut fields = [state.u.clone()];
    let report = advance(disc, &mut fields, &[true], state.t, dt, scheme)?;
    let [u] = fields;
    let next = HeatState::new(disc, u, state.t + dt, state.clock_offset)?;
    Ok((next, report))
}

/// Per-output diagnostics of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub t: f64,
    pub min_u: f64,
    pub mass_drift: f64,
    /// Flux through the last interior interface next to a reflecting
    /// truncation; 0 on closed models.
    pub boundary_flux: f64,
    /// Mass carried by the outer tenth of a truncated domain.
    pub band_mass: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<HeatState>,
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn fallbacks(&self) -> usize {
        self.diagnostics.last().map_or(0, |d| d.fallbacks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    /// Output every this many steps.
    pub output_every: usize,
}

impl RunConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::invalid("dt and horizon must be positive"));
        }
        let k = (self.horizon / self.dt).round();
        if (k * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::invalid(format!(
                "horizon {} is not a multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        if self.output_every == 0 {
            return Err(Error::invalid("output_every must be at least 1"));
        }
        Ok(k as usize)
    }
}

fn is_truncated(model: &RadialModel) -> bool {
    matches!(model.kind, ModelKind::Euclidean | ModelKind::Hyperbolic)
        && model.right == Boundary::Reflecting
}

pub(crate) fn diagnose(
    disc: &Discretization,
    s: &HeatState,
    mass0: f64,
    fallbacks: usize,
) -> Result<Diagnostics> {
    let (boundary_flux, band_mass) = if is_truncated(disc.model()) {
        let op = disc.assemble(s.t)?;
        let n = s.u.len();
        let flux = op.kappa[n - 2] * (s.u[n - 1] - s.u[n - 2]);
        let cut = disc.model().r_max - 0.1 * disc.model().length();
        let band = disc
            .grid()
            .r
            .iter()
            .zip(&s.u)
            .zip(&s.weights)
            .filter(|((r, _), _)| **r >= cut)
            .map(|((_, u), w)| u * w)
            .sum();
        (flux, band)
    } else {
        (0.0, 0.0)
    };
    Ok(Diagnostics {
        t: s.t,
        min_u: s.min(),
        mass_drift: (s.mass - mass0) / mass0,
        boundary_flux,
        band_mass,
        fallbacks,
    })
}

/// Evolves `initial` to the horizon, storing every `output_every`-th state.
pub fn run(disc: &Discretization, initial: HeatState, cfg: &RunConfig) -> Result<Trajectory> {
    let steps = cfg.steps()?;
    let mass0 = initial.mass;
    let mut fallbacks = 0;
    let mut diagnostics = vec![diagnose(disc, &initial, mass0, 0)?];
    let mut states = vec![initial.clone()];
    let mut state = initial;
    for k in 1..=steps {
        let (mut next, report) = step(disc, &state, cfg.dt, cfg.scheme)?;
        next.t = states[0].t + k as f64 * cfg.dt;
        if report.fell_back {
            fallbacks += 1;
        }
        if k % cfg.output_every == 0 || k == steps {
            diagnostics.push(diagnose(disc, &next, mass0, fallbacks)?);
            states.push(next.clone());
        }
        state = next;
    }
    if fallbacks > 0 {
        debug!("{fallbacks} of {steps} steps used the backward euler fallback");
    }
    Ok(Trajectory {
        states,
        diagnostics,
    })
}

/// Initial data families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    /// Constant density of mass 1.
    Uniform,
    /// `exp(−(r − center)²/(2 width²))`, normalized to mass 1.
    GaussianBump { center: f64, width: f64 },
    /// Small-time kernel about `r = r_min`, normalized to mass 1 and
    /// clocked at `t + t₀`: the exact kernel `(d/sinh d)·exp(−d²/4t₀)` on
    /// hyperbolic 3-space, the Euclidean `exp(−d²/4t₀)` elsewhere.
    KernelBurnin { t0: f64 },
    /// `1 + amplitude · e_l(r)` with `e_l` the `l`-th radial eigenfunction
    /// normalized by `e_l(r_min) = 1`.
    EigenPerturbation { l: usize, amplitude: f64 },
}

impl InitialKind {
    /// Unnormalized profile as a function of radius.
    pub fn profile(&self, model: &RadialModel) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let model = model.clone();
        Ok(match *self {
            InitialKind::Uniform => Box::new(|_| 1.0),
            InitialKind::GaussianBump { center, width } => {
                Box::new(move |r| floored((-(r - center).powi(2) / (2.0 * width * width)).exp()))
            }
            InitialKind::KernelBurnin { t0 } => {
                let periodic = model.is_periodic();
                let len = model.length();
                let r0 = model.r_min;
                let hyperbolic3 = model.kind == ModelKind::Hyperbolic && model.n == 3;
                Box::new(move |r| {
                    let mut d = r - r0;
                    if periodic {
                        d = d.rem_euclid(len);
                        d = d.min(len - d);
                    }
                    let mut v = (-d * d / (4.0 * t0)).exp();
                    if hyperbolic3 && d > 0.0 {
                        v *= d / d.sinh();
                    }
                    floored(v)
                })
            }
            InitialKind::EigenPerturbation { l, amplitude } => {
                let e = eigenfunction(&model, l)?;
                Box::new(move |r| 1.0 + amplitude * e(r))
            }
        })
    }

    fn normalized(&self) -> bool {
        !matches!(self, InitialKind::EigenPerturbation { .. })
    }

    pub fn clock_offset(&self) -> f64 {
        match self {
            InitialKind::KernelBurnin { t0 } => *t0,
            _ => 0.0,
        }
    }
}

fn floored(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE)
}

/// Builds a strictly positive datum on the grid at time 0.
pub fn make_initial(disc: &Discretization, kind: InitialKind) -> Result<HeatState> {
    let dr = disc.grid().dr;
    match kind {
        InitialKind::GaussianBump { width, center } => {
            if !(width >= 4.0 * dr) {
                return Err(Error::invalid(format!(
                    "bump width {width} is below 4 dr = {}",
                    4.0 * dr
                )));
            }
            if !disc.model().contains(center) {
                return Err(Error::invalid(format!(
                    "bump center {center} outside the domain"
                )));
            }
        }
        InitialKind::KernelBurnin { t0 } => {
            if !(t0 > 0.0) || (2.0 * t0).sqrt() < 4.0 * dr {
                return Err(Error::invalid(format!(
                    "burn-in time {t0} is not resolved: kernel width {} below 4 dr = {}",
                    (2.0 * t0).sqrt(),
                    4.0 * dr
                )));
            }
        }
        InitialKind::EigenPerturbation { amplitude, .. } => {
            if !(amplitude.abs() < 1.0) {
                return Err(Error::invalid(format!(
                    "perturbation amplitude {amplitude} does not keep the datum positive"
                )));
            }
        }
        InitialKind::Uniform => {}
    }
    let profile = kind.profile(disc.model())?;
    let mut u: Vec<f64> = disc.grid().r.iter().map(|&r| profile(r)).collect();
    if let Some(bad) = u.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositive(format!(
            "initial datum takes the value {bad}"
        )));
    }
    if kind.normalized() {
        let w = disc.weights(0.0)?;
        let mass = quadrature(&u, &w);
        u.iter_mut().for_each(|v| *v = floored(*v / mass));
    }
    HeatState::new(disc, u, 0.0, kind.clock_offset())
}

/// Radial eigenfunction of the unweighted Laplacian, scaled so `e(r_min) = 1`.
pub fn eigenfunction(
    model: &RadialModel,
    l: usize,
) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
    let len = model.length();
    Ok(match model.kind {
        ModelKind::Circle => Box::new(move |r| (2.0 * PI * l as f64 * r / len).cos()),
        ModelKind::Interval => Box::new(move |r| (PI * l as f64 * r / len).cos()),
        ModelKind::Sphere => {
            let lambda = 0.5 * (model.n as f64 - 1.0);
            let norm = gegenbauer(l, lambda, 1.0);
            Box::new(move |r| gegenbauer(l, lambda, r.cos()) / norm)
        }
        other => {
            return Err(Error::Unsupported(format!(
                "no closed-form eigenfunctions on the {other} model"
            )))
        }
    })
}

/// Eigenvalue of `−Δ` for [`eigenfunction`].
pub fn eigenvalue(model: &RadialModel, l: usize) -> Result<f64> {
    let k = l as f64;
    let len = model.length();
    Ok(match model.kind {
        ModelKind::Circle => (2.0 * PI * k / len).powi(2),
        ModelKind::Interval => (PI * k / len).powi(2),
        ModelKind::Sphere => k * (k + model.n as f64 - 1.0),
        other => {
            return Err(Error::Unsupported(format!(
                "no closed-form spectrum on the {other} model"
            )))
        }
    })
}

/// Gegenbauer polynomial `C_l^λ(x)` (Legendre for `λ = ½`).
pub fn gegenbauer(l: usize, lambda: f64, x: f64) -> f64 {
    let mut p0 = 1.0;
    if l == 0 {
        return p0;
    }
    let mut p1 = 2.0 * lambda * x;
    for k in 2..=l {
        let kf = k as f64;
        let p2 = (2.0 * x * (kf + lambda - 1.0) * p1 - (kf + 2.0 * lambda - 2.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralReference {
    pub values: Vec<f64>,
    /// Sup-norm of the first `modes` neglected terms, as a tail estimate.
    pub tail_bound: f64,
    pub modes: usize,
}

/// Truncated eigen-expansion `Σ c_k e^{−λ_k t} e_k` of the static,
/// unweighted heat flow from `u0`, evaluated on `r`.
pub fn spectral_reference(
    model: &RadialModel,
    potential_is_constant: bool,
    u0: &dyn Fn(f64) -> f64,
    t: f64,
    r: &[f64],
    modes: usize,
) -> Result<SpectralReference> {
    if !potential_is_constant {
        return Err(Error::invalid(
            "spectral reference needs a constant potential",
        ));
    }
    let (panels, sin_power) = match model.kind {
        ModelKind::Circle | ModelKind::Interval => (256, 0),
        ModelKind::Sphere => (256, model.n as i32 - 1),
        other => {
            return Err(Error::invalid(format!(
                "no spectral reference on the {other} model"
            )))
        }
    };
    let rule = GaussRule::new(16);
    let len = model.length();
    let h = len / panels as f64;
    let mut pts = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let a = model.r_min + p as f64 * h;
        for (x, w) in rule.mapped(a, a + h) {
            let dens = if sin_power == 0 {
                1.0
            } else {
                x.sin().powi(sin_power)
            };
            pts.push((x, w * dens, u0(x)));
        }
    }
    let total = 2 * modes + 1;
    let mut coeffs = Vec::with_capacity(total);
    for l in 0..total {
        let e = eigenfunction(model, l)?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut num_sin = 0.0;
        let mut den_sin = 0.0;
        for &(x, w, f) in &pts {
            let ex = e(x);
            num += w * f * ex;
            den += w * ex * ex;
            if model.kind == ModelKind::Circle && l > 0 {
                let s = (2.0 * PI * l as f64 * x / len).sin();
                num_sin += w * f * s;
                den_sin += w * s * s;
            }
        }
        let sin_coeff = if den_sin > 0.0 {
            num_sin / den_sin
        } else {
            0.0
        };
        coeffs.push((num / den, sin_coeff, eigenvalue(model, l)?));
    }
    let term = |l: usize, x: f64, e: &dyn Fn(f64) -> f64| {
        let (c, s, lam) = coeffs[l];
        let decay = (-lam * t).exp();
        let mut v = c * e(x);
        if s != 0.0 {
            v += s * (2.0 * PI * l as f64 * x / len).sin();
        }
        v * decay
    };
    let mut values = vec![0.0; r.len()];
    for l in 0..=modes {
        let e = eigenfunction(model, l)?;
        for (v, &x) in values.iter_mut().zip(r) {
            *v += term(l, x, &*e);
        }
    }
    let tail_bound = (modes + 1..total)
        .map(|l| {
            let (c, s, lam) = coeffs[l];
            (c.abs() + s.abs()) * (-lam * t).exp()
        })
        .sum();
    Ok(SpectralReference {
        values,
        tail_bound,
        modes,
    })
}
