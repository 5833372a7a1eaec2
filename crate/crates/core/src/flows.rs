//! Homothety flows `g(t) = c(t) g₀` with an optional measure-preserving
//! shift of the potential.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ModelKind, Potential, PotentialJet, RadialModel};
use crate::quadrature::adaptive_simpson;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum FlowKind {
    Static,
    /// `c(t) = e^{2λt}`, so `h = λ g`.
    Exponential {
        lambda: f64,
    },
    /// Exact Ricci flow of the round sphere, `c(t) = 1 − 2(n − 1)t`.
    ShrinkingSphere,
    /// User-supplied scale `c` and its derivative `dc`.
    Custom {
        c: ScalarFn,
        dc: ScalarFn,
    },
}

impl FlowKind {
    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::Static => "static",
            FlowKind::Exponential { .. } => "exponential",
            FlowKind::ShrinkingSphere => "shrinking_sphere",
            FlowKind::Custom { .. } => "custom",
        }
    }
}

impl fmt::Debug for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowKind::Exponential { lambda } => write!(f, "Exponential {{ lambda: {lambda} }}"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Independent,
    /// Adds `(n/2) log c(t)` to the potential so that `dμ` is fixed in time.
    MeasurePreserving,
}

#[derive(Clone, Debug)]
pub struct FlowSpec {
    kind: FlowKind,
    model: RadialModel,
    potential: Potential,
    coupling: Coupling,
    horizon: f64,
}

impl FlowSpec {
    pub fn new(
        kind: FlowKind,
        model: RadialModel,
        potential: Potential,
        coupling: Coupling,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        match &kind {
            FlowKind::Static => {}
            FlowKind::Exponential { lambda } => {
                if !lambda.is_finite() {
                    return Err(Error::invalid("exponential flow needs a finite lambda"));
                }
            }
            FlowKind::ShrinkingSphere => {
                if model.kind != ModelKind::Sphere {
                    return Err(Error::invalid(format!(
                        "shrinking_sphere needs a sphere model, got {}",
                        model.kind
                    )));
                }
                let extinction = 1.0 / (2.0 * (model.n - 1) as f64);
                if horizon >= extinction {
                    return Err(Error::invalid(format!(
                        "horizon {horizon} reaches the extinction time 1/(2(n-1)) = {extinction}"
                    )));
                }
            }
            FlowKind::Custom { c, .. } => {
                if (c(0.0) - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "custom flow needs c(0) = 1, got {}",
                        c(0.0)
                    )));
                }
                for i in 0..=256 {
                    let t = horizon * i as f64 / 256.0;
                    let v = c(t);
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::invalid(format!("custom flow has c({t}) = {v}")));
                    }
                }
            }
        }
        Ok(Self {
            kind,
            model,
            potential,
            coupling,
            horizon,
        })
    }

    /// Static flow on `model` over `[0, horizon]`.
    pub fn fixed(model: RadialModel, potential: Potential, horizon: f64) -> Result<Self> {
        Self::new(
            FlowKind::Static,
            model,
            potential,
            Coupling::Independent,
            horizon,
        )
    }

    pub fn kind(&self) -> &FlowKind {
        &self.kind
    }

    pub fn model(&self) -> &RadialModel {
        &self.model
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn label(&self) -> &'static str {
        self.kind.name()
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, FlowKind::Static)
            || matches!(self.kind, FlowKind::Exponential { lambda } if lambda == 0.0)
    }

    /// Homothety factor `c(t)`.
    pub fn scale(&self, t: f64) -> f64 {
        match &self.kind {
            FlowKind::Static => 1.0,
            FlowKind::Exponential { lambda } => (2.0 * lambda * t).exp(),
            FlowKind::ShrinkingSphere => 1.0 - 2.0 * (self.model.n - 1) as f64 * t,
            FlowKind::Custom { c, .. } => c(t),
        }
    }

    /// `c′(t)`.
    pub fn scale_rate(&self, t: f64) -> f64 {
        match &self.kind {
            FlowKind::Static => 0.0,
            FlowKind::Exponential { lambda } => 2.0 * lambda * (2.0 * lambda * t).exp(),
            FlowKind::ShrinkingSphere => -2.0 * (self.model.n - 1) as f64,
            FlowKind::Custom { dc, .. } => dc(t),
        }
    }

    /// `c′/(2c)`: the common eigenvalue of `h = ½∂_t g` against `g(t)`.
    pub fn h_factor(&self, t: f64) -> f64 {
        match &self.kind {
            FlowKind::Static => 0.0,
            FlowKind::Exponential { lambda } => *lambda,
            _ => self.scale_rate(t) / (2.0 * self.scale(t)),
        }
    }

    pub fn trace_h(&self, t: f64) -> f64 {
        self.model.n as f64 * self.h_factor(t)
    }

    /// `|h|²` in `g(t)` units.
    pub fn h_norm_sq(&self, t: f64) -> f64 {
        let hf = self.h_factor(t);
        self.model.n as f64 * hf * hf
    }

    fn coupling_shift(&self, t: f64) -> (f64, f64) {
        match self.coupling {
            Coupling::Independent => (0.0, 0.0),
            Coupling::MeasurePreserving => {
                let half_n = 0.5 * self.model.n as f64;
                (half_n * self.scale(t).ln(), 2.0 * half_n * self.h_factor(t))
            }
        }
    }

    /// Time factor of the weighted volume, `c^{n/2} e^{−shift}`; identically
    /// 1 under measure-preserving coupling.
    pub fn measure_factor(&self, t: f64) -> f64 {
        match self.coupling {
            Coupling::Independent => self.scale(t).powf(0.5 * self.model.n as f64),
            Coupling::MeasurePreserving => 1.0,
        }
    }

    /// `φ(r, t)` including the coupling shift.
    pub fn phi(&self, r: f64, t: f64) -> f64 {
        self.potential.value(r, t) + self.coupling_shift(t).0
    }

    /// Potential jet including the coupling shift.
    pub fn phi_jet(&self, r: f64, t: f64) -> PotentialJet {
        let mut jet = self.potential.jet(r, t);
        let (v, dt) = self.coupling_shift(t);
        jet.value += v;
        jet.dt += dt;
        jet
    }
}

/// Intrinsic time `τ(t) = ∫₀ᵗ ds / c(s)` for which `u(t) = u_static(τ(t))`.
pub fn time_reparametrization(flow: &FlowSpec, t: f64) -> Result<f64> {
    if !flow.potential().is_time_independent() {
        return Err(Error::Unsupported(
            "time reparametrization needs a time-independent potential".into(),
        ));
    }
    if t < 0.0 {
        return Err(Error::invalid(format!(
            "time must be non-negative, got {t}"
        )));
    }
    Ok(match flow.kind() {
        FlowKind::Static => t,
        FlowKind::Exponential { lambda } => {
            if *lambda == 0.0 {
                t
            } else {
                -(-2.0 * lambda * t).exp_m1() / (2.0 * lambda)
            }
        }
        FlowKind::ShrinkingSphere => {
            let a = 2.0 * (flow.model().n - 1) as f64;
            -(-a * t).ln_1p() / a
        }
        FlowKind::Custom { c, .. } => {
            let c = c.clone();
            adaptive_simpson(move |s| 1.0 / c(s), 0.0, t, 1e-13)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    #[test]
    fn static_is_trivial() {
        let f =
            FlowSpec::fixed(RadialModel::sphere(2).unwrap(), Potential::Cosine(0.3), 1.0).unwrap();
        for t in [0.0, 0.4, 1.0] {
            assert_eq!(f.scale(t), 1.0);
            assert_eq!(f.h_factor(t), 0.0);
        }
        assert_eq!(time_reparametrization(&f, 0.7).unwrap(), 0.7);
    }

    #[test]
    fn shrinking_sphere_values() {
        let f = FlowSpec::new(
            FlowKind::ShrinkingSphere,
            RadialModel::sphere(2).unwrap(),
            Potential::Constant(0.0),
            Coupling::MeasurePreserving,
            0.2,
        )
        .unwrap();
        assert_relative_eq!(f.scale(0.2), 0.6, epsilon = 1e-15);
        assert_relative_eq!(f.phi(1.0, 0.2), 0.6f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(
            time_reparametrization(&f, 0.2).unwrap(),
            0.2554128118829953,
            epsilon = 1e-14
        );
    }

    #[test]
    fn shrinking_sphere_rejects_extinction() {
        let err = FlowSpec::new(
            FlowKind::ShrinkingSphere,
            RadialModel::sphere(3).unwrap(),
            Potential::default(),
            Coupling::Independent,
            0.3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("0.25"), "{err}");
        assert!(FlowSpec::new(
            FlowKind::ShrinkingSphere,
            RadialModel::euclidean(2, 3.0).unwrap(),
            Potential::default(),
            Coupling::Independent,
            0.1,
        )
        .is_err());
    }

    #[test]
    fn exponential_values() {
        let f = FlowSpec::new(
            FlowKind::Exponential { lambda: 0.5 },
            RadialModel::hyperbolic(3, 6.0).unwrap(),
            Potential::default(),
            Coupling::Independent,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(f.scale(1.0), E, epsilon = 1e-15);
        assert_relative_eq!(
            f.scale_rate(1.0) / (2.0 * f.scale(1.0)),
            0.5,
            epsilon = 1e-15
        );
        assert_relative_eq!(f.trace_h(1.0), 1.5, epsilon = 1e-15);
        assert_relative_eq!(
            time_reparametrization(&f, 1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn custom_matches_closed_form() {
        let lam = 0.5;
        let custom = FlowSpec::new(
            FlowKind::Custom {
                c: Arc::new(move |t| (2.0 * lam * t).exp()),
                dc: Arc::new(move |t| 2.0 * lam * (2.0 * lam * t).exp()),
            },
            RadialModel::sphere(2).unwrap(),
            Potential::default(),
            Coupling::Independent,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(custom.h_factor(0.3), lam, epsilon = 1e-14);
        assert_relative_eq!(
            time_reparametrization(&custom, 1.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn measure_preserving_shift_matches_trace() {
        let f = FlowSpec::new(
            FlowKind::Exponential { lambda: -0.3 },
            RadialModel::sphere(3).unwrap(),
            Potential::Cosine(1.0),
            Coupling::MeasurePreserving,
            1.0,
        )
        .unwrap();
        let t = 0.6;
        let jet = f.phi_jet(0.4, t);
        assert_relative_eq!(jet.dt, f.trace_h(t), epsilon = 1e-15);
        assert_relative_eq!(
            jet.value - 0.4f64.cos(),
            1.5 * f.scale(t).ln(),
            epsilon = 1e-15
        );
    }
}
