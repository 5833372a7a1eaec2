//! Heat flow of the Witten Laplacian `L = Δ − ∇φ·∇` on rotationally
//! symmetric model manifolds, with entropy functionals and Harnack-type
//! inequality monitors evaluated on the discrete solution.

pub mod discretize;
pub mod error;
pub mod flows;
pub mod functionals;
pub mod geometry;
pub mod heatflow;
pub mod linalg;
pub mod monitors;
pub mod quadrature;
pub mod scenario;

pub use discretize::{quadrature, Discretization, Grid, WittenOperator};
pub use error::{Error, Result};
pub use flows::{time_reparametrization, Coupling, FlowKind, FlowSpec};
pub use functionals::{
    boltzmann_entropy, fisher, w_entropy, w_k, w_m, w_mk_rhs, DissipationMode, DkVariant, Gauge,
    WEntropy, WkValues, WmValues,
};
pub use geometry::{
    bakry_emery, flow_condition_check, ricci_radial, s_tensor, Boundary, Condition, ConditionCheck,
    CurvatureSample, Dim, Eigen, ModelKind, Potential, PotentialJet, RadialModel, SSignVariant,
};
pub use heatflow::{
    make_initial, run, spectral_reference, step, HeatState, InitialKind, RunConfig, Scheme,
    Trajectory,
};
pub use monitors::{
    coevolve, evaluate, verify_premise, Check, FieldSet, History, MonitorSeries, MonitorSpec,
    Tolerance, Verdict, ViolationReport,
};
pub use scenario::{catalog, Outcome, Report, RunOptions, Scenario, ScenarioConfig};
