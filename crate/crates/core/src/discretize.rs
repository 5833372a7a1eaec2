//! Finite-volume discretization of `L = Δ − ∇φ·∇` in divergence form.
//!
//! Node `i` carries the weight `w_i = ∫ A ψ^{n−1} e^{−φ} c^{n/2} dr` over its
//! dual cell, and interface `i+½` the conductance
//! `κ = A ψ^{n−1} e^{−φ} c^{n/2−1} / Δr` at the midpoint, so that
//! `(Lu)_i = [κ_{i+½}(u_{i+1} − u_i) − κ_{i−½}(u_i − u_{i−1})] / w_i`.

use crate::error::{Error, Result};
use crate::flows::FlowSpec;
use crate::geometry::{Boundary, RadialModel};
use crate::linalg::Tridiagonal;
use crate::quadrature::GaussRule;

pub const MIN_NODES: usize = 16;

const CELL_GAUSS_POINTS: usize = 6;

/// Uniform radial grid. Periodic grids omit the duplicate endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub r: Vec<f64>,
    pub dr: f64,
    pub periodic: bool,
}

impl Grid {
    pub fn new(model: &RadialModel, nodes: usize) -> Result<Self> {
        if nodes < MIN_NODES {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_NODES} nodes, got {nodes}"
            )));
        }
        let periodic = model.is_periodic();
        let dr = if periodic {
            model.length() / nodes as f64
        } else {
            model.length() / (nodes - 1) as f64
        };
        let mut r: Vec<f64> = (0..nodes).map(|i| model.r_min + i as f64 * dr).collect();
        if !periodic {
            r[nodes - 1] = model.r_max;
        }
        Ok(Self { r, dr, periodic })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    /// Number of interfaces carrying a conductance.
    pub fn interfaces(&self) -> usize {
        if self.periodic {
            self.len()
        } else {
            self.len() - 1
        }
    }

    /// Node count after halving `dr`; every old node stays a node.
    pub fn refined_nodes(nodes: usize, periodic: bool) -> usize {
        if periodic {
            2 * nodes
        } else {
            2 * nodes - 1
        }
    }
}

/// The discrete operator at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct WittenOperator {
    /// `κ_{i+½}`; the periodic grid adds the wrap-around interface last.
    pub kappa: Vec<f64>,
    pub weights: Vec<f64>,
    pub t: f64,
    pub periodic: bool,
}

impl WittenOperator {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn neighbours(&self, i: usize) -> (Option<(usize, f64)>, Option<(usize, f64)>) {
        let n = self.len();
        let left = if i > 0 {
            Some((i - 1, self.kappa[i - 1]))
        } else if self.periodic {
            Some((n - 1, self.kappa[n - 1]))
        } else {
            None
        };
        let right = if i + 1 < n {
            Some((i + 1, self.kappa[i]))
        } else if self.periodic {
            Some((0, self.kappa[n - 1]))
        } else {
            None
        };
        (left, right)
    }

    /// `(Ku)_i = w_i (Lu)_i`.
    pub fn stiffness(&self, u: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (l, r) = self.neighbours(i);
                let mut v = 0.0;
                if let Some((j, k)) = l {
                    v -= k * (u[i] - u[j]);
                }
                if let Some((j, k)) = r {
                    v += k * (u[j] - u[i]);
                }
                v
            })
            .collect()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.stiffness(u)
            .iter()
            .zip(&self.weights)
            .map(|(k, w)| k / w)
            .collect()
    }

    /// `Σ κ Δu Δv`, which equals `−⟨Lu, v⟩_μ`.
    pub fn dirichlet(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.len();
        self.kappa
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let j = (i + 1) % n;
                k * (u[j] - u[i]) * (v[j] - v[i])
            })
            .sum()
    }

    /// `W − s K` for the implicit stage with `s = θΔt`.
    pub fn implicit_matrix(&self, s: f64) -> Tridiagonal {
        let n = self.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag = self.weights.clone();
        for i in 0..n {
            let (l, r) = self.neighbours(i);
            if let Some((_, k)) = l {
                lower[i] = -s * k;
                diag[i] += s * k;
            }
            if let Some((_, k)) = r {
                upper[i] = -s * k;
                diag[i] += s * k;
            }
        }
        Tridiagonal {
            lower,
            diag,
            upper,
            cyclic: self.periodic,
        }
    }

    /// Largest Δt for which `I + ½Δt L` keeps non-negative vectors
    /// non-negative: `min_i 2 w_i / (κ_{i−½} + κ_{i+½})`.
    pub fn crank_nicolson_bound(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (l, r) = self.neighbours(i);
                let sum = l.map_or(0.0, |x| x.1) + r.map_or(0.0, |x| x.1);
                2.0 * self.weights[i] / sum
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `Σ values_i w_i`.
pub fn quadrature(values: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

/// A flow on a fixed grid, able to assemble the operator at any time.
#[derive(Clone, Debug)]
pub struct Discretization {
    flow: FlowSpec,
    grid: Grid,
    rule: GaussRule,
    cached: Option<(Vec<f64>, Vec<f64>)>,
    log_slope: Vec<Option<f64>>,
}

impl Discretization {
    pub fn new(flow: FlowSpec, nodes: usize) -> Result<Self> {
        let grid = Grid::new(flow.model(), nodes)?;
        let log_slope = grid
            .r
            .iter()
            .map(|&r| flow.model().log_warp_slope(r))
            .collect();
        let mut d = Self {
            flow,
            grid,
            rule: GaussRule::new(CELL_GAUSS_POINTS),
            cached: None,
            log_slope,
        };
        if d.flow.potential().is_time_independent() {
            d.cached = Some(d.base_coefficients(0.0)?);
        }
        Ok(d)
    }

    pub fn flow(&self) -> &FlowSpec {
        &self.flow
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &RadialModel {
        self.flow.model()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Time-independent density `A ψ^{n−1} e^{−φ₀}` at `r`.
    fn density(&self, r: f64, t: f64) -> f64 {
        let model = self.flow.model();
        let psi = if model.n == 1 {
            1.0
        } else {
            model.warp(r).psi.powi(model.n as i32 - 1)
        };
        model.sphere_area() * psi * (-self.flow.potential().value(r, t)).exp()
    }

    fn base_coefficients(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = &self.grid;
        let half = 0.5 * g.dr;
        let model = self.flow.model();
        let mut weights = Vec::with_capacity(g.len());
        for (i, &r) in g.r.iter().enumerate() {
            let mut w = 0.0;
            let has_left = g.periodic || i > 0;
            let has_right = g.periodic || i + 1 < g.len();
            if has_left {
                w += self.rule.integrate(r - half, r, |x| self.density(x, t));
            }
            if has_right {
                w += self.rule.integrate(r, r + half, |x| self.density(x, t));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Degenerate(format!("measure weight {w} at r = {r}")));
            }
            weights.push(w);
        }
        let mut kappa = Vec::with_capacity(g.interfaces());
        for i in 0..g.interfaces() {
            let mid = g.r[i] + half;
            let k = self.density(mid, t) / g.dr;
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Degenerate(format!(
                    "conductance {k} at interface r = {mid} ({} model)",
                    model.kind
                )));
            }
            kappa.push(k);
        }
        Ok((weights, kappa))
    }

    fn coefficients(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.cached {
            Some(c) => Ok(c.clone()),
            None => self.base_coefficients(t),
        }
    }

    /// Measure weights at time `t`.
    pub fn weights(&self, t: f64) -> Result<Vec<f64>> {
        let f = self.flow.measure_factor(t);
        let (w, _) = self.coefficients(t)?;
        Ok(w.into_iter().map(|x| x * f).collect())
    }

    pub fn assemble(&self, t: f64) -> Result<WittenOperator> {
        let c = self.flow.scale(t);
        if !(c > 0.0) {
            return Err(Error::Degenerate(format!("metric scale c({t}) = {c}")));
        }
        let f = self.flow.measure_factor(t);
        let (w, k) = self.coefficients(t)?;
        Ok(WittenOperator {
            kappa: k.into_iter().map(|x| x * f / c).collect(),
            weights: w.into_iter().map(|x| x * f).collect(),
            t,
            periodic: self.grid.periodic,
        })
    }

    fn endpoint(&self, right: bool) -> Boundary {
        let m = self.flow.model();
        if right {
            m.right
        } else {
            m.left
        }
    }

    /// Coordinate derivative `du/dr`: centered in the interior, zero at
    /// poles (even reflection), one-sided second order at reflecting ends.
    pub fn derivative(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let h = self.grid.dr;
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
        }
        if self.grid.periodic {
            d[0] = (u[1] - u[n - 1]) / (2.0 * h);
            d[n - 1] = (u[0] - u[n - 2]) / (2.0 * h);
            return d;
        }
        d[0] = match self.endpoint(false) {
            Boundary::PoleRegular => 0.0,
            _ => (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h),
        };
        d[n - 1] = match self.endpoint(true) {
            Boundary::PoleRegular => 0.0,
            _ => (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h),
        };
        d
    }

    /// Coordinate second derivative `d²u/dr²`.
    pub fn second_derivative(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let h2 = self.grid.dr * self.grid.dr;
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            d[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / h2;
        }
        if self.grid.periodic {
            d[0] = (u[1] - 2.0 * u[0] + u[n - 1]) / h2;
            d[n - 1] = (u[0] - 2.0 * u[n - 1] + u[n - 2]) / h2;
            return d;
        }
        d[0] = match self.endpoint(false) {
            Boundary::PoleRegular => 2.0 * (u[1] - u[0]) / h2,
            _ => (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2,
        };
        d[n - 1] = match self.endpoint(true) {
            Boundary::PoleRegular => 2.0 * (u[n - 2] - u[n - 1]) / h2,
            _ => (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2,
        };
        d
    }

    /// `|∇u|²` in `g(t)` units.
    pub fn grad_sq(&self, u: &[f64], t: f64) -> Vec<f64> {
        let c = self.flow.scale(t);
        self.derivative(u).into_iter().map(|d| d * d / c).collect()
    }

    /// `|∇²f + a g|²` for radial `f`, in `g(t)` units. Poles use the
    /// regular limit `(ψ′/ψ) f′ → f″`.
    pub fn hessian_sq(&self, f: &[f64], t: f64, a: f64) -> Vec<f64> {
        let c = self.flow.scale(t);
        let n = self.flow.model().n;
        let d1 = self.derivative(f);
        let d2 = self.second_derivative(f);
        (0..f.len())
            .map(|i| {
                let rad = d2[i] / c + a;
                if n == 1 {
                    return rad * rad;
                }
                let tan_coord = match self.log_slope[i] {
                    Some(s) => s * d1[i],
                    None => d2[i],
                };
                let tan = tan_coord / c + a;
                rad * rad + (n - 1) as f64 * tan * tan
            })
            .collect()
    }

    /// Node mask excluding `band` cells next to each pole.
    pub fn away_from_poles(&self, band: usize) -> Vec<bool> {
        let n = self.len();
        let m = self.flow.model();
        (0..n)
            .map(|i| {
                let near_left = m.left == Boundary::PoleRegular && i < band;
                let near_right = m.right == Boundary::PoleRegular && i + band >= n;
                !(near_left || near_right)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{Coupling, FlowKind};
    use crate::geometry::Potential;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn static_disc(model: RadialModel, phi: Potential, nodes: usize) -> Discretization {
        Discretization::new(FlowSpec::fixed(model, phi, 1.0).unwrap(), nodes).unwrap()
    }

    fn models() -> Vec<(RadialModel, Potential)> {
        vec![
            (
                RadialModel::circle(2.0 * PI).unwrap(),
                Potential::Cosine(0.4),
            ),
            (
                RadialModel::interval(PI).unwrap(),
                Potential::Quadratic(0.3),
            ),
            (RadialModel::sphere(2).unwrap(), Potential::Cosine(0.5)),
            (RadialModel::sphere(3).unwrap(), Potential::default()),
            (
                RadialModel::euclidean(2, 4.0).unwrap(),
                Potential::Quadratic(1.0),
            ),
            (
                RadialModel::hyperbolic(3, 6.0).unwrap(),
                Potential::default(),
            ),
        ]
    }

    #[test]
    fn circle_cosine_truncation() {
        let d = static_disc(
            RadialModel::circle(2.0 * PI).unwrap(),
            Potential::default(),
            256,
        );
        let op = d.assemble(0.0).unwrap();
        let u: Vec<f64> = d.grid().r.iter().map(|r| r.cos()).collect();
        let lu = op.apply(&u);
        let h = d.grid().dr;
        let err = lu
            .iter()
            .zip(&u)
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        assert!(err <= h * h / 12.0, "{err} vs {}", h * h / 12.0);
    }

    #[test]
    fn circle_second_order() {
        let err = |n| {
            let d = static_disc(
                RadialModel::circle(2.0 * PI).unwrap(),
                Potential::default(),
                n,
            );
            let u: Vec<f64> = d.grid().r.iter().map(|r| r.cos()).collect();
            let lu = d.assemble(0.0).unwrap().apply(&u);
            lu.iter()
                .zip(&u)
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max)
        };
        assert!(err(64) / err(128) >= 3.9);
    }

    #[test]
    fn constants_are_harmonic() {
        for (m, phi) in models() {
            let d = static_disc(m, phi, 100);
            let op = d.assemble(0.3).unwrap();
            let lu = op.apply(&vec![5.0; d.len()]);
            assert!(lu.iter().all(|v| *v == 0.0));
            let v: Vec<f64> = d.grid().r.iter().map(|r| (2.0 * r).sin() + r).collect();
            let div = op.stiffness(&v).iter().sum::<f64>();
            assert!(div.abs() < 1e-12 * op.kappa.iter().sum::<f64>());
        }
    }

    #[test]
    fn gaussian_drift_on_plane() {
        let d = static_disc(
            RadialModel::euclidean(2, 3.0).unwrap(),
            Potential::Quadratic(1.0),
            301,
        );
        let h = d.grid().dr;
        let u: Vec<f64> = d.grid().r.iter().map(|r| r * r).collect();
        let lu = d.assemble(0.0).unwrap().apply(&u);
        for (i, r) in d.grid().r.iter().enumerate().take(d.len() - 1) {
            assert!(
                (lu[i] - (4.0 - 2.0 * r * r)).abs() < 10.0 * h * h,
                "r={r}: {}",
                lu[i]
            );
        }
    }

    #[test]
    fn sphere_area_quadrature() {
        let d = static_disc(RadialModel::sphere(2).unwrap(), Potential::default(), 400);
        let w = d.weights(0.0).unwrap();
        assert!((quadrature(&vec![1.0; 400], &w) - 4.0 * PI).abs() < 1e-6);
        assert_eq!(quadrature(&vec![0.0; 400], &w), 0.0);
    }

    #[test]
    fn pole_node_is_consistent() {
        for n in [2usize, 3] {
            let d = static_disc(
                RadialModel::euclidean(n, 2.0).unwrap(),
                Potential::default(),
                201,
            );
            let op = d.assemble(0.0).unwrap();
            let v: Vec<f64> = d.grid().r.iter().map(|r| 1.0 - r * r).collect();
            assert_relative_eq!(op.apply(&v)[0], -2.0 * n as f64, epsilon = 1e-9);
            let u: Vec<f64> = d.grid().r.iter().map(|r| r.cos()).collect();
            assert!((op.apply(&u)[0] + n as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn grad_sq_examples() {
        let d = static_disc(
            RadialModel::circle(2.0 * PI).unwrap(),
            Potential::default(),
            256,
        );
        let u: Vec<f64> = d.grid().r.iter().map(|r| r.sin()).collect();
        let g = d.grad_sq(&u, 0.0);
        let h = d.grid().dr;
        for (gi, r) in g.iter().zip(&d.grid().r) {
            assert!((gi - r.cos().powi(2)).abs() < h * h);
        }
        assert!(d.grad_sq(&vec![2.0; 256], 0.0).iter().all(|v| *v == 0.0));

        let flow = FlowSpec::new(
            FlowKind::Exponential { lambda: 0.5 },
            RadialModel::euclidean(2, 3.0).unwrap(),
            Potential::default(),
            Coupling::Independent,
            1.0,
        )
        .unwrap();
        let d = Discretization::new(flow, 64).unwrap();
        let u = d.grid().r.clone();
        let g = d.grad_sq(&u, 0.8);
        for v in &g[1..] {
            assert_relative_eq!(*v, (-0.8f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_examples() {
        let t = 0.4;
        let d = static_disc(
            RadialModel::euclidean(2, 3.0).unwrap(),
            Potential::default(),
            121,
        );
        let f: Vec<f64> = d.grid().r.iter().map(|r| r * r / (4.0 * t)).collect();
        let h = d.hessian_sq(&f, t, -1.0 / (2.0 * t));
        assert!(h.iter().all(|v| v.abs() < 1e-20));

        let s2 = static_disc(RadialModel::sphere(2).unwrap(), Potential::default(), 201);
        let f: Vec<f64> = s2.grid().r.iter().map(|r| r.cos()).collect();
        let h = s2.hessian_sq(&f, 0.0, 0.0);
        assert!(h[100].abs() < 1e-6, "{}", h[100]);
        assert!(s2
            .hessian_sq(&vec![1.0; 201], 0.0, 0.0)
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn self_adjoint_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (m, phi) in models() {
            let d = static_disc(m, phi, 120);
            let op = d.assemble(0.2).unwrap();
            let norm_l = op.kappa.iter().cloned().fold(0.0, f64::max)
                / op.weights.iter().cloned().fold(f64::INFINITY, f64::min);
            for _ in 0..20 {
                let u: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let vw: Vec<f64> = v.iter().zip(&op.weights).map(|(a, b)| a * b).collect();
                let a = quadrature(&op.apply(&u), &vw);
                let lv = op.apply(&v);
                let b: f64 = u
                    .iter()
                    .zip(&lv)
                    .zip(&op.weights)
                    .map(|((a, b), w)| a * b * w)
                    .sum();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((a - b).abs() <= 1e-12 * nu * nv * norm_l * op.weights.iter().sum::<f64>());
                let dir = op.dirichlet(&u, &v);
                assert!((a + dir).abs() <= 1e-10 * (1.0 + dir.abs()));
            }
        }
    }

    #[test]
    fn measure_preserving_weights_are_fixed() {
        let flow = FlowSpec::new(
            FlowKind::ShrinkingSphere,
            RadialModel::sphere(2).unwrap(),
            Potential::Cosine(0.3),
            Coupling::MeasurePreserving,
            0.4,
        )
        .unwrap();
        let d = Discretization::new(flow, 80).unwrap();
        let a: f64 = d.weights(0.0).unwrap().iter().sum();
        let b: f64 = d.weights(0.37).unwrap().iter().sum();
        assert!(((a - b) / a).abs() <= 1e-12);
    }

    proptest! {
        #[test]
        fn dirichlet_form_is_nonnegative(
            idx in 0usize..6,
            vals in prop::collection::vec(-3.0f64..3.0, 40),
        ) {
            let (m, phi) = models().swap_remove(idx);
            let d = static_disc(m, phi, 40);
            let op = d.assemble(0.0).unwrap();
            let lu = op.apply(&vals);
            let lhs: f64 = lu.iter().zip(&vals).zip(&op.weights).map(|((a, b), w)| a * b * w).sum();
            let dir = op.dirichlet(&vals, &vals);
            prop_assert!(dir >= 0.0);
            prop_assert!((lhs + dir).abs() <= 1e-10 * (1.0 + dir));
        }
    }
}
