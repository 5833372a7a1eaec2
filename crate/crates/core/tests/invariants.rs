use proptest::prelude::*;
use wittenlab_core::{
    boltzmann_entropy, step, Discretization, FlowSpec, HeatState, Potential, RadialModel, Scheme,
};

const NODES: usize = 48;

fn disc(idx: usize) -> Discretization {
    let (model, phi) = match idx {
        0 => (
            RadialModel::circle(2.0 * std::f64::consts::PI),
            Potential::Cosine(0.7),
        ),
        1 => (RadialModel::interval(3.0), Potential::Quadratic(1.5)),
        2 => (RadialModel::sphere(2), Potential::Cosine(-0.5)),
        3 => (RadialModel::sphere(3), Potential::default()),
        4 => (RadialModel::euclidean(2, 5.0), Potential::Quadratic(1.0)),
        _ => (RadialModel::hyperbolic(3, 4.0), Potential::Quadratic(0.5)),
    };
    Discretization::new(FlowSpec::fixed(model.unwrap(), phi, 1.0).unwrap(), NODES).unwrap()
}

fn state(d: &Discretization, vals: &[f64]) -> HeatState {
    HeatState::new(d, vals.to_vec(), 0.0, 0.0).unwrap()
}

fn data() -> impl Strategy<Value = (usize, Vec<f64>, f64)> {
    (
        0usize..6,
        prop::collection::vec(0.05f64..5.0, NODES),
        1e-4f64..5e-2,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_step_conserves_mass((idx, vals, dt) in data(), be in any::<bool>()) {
        let d = disc(idx);
        let s = state(&d, &vals);
        let scheme = if be { Scheme::BackwardEuler } else { Scheme::CrankNicolson };
        let (next, _) = step(&d, &s, dt, scheme).unwrap();
        prop_assert!((next.mass - s.mass).abs() <= 1e-11 * s.mass);
    }

    #[test]
    fn positivity_survives_every_step((idx, vals, dt) in data()) {
        let d = disc(idx);
        let (next, _) = step(&d, &state(&d, &vals), 10.0 * dt, Scheme::CrankNicolson).unwrap();
        prop_assert!(next.min() > 0.0);
    }

    #[test]
    fn backward_euler_obeys_maximum_principle((idx, vals, dt) in data()) {
        let d = disc(idx);
        let s = state(&d, &vals);
        let (next, _) = step(&d, &s, dt, Scheme::BackwardEuler).unwrap();
        let max = |u: &[f64]| u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(next.min() >= s.min() * (1.0 - 1e-12));
        prop_assert!(max(&next.u) <= max(&s.u) * (1.0 + 1e-12));
    }

    #[test]
    fn backward_euler_does_not_lower_entropy((idx, vals, dt) in data()) {
        let d = disc(idx);
        let s = state(&d, &vals);
        let (next, _) = step(&d, &s, dt, Scheme::BackwardEuler).unwrap();
        let (h0, h1) = (boltzmann_entropy(&s), boltzmann_entropy(&next));
        prop_assert!(h1 >= h0 - 1e-12 * (1.0 + h0.abs()), "{h0} -> {h1}");
    }
}
