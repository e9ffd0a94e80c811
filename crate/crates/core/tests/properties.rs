use std::sync::Arc;

use covlab_core::density::{DensityOperator, NoEventFamily};
use covlab_core::fock::{forgetting_apply, ExpRankOne};
use covlab_core::grid::{Direction, GridFunction, GridSpec};
use covlab_core::measure::{additivity_residual, check_covariance, Level, OperatorMeasure};
use covlab_core::scenario::report::observed_order;
use covlab_core::scenario::{ObservedOrder, ScenarioConfig, ScenarioName, SolverMode};
use covlab_core::semigroup::SemigroupFamily;
use covlab_core::state::{Evolution, LinearState};
use covlab_core::volterra::{march_perturbed, MarchMode, TimeGrid};
use covlab_core::C64;
use ndarray::Array1;
use proptest::prelude::*;

const N: usize = 32;

fn spec() -> GridSpec {
    GridSpec::new(4.0, N).unwrap()
}

fn function() -> impl Strategy<Value = GridFunction> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), N)
        .prop_map(|v| GridFunction::new(spec(), Array1::from_iter(v.into_iter().map(|(re, im)| C64::new(re, im)))).unwrap())
}

/// Real-valued, decaying, so exponential vectors stay well scaled.
fn test_function() -> impl Strategy<Value = GridFunction> {
    prop::collection::vec(-0.5..0.5f64, N).prop_map(|v| {
        let s = spec();
        GridFunction::new(s, Array1::from_iter(v.into_iter().enumerate().map(|(i, a)| C64::new(a * (-s.node(i)).exp(), 0.0)))).unwrap()
    })
}

fn density() -> impl Strategy<Value = DensityOperator> {
    (function(), function()).prop_map(|(a, b)| {
        let mut w = DensityOperator::pure(&a);
        w.axpy(C64::new(0.5, 0.0), &DensityOperator::pure(&b)).unwrap();
        w
    })
}

fn cells(max: usize) -> impl Strategy<Value = usize> {
    0..=max
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_is_conjugate_symmetric(f in function(), g in function()) {
        let fg = f.inner(&g).unwrap();
        let gf = g.inner(&f).unwrap();
        prop_assert!((fg - gf.conj()).norm() <= 1e-14 * (1.0 + fg.norm()));
    }

    #[test]
    fn shifts_are_adjoint(f in function(), g in function(), m in cells(N)) {
        let lhs = f.shifted(m, Direction::Right).inner(&g).unwrap();
        let rhs = f.inner(&g.shifted(m, Direction::LeftAdjoint)).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-13);
    }

    #[test]
    fn shift_semigroup_law_is_exact(f in function(), a in cells(N), b in cells(N)) {
        for dir in [Direction::Right, Direction::LeftAdjoint] {
            prop_assert_eq!(f.shifted(a, dir).shifted(b, dir), f.shifted(a + b, dir));
        }
    }

    #[test]
    fn rank_one_measure_is_additive(e in function(), p in function(), a in cells(8), b in cells(8), c in cells(8)) {
        let h = spec().h();
        let (a, b, c) = (a as f64 * h, (a + b) as f64 * h, (a + b + c) as f64 * h);
        let m = OperatorMeasure::singular_rank_one(e);
        prop_assert!(additivity_residual::<GridFunction>(&m, a, b, c, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn injection_measure_is_additive(w0 in density(), p in density(), a in cells(8), b in cells(8), c in cells(8)) {
        let h = spec().h();
        let (a, b, c) = (a as f64 * h, (a + b) as f64 * h, (a + b + c) as f64 * h);
        let m = OperatorMeasure::boundary_injection(w0);
        prop_assert!(additivity_residual::<DensityOperator>(&m, a, b, c, &p).unwrap() <= 1e-12);
    }

    #[test]
    fn shift_measures_are_exactly_covariant(e in function(), p in function(), w0 in density(), w in density(),
                                            a in cells(6), len in 1usize..6, t in cells(6)) {
        let h = spec().h();
        let (a, b, t) = (a as f64 * h, (a + len) as f64 * h, t as f64 * h);
        let shift = SemigroupFamily::right_shift(spec());
        let rank_one = OperatorMeasure::singular_rank_one(e);
        prop_assert_eq!(check_covariance::<GridFunction>(&rank_one, &shift, a, b, t, &p).unwrap().residual, 0.0);
        let no_event = NoEventFamily::new(Arc::new(shift));
        let injection = OperatorMeasure::boundary_injection(w0);
        prop_assert_eq!(check_covariance::<DensityOperator>(&injection, &no_event, a, b, t, &w).unwrap().residual, 0.0);
    }

    #[test]
    fn forgetting_preserves_trace_and_composes(f in test_function(), g in test_function(), s in cells(12), t in cells(12)) {
        let h = spec().h();
        let r = ExpRankOne::new(C64::new(1.0, 0.0), f, g).unwrap();
        let once = forgetting_apply(&r, (s + t) as f64 * h).unwrap();
        let twice = forgetting_apply(&forgetting_apply(&r, s as f64 * h).unwrap(), t as f64 * h).unwrap();
        let scale = r.trace().norm();
        prop_assert!((once.trace() - r.trace()).norm() <= 1e-13 * scale);
        prop_assert!((once.coeff() - twice.coeff()).norm() <= 1e-13 * once.coeff().norm());
        prop_assert_eq!(once.ket(), twice.ket());
        prop_assert_eq!(once.bra(), twice.bra());
    }

    #[test]
    fn zero_measure_march_reproduces_base(p in function(), steps in 1usize..8) {
        let base = SemigroupFamily::right_shift(spec());
        let grid = TimeGrid::new(steps as f64 * 2.0 * spec().h(), steps).unwrap();
        let zero = OperatorMeasure::zero(spec(), Level::Vector);
        let fam = march_perturbed::<GridFunction>(&base, &zero, grid, MarchMode::Trajectory(&p)).unwrap();
        for (k, state) in fam.states().unwrap().iter().enumerate() {
            prop_assert!(state.distance(&base.evolve(grid.time(k), &p).unwrap()).unwrap() <= 1e-15);
        }
    }

    #[test]
    fn observed_order_is_scale_invariant(r0 in 1e-6..1.0f64, ratio in 1.5..64.0f64, scale in 1.0..1e3f64) {
        let plain = observed_order(0.1, r0, 0.05, r0 / ratio);
        let scaled = observed_order(0.1, scale * r0, 0.05, scale * r0 / ratio);
        match (plain, scaled) {
            (ObservedOrder::Value(a), ObservedOrder::Value(b)) => {
                prop_assert!((a - b).abs() <= 1e-10);
                prop_assert!((a - ratio.log2()).abs() <= 1e-10);
            }
            other => prop_assert!(false, "unexpected labels {:?}", other),
        }
    }

    #[test]
    fn config_round_trips_through_toml(idx in 0usize..6, seed in any::<u64>(), reference in any::<bool>(), tuples in 20usize..40) {
        let mut cfg = ScenarioName::ALL[idx].default_config();
        cfg.seed = Some(seed);
        cfg.solver.mode = if reference { SolverMode::Reference } else { SolverMode::Trajectory };
        cfg.params.tuples = tuples;
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
