//! Covariance of every measure kind, semigroup laws, duality, additivity and positivity.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::{no_event_apply, no_event_apply_heisenberg, DensityOperator};
use crate::error::Result;
use crate::fock::{fock_measure_apply, shift_exp, ExpRankOne, SmoothProbe};
use crate::grid::{Direction, GridFunction, GridOperator, GridSpec};
use crate::measure::{additivity_residual, check_covariance, IntervalMeasure, OperatorMeasure};
use crate::semigroup::{check_semigroup_law, SemigroupFamily};
use crate::state::LinearState;
use crate::volterra::{integral_identity_residuals, TimeGrid};
use crate::C64;

use super::models::{march, DiffusionModel, InjectionModel, RankOneModel};
use super::{max_of, Run};

/// Heat-based measures: a bounded density and a generator density with `M = diag e^{-x}`.
fn heat_measures(spec: GridSpec) -> Result<(Arc<SemigroupFamily>, OperatorMeasure, OperatorMeasure)> {
    let heat = Arc::new(SemigroupFamily::heat_extinction(spec));
    let m = GridOperator::diagonal(&GridFunction::from_real_fn(spec, |x| (-x).exp()));
    let bounded = OperatorMeasure::bounded_density(heat.clone(), m.clone())?;
    let generator = OperatorMeasure::generator_density(heat.clone(), m)?;
    Ok((heat, bounded, generator))
}

fn probe(spec: GridSpec) -> GridFunction {
    GridFunction::from_real_fn(spec, |x| x * (-x / 2.0).exp())
}

fn relative<S: LinearState>(
    measure: &dyn IntervalMeasure<S>,
    family: &dyn crate::state::Evolution<S>,
    a: f64,
    b: f64,
    t: f64,
    p: &S,
) -> Result<f64> {
    let r = check_covariance(measure, family, a, b, t, p)?;
    Ok(r.residual / r.reference_norm.max(f64::MIN_POSITIVE))
}

fn additivity<S: LinearState>(measure: &dyn IntervalMeasure<S>, a: f64, b: f64, c: f64, p: &S) -> Result<f64> {
    let scale = measure.mass(a, c, p)?.norm().max(f64::MIN_POSITIVE);
    Ok(additivity_residual(measure, a, b, c, p)? / scale)
}

fn random_density(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<DensityOperator> {
    let n = spec.n_points();
    let k = Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    DensityOperator::new(spec, k)
}

fn random_operator(spec: GridSpec, rng: &mut ChaCha8Rng) -> Result<GridOperator> {
    let n = spec.n_points();
    GridOperator::new(spec, Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
}

pub(super) fn run(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.grid_spec()?;
    let tg = cfg.time_grid()?;
    let dt = tg.dt();
    let (a, b, t) = (2.0 * dt, 6.0 * dt, tg.t_max());

    let rank_one = RankOneModel::new(spec, false);
    let r1 = check_covariance(&rank_one.measure, &rank_one.base, a, b, t, &rank_one.eta)?.residual;
    run.record("covariance_rank_one", r1);

    let inj = InjectionModel::new(spec, false);
    run.record("covariance_injection", check_covariance(&inj.measure, &inj.base, a, b, t, &inj.omega)?.residual);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let f = SmoothProbe::random(&mut rng).sample(spec);
    let g = SmoothProbe::random(&mut rng).sample(spec);
    let r = ExpRankOne::new(C64::new(1.0, 0.0), f, g)?;
    let moved = fock_measure_apply(&shift_exp(&r, t, Direction::LeftAdjoint)?, a, b)?;
    let translated = fock_measure_apply(&r, a + t, b + t)?;
    let fock = if moved == translated {
        0.0
    } else {
        let z = GridFunction::zeros(spec);
        (moved.matrix_element(&z, &z)? - translated.matrix_element(&z, &z)?).norm()
    };
    run.record("covariance_fock", fock);

    // The diffusion model is dense in the density dimension; a coarse grid suffices.
    let small = GridSpec::new(8.0, 32)?;
    let small_tg = TimeGrid::new(0.5, 50)?;
    let sd = small_tg.dt();
    let diffusion = DiffusionModel::new(small, sd, false)?;
    run.record_note(
        "covariance_jump",
        relative(&diffusion.measure, &diffusion.base, 2.0 * sd, 6.0 * sd, 10.0 * sd, &diffusion.omega)?,
        "grid 8.0 x 32, cells of 0.01",
    );

    let levels: Vec<GridSpec> =
        if run.nested { vec![GridSpec::new(spec.x_max(), spec.n_points() / 2)?, spec, spec.refined()] } else { vec![spec] };
    let base_index = if run.nested { 1 } else { 0 };
    let mut density_rows = Vec::new();
    let mut generator_rows = Vec::new();
    let mut law_rows = Vec::new();
    for s in &levels {
        let (heat, bounded, generator) = heat_measures(*s)?;
        let p = probe(*s);
        density_rows.push((s.h(), None, relative(&bounded, heat.as_ref(), a, b, t, &p)?));
        generator_rows.push((s.h(), None, relative(&generator, heat.as_ref(), a, b, t, &p)?));
        law_rows.push((s.h(), None, check_semigroup_law(&heat, t / 2.0, t / 4.0, 1e-3)?.interior_frobenius));
    }
    run.record("covariance_heat_density", density_rows[base_index].2);
    run.record("covariance_heat_generator", generator_rows[base_index].2);
    run.rows("covariance_heat_density", &density_rows);
    run.rows("covariance_heat_generator", &generator_rows);

    let shift = SemigroupFamily::right_shift(spec);
    run.record("semigroup_law_shift", check_semigroup_law(&shift, t / 2.0, t / 4.0, 0.0)?.frobenius);
    run.record("semigroup_law_heat", law_rows[base_index].2);
    run.rows("semigroup_law_heat", &law_rows);

    let (heat, bounded, _) = heat_measures(spec)?;
    let omega = random_density(spec, &mut rng)?;
    let x = random_operator(spec, &mut rng)?;
    let lhs = no_event_apply(&heat, t, &omega)?.pairing(&x)?;
    let rhs = omega.pairing(&no_event_apply_heisenberg(&heat, t, &x)?)?;
    run.record("duality", (lhs - rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE));

    let c = 9.0 * dt;
    let eta = probe(spec);
    let add = max_of([
        additivity(&rank_one.measure, a, b, c, &rank_one.eta)?,
        additivity(&inj.measure, a, b, c, &inj.omega)?,
        additivity(&bounded, a, b, c, &eta)?,
        additivity(&diffusion.measure, 2.0 * sd, 6.0 * sd, 9.0 * sd, &diffusion.omega)?,
    ]);
    run.record("additivity", add);

    let jump_mass = diffusion.measure.mass(2.0 * sd, 6.0 * sd, &diffusion.omega)?;
    let inj_mass = inj.measure.mass(a, b, &inj.omega)?;
    run.record("measure_positivity", jump_mass.min_eigenvalue().min(inj_mass.min_eigenvalue()));

    let fam = march::<GridFunction>(cfg, heat.as_ref(), &bounded, tg, &eta)?;
    run.record("integral_identity", max_of(integral_identity_residuals(&fam, heat.as_ref(), &bounded)?));
    Ok(())
}
