//! Scenarios over shift bases: trace restoration, the singular rank-one perturbation and
//! reconstruction round trips.

use crate::density::{no_event_apply, DensityOperator};
use crate::error::Result;
use crate::grid::GridFunction;
use crate::measure::IntervalMeasure;
use crate::state::{Evolution, LinearState};
use crate::volterra::{
    base_roundtrip_residual, dyson_series, integral_identity_residuals, march_perturbed, reconstruct_initial_state,
    scalar_volterra_rank_one, MarchMode, PerturbedFamily, ShiftInvert, TimeGrid,
};

use super::config::ScenarioConfig;
use super::models::{march, positivity_floor, states_of, DiffusionModel, InjectionModel, RankOneModel};
use super::{max_of, Run};

/// Largest pointwise-in-time distance between two trajectories.
fn max_distance<S: LinearState>(a: &[S], b: &[S]) -> Result<f64> {
    a.iter().zip(b).try_fold(0.0f64, |m, (x, y)| Ok(m.max(x.distance(y)?)))
}

fn reconstruct_step(cfg: &ScenarioConfig) -> usize {
    cfg.params.reconstruct_step.unwrap_or(cfg.time.n_steps / 2)
}

/// Recovery error of the initial argument at step `k`, using a trajectory-mode march.
fn initial_recovery<S: ShiftInvert>(
    family: &PerturbedFamily<S>,
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    init: &S,
    k: usize,
) -> Result<f64> {
    let owned;
    let traj = if family.states().is_some() {
        family
    } else {
        owned = march_perturbed(base, measure, grid, MarchMode::Trajectory(init))?;
        &owned
    };
    let est = reconstruct_initial_state(traj, base, measure, k)?;
    est.estimate.distance(&init.restrict(est.window.lo_index, est.window.hi_index))
}

fn identity<S: LinearState>(p: &PerturbedFamily<S>, base: &dyn Evolution<S>, m: &dyn IntervalMeasure<S>) -> Result<f64> {
    Ok(max_of(integral_identity_residuals(p, base, m)?))
}

pub(super) fn run_trace_restoration(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.grid_spec()?;
    let tg = cfg.time_grid()?;
    let model = InjectionModel::new(spec, cfg.params.zero_measure);
    let w = &model.omega;
    let fam = march::<DensityOperator>(cfg, &model.base, &model.measure, tg, w)?;
    let states = states_of(&fam, w)?;

    let trace0 = w.trace().re;
    let deviation = max_of(states.iter().map(|s| (s.trace().re - 1.0).abs()));
    run.record_note("trace_deviation", deviation, format!("Tr w = {trace0:.6}"));

    let mut profile = 0.0f64;
    let mut last = trace0;
    for k in 0..=tg.n_steps() {
        let t = tg.time(k);
        last = no_event_apply(&model.vector, t, w)?.trace().re;
        profile = profile.max((last - (-2.0 * t).exp() * trace0).abs());
    }
    run.record("no_event_trace_profile", profile);
    run.record_note("unperturbed_trace_loss", trace0 - last, format!("unperturbed trace at t_max {last:.3e}"));

    run.record("integral_identity", identity(&fam, &model.base, &model.measure)?);
    run.record("positivity_floor", positivity_floor(&states));

    let dyson = dyson_series(&model.base, &model.measure, tg, w, cfg.solver.dyson_order_cap, cfg.solver.dyson_tol)?;
    let d = max_distance(dyson.family.states().expect("trajectory"), &states)?;
    run.record_note("dyson_vs_march", d, dyson_note(&dyson.report));

    let k = reconstruct_step(cfg);
    run.record("initial_state_recovery", initial_recovery(&fam, &model.base, &model.measure, tg, w, k)?);
    run.record("base_roundtrip", base_roundtrip_residual(&fam, &model.base, &model.measure)?);
    Ok(())
}

fn dyson_note(report: &crate::volterra::DysonReport) -> String {
    let orders = report.order_norms.len();
    if report.converged {
        format!("converged after {orders} orders")
    } else {
        format!("not converged after {orders} orders")
    }
}

pub(super) fn run_rank_one(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.grid_spec()?;
    let tg = cfg.time_grid()?;
    let model = RankOneModel::new(spec, cfg.params.zero_measure);
    let eta = &model.eta;
    let fam = march::<GridFunction>(cfg, &model.base, &model.measure, tg, eta)?;
    let states = states_of(&fam, eta)?;

    let e = if cfg.params.zero_measure { GridFunction::zeros(spec) } else { model.e.clone() };
    let scalar = scalar_volterra_rank_one(&e, eta, tg)?;
    let scalar_states = scalar.family.states().expect("trajectory");
    run.record("scalar_vs_march", max_distance(scalar_states, &states)?);

    let dyson = dyson_series(&model.base, &model.measure, tg, eta, cfg.solver.dyson_order_cap, cfg.solver.dyson_tol)?;
    let dyson_states = dyson.family.states().expect("trajectory");
    run.record_note("dyson_vs_march", max_distance(dyson_states, &states)?, dyson_note(&dyson.report));
    run.record("dyson_vs_scalar", max_distance(dyson_states, scalar_states)?);

    if cfg.params.zero_measure {
        run.record_note("renewal_closed_form", f64::NAN, "closed form assumes the rank-one measure");
    } else {
        let err = max_of(scalar.phi.iter().enumerate().map(|(k, p)| (p - RankOneModel::closed_form_amplitude(tg.time(k))).norm()));
        run.record("renewal_closed_form", err);
    }

    run.record("integral_identity", identity(&fam, &model.base, &model.measure)?);
    let k = reconstruct_step(cfg);
    run.record("initial_state_recovery", initial_recovery(&fam, &model.base, &model.measure, tg, eta, k)?);
    run.record("base_roundtrip", base_roundtrip_residual(&fam, &model.base, &model.measure)?);
    Ok(())
}

pub(super) fn run_reconstruction(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let spec = cfg.grid_spec()?;
    let tg = cfg.time_grid()?;
    let zero = cfg.params.zero_measure;
    let k = reconstruct_step(cfg);

    let vector = RankOneModel::new(spec, zero);
    let vfam = march::<GridFunction>(cfg, &vector.base, &vector.measure, tg, &vector.eta)?;
    let inj = InjectionModel::new(spec, zero);
    let dfam = march::<DensityOperator>(cfg, &inj.base, &inj.measure, tg, &inj.omega)?;

    // The diffusion model needs its own grid: a coarse one keeps the dense base cheap.
    let diff_spec = crate::grid::GridSpec::new(8.0, 32)?;
    let diff_tg = TimeGrid::new(0.5, 50)?;
    let diffusion = DiffusionModel::new(diff_spec, diff_tg.dt(), zero)?;
    let gfam = march::<DensityOperator>(cfg, &diffusion.base, &diffusion.measure, diff_tg, &diffusion.omega)?;

    run.record("base_roundtrip_vector", base_roundtrip_residual(&vfam, &vector.base, &vector.measure)?);
    run.record("base_roundtrip_density", base_roundtrip_residual(&dfam, &inj.base, &inj.measure)?);
    run.record_note(
        "base_roundtrip_diffusion",
        base_roundtrip_residual(&gfam, &diffusion.base, &diffusion.measure)?,
        "grid 8.0 x 32, t = 0.5 in 50 steps",
    );
    run.record("initial_state_vector", initial_recovery(&vfam, &vector.base, &vector.measure, tg, &vector.eta, k)?);
    run.record("initial_state_density", initial_recovery(&dfam, &inj.base, &inj.measure, tg, &inj.omega, k)?);
    let worst = max_of([
        identity(&vfam, &vector.base, &vector.measure)?,
        identity(&dfam, &inj.base, &inj.measure)?,
        identity(&gfam, &diffusion.base, &diffusion.measure)?,
    ]);
    run.record("integral_identity", worst);
    let mut floor = positivity_floor(&states_of(&dfam, &inj.omega)?);
    floor = floor.min(positivity_floor(&states_of(&gfam, &diffusion.omega)?));
    run.record("positivity_floor", floor);
    Ok(())
}
