//! Jump-measure perturbation of the no-event diffusion against a direct master-equation solve.

use crate::density::{gksl_evolve_recorded, stable_step_count, DensityOperator};
use crate::error::Result;
use crate::linalg;
use crate::volterra::{integral_identity_residuals, TimeGrid};

use super::config::ScenarioConfig;
use super::models::{march, positivity_floor, states_of, DiffusionModel};
use super::{max_of, Run};

struct Level {
    h: f64,
    dt: f64,
    rel_error: f64,
    /// Identity residual and positivity floor, evaluated on the base level only.
    invariants: Option<(f64, f64)>,
}

fn level(cfg: &ScenarioConfig, invariants: bool) -> Result<Level> {
    let spec = cfg.grid_spec()?;
    let tg = cfg.time_grid()?;
    let model = DiffusionModel::new(spec, tg.dt(), cfg.params.zero_measure)?;
    let fam = march::<DensityOperator>(cfg, &model.base, &model.measure, tg, &model.omega)?;
    let states = states_of(&fam, &model.omega)?;

    let reference = rk4_reference(&model, tg)?;
    let diff = states[tg.n_steps()].kernel() - reference.kernel();
    let rel_error = linalg::frobenius(&diff) / linalg::frobenius(reference.kernel());
    let invariants = if invariants {
        let identity = max_of(integral_identity_residuals::<DensityOperator>(&fam, &model.base, &model.measure)?);
        Some((identity, positivity_floor(&states)))
    } else {
        None
    };
    Ok(Level { h: spec.h(), dt: tg.dt(), rel_error, invariants })
}

/// RK4 solution at `t_max` with a step count that is stable and a multiple of the march steps.
fn rk4_reference(model: &DiffusionModel, tg: TimeGrid) -> Result<DensityOperator> {
    let n = tg.n_steps();
    let stable = stable_step_count(&model.k, &model.ls, tg.t_max());
    let steps = (4 * n).max(stable.div_ceil(n) * n);
    let traj = gksl_evolve_recorded(&model.k, &model.ls, &model.omega, tg.t_max(), steps, steps / n)?;
    Ok(traj.terminal().clone())
}

pub(super) fn run(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let coarse = level(cfg, run.nested)?;
    run.record("rel_error", coarse.rel_error);
    let mut rows = vec![(coarse.h, Some(coarse.dt), coarse.rel_error)];
    if run.nested {
        let fine = level(&cfg.refined(1), false)?;
        run.record_note("refinement_gain", coarse.rel_error / fine.rel_error, format!("refined error {:.3e}", fine.rel_error));
        rows.push((fine.h, Some(fine.dt), fine.rel_error));
    } else {
        run.skipped("refinement_gain");
    }
    run.rows("rel_error", &rows);
    match coarse.invariants {
        Some((identity, floor)) => {
            run.record("integral_identity", identity);
            run.record("positivity_floor", floor);
        }
        None => {
            run.skipped("integral_identity");
            run.skipped("positivity_floor");
        }
    }
    Ok(())
}
