//! Model problems shared by the scenarios.

use std::sync::Arc;

use crate::density::{diffusion_operators, DensityOperator, NoEventFamily};
use crate::error::Result;
use crate::grid::{GridFunction, GridOperator, GridSpec};
use crate::measure::{CellRule, Level, OperatorMeasure};
use crate::semigroup::SemigroupFamily;
use crate::state::LinearState;
use crate::volterra::{march_perturbed, MarchMode, PerturbedFamily, TimeGrid};
use crate::C64;

use super::config::{ScenarioConfig, SolverMode};

pub fn normalized(f: GridFunction) -> GridFunction {
    let n = f.norm();
    f.scaled(C64::new(1.0 / n, 0.0))
}

/// Rate constant of the singular rank-one perturbation.
pub const RANK_ONE_RATE: f64 = 0.5;

/// Right shift perturbed by `η ↦ ⟨e, η⟩ χ` with `e = c e^{-x}`; initial vector `x e^{-x/2}`.
pub struct RankOneModel {
    pub base: SemigroupFamily,
    pub measure: OperatorMeasure,
    pub eta: GridFunction,
    pub e: GridFunction,
}

impl RankOneModel {
    pub fn new(spec: GridSpec, zero_measure: bool) -> Self {
        let e = GridFunction::from_real_fn(spec, |x| RANK_ONE_RATE * (-x).exp());
        let eta = GridFunction::from_real_fn(spec, |x| x * (-x / 2.0).exp());
        let measure = if zero_measure { OperatorMeasure::zero(spec, Level::Vector) } else { OperatorMeasure::singular_rank_one(e.clone()) };
        Self { base: SemigroupFamily::right_shift(spec), measure, eta, e }
    }

    /// `φ(t) = c A e^{(c-1)t}` with `A = ∫ e^{-y} y e^{-y/2} dy = 4/9`.
    pub fn closed_form_amplitude(t: f64) -> f64 {
        let c = RANK_ONE_RATE;
        c * (4.0 / 9.0) * ((c - 1.0) * t).exp()
    }
}

/// No-event right shift with trace re-injected into a Gaussian bump; initial state
/// `|ψ⟩⟨ψ|` with `ψ = √2 e^{-x}`.
pub struct InjectionModel {
    pub base: NoEventFamily,
    pub vector: Arc<SemigroupFamily>,
    pub measure: OperatorMeasure,
    pub omega: DensityOperator,
}

impl InjectionModel {
    pub fn new(spec: GridSpec, zero_measure: bool) -> Self {
        let vector = Arc::new(SemigroupFamily::right_shift(spec));
        let bump = normalized(GridFunction::from_real_fn(spec, |x| (-(x - 2.0) * (x - 2.0)).exp()));
        let measure = if zero_measure {
            OperatorMeasure::zero(spec, Level::Density)
        } else {
            OperatorMeasure::boundary_injection(DensityOperator::pure(&bump))
        };
        let psi = GridFunction::from_real_fn(spec, |x| 2f64.sqrt() * (-x).exp());
        Self { base: NoEventFamily::new(vector.clone()), vector, measure, omega: DensityOperator::pure(&psi) }
    }
}

/// No-event diffusion with the jump `L = −d/dx`; exact-cell quadrature at the time step.
pub struct DiffusionModel {
    pub base: NoEventFamily,
    pub k: GridOperator,
    pub ls: Vec<GridOperator>,
    pub measure: OperatorMeasure,
    pub omega: DensityOperator,
}

impl DiffusionModel {
    pub fn new(spec: GridSpec, dt: f64, zero_measure: bool) -> Result<Self> {
        let (k, ls) = diffusion_operators(spec);
        let fam = Arc::new(SemigroupFamily::symmetric_generator(&k)?);
        let measure = if zero_measure {
            OperatorMeasure::zero(spec, Level::Density).with_quadrature_step(dt)?
        } else {
            OperatorMeasure::lindblad_jump(fam.clone(), &ls)?.with_quadrature_step(dt)?.with_cell_rule(CellRule::Exact)?
        };
        let psi = normalized(GridFunction::from_real_fn(spec, |x| (-((x - 4.0) / 0.7).powi(2)).exp() * (1.0 - (-x).exp())));
        Ok(Self { base: NoEventFamily::new(fam), k, ls, measure, omega: DensityOperator::pure(&psi) })
    }
}

/// Perturbed family in the configured mode. Reference mode stores full maps and is
/// subject to the capacity cap.
pub fn march<S: LinearState>(
    cfg: &ScenarioConfig,
    base: &dyn crate::state::Evolution<S>,
    measure: &dyn crate::measure::IntervalMeasure<S>,
    grid: TimeGrid,
    init: &S,
) -> Result<PerturbedFamily<S>> {
    match cfg.solver.mode {
        SolverMode::Trajectory => march_perturbed(base, measure, grid, MarchMode::Trajectory(init)),
        SolverMode::Reference => march_perturbed(base, measure, grid, MarchMode::Reference { cap: cfg.reference_cap()? }),
    }
}

/// `T̆_k(init)` for either storage mode.
pub fn states_of<S: LinearState>(p: &PerturbedFamily<S>, init: &S) -> Result<Vec<S>> {
    match p.states() {
        Some(s) => Ok(s.to_vec()),
        None => (0..=p.time_grid().n_steps()).map(|k| p.apply(k, init)).collect(),
    }
}

/// Smallest eigenvalue over a trajectory of densities.
pub fn positivity_floor(states: &[DensityOperator]) -> f64 {
    use rayon::prelude::*;
    states.par_iter().map(|w| w.min_eigenvalue()).reduce(|| f64::INFINITY, f64::min)
}
