//! Named scenarios: configuration, runners and reports.
//!
//! Every scenario declares a fixed list of checks. A run evaluates each of them once and
//! records refinement rows for the quantities whose discretization error it studies.

pub mod config;
pub mod report;

mod covariance;
mod fock;
mod gksl;
mod models;
mod shift;

use std::time::Instant;

pub use config::{OutputFormat, ScenarioConfig, ScenarioName, SolverMode, CONFIG_SCHEMA_VERSION, REFERENCE_CAP_ENV};
pub use report::{
    CheckResult, ConvergenceTable, Criterion, ObservedOrder, OrderLabel, RefinementRow, ScenarioReport, Timing, REPORT_SCHEMA_VERSION,
};

use crate::error::{Error, Result};

/// A check a scenario promises to evaluate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckSpec {
    pub name: &'static str,
    pub criterion: Criterion,
    pub description: &'static str,
}

impl CheckSpec {
    /// Only one-sided bounds can be changed from the config.
    pub fn overridable(&self) -> bool {
        !matches!(self.criterion, Criterion::Within { .. })
    }
}

const fn at_most(name: &'static str, bound: f64, description: &'static str) -> CheckSpec {
    CheckSpec { name, criterion: Criterion::AtMost { bound }, description }
}

const fn at_least(name: &'static str, bound: f64, description: &'static str) -> CheckSpec {
    CheckSpec { name, criterion: Criterion::AtLeast { bound }, description }
}

const fn within(name: &'static str, lo: f64, hi: f64, description: &'static str) -> CheckSpec {
    CheckSpec { name, criterion: Criterion::Within { lo, hi }, description }
}

const GKSL_CHECKS: &[CheckSpec] = &[
    at_most("rel_error", 1e-2, "relative Frobenius distance to the RK4 master-equation solution at t_max"),
    at_least("refinement_gain", 2.0, "error ratio when both grids are refined 2x"),
    at_most("integral_identity", 1e-12, "largest per-step residual of the discrete integral equation"),
    at_least("positivity_floor", -1e-8, "smallest eigenvalue along the perturbed trajectory"),
];

const SHIFT_CHECKS: &[CheckSpec] = &[
    at_most("trace_deviation", 1e-3, "max |Tr - 1| of the perturbed trajectory"),
    at_most("no_event_trace_profile", 1e-3, "max |Tr - e^{-2t} Tr(w)| of the unperturbed trajectory"),
    at_least("unperturbed_trace_loss", 0.9, "trace lost by the unperturbed evolution at t_max"),
    at_most("integral_identity", 1e-12, "largest per-step residual of the discrete integral equation"),
    at_least("positivity_floor", -1e-8, "smallest eigenvalue along the perturbed trajectory"),
    at_most("dyson_vs_march", 1e-10, "largest distance between the Dyson sum and the march"),
    at_most("initial_state_recovery", 1e-9, "recovered initial state vs truth on the validity window"),
    at_most("base_roundtrip", 1e-12, "reconstructed base family vs direct evaluation"),
];

const RANK_ONE_CHECKS: &[CheckSpec] = &[
    at_most("scalar_vs_march", 1e-10, "scalar renewal solver vs the vector march"),
    at_most("dyson_vs_march", 1e-10, "Dyson sum vs the vector march"),
    at_most("dyson_vs_scalar", 1e-10, "Dyson sum vs the scalar renewal solver"),
    at_most("renewal_closed_form", 5e-3, "renewal amplitude vs its closed form"),
    at_most("integral_identity", 1e-12, "largest per-step residual of the discrete integral equation"),
    at_most("initial_state_recovery", 1e-9, "recovered initial vector vs truth on the validity window"),
    at_most("base_roundtrip", 1e-12, "reconstructed base family vs direct evaluation"),
];

const FOCK_CHECKS: &[CheckSpec] = &[
    at_most("forgetting_two_route", 1e-8, "forgetting map vs its closed-form matrix element (relative)"),
    at_most("forgetting_duality", 1e-8, "predual and Heisenberg forgetting maps paired (relative)"),
    at_most("trace_preservation", 1e-8, "trace change under the forgetting map (relative)"),
    at_most("embedding_pairing", 1e-8, "generic embedded pairing vs suffix sums (relative)"),
    at_most("embedding_intertwining", 1e-8, "embedding of a left shift vs shifted embedding"),
    at_most("measure_sandwich", 1e-8, "measure by traces vs the embedded sandwich (relative)"),
    at_most("measure_covariance", 0.0, "measure of a shifted operator vs the translated measure"),
    at_most("integral_equation_bookkeeping", 0.0, "test functions of the integral-equation terms that differ"),
    at_most("embedding_pairing_defect", 1e-3, "embedded pairing vs exp of the inner product (relative)"),
    within("embedding_pairing_order", 1.7, 2.3, "observed order of the pairing defect"),
    at_most("embedded_forgetting_defect", 1e-3, "embedded forgetting route vs the direct form (relative)"),
    within("embedded_forgetting_order", 1.7, 2.3, "observed order of the embedded forgetting defect"),
    at_most("scalar_identity_defect", 1e-3, "quadrature residual of the scalar exponential identity"),
    within("scalar_identity_order", 1.7, 2.3, "observed order of the scalar identity residual"),
    within("forgetting_exponent_order", 1.7, 2.3, "self-convergence order of the forgetting exponent"),
    within("measure_element_order", 1.7, 2.3, "self-convergence order of measure matrix elements"),
    at_most("indicator_monotonicity_violations", 0.0, "part counts where the indicator error fails to drop"),
    at_least("indicator_gain", 4.0, "indicator error ratio between the coarsest and finest partitions"),
];

const COVARIANCE_CHECKS: &[CheckSpec] = &[
    at_most("covariance_rank_one", 0.0, "singular rank-one measure under the right shift"),
    at_most("covariance_injection", 0.0, "boundary injection under the no-event shift"),
    at_most("covariance_fock", 0.0, "Fock measure under the left shift"),
    at_most("covariance_jump", 1e-12, "exact-cell jump measure under the diffusion base (relative)"),
    at_most("covariance_heat_density", 1e-3, "bounded density under the heat semigroup (relative)"),
    at_most("covariance_heat_generator", 1e-3, "generator density under the heat semigroup (relative)"),
    at_most("semigroup_law_shift", 0.0, "T_t T_s - T_{t+s} for the right shift"),
    at_most("semigroup_law_heat", 1e-3, "T_t T_s - T_{t+s} for the heat semigroup, interior block"),
    at_most("duality", 1e-10, "no-event predual vs Heisenberg pairing (relative)"),
    at_most("additivity", 1e-12, "finite additivity over adjacent intervals (relative)"),
    at_least("measure_positivity", -1e-8, "smallest eigenvalue of jump and injection masses of a state"),
    at_most("integral_identity", 1e-12, "per-step residual of the heat-density march"),
];

const RECONSTRUCTION_CHECKS: &[CheckSpec] = &[
    at_most("base_roundtrip_vector", 1e-12, "rank-one perturbation of the right shift"),
    at_most("base_roundtrip_density", 1e-12, "boundary injection over the no-event shift"),
    at_most("base_roundtrip_diffusion", 1e-12, "jump measure over the no-event diffusion"),
    at_most("initial_state_vector", 1e-9, "recovered initial vector on the validity window"),
    at_most("initial_state_density", 1e-9, "recovered initial density on the validity window"),
    at_most("integral_identity", 1e-12, "largest per-step residual over the three marches"),
    at_least("positivity_floor", -1e-8, "smallest eigenvalue along the density trajectories"),
];

/// Checks declared by a scenario, in report order.
pub fn declared_checks(name: ScenarioName) -> &'static [CheckSpec] {
    match name {
        ScenarioName::DiffusionGkslMatch => GKSL_CHECKS,
        ScenarioName::ShiftTraceRestoration => SHIFT_CHECKS,
        ScenarioName::RankOneSingular => RANK_ONE_CHECKS,
        ScenarioName::FockIdentities => FOCK_CHECKS,
        ScenarioName::CovarianceSuite => COVARIANCE_CHECKS,
        ScenarioName::ReconstructionRoundtrip => RECONSTRUCTION_CHECKS,
    }
}

/// Collects the results of one run.
pub(crate) struct Run<'a> {
    pub cfg: &'a ScenarioConfig,
    /// False inside convergence studies, where nested refinements are skipped.
    pub nested: bool,
    pub report: ScenarioReport,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ScenarioConfig, nested: bool) -> Self {
        Self { cfg, nested, report: ScenarioReport::new(cfg) }
    }

    fn spec(&self, name: &str) -> CheckSpec {
        *declared_checks(self.cfg.scenario).iter().find(|c| c.name == name).unwrap_or_else(|| panic!("undeclared check `{name}`"))
    }

    pub fn record(&mut self, name: &str, value: f64) -> &mut CheckResult {
        let spec = self.spec(name);
        let criterion = match self.cfg.tolerances.get(name) {
            Some(&bound) => spec.criterion.with_bound(bound),
            None => spec.criterion,
        };
        self.report.checks.push(CheckResult::new(spec.name, value, criterion));
        self.report.checks.last_mut().expect("just pushed")
    }

    pub fn record_note(&mut self, name: &str, value: f64, note: impl Into<String>) {
        self.record(name, value).note = Some(note.into());
    }

    /// Records a check whose evaluation needs a nested refinement that was skipped.
    pub fn skipped(&mut self, name: &str) {
        self.record_note(name, f64::NAN, "skipped inside a convergence study");
    }

    pub fn rows(&mut self, check: &str, levels: &[(f64, Option<f64>, f64)]) {
        self.report.refinement.extend(report::refinement_rows(check, levels));
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.report.warnings.push(msg.into());
    }
}

/// Runs a scenario and evaluates all of its checks.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    run_with(cfg, true)
}

fn run_with(cfg: &ScenarioConfig, nested: bool) -> Result<ScenarioReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut run = Run::new(cfg, nested);
    match cfg.scenario {
        ScenarioName::DiffusionGkslMatch => gksl::run(&mut run)?,
        ScenarioName::ShiftTraceRestoration => shift::run_trace_restoration(&mut run)?,
        ScenarioName::RankOneSingular => shift::run_rank_one(&mut run)?,
        ScenarioName::FockIdentities => fock::run(&mut run)?,
        ScenarioName::CovarianceSuite => covariance::run(&mut run)?,
        ScenarioName::ReconstructionRoundtrip => shift::run_reconstruction(&mut run)?,
    }
    let mut report = run.report;
    report.finish();
    report.timing.wall_seconds = start.elapsed().as_secs_f64();
    if nested {
        report.validate()?;
    }
    Ok(report)
}

/// Reruns the scenario on `levels` successively refined grids and tabulates every
/// upper-bounded check with observed orders. Nested refinements inside a level are skipped.
/// Stops early, with a warning, when a level exceeds a capacity limit.
pub fn convergence_report(cfg: &ScenarioConfig, levels: usize) -> Result<ConvergenceTable> {
    if levels < 2 {
        return Err(Error::Config(format!("levels: need at least 2 to estimate orders, got {levels}")));
    }
    let start = Instant::now();
    let mut per_level: Vec<(f64, f64, ScenarioReport)> = Vec::new();
    let mut warnings = Vec::new();
    for level in 0..levels {
        let refined = cfg.refined(level as u32);
        match run_with(&refined, false) {
            Ok(r) => {
                let h = refined.grid.x_max / refined.grid.n_points as f64;
                let dt = refined.time.t_max / refined.time.n_steps as f64;
                per_level.push((h, dt, r));
            }
            Err(e @ (Error::Capacity(_) | Error::TermCap { .. })) if level > 0 => {
                warnings.push(format!("stopped before level {level}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut rows = Vec::new();
    for spec in declared_checks(cfg.scenario) {
        if !matches!(spec.criterion, Criterion::AtMost { .. }) {
            continue;
        }
        let levels: Vec<(f64, Option<f64>, f64)> = per_level.iter().map(|(h, dt, r)| (*h, Some(*dt), r.value(spec.name))).collect();
        if levels.iter().all(|l| l.2.is_nan()) {
            continue;
        }
        rows.extend(report::refinement_rows(spec.name, &levels));
    }
    for (_, _, r) in &per_level {
        for w in &r.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    Ok(ConvergenceTable {
        report_schema_version: REPORT_SCHEMA_VERSION,
        scenario: cfg.scenario,
        levels_requested: levels,
        levels_completed: per_level.len(),
        rows,
        warnings,
        timing: Timing { wall_seconds: start.elapsed().as_secs_f64() },
    })
}

/// Largest value of a slice, `NaN` propagating.
pub(crate) fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_names_are_unique() {
        for name in ScenarioName::ALL {
            let checks = declared_checks(name);
            let mut names: Vec<_> = checks.iter().map(|c| c.name).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), checks.len(), "{name}");
        }
    }

    #[test]
    fn range_checks_are_not_overridable() {
        let c = FOCK_CHECKS.iter().find(|c| c.name == "scalar_identity_order").unwrap();
        assert!(!c.overridable());
        let mut cfg = ScenarioName::FockIdentities.default_config();
        cfg.tolerances.insert("scalar_identity_order".into(), 1.0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.tolerances.clear();
        cfg.tolerances.insert("indicator_gain".into(), 3.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn max_of_propagates_nan() {
        assert_eq!(max_of([1.0, 3.0, 2.0]), 3.0);
        assert!(max_of([1.0, f64::NAN]).is_nan());
        assert_eq!(max_of([]), 0.0);
    }
}
