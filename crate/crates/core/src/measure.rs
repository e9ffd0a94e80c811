//! Covariant operator-valued measures given by their interval masses.

use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::density::{no_event_apply, no_event_apply_heisenberg, DensityOperator};
use crate::error::{Error, Result};
use crate::grid::{indicator, GridFunction, GridOperator, GridSpec};
use crate::linalg;
use crate::semigroup::SemigroupFamily;
use crate::state::{Evolution, LinearState, Picture};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Vector,
    Density,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Continuity {
    AbsolutelyContinuous,
    Singular,
}

/// How a cell `[t_i, t_i + δ)` of an absolutely continuous mass is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellRule {
    /// `δ · P(t_i)`.
    LeftEndpoint,
    /// `∫ P(r) dr` evaluated in closed form in the generator's eigenframe.
    Exact,
}

#[derive(Clone, Debug)]
enum Kind {
    Zero,
    BoundedDensity { family: Arc<SemigroupFamily>, m: GridOperator },
    GeneratorDensity { family: Arc<SemigroupFamily>, m: GridOperator },
    SingularRankOne { e: GridFunction },
    Jump { family: Arc<SemigroupFamily>, ls: Vec<GridOperator>, rule: CellRule },
    BoundaryInjection { omega0: DensityOperator },
}

/// An interval-additive family `[a, b) ↦ 𝔐([a, b))`.
#[derive(Clone, Debug)]
pub struct OperatorMeasure {
    spec: GridSpec,
    level: Level,
    continuity: Continuity,
    step: f64,
    kind: Kind,
}

impl OperatorMeasure {
    pub fn zero(spec: GridSpec, level: Level) -> Self {
        Self { spec, level, continuity: Continuity::AbsolutelyContinuous, step: spec.h(), kind: Kind::Zero }
    }

    /// `∫_a^b 𝒯_r M dr`, left-endpoint cells of width `h`.
    pub fn bounded_density(family: Arc<SemigroupFamily>, m: GridOperator) -> Result<Self> {
        let spec = family.spec();
        spec.ensure_same(&m.spec())?;
        Ok(Self {
            spec,
            level: Level::Vector,
            continuity: Continuity::AbsolutelyContinuous,
            step: spec.h(),
            kind: Kind::BoundedDensity { family, m },
        })
    }

    /// `(𝒯_a − 𝒯_b) M`, no quadrature.
    pub fn generator_density(family: Arc<SemigroupFamily>, m: GridOperator) -> Result<Self> {
        let spec = family.spec();
        spec.ensure_same(&m.spec())?;
        Ok(Self {
            spec,
            level: Level::Vector,
            continuity: Continuity::AbsolutelyContinuous,
            step: spec.h(),
            kind: Kind::GeneratorDensity { family, m },
        })
    }

    /// `η ↦ ⟨e, η⟩ χ_[a,b)`.
    pub fn singular_rank_one(e: GridFunction) -> Self {
        let spec = e.spec();
        Self { spec, level: Level::Vector, continuity: Continuity::Singular, step: spec.h(), kind: Kind::SingularRankOne { e } }
    }

    /// `∫_a^b Λ(𝒯_{*r} ω) dr` with `Λ(ω) = Σ L_j ω L_j*`.
    pub fn jump(family: Arc<SemigroupFamily>, ls: Vec<GridOperator>) -> Result<Self> {
        let spec = family.spec();
        for l in &ls {
            spec.ensure_same(&l.spec())?;
        }
        Ok(Self {
            spec,
            level: Level::Density,
            continuity: Continuity::AbsolutelyContinuous,
            step: spec.h(),
            kind: Kind::Jump { family, ls, rule: CellRule::LeftEndpoint },
        })
    }

    /// Jump measure whose first-order term matches the Lindbladian `K x + x K* + 2 Σ L* x L`,
    /// i.e. built from the operators `√2 L_j`.
    pub fn lindblad_jump(family: Arc<SemigroupFamily>, ls: &[GridOperator]) -> Result<Self> {
        let scaled = ls.iter().map(|l| l.scaled(C64::new(std::f64::consts::SQRT_2, 0.0))).collect();
        Self::jump(family, scaled)
    }

    /// `ω ↦ (h Σ_{x_i ∈ [a,b)} ω_ii) ω₀`.
    pub fn boundary_injection(omega0: DensityOperator) -> Self {
        let spec = omega0.spec();
        Self {
            spec,
            level: Level::Density,
            continuity: Continuity::AbsolutelyContinuous,
            step: spec.h(),
            kind: Kind::BoundaryInjection { omega0 },
        }
    }

    /// Sets the quadrature cell width for the absolutely continuous kinds.
    pub fn with_quadrature_step(mut self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Domain(format!("quadrature step must be positive, got {step}")));
        }
        if matches!(self.kind, Kind::SingularRankOne { .. } | Kind::BoundaryInjection { .. }) && step != self.spec.h() {
            return Err(Error::Unsupported("this measure is tied to the space grid".into()));
        }
        self.step = step;
        Ok(self)
    }

    /// Switches a jump measure to another cell rule; `Exact` needs an eigenframe family.
    pub fn with_cell_rule(mut self, new_rule: CellRule) -> Result<Self> {
        match &mut self.kind {
            Kind::Jump { family, rule, .. } => {
                if new_rule == CellRule::Exact && family.spectral().is_none() {
                    return Err(Error::Unsupported("exact cells need a family with an eigenframe".into()));
                }
                *rule = new_rule;
                Ok(self)
            }
            _ => Err(Error::Unsupported("cell rules apply to jump measures only".into())),
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn quadrature_step(&self) -> f64 {
        self.step
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Zero => "zero",
            Kind::BoundedDensity { .. } => "bounded-density",
            Kind::GeneratorDensity { .. } => "generator-density",
            Kind::SingularRankOne { .. } => "singular-rank-one",
            Kind::Jump { .. } => "jump",
            Kind::BoundaryInjection { .. } => "boundary-injection",
        }
    }

    /// Cells `[t_i, t_i + δ)` covering `[a, b)`.
    fn cells(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        let lo = aligned(a, self.step)?;
        let hi = aligned(b, self.step)?;
        if lo > hi {
            return Err(Error::Domain(format!("reversed interval [{a}, {b})")));
        }
        Ok((lo..hi).map(|i| i as f64 * self.step).collect())
    }

    fn require(&self, level: Level, what: &str) -> Result<()> {
        if self.level == level || self.is_zero() {
            Ok(())
        } else {
            Err(Error::LevelMismatch(format!("{} measure cannot act on a {what}", self.name())))
        }
    }

    fn mass_vector(&self, a: f64, b: f64, eta: &GridFunction) -> Result<GridFunction> {
        self.require(Level::Vector, "vector")?;
        self.spec.ensure_same(&eta.spec())?;
        match &self.kind {
            Kind::Zero => {
                self.cells(a, b)?;
                Ok(GridFunction::zeros(self.spec))
            }
            Kind::BoundedDensity { family, m } => {
                let me = m.apply(eta)?;
                let mut out = GridFunction::zeros(self.spec);
                for t in self.cells(a, b)? {
                    out.axpy(C64::new(self.step, 0.0), &family.apply(t, &me)?)?;
                }
                Ok(out)
            }
            Kind::GeneratorDensity { family, m } => {
                if a > b {
                    return Err(Error::Domain(format!("reversed interval [{a}, {b})")));
                }
                let me = m.apply(eta)?;
                family.apply(a, &me)?.sub(&family.apply(b, &me)?)
            }
            Kind::SingularRankOne { e } => {
                self.cells(a, b)?;
                Ok(indicator(self.spec, a.min(self.spec.x_max()), b.min(self.spec.x_max()))?.scaled(e.inner(eta)?))
            }
            _ => unreachable!("level checked"),
        }
    }

    fn mass_state(&self, a: f64, b: f64, w: &DensityOperator) -> Result<DensityOperator> {
        self.require(Level::Density, "state")?;
        self.spec.ensure_same(&w.spec())?;
        match &self.kind {
            Kind::Zero => {
                self.cells(a, b)?;
                Ok(DensityOperator::zeros(self.spec))
            }
            Kind::Jump { family, ls, rule } => {
                let cells = self.cells(a, b)?;
                let integrated = match rule {
                    CellRule::LeftEndpoint => {
                        let mut acc = DensityOperator::zeros(self.spec);
                        for t in cells {
                            acc.axpy(C64::new(self.step, 0.0), &no_event_apply(family, t, w)?)?;
                        }
                        acc
                    }
                    CellRule::Exact => {
                        let form = family.spectral().expect("checked in with_cell_rule");
                        let mut f = form.to_frame(w.kernel());
                        mul_real(&mut f, &form.pair_cell_integral(a, b - a));
                        DensityOperator::new(self.spec, form.from_frame(&f))?
                    }
                };
                Ok(lambda(ls, &integrated))
            }
            Kind::BoundaryInjection { omega0 } => {
                let (lo, hi) = self.spec.cell_range(a, b)?;
                let c: C64 = (lo..hi).map(|i| w.kernel()[[i, i]]).sum::<C64>() * self.spec.h();
                Ok(omega0.scaled(c))
            }
            _ => unreachable!("level checked"),
        }
    }

    fn mass_observable(&self, a: f64, b: f64, x: &GridOperator) -> Result<GridOperator> {
        self.require(Level::Density, "observable")?;
        self.spec.ensure_same(&x.spec())?;
        match &self.kind {
            Kind::Zero => {
                self.cells(a, b)?;
                Ok(GridOperator::zeros(self.spec))
            }
            Kind::Jump { family, ls, rule } => {
                let cells = self.cells(a, b)?;
                let lx = lambda_adjoint(ls, x)?;
                match rule {
                    CellRule::LeftEndpoint => {
                        let mut acc = GridOperator::zeros(self.spec);
                        for t in cells {
                            acc.axpy(C64::new(self.step, 0.0), &no_event_apply_heisenberg(family, t, &lx)?)?;
                        }
                        Ok(acc)
                    }
                    CellRule::Exact => {
                        let form = family.spectral().expect("checked in with_cell_rule");
                        let mut f = form.to_frame(lx.entries());
                        mul_real(&mut f, &form.pair_cell_integral(a, b - a));
                        GridOperator::new(self.spec, form.from_frame(&f))
                    }
                }
            }
            Kind::BoundaryInjection { omega0 } => {
                let c = omega0.pairing(x)?;
                Ok(GridOperator::diagonal(&indicator(self.spec, a, b)?).scaled(c))
            }
            _ => unreachable!("level checked"),
        }
    }

    fn singular_guard(&self) -> Result<()> {
        if self.continuity == Continuity::Singular {
            Err(Error::Unsupported(format!("{} measure has no density", self.name())))
        } else {
            Ok(())
        }
    }
}

fn mul_real(a: &mut Array2<C64>, f: &Array2<f64>) {
    Zip::from(a).and(f).for_each(|v, &p| *v *= p);
}

fn aligned(t: f64, step: f64) -> Result<usize> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("endpoint must be nonnegative, got {t}")));
    }
    let r = t / step;
    let m = r.round();
    if (r - m).abs() > 1e-9 * m.max(1.0) {
        return Err(Error::Alignment { t, h: step });
    }
    Ok(m as usize)
}

/// `Λ(ω) = Σ L_j ω L_j*` on kernels.
pub fn lambda(ls: &[GridOperator], w: &DensityOperator) -> DensityOperator {
    let n = w.spec().n_points();
    let mut out = Array2::<C64>::zeros((n, n));
    for l in ls {
        out += &l.entries().dot(w.kernel()).dot(&linalg::dagger(l.entries()));
    }
    DensityOperator::new(w.spec(), out).expect("finite")
}

/// `Λ*(x) = Σ L_j* x L_j`.
pub fn lambda_adjoint(ls: &[GridOperator], x: &GridOperator) -> Result<GridOperator> {
    let mut out = GridOperator::zeros(x.spec());
    for l in ls {
        out.axpy(C64::new(1.0, 0.0), &l.adjoint().compose(x)?.compose(l)?)?;
    }
    Ok(out)
}

/// A measure acting on one state space.
pub trait IntervalMeasure<S: LinearState>: Send + Sync {
    fn spec(&self) -> GridSpec;
    fn mass(&self, a: f64, b: f64, arg: &S) -> Result<S>;
    /// The density `P(t)` applied to `arg`; singular measures refuse.
    fn density(&self, t: f64, arg: &S) -> Result<S>;
    fn is_zero(&self) -> bool {
        false
    }
}

impl IntervalMeasure<GridFunction> for OperatorMeasure {
    fn spec(&self) -> GridSpec {
        self.spec
    }
    fn mass(&self, a: f64, b: f64, arg: &GridFunction) -> Result<GridFunction> {
        self.mass_vector(a, b, arg)
    }
    fn density(&self, t: f64, arg: &GridFunction) -> Result<GridFunction> {
        self.require(Level::Vector, "vector")?;
        self.singular_guard()?;
        match &self.kind {
            Kind::Zero => Ok(GridFunction::zeros(self.spec)),
            Kind::BoundedDensity { family, m } => family.apply(t, &m.apply(arg)?),
            Kind::GeneratorDensity { family, m } => {
                // d/dt (𝒯_a − 𝒯_t) M = −𝒯_t 𝓛 M.
                let g = family.generator().ok_or_else(|| Error::Unsupported("family has no generator".into()))?;
                Ok(family.apply(t, &g.apply(&m.apply(arg)?)?)?.scaled(C64::new(-1.0, 0.0)))
            }
            _ => unreachable!("level checked"),
        }
    }
    fn is_zero(&self) -> bool {
        OperatorMeasure::is_zero(self)
    }
}

impl IntervalMeasure<DensityOperator> for OperatorMeasure {
    fn spec(&self) -> GridSpec {
        self.spec
    }
    fn mass(&self, a: f64, b: f64, arg: &DensityOperator) -> Result<DensityOperator> {
        self.mass_state(a, b, arg)
    }
    fn density(&self, t: f64, arg: &DensityOperator) -> Result<DensityOperator> {
        self.require(Level::Density, "state")?;
        match &self.kind {
            Kind::Zero => Ok(DensityOperator::zeros(self.spec)),
            Kind::Jump { family, ls, .. } => Ok(lambda(ls, &no_event_apply(family, t, arg)?)),
            Kind::BoundaryInjection { omega0 } => {
                let i = (t / self.spec.h()).floor() as usize;
                if i >= self.spec.n_points() {
                    return Ok(DensityOperator::zeros(self.spec));
                }
                Ok(omega0.scaled(arg.kernel()[[i, i]]))
            }
            _ => unreachable!("level checked"),
        }
    }
    fn is_zero(&self) -> bool {
        OperatorMeasure::is_zero(self)
    }
}

impl IntervalMeasure<GridOperator> for OperatorMeasure {
    fn spec(&self) -> GridSpec {
        self.spec
    }
    fn mass(&self, a: f64, b: f64, arg: &GridOperator) -> Result<GridOperator> {
        self.mass_observable(a, b, arg)
    }
    fn density(&self, t: f64, arg: &GridOperator) -> Result<GridOperator> {
        self.require(Level::Density, "observable")?;
        match &self.kind {
            Kind::Zero => Ok(GridOperator::zeros(self.spec)),
            Kind::Jump { family, ls, .. } => no_event_apply_heisenberg(family, t, &lambda_adjoint(ls, arg)?),
            Kind::BoundaryInjection { omega0 } => {
                let h = self.spec.h();
                let lo = (t / h).floor() * h;
                if lo >= self.spec.x_max() {
                    return Ok(GridOperator::zeros(self.spec));
                }
                let c = omega0.pairing(arg)? / h;
                Ok(GridOperator::diagonal(&indicator(self.spec, lo, lo + h)?).scaled(c))
            }
            _ => unreachable!("level checked"),
        }
    }
    fn is_zero(&self) -> bool {
        OperatorMeasure::is_zero(self)
    }
}

/// Residual of the covariance relation at one probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub picture: Picture,
    pub residual: f64,
    /// Norm of the translated mass, for scale.
    pub reference_norm: f64,
}

/// `‖𝒯_t 𝔐([a,b)) p − 𝔐([a+t,b+t)) p‖` (Heisenberg order) or
/// `‖𝔐([a,b)) 𝒯_{*t} p − 𝔐([a+t,b+t)) p‖` (predual), chosen by the probe type.
pub fn check_covariance<S: LinearState>(
    measure: &dyn IntervalMeasure<S>,
    family: &dyn Evolution<S>,
    a: f64,
    b: f64,
    t: f64,
    probe: &S,
) -> Result<CovarianceReport> {
    measure.spec().ensure_same(&family.spec())?;
    let moved = measure.mass(a + t, b + t, probe)?;
    let lhs = match S::PICTURE {
        Picture::Heisenberg => family.evolve(t, &measure.mass(a, b, probe)?)?,
        Picture::Schrodinger => measure.mass(a, b, &family.evolve(t, probe)?)?,
    };
    Ok(CovarianceReport { picture: S::PICTURE, residual: lhs.distance(&moved)?, reference_norm: moved.norm() })
}

/// `‖𝔐([a,c)) p − 𝔐([a,b)) p − 𝔐([b,c)) p‖`.
pub fn additivity_residual<S: LinearState>(measure: &dyn IntervalMeasure<S>, a: f64, b: f64, c: f64, probe: &S) -> Result<f64> {
    let mut split = measure.mass(a, b, probe)?;
    split.axpy(C64::new(1.0, 0.0), &measure.mass(b, c, probe)?)?;
    measure.mass(a, c, probe)?.distance(&split)
}
