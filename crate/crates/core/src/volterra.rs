//! Marching, series summation and inversion of the perturbation integral equation
//! `T̆_t = 𝒯_t + ∫₀^t 𝔐(ds) T̆_{t-s}`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityOperator;
use crate::error::{Error, Result};
use crate::grid::{Direction, GridFunction, GridOperator, GridSpec};
use crate::linalg;
use crate::measure::IntervalMeasure;
use crate::state::{convolver_for, ordered_sum, Convolver, DirectConvolver, Evolution, LinearState, Picture};

/// Default cap on `n_points` for reference-mode storage.
pub const DEFAULT_REFERENCE_CAP: usize = 32;

/// Reference-mode storage budget in bytes.
pub const REFERENCE_MEMORY_BUDGET: usize = 2 << 30;

/// Uniform time grid `t_k = kΔ`, `k = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::Domain(format!("t_max must be positive, got {t_max}")));
        }
        if n_steps == 0 {
            return Err(Error::Domain("n_steps must be positive".into()));
        }
        Ok(Self { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Space cells per time step, when `Δ` is a multiple of `h`.
    pub fn cells_per_step(&self, spec: GridSpec) -> Result<usize> {
        match spec.steps(self.dt())? {
            0 => Err(Error::Alignment { t: self.dt(), h: spec.h() }),
            p => Ok(p),
        }
    }

    pub fn is_aligned(&self, spec: GridSpec) -> bool {
        self.cells_per_step(spec).is_ok()
    }

    pub fn refined(&self) -> Self {
        Self { t_max: self.t_max, n_steps: 2 * self.n_steps }
    }
}

/// What the march stores.
#[derive(Clone, Copy, Debug)]
pub enum MarchMode<'a, S> {
    /// The trajectory of one initial argument.
    Trajectory(&'a S),
    /// Full maps at every step, refused above `cap` grid points.
    Reference { cap: usize },
}

#[derive(Clone, Debug)]
pub enum Storage<S> {
    Trajectory {
        initial: S,
        states: Vec<S>,
    },
    /// Matrices acting on flattened coordinates.
    Reference {
        maps: Vec<Array2<C64>>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub time: f64,
    pub norm: f64,
    pub trace: Option<f64>,
}

/// `T̆` on a time grid.
#[derive(Clone, Debug)]
pub struct PerturbedFamily<S> {
    spec: GridSpec,
    grid: TimeGrid,
    picture: Picture,
    storage: Storage<S>,
    diagnostics: Vec<StepDiagnostics>,
}

impl<S: LinearState> PerturbedFamily<S> {
    fn from_states(spec: GridSpec, grid: TimeGrid, initial: S, states: Vec<S>) -> Self {
        let diagnostics =
            states.iter().enumerate().map(|(k, s)| StepDiagnostics { time: grid.time(k), norm: s.norm(), trace: s.trace() }).collect();
        Self { spec, grid, picture: S::PICTURE, storage: Storage::Trajectory { initial, states }, diagnostics }
    }

    fn from_maps(spec: GridSpec, grid: TimeGrid, maps: Vec<Array2<C64>>) -> Self {
        let diagnostics =
            maps.iter().enumerate().map(|(k, m)| StepDiagnostics { time: grid.time(k), norm: linalg::frobenius(m), trace: None }).collect();
        Self { spec, grid, picture: S::PICTURE, storage: Storage::Reference { maps }, diagnostics }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn picture(&self) -> Picture {
        self.picture
    }

    pub fn storage(&self) -> &Storage<S> {
        &self.storage
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn is_reference(&self) -> bool {
        matches!(self.storage, Storage::Reference { .. })
    }

    pub fn initial(&self) -> Option<&S> {
        match &self.storage {
            Storage::Trajectory { initial, .. } => Some(initial),
            Storage::Reference { .. } => None,
        }
    }

    pub fn states(&self) -> Option<&[S]> {
        match &self.storage {
            Storage::Trajectory { states, .. } => Some(states),
            Storage::Reference { .. } => None,
        }
    }

    pub fn state(&self, k: usize) -> Result<&S> {
        self.states()
            .ok_or_else(|| Error::Unsupported("reference-mode family has no stored trajectory".into()))?
            .get(k)
            .ok_or_else(|| Error::Domain(format!("step {k} beyond the time grid")))
    }

    pub fn map(&self, k: usize) -> Option<&Array2<C64>> {
        match &self.storage {
            Storage::Reference { maps } => maps.get(k),
            Storage::Trajectory { .. } => None,
        }
    }

    /// `T̆_k(arg)`; reference mode only, or trajectory mode at its own initial argument.
    pub fn apply(&self, k: usize, arg: &S) -> Result<S> {
        match &self.storage {
            Storage::Reference { maps } => {
                let m = maps.get(k).ok_or_else(|| Error::Domain(format!("step {k} beyond the time grid")))?;
                S::unflatten(self.spec, m.dot(&arg.flatten()).view())
            }
            Storage::Trajectory { initial, states } => {
                if initial.distance(arg)? == 0.0 {
                    states.get(k).cloned().ok_or_else(|| Error::Domain(format!("step {k} beyond the time grid")))
                } else {
                    Err(Error::Unsupported("trajectory-mode family only holds its own initial argument".into()))
                }
            }
        }
    }

    /// Largest `|Tr T̆_k − target|` over the stored states.
    pub fn max_trace_deviation(&self, target: f64) -> Option<f64> {
        self.diagnostics
            .iter()
            .map(|d| d.trace.map(|t| (t - target).abs()))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.into_iter().fold(0.0, f64::max))
    }
}

fn check_inputs<S: LinearState>(base: &dyn Evolution<S>, measure: &dyn IntervalMeasure<S>) -> Result<GridSpec> {
    let spec = base.spec();
    spec.ensure_same(&measure.spec())?;
    Ok(spec)
}

/// `Σ_{j=1}^{k} 𝔐([t_{j-1}, t_j)) items[k-j]`.
fn measure_history<S: LinearState>(measure: &dyn IntervalMeasure<S>, grid: TimeGrid, items: &[S], k: usize, spec: GridSpec) -> Result<S> {
    if measure.is_zero() {
        return Ok(S::zeros(spec));
    }
    ordered_sum(spec, k, |i| measure.mass(grid.time(i), grid.time(i + 1), &items[k - 1 - i]))
}

/// Solves the discrete integral equation by explicit marching.
///
/// Heisenberg order: `T̆_k = 𝒯_k + Σ_j 𝔐_j T̆_{k-j}` with `𝔐_j = 𝔐([t_{j-1}, t_j))`.
/// Schrödinger trajectories march `T̆_k ω = 𝒯_{*k} ω + Σ_j 𝒯_{*(j-1)} 𝔐_*([0,Δ)) T̆_{k-j} ω`,
/// which equals the predual form `T̆_k = 𝒯_{*k} + Σ_j T̆_{k-j} 𝔐_{*j}` whenever the measure is
/// covariant on the time grid; reference mode uses the predual form directly.
pub fn march_perturbed<S: LinearState>(
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    mode: MarchMode<'_, S>,
) -> Result<PerturbedFamily<S>> {
    let spec = check_inputs(base, measure)?;
    match mode {
        MarchMode::Trajectory(x) => {
            spec.ensure_same(&x.spec())?;
            let states = match S::PICTURE {
                Picture::Heisenberg => march_heisenberg(base, measure, grid, x, spec)?,
                Picture::Schrodinger => march_predual(base, measure, grid, x)?,
            };
            Ok(PerturbedFamily::from_states(spec, grid, x.clone(), states))
        }
        MarchMode::Reference { cap } => {
            let maps = march_reference(base, measure, grid, cap, spec)?;
            Ok(PerturbedFamily::from_maps(spec, grid, maps))
        }
    }
}

fn march_heisenberg<S: LinearState>(
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    x: &S,
    spec: GridSpec,
) -> Result<Vec<S>> {
    let mut states = vec![x.clone()];
    for k in 1..=grid.n_steps() {
        let mut next = base.evolve(grid.time(k), x)?;
        next.axpy(C64::new(1.0, 0.0), &measure_history(measure, grid, &states, k, spec)?)?;
        states.push(next);
    }
    Ok(states)
}

fn march_predual<S: LinearState>(base: &dyn Evolution<S>, measure: &dyn IntervalMeasure<S>, grid: TimeGrid, omega: &S) -> Result<Vec<S>> {
    let dt = grid.dt();
    let mut conv = convolver_for(base, dt);
    let mut states = vec![omega.clone()];
    for k in 1..=grid.n_steps() {
        let mut next = base.evolve(grid.time(k), omega)?;
        if !measure.is_zero() {
            conv.push(measure.mass(0.0, dt, &states[k - 1])?)?;
            next.axpy(C64::new(1.0, 0.0), &conv.sum()?)?;
        }
        states.push(next);
    }
    Ok(states)
}

/// Matrix of a linear map on flattened coordinates.
fn materialize<S: LinearState>(spec: GridSpec, f: impl Fn(&S) -> Result<S> + Sync) -> Result<Array2<C64>> {
    let d = S::dimension(spec);
    let cols: Vec<Array1<C64>> = (0..d)
        .into_par_iter()
        .map(|c| {
            let mut e = Array1::zeros(d);
            e[c] = C64::new(1.0, 0.0);
            Ok(f(&S::unflatten(spec, e.view())?)?.flatten())
        })
        .collect::<Result<_>>()?;
    let mut m = Array2::zeros((d, d));
    for (c, col) in cols.into_iter().enumerate() {
        m.column_mut(c).assign(&col);
    }
    Ok(m)
}

fn reference_guard<S: LinearState>(spec: GridSpec, grid: TimeGrid, cap: usize) -> Result<()> {
    if spec.n_points() > cap {
        return Err(Error::Capacity(format!("reference mode stores full maps; n_points = {} exceeds the cap of {cap}", spec.n_points())));
    }
    let d = S::dimension(spec);
    let bytes = 3 * (grid.n_steps() + 1) * d * d * std::mem::size_of::<C64>();
    if bytes > REFERENCE_MEMORY_BUDGET {
        return Err(Error::Capacity(format!("reference mode would store about {} MiB of maps; use trajectory mode", bytes >> 20)));
    }
    Ok(())
}

type Maps = Vec<Array2<C64>>;

fn base_and_measure_maps<S: LinearState>(
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    spec: GridSpec,
) -> Result<(Maps, Maps)> {
    let k = grid.n_steps();
    let b = (0..=k).map(|i| materialize::<S>(spec, |x| base.evolve(grid.time(i), x))).collect::<Result<Vec<_>>>()?;
    let mut m = vec![Array2::zeros((0, 0))];
    for j in 1..=k {
        m.push(materialize::<S>(spec, |x| measure.mass(grid.time(j - 1), grid.time(j), x))?);
    }
    Ok((b, m))
}

fn convolve_maps(picture: Picture, t: &[Array2<C64>], m: &[Array2<C64>], k: usize, d: usize) -> Array2<C64> {
    let mut acc = Array2::zeros((d, d));
    for j in 1..=k {
        match picture {
            Picture::Heisenberg => acc += &m[j].dot(&t[k - j]),
            Picture::Schrodinger => acc += &t[k - j].dot(&m[j]),
        }
    }
    acc
}

fn march_reference<S: LinearState>(
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    cap: usize,
    spec: GridSpec,
) -> Result<Vec<Array2<C64>>> {
    reference_guard::<S>(spec, grid, cap)?;
    let d = S::dimension(spec);
    let (b, m) = base_and_measure_maps(base, measure, grid, spec)?;
    let mut t = vec![b[0].clone()];
    for (k, bk) in b.iter().enumerate().skip(1) {
        let next = bk + &convolve_maps(S::PICTURE, &t, &m, k, d);
        t.push(next);
    }
    Ok(t)
}

/// Per-step residual of the discrete integral equation, recomputed without fast paths.
pub fn integral_identity_residuals<S: LinearState>(
    perturbed: &PerturbedFamily<S>,
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
) -> Result<Vec<f64>> {
    let spec = check_inputs(base, measure)?;
    spec.ensure_same(&perturbed.spec)?;
    let grid = perturbed.grid;
    match &perturbed.storage {
        Storage::Trajectory { initial, states } => match S::PICTURE {
            Picture::Heisenberg => (0..states.len())
                .map(|k| {
                    let mut r = states[k].clone();
                    r.axpy(C64::new(-1.0, 0.0), &base.evolve(grid.time(k), initial)?)?;
                    r.axpy(C64::new(-1.0, 0.0), &measure_history(measure, grid, states, k, spec)?)?;
                    Ok(r.norm())
                })
                .collect(),
            Picture::Schrodinger => {
                let mut conv = DirectConvolver::new(base, grid.dt());
                let mut out = Vec::with_capacity(states.len());
                for k in 0..states.len() {
                    let mut r = states[k].clone();
                    r.axpy(C64::new(-1.0, 0.0), &base.evolve(grid.time(k), initial)?)?;
                    if k > 0 {
                        conv.push(measure.mass(0.0, grid.dt(), &states[k - 1])?)?;
                        r.axpy(C64::new(-1.0, 0.0), &conv.sum()?)?;
                    }
                    out.push(r.norm());
                }
                Ok(out)
            }
        },
        Storage::Reference { maps } => {
            let d = S::dimension(spec);
            let (b, m) = base_and_measure_maps(base, measure, grid, spec)?;
            Ok((0..maps.len()).map(|k| linalg::frobenius(&(&maps[k] - &b[k] - &convolve_maps(S::PICTURE, maps, &m, k, d)))).collect())
        }
    }
}

/// Per-order diagnostics of [`dyson_series`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DysonReport {
    /// `max_k ‖term_n(t_k)‖` for each order `n` summed.
    pub order_norms: Vec<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct DysonResult<S> {
    pub family: PerturbedFamily<S>,
    pub report: DysonReport,
}

/// Sums `T̆ = Σ_n (𝔐 ∗)^n 𝒯` order by order along one trajectory.
///
/// Every convolution with the measure consumes at least one time step, so the series
/// terminates after `n_steps + 1` orders on the grid.
pub fn dyson_series<S: LinearState>(
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    grid: TimeGrid,
    initial: &S,
    order_cap: usize,
    tol: f64,
) -> Result<DysonResult<S>> {
    let spec = check_inputs(base, measure)?;
    spec.ensure_same(&initial.spec())?;
    let k_max = grid.n_steps();
    let mut term: Vec<S> = (0..=k_max).map(|k| base.evolve(grid.time(k), initial)).collect::<Result<_>>()?;
    let mut sum = term.clone();
    let max_norm = |v: &[S]| v.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let mut norms = vec![max_norm(&term)];
    let mut converged = norms[0] <= tol;
    let mut order = 0;
    while !converged && order < order_cap {
        order += 1;
        let next: Vec<S> = match S::PICTURE {
            Picture::Heisenberg => (0..=k_max).map(|k| measure_history(measure, grid, &term, k, spec)).collect::<Result<_>>()?,
            Picture::Schrodinger => {
                let mut conv = convolver_for(base, grid.dt());
                let mut out = vec![S::zeros(spec)];
                for k in 1..=k_max {
                    conv.push(measure.mass(0.0, grid.dt(), &term[k - 1])?)?;
                    out.push(conv.sum()?);
                }
                out
            }
        };
        for (acc, t) in sum.iter_mut().zip(&next) {
            acc.axpy(C64::new(1.0, 0.0), t)?;
        }
        let n = max_norm(&next);
        norms.push(n);
        term = next;
        converged = n <= tol;
    }
    if !converged {
        return Err(Error::SeriesDivergence(format!(
            "term norm {:.3e} after {order_cap} orders (tolerance {tol:.1e}); use march_perturbed instead",
            norms.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(DysonResult {
        family: PerturbedFamily::from_states(spec, grid, initial.clone(), sum),
        report: DysonReport { order_norms: norms, converged },
    })
}

/// Output of [`scalar_volterra_rank_one`].
#[derive(Clone, Debug)]
pub struct RankOneSolution {
    /// `φ_k = ⟨e, T̆_k η⟩`.
    pub phi: Vec<C64>,
    pub family: PerturbedFamily<GridFunction>,
}

/// Scalar renewal solve for the singular rank-one measure over right shifts.
///
/// `φ_k = ⟨e, S_{t_k} η⟩ + Σ_{j=1}^{k} c_j φ_{k-j}` with `c_j = h Σ_{cells of step j} ē_i`,
/// then `T̆_k η = S_{t_k} η + φ_{k-1-j}` on the cells of step `j < k`.
pub fn scalar_volterra_rank_one(e: &GridFunction, eta: &GridFunction, grid: TimeGrid) -> Result<RankOneSolution> {
    let spec = e.spec();
    spec.ensure_same(&eta.spec())?;
    let p = grid.cells_per_step(spec)?;
    let n = spec.n_points();
    let h = spec.h();
    let k_max = grid.n_steps();
    let ev = e.values();
    let c: Vec<C64> = (0..k_max).map(|j| (j * p..((j + 1) * p).min(n)).map(|i| ev[i].conj()).sum::<C64>() * h).collect();
    let shifted: Vec<GridFunction> = (0..=k_max).map(|k| eta.shifted(k * p, Direction::Right)).collect();
    let mut phi: Vec<C64> = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let mut v = e.inner(&shifted[k])?;
        for j in 1..=k {
            v += c[j - 1] * phi[k - j];
        }
        phi.push(v);
    }
    let states = shifted
        .into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            for i in 0..(k * p).min(n) {
                s.values_mut()[i] += phi[k - 1 - i / p];
            }
            s
        })
        .collect();
    Ok(RankOneSolution { phi, family: PerturbedFamily::from_states(spec, grid, eta.clone(), states) })
}

/// The base family recovered from a perturbed one.
#[derive(Clone, Debug)]
pub enum BaseReconstruction<S> {
    /// `𝒯_k x` along the trajectory.
    Trajectory(Vec<S>),
    /// `𝒯_k` as matrices.
    Maps(Vec<Array2<C64>>),
}

/// Inverts the marching recurrence: `𝒯_k = T̆_k − Σ_j 𝔐_j T̆_{k-j}` (or its predual and
/// trajectory forms). Schrödinger trajectories need the base only on measure outputs.
pub fn reconstruct_base<S: LinearState>(
    perturbed: &PerturbedFamily<S>,
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
) -> Result<BaseReconstruction<S>> {
    let spec = check_inputs(base, measure)?;
    spec.ensure_same(&perturbed.spec).map_err(|e| Error::SpecMismatch(format!("grid mismatch: {e}")))?;
    let grid = perturbed.grid;
    match &perturbed.storage {
        Storage::Trajectory { states, .. } => {
            let out = match S::PICTURE {
                Picture::Heisenberg => (0..states.len())
                    .map(|k| {
                        let mut r = states[k].clone();
                        r.axpy(C64::new(-1.0, 0.0), &measure_history(measure, grid, states, k, spec)?)?;
                        Ok(r)
                    })
                    .collect::<Result<Vec<_>>>()?,
                Picture::Schrodinger => {
                    let mut conv = convolver_for(base, grid.dt());
                    let mut out = vec![states[0].clone()];
                    for k in 1..states.len() {
                        conv.push(measure.mass(0.0, grid.dt(), &states[k - 1])?)?;
                        let mut r = states[k].clone();
                        r.axpy(C64::new(-1.0, 0.0), &conv.sum()?)?;
                        out.push(r);
                    }
                    out
                }
            };
            Ok(BaseReconstruction::Trajectory(out))
        }
        Storage::Reference { maps } => {
            let d = S::dimension(spec);
            let k_max = grid.n_steps();
            let mut m = vec![Array2::zeros((0, 0))];
            for j in 1..=k_max {
                m.push(materialize::<S>(spec, |x| measure.mass(grid.time(j - 1), grid.time(j), x))?);
            }
            Ok(BaseReconstruction::Maps((0..maps.len()).map(|k| &maps[k] - &convolve_maps(S::PICTURE, maps, &m, k, d)).collect()))
        }
    }
}

/// Largest distance between [`reconstruct_base`] output and the base evaluated directly.
pub fn base_roundtrip_residual<S: LinearState>(
    perturbed: &PerturbedFamily<S>,
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
) -> Result<f64> {
    let grid = perturbed.grid;
    let spec = perturbed.spec;
    match reconstruct_base(perturbed, base, measure)? {
        BaseReconstruction::Trajectory(v) => {
            let x = perturbed.initial().expect("trajectory storage");
            v.iter().enumerate().try_fold(0.0f64, |m, (k, s)| Ok(m.max(s.distance(&base.evolve(grid.time(k), x)?)?)))
        }
        BaseReconstruction::Maps(v) => v.iter().enumerate().try_fold(0.0f64, |m, (k, b)| {
            let direct = materialize::<S>(spec, |x| base.evolve(grid.time(k), x))?;
            Ok(m.max(linalg::frobenius(&(b - &direct))))
        }),
    }
}

/// Positions `[lo, hi)` where a shift inversion is exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub lo_index: usize,
    pub hi_index: usize,
}

impl Window {
    fn new(spec: GridSpec, lo_index: usize, hi_index: usize) -> Self {
        Self { lo: lo_index as f64 * spec.h(), hi: hi_index as f64 * spec.h(), lo_index, hi_index }
    }
}

/// States whose base dynamics can be undone on the range of a grid shift.
pub trait ShiftInvert: LinearState {
    /// Given `y = 𝒯_t x` for a shift base by `m` cells, returns `x` on the window.
    fn unshift(&self, m: usize, base: Direction) -> (Self, (usize, usize));
    /// Zeroes everything outside the node window.
    fn restrict(&self, lo: usize, hi: usize) -> Self;
}

fn flip(d: Direction) -> Direction {
    match d {
        Direction::Right => Direction::LeftAdjoint,
        Direction::LeftAdjoint => Direction::Right,
    }
}

fn window_for(n: usize, m: usize, kept_low: bool) -> (usize, usize) {
    if kept_low {
        (0, n - m)
    } else {
        (m, n)
    }
}

impl ShiftInvert for GridFunction {
    fn unshift(&self, m: usize, base: Direction) -> (Self, (usize, usize)) {
        let n = self.spec().n_points();
        (self.shifted(m, flip(base)), window_for(n, m, base == Direction::Right))
    }
    fn restrict(&self, lo: usize, hi: usize) -> Self {
        self.restricted(lo, hi)
    }
}

impl ShiftInvert for DensityOperator {
    fn unshift(&self, m: usize, base: Direction) -> (Self, (usize, usize)) {
        // The predual of a right shift moves kernels left, so undoing it moves them right.
        let n = self.spec().n_points();
        (self.shifted(m, base), window_for(n, m, base == Direction::LeftAdjoint))
    }
    fn restrict(&self, lo: usize, hi: usize) -> Self {
        self.restricted(lo, hi)
    }
}

impl ShiftInvert for GridOperator {
    fn unshift(&self, m: usize, base: Direction) -> (Self, (usize, usize)) {
        let n = self.spec().n_points();
        let e = crate::density::shift_both(self.entries(), m, flip(base));
        (GridOperator::new(self.spec(), e).expect("finite"), window_for(n, m, base == Direction::Right))
    }
    fn restrict(&self, lo: usize, hi: usize) -> Self {
        let n = self.spec().n_points();
        let e = Array2::from_shape_fn((n, n), |(i, j)| {
            if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
                self.entries()[[i, j]]
            } else {
                C64::new(0.0, 0.0)
            }
        });
        GridOperator::new(self.spec(), e).expect("finite")
    }
}

/// Initial-argument estimate and the window where it is exact.
#[derive(Clone, Debug)]
pub struct InitialEstimate<S> {
    pub estimate: S,
    pub window: Window,
}

/// Recovers the initial argument from a perturbed trajectory at step `k`: removes the
/// measure contribution, then inverts the shift base on its range.
pub fn reconstruct_initial_state<S: ShiftInvert>(
    perturbed: &PerturbedFamily<S>,
    base: &dyn Evolution<S>,
    measure: &dyn IntervalMeasure<S>,
    k: usize,
) -> Result<InitialEstimate<S>> {
    let spec = check_inputs(base, measure)?;
    spec.ensure_same(&perturbed.spec)?;
    let direction =
        base.shift_direction().ok_or_else(|| Error::Unsupported("initial states can only be recovered for shift bases".into()))?;
    let states = perturbed.states().ok_or_else(|| Error::Unsupported("reconstruction needs a trajectory-mode family".into()))?;
    if k >= states.len() {
        return Err(Error::Domain(format!("step {k} beyond the time grid")));
    }
    let grid = perturbed.grid;
    let t = grid.time(k);
    let m = spec.steps(t)?;
    if m >= spec.n_points() {
        return Err(Error::Domain(format!("t = {t} leaves an empty reconstruction window")));
    }
    let mut y = states[k].clone();
    match S::PICTURE {
        Picture::Heisenberg => y.axpy(C64::new(-1.0, 0.0), &measure_history(measure, grid, states, k, spec)?)?,
        Picture::Schrodinger => {
            if k > 0 {
                let mut conv = DirectConvolver::new(base, grid.dt());
                for s in &states[..k] {
                    conv.push(measure.mass(0.0, grid.dt(), s)?)?;
                }
                y.axpy(C64::new(-1.0, 0.0), &conv.sum()?)?;
            }
        }
    }
    let (est, (lo, hi)) = y.unshift(m, direction);
    Ok(InitialEstimate { estimate: est.restrict(lo, hi), window: Window::new(spec, lo, hi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{diffusion_operators, DensityOperator, NoEventFamily};
    use crate::measure::{CellRule, OperatorMeasure};
    use crate::semigroup::SemigroupFamily;
    use std::sync::Arc;

    fn normalized(f: GridFunction) -> GridFunction {
        let n = f.norm();
        f.scaled(C64::new(1.0 / n, 0.0))
    }

    fn example5(spec: GridSpec) -> (NoEventFamily, OperatorMeasure, DensityOperator) {
        let fam = Arc::new(SemigroupFamily::right_shift(spec));
        let bump = normalized(GridFunction::from_real_fn(spec, |x| (-(x - 2.0) * (x - 2.0)).exp()));
        let meas = OperatorMeasure::boundary_injection(DensityOperator::pure(&bump));
        let psi = GridFunction::from_real_fn(spec, |x| 2f64.sqrt() * (-x).exp());
        (NoEventFamily::new(fam), meas, DensityOperator::pure(&psi))
    }

    #[test]
    fn time_grid_alignment() {
        let g = GridSpec::new(8.0, 32).unwrap();
        assert_eq!(TimeGrid::new(2.0, 8).unwrap().cells_per_step(g).unwrap(), 1);
        assert_eq!(TimeGrid::new(2.0, 4).unwrap().cells_per_step(g).unwrap(), 2);
        assert!(TimeGrid::new(2.0, 7).unwrap().cells_per_step(g).is_err());
        assert!(TimeGrid::new(0.0, 7).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn zero_measure_gives_base() {
        let g = GridSpec::new(8.0, 32).unwrap();
        let fam = SemigroupFamily::right_shift(g);
        let eta = GridFunction::from_real_fn(g, |x| x * (-x).exp());
        let zero = OperatorMeasure::zero(g, crate::measure::Level::Vector);
        let tg = TimeGrid::new(2.0, 8).unwrap();
        let p = march_perturbed::<GridFunction>(&fam, &zero, tg, MarchMode::Trajectory(&eta)).unwrap();
        for k in 0..=8 {
            assert_eq!(p.state(k).unwrap(), &fam.apply(tg.time(k), &eta).unwrap());
        }
        match reconstruct_base::<GridFunction>(&p, &fam, &zero).unwrap() {
            BaseReconstruction::Trajectory(v) => assert_eq!(v.as_slice(), p.states().unwrap()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn example5_trace_restoration() {
        let g = GridSpec::new(8.0, 256).unwrap();
        let (base, meas, w) = example5(g);
        let tg = TimeGrid::new(2.0, 64).unwrap();
        let p = march_perturbed::<DensityOperator>(&base, &meas, tg, MarchMode::Trajectory(&w)).unwrap();
        let dev = p.max_trace_deviation(1.0).unwrap();
        assert!(dev <= 1e-3, "{dev}");
        let res = integral_identity_residuals::<DensityOperator>(&p, &base, &meas).unwrap();
        assert!(res.iter().cloned().fold(0.0, f64::max) <= 1e-12);
    }

    #[test]
    fn trajectory_and_reference_agree() {
        let g = GridSpec::new(4.0, 8).unwrap();
        let (base, meas, w) = example5(g);
        let tg = TimeGrid::new(2.0, 4).unwrap();
        let traj = march_perturbed::<DensityOperator>(&base, &meas, tg, MarchMode::Trajectory(&w)).unwrap();
        let refm = march_perturbed::<DensityOperator>(&base, &meas, tg, MarchMode::Reference { cap: 32 }).unwrap();
        for k in 0..=4 {
            let d = refm.apply(k, &w).unwrap().distance(traj.state(k).unwrap()).unwrap();
            assert!(d <= 1e-13, "step {k}: {d}");
        }
        let res = integral_identity_residuals::<DensityOperator>(&refm, &base, &meas).unwrap();
        assert!(res.iter().all(|r| *r <= 1e-12));
        assert!(base_roundtrip_residual::<DensityOperator>(&refm, &base, &meas).unwrap() <= 1e-12);
        let too_big = GridSpec::new(4.0, 64).unwrap();
        let (b2, m2, _) = example5(too_big);
        assert!(matches!(march_perturbed::<DensityOperator>(&b2, &m2, tg, MarchMode::Reference { cap: 32 }), Err(Error::Capacity(_))));
    }

    #[test]
    fn heisenberg_and_schrodinger_marches_are_dual() {
        let g = GridSpec::new(4.0, 8).unwrap();
        let (k, ls) = diffusion_operators(g);
        let fam = Arc::new(SemigroupFamily::symmetric_generator(&k).unwrap());
        let tg = TimeGrid::new(0.1, 10).unwrap();
        let meas = OperatorMeasure::lindblad_jump(fam.clone(), &ls)
            .unwrap()
            .with_quadrature_step(tg.dt())
            .unwrap()
            .with_cell_rule(CellRule::Exact)
            .unwrap();
        let base = NoEventFamily::new(fam);
        let psi = normalized(GridFunction::from_real_fn(g, |x| (-(x - 2.0) * (x - 2.0)).exp()));
        let w = DensityOperator::pure(&psi);
        let x = GridOperator::diagonal(&GridFunction::from_real_fn(g, |x| x));
        let s = march_perturbed::<DensityOperator>(&base, &meas, tg, MarchMode::Trajectory(&w)).unwrap();
        let hz = march_perturbed::<GridOperator>(&base, &meas, tg, MarchMode::Trajectory(&x)).unwrap();
        for kk in 0..=10 {
            let a = s.state(kk).unwrap().pairing(&x).unwrap();
            let b = w.pairing(hz.state(kk).unwrap()).unwrap();
            assert!((a - b).norm() <= 1e-10, "{kk}: {a} {b}");
        }
    }

    #[test]
    fn rank_one_paths_agree() {
        let g = GridSpec::new(20.0, 256).unwrap();
        let e = GridFunction::from_real_fn(g, |x| 0.5 * (-x).exp());
        let eta = GridFunction::from_real_fn(g, |x| x * (-x).exp());
        let tg = TimeGrid::new(5.0, 64).unwrap();
        let fast = scalar_volterra_rank_one(&e, &eta, tg).unwrap();
        let fam = SemigroupFamily::right_shift(g);
        let meas = OperatorMeasure::singular_rank_one(e.clone());
        let slow = march_perturbed::<GridFunction>(&fam, &meas, tg, MarchMode::Trajectory(&eta)).unwrap();
        for k in 0..=64 {
            let d = fast.family.state(k).unwrap().sub(slow.state(k).unwrap()).unwrap().sup_norm();
            assert!(d <= 1e-10);
        }
        let zero = scalar_volterra_rank_one(&GridFunction::zeros(g), &eta, tg).unwrap();
        assert_eq!(zero.family.state(10).unwrap(), &fam.apply(tg.time(10), &eta).unwrap());
    }

    #[test]
    fn dyson_matches_march() {
        let g = GridSpec::new(8.0, 64).unwrap();
        let (base, meas, w) = example5(g);
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let march = march_perturbed::<DensityOperator>(&base, &meas, tg, MarchMode::Trajectory(&w)).unwrap();
        let dy = dyson_series::<DensityOperator>(&base, &meas, tg, &w, 40, 1e-15).unwrap();
        for k in 0..=8 {
            assert!(dy.family.state(k).unwrap().distance(march.state(k).unwrap()).unwrap() <= 1e-10);
        }
        let order0 = dyson_series::<DensityOperator>(&base, &meas, tg, &w, 0, f64::INFINITY).unwrap();
        assert_eq!(order0.family.state(3).unwrap(), &base.evolve(tg.time(3), &w).unwrap());
        assert!(matches!(dyson_series::<DensityOperator>(&base, &meas, tg, &w, 2, 1e-15), Err(Error::SeriesDivergence(_))));
    }

    #[test]
    fn initial_state_recovery() {
        let g = GridSpec::new(20.0, 256).unwrap();
        let e = GridFunction::from_real_fn(g, |x| 0.5 * (-x).exp());
        let eta = GridFunction::from_real_fn(g, |x| x * (-x / 2.0).exp());
        let tg = TimeGrid::new(5.0, 64).unwrap();
        let fam = SemigroupFamily::right_shift(g);
        let meas = OperatorMeasure::singular_rank_one(e);
        let p = march_perturbed::<GridFunction>(&fam, &meas, tg, MarchMode::Trajectory(&eta)).unwrap();
        let est = reconstruct_initial_state::<GridFunction>(&p, &fam, &meas, 40).unwrap();
        assert_eq!(est.window.lo, 0.0);
        assert!((est.window.hi - (20.0 - tg.time(40))).abs() < 1e-12);
        let truth = eta.restricted(est.window.lo_index, est.window.hi_index);
        assert!(est.estimate.sub(&truth).unwrap().sup_norm() <= 1e-10);
        let same = reconstruct_initial_state::<GridFunction>(&p, &fam, &meas, 0).unwrap();
        assert_eq!(same.estimate, eta);
        let heat = SemigroupFamily::heat_extinction(g);
        assert!(matches!(reconstruct_initial_state::<GridFunction>(&p, &heat, &meas, 4), Err(Error::Unsupported(_))));
    }
}
