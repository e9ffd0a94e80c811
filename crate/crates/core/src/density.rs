//! States and observables on the grid: no-event dynamics, the Lindbladian and a GKSL integrator.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1, Zip};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::{Direction, GridFunction, GridOperator, GridSpec};
use crate::linalg;
use crate::semigroup::{SemigroupFamily, SpectralForm};
use crate::state::{Convolver, Evolution, LinearState, Picture};

/// A trace-class operator stored through its kernel `W`; as a matrix on grid values it is `h·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    spec: GridSpec,
    kernel: Array2<C64>,
}

impl DensityOperator {
    pub fn new(spec: GridSpec, kernel: Array2<C64>) -> Result<Self> {
        let n = spec.n_points();
        if kernel.dim() != (n, n) {
            return Err(Error::SpecMismatch(format!("kernel shape {:?} for {n} nodes", kernel.dim())));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("kernel has non-finite entries".into()));
        }
        Ok(Self { spec, kernel })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n_points();
        Self { spec, kernel: Array2::zeros((n, n)) }
    }

    /// `|ψ⟩⟨φ|`.
    pub fn rank_one(psi: &GridFunction, phi: &GridFunction) -> Result<Self> {
        psi.spec().ensure_same(&phi.spec())?;
        let (p, q) = (psi.values(), phi.values());
        let n = p.len();
        Ok(Self { spec: psi.spec(), kernel: Array2::from_shape_fn((n, n), |(i, j)| p[i] * q[j].conj()) })
    }

    pub fn pure(psi: &GridFunction) -> Self {
        Self::rank_one(psi, psi).expect("same spec")
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn kernel(&self) -> &Array2<C64> {
        &self.kernel
    }

    pub fn into_kernel(self) -> Array2<C64> {
        self.kernel
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.kernel) * self.spec.h()
    }

    pub fn hs_norm(&self) -> f64 {
        self.spec.h() * linalg::frobenius(&self.kernel)
    }

    /// The operator as a matrix acting on grid values.
    pub fn as_operator(&self) -> GridOperator {
        GridOperator::new(self.spec, self.kernel.mapv(|v| v * self.spec.h())).expect("finite kernel")
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.spec.h() * linalg::frobenius(&(&self.kernel - &linalg::dagger(&self.kernel)))
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let ev = linalg::hermitian_eigenvalues(&self.kernel);
        ev.first().copied().unwrap_or(0.0) * self.spec.h()
    }

    /// `Tr(x ω)`.
    pub fn pairing(&self, x: &GridOperator) -> Result<C64> {
        self.spec.ensure_same(&x.spec())?;
        let s: C64 = Zip::from(x.entries()).and(&self.kernel.t()).fold(C64::new(0.0, 0.0), |acc, &a, &b| acc + a * b);
        Ok(s * self.spec.h())
    }

    pub fn axpy(&mut self, a: C64, x: &DensityOperator) -> Result<()> {
        self.spec.ensure_same(&x.spec)?;
        self.kernel.scaled_add(a, &x.kernel);
        Ok(())
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { spec: self.spec, kernel: self.kernel.mapv(|v| v * c) }
    }

    pub fn sub(&self, other: &DensityOperator) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    /// Keeps rows and columns with node index in `[lo, hi)`.
    pub fn restricted(&self, lo: usize, hi: usize) -> Self {
        let n = self.spec.n_points();
        let kernel = Array2::from_shape_fn((n, n), |(i, j)| {
            if (lo..hi).contains(&i) && (lo..hi).contains(&j) {
                self.kernel[[i, j]]
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self { spec: self.spec, kernel }
    }

    /// Two-sided index shift: entry `(a, b)` of the result is `W_{a+m, b+m}` for
    /// `Direction::LeftAdjoint` and `W_{a-m, b-m}` for `Direction::Right`.
    pub fn shifted(&self, m: usize, direction: Direction) -> Self {
        Self { spec: self.spec, kernel: shift_both(&self.kernel, m, direction) }
    }
}

pub(crate) fn shift_both(w: &Array2<C64>, m: usize, direction: Direction) -> Array2<C64> {
    let n = w.nrows();
    let mut out = Array2::zeros((n, n));
    if m < n {
        match direction {
            Direction::LeftAdjoint => out.slice_mut(s![..n - m, ..n - m]).assign(&w.slice(s![m.., m..])),
            Direction::Right => out.slice_mut(s![m.., m..]).assign(&w.slice(s![..n - m, ..n - m])),
        }
    }
    out
}

impl LinearState for DensityOperator {
    const PICTURE: Picture = Picture::Schrodinger;
    const LABEL: &'static str = "density";

    fn spec(&self) -> GridSpec {
        self.spec
    }
    fn zeros(spec: GridSpec) -> Self {
        DensityOperator::zeros(spec)
    }
    fn dimension(spec: GridSpec) -> usize {
        spec.n_points() * spec.n_points()
    }
    fn flatten(&self) -> ndarray::Array1<C64> {
        self.kernel.iter().cloned().collect()
    }
    fn unflatten(spec: GridSpec, v: ArrayView1<C64>) -> Result<Self> {
        let n = spec.n_points();
        let k = v.to_owned().into_shape_with_order((n, n)).map_err(|e| Error::SpecMismatch(e.to_string()))?;
        DensityOperator::new(spec, k)
    }
    fn axpy(&mut self, a: C64, x: &Self) -> Result<()> {
        DensityOperator::axpy(self, a, x)
    }
    fn norm(&self) -> f64 {
        self.hs_norm()
    }
    fn trace(&self) -> Option<f64> {
        Some(DensityOperator::trace(self).re)
    }
}

/// The no-event dynamics `ω ↦ T_t* ω T_t` (states) and `x ↦ T_t x T_t*` (observables).
#[derive(Clone, Debug)]
pub struct NoEventFamily {
    vector: Arc<SemigroupFamily>,
}

impl NoEventFamily {
    pub fn new(vector: Arc<SemigroupFamily>) -> Self {
        Self { vector }
    }

    pub fn vector_family(&self) -> &Arc<SemigroupFamily> {
        &self.vector
    }
}

/// `T_t* ω T_t`.
pub fn no_event_apply(vector_family: &SemigroupFamily, t: f64, omega: &DensityOperator) -> Result<DensityOperator> {
    vector_family.spec().ensure_same(&omega.spec)?;
    if let Some(d) = vector_family.shift_direction() {
        let m = omega.spec.steps(t)?;
        // T = S gives W_{a+m,b+m}; T = S* gives W_{a-m,b-m}.
        let flip = match d {
            Direction::Right => Direction::LeftAdjoint,
            Direction::LeftAdjoint => Direction::Right,
        };
        return Ok(omega.shifted(m, flip));
    }
    if let Some(form) = vector_family.spectral() {
        return Ok(DensityOperator { spec: omega.spec, kernel: frame_evolve(form, t, &omega.kernel) });
    }
    let tt = vector_family.at(t)?;
    let k = linalg::dagger(tt.entries()).dot(&omega.kernel).dot(tt.entries());
    Ok(DensityOperator { spec: omega.spec, kernel: k })
}

/// `T_t x T_t*`.
pub fn no_event_apply_heisenberg(vector_family: &SemigroupFamily, t: f64, x: &GridOperator) -> Result<GridOperator> {
    vector_family.spec().ensure_same(&x.spec())?;
    if let Some(d) = vector_family.shift_direction() {
        let m = x.spec().steps(t)?;
        return GridOperator::new(x.spec(), shift_both(x.entries(), m, d));
    }
    if let Some(form) = vector_family.spectral() {
        return GridOperator::new(x.spec(), frame_evolve(form, t, x.entries()));
    }
    let tt = vector_family.at(t)?;
    GridOperator::new(x.spec(), tt.entries().dot(x.entries()).dot(&linalg::dagger(tt.entries())))
}

// T W T with T = V e^{tΛ} Vᵀ real symmetric; the same formula serves both pictures.
fn frame_evolve(form: &SpectralForm, t: f64, w: &Array2<C64>) -> Array2<C64> {
    let mut f = form.to_frame(w);
    Zip::from(&mut f).and(&form.pair_factors(t)).for_each(|v, &p| *v *= p);
    form.from_frame(&f)
}

impl Evolution<DensityOperator> for NoEventFamily {
    fn spec(&self) -> GridSpec {
        self.vector.spec()
    }
    fn evolve(&self, t: f64, arg: &DensityOperator) -> Result<DensityOperator> {
        no_event_apply(&self.vector, t, arg)
    }
    fn shift_direction(&self) -> Option<Direction> {
        self.vector.shift_direction()
    }
    fn fast_convolver(&self, dt: f64) -> Option<Box<dyn Convolver<DensityOperator> + '_>> {
        let form = self.vector.spectral()?.clone();
        Some(Box::new(FrameConvolver { spec: self.vector.spec(), form, dt, items: Vec::new(), powers: Vec::new() }))
    }
}

impl Evolution<GridOperator> for NoEventFamily {
    fn spec(&self) -> GridSpec {
        self.vector.spec()
    }
    fn evolve(&self, t: f64, arg: &GridOperator) -> Result<GridOperator> {
        no_event_apply_heisenberg(&self.vector, t, arg)
    }
    fn shift_direction(&self) -> Option<Direction> {
        self.vector.shift_direction()
    }
}

/// History convolution carried out entrywise in the generator's eigenframe.
struct FrameConvolver {
    spec: GridSpec,
    form: Arc<SpectralForm>,
    dt: f64,
    items: Vec<Array2<C64>>,
    powers: Vec<Array2<f64>>,
}

impl Convolver<DensityOperator> for FrameConvolver {
    fn push(&mut self, item: DensityOperator) -> Result<()> {
        self.spec.ensure_same(&item.spec)?;
        self.powers.push(self.form.pair_factors(self.powers.len() as f64 * self.dt));
        self.items.push(self.form.to_frame(&item.kernel));
        Ok(())
    }

    fn sum(&self) -> Result<DensityOperator> {
        let k = self.items.len();
        let n = self.spec.n_points();
        let mut acc = Array2::<C64>::zeros((n, n));
        for j in 1..=k {
            Zip::from(&mut acc).and(&self.powers[j - 1]).and(&self.items[k - j]).for_each(|a, &p, &w| *a += w * p);
        }
        DensityOperator::new(self.spec, self.form.from_frame(&acc))
    }
}

/// Arguments the Lindbladian acts on; the picture follows from the type.
pub trait LindbladArg: Sized {
    fn lindblad(k: &GridOperator, ls: &[GridOperator], arg: &Self) -> Result<Self>;
}

impl LindbladArg for GridOperator {
    /// `K x + x K* + 2 Σ L_j* x L_j`.
    fn lindblad(k: &GridOperator, ls: &[GridOperator], x: &GridOperator) -> Result<GridOperator> {
        check_specs(k, ls, x.spec())?;
        let ke = k.entries();
        let mut out = ke.dot(x.entries()) + x.entries().dot(&linalg::dagger(ke));
        for l in ls {
            let le = l.entries();
            out.scaled_add(C64::new(2.0, 0.0), &linalg::dagger(le).dot(x.entries()).dot(le));
        }
        GridOperator::new(x.spec(), out)
    }
}

impl LindbladArg for DensityOperator {
    /// `K* ω + ω K + 2 Σ L_j ω L_j*`, acting on the kernel.
    fn lindblad(k: &GridOperator, ls: &[GridOperator], w: &DensityOperator) -> Result<DensityOperator> {
        check_specs(k, ls, w.spec)?;
        Ok(DensityOperator { spec: w.spec, kernel: predual_rhs(k.entries(), ls, &w.kernel) })
    }
}

fn check_specs(k: &GridOperator, ls: &[GridOperator], spec: GridSpec) -> Result<()> {
    k.spec().ensure_same(&spec)?;
    for l in ls {
        l.spec().ensure_same(&spec)?;
    }
    Ok(())
}

fn predual_rhs(k: &Array2<C64>, ls: &[GridOperator], w: &Array2<C64>) -> Array2<C64> {
    let mut out = linalg::dagger(k).dot(w) + w.dot(k);
    for l in ls {
        let le = l.entries();
        out.scaled_add(C64::new(2.0, 0.0), &le.dot(w).dot(&linalg::dagger(le)));
    }
    out
}

/// Applies the Lindbladian in the picture matching `arg`.
pub fn lindblad_apply<A: LindbladArg>(k: &GridOperator, ls: &[GridOperator], arg: &A) -> Result<A> {
    A::lindblad(k, ls, arg)
}

/// `-Re⟨ψ, Kψ⟩ − Σ‖L_j ψ‖²`; nonnegative when the dissipativity condition holds at ψ.
pub fn dissipativity_margin(k: &GridOperator, ls: &[GridOperator], psi: &GridFunction) -> Result<f64> {
    let mut m = -psi.inner(&k.apply(psi)?)?.re;
    for l in ls {
        m -= l.apply(psi)?.norm_sqr();
    }
    Ok(m)
}

/// Output of [`gksl_evolve`].
#[derive(Clone, Debug)]
pub struct GkslTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityOperator>,
    pub traces: Vec<f64>,
    /// `Tr L̆_*(ω)` at each recorded state.
    pub trace_rates: Vec<f64>,
}

impl GkslTrajectory {
    pub fn terminal(&self) -> &DensityOperator {
        self.states.last().expect("at least the initial state")
    }
}

/// Number of steps below which classical RK4 is expected to be unstable.
pub fn stable_step_count(k: &GridOperator, ls: &[GridOperator], t_final: f64) -> usize {
    // Bound on the spectral radius of the predual Lindbladian.
    let mut rho = 2.0 * k.operator_norm();
    for l in ls {
        let n = l.operator_norm();
        rho += 2.0 * n * n;
    }
    (t_final * rho / 2.5).ceil().max(1.0) as usize
}

/// Classical RK4 on `dω/dt = L̆_*(ω)`, recording every step.
pub fn gksl_evolve(
    k: &GridOperator,
    ls: &[GridOperator],
    omega0: &DensityOperator,
    t_final: f64,
    n_steps: usize,
) -> Result<GkslTrajectory> {
    gksl_evolve_recorded(k, ls, omega0, t_final, n_steps, 1)
}

/// As [`gksl_evolve`], keeping only every `record_every`-th state (and the last).
pub fn gksl_evolve_recorded(
    k: &GridOperator,
    ls: &[GridOperator],
    omega0: &DensityOperator,
    t_final: f64,
    n_steps: usize,
    record_every: usize,
) -> Result<GkslTrajectory> {
    if n_steps == 0 || record_every == 0 {
        return Err(Error::Domain("n_steps and record_every must be positive".into()));
    }
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(Error::Domain(format!("t_final must be nonnegative, got {t_final}")));
    }
    check_specs(k, ls, omega0.spec)?;
    let spec = omega0.spec;
    let h = spec.h();
    let dt = t_final / n_steps as f64;
    let ke = k.entries();
    let rhs = |w: &Array2<C64>| predual_rhs(ke, ls, w);
    let rate = |w: &Array2<C64>| (linalg::trace(&rhs(w)) * h).re;
    let limit = 10.0 * omega0.hs_norm().max(f64::MIN_POSITIVE);

    let mut w = omega0.kernel.clone();
    let mut out =
        GkslTrajectory { times: vec![0.0], states: vec![omega0.clone()], traces: vec![omega0.trace().re], trace_rates: vec![rate(&w)] };
    let half = C64::new(dt / 2.0, 0.0);
    let full = C64::new(dt, 0.0);
    let sixth = C64::new(dt / 6.0, 0.0);
    for step in 1..=n_steps {
        let k1 = rhs(&w);
        let k2 = rhs(&(&w + &k1.mapv(|v| v * half)));
        let k3 = rhs(&(&w + &k2.mapv(|v| v * half)));
        let k4 = rhs(&(&w + &k3.mapv(|v| v * full)));
        let incr = (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4).mapv(|v| v * sixth);
        w += &incr;
        let norm = h * linalg::frobenius(&w);
        if !norm.is_finite() || norm > limit {
            let need = stable_step_count(k, ls, t_final);
            return Err(Error::IntegrationFailure(format!(
                "state norm reached {norm:.3e} at step {step}; use at least {need} steps for t = {t_final}"
            )));
        }
        if step % record_every == 0 || step == n_steps {
            let state = DensityOperator { spec, kernel: w.clone() };
            out.times.push(step as f64 * dt);
            out.traces.push(state.trace().re);
            out.trace_rates.push(rate(&w));
            out.states.push(state);
        }
    }
    Ok(out)
}

/// `K` = Dirichlet Laplacian and the single jump `L = −d/dx` (upwind).
pub fn diffusion_operators(spec: GridSpec) -> (GridOperator, Vec<GridOperator>) {
    let k = crate::semigroup::dirichlet_laplacian(spec);
    let l = crate::semigroup::upwind_gradient(spec).scaled(C64::new(-1.0, 0.0));
    (k, vec![l])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::SemigroupFamily;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_op(spec: GridSpec, rng: &mut ChaCha8Rng) -> GridOperator {
        let n = spec.n_points();
        GridOperator::new(spec, Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .unwrap()
    }

    fn random_state(spec: GridSpec, rng: &mut ChaCha8Rng) -> DensityOperator {
        let n = spec.n_points();
        DensityOperator::new(spec, Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
            .unwrap()
    }

    fn bump(spec: GridSpec, c: f64, w: f64) -> GridFunction {
        let f = GridFunction::from_real_fn(spec, |x| (-((x - c) / w).powi(2)).exp() * (1.0 - (-x).exp()));
        let n = f.norm();
        f.scaled(C64::new(1.0 / n, 0.0))
    }

    #[test]
    fn trace_and_pairing_conventions() {
        let g = GridSpec::new(8.0, 64).unwrap();
        let psi = GridFunction::from_real_fn(g, |x| 2f64.sqrt() * (-x).exp());
        let w = DensityOperator::pure(&psi);
        assert_abs_diff_eq!(w.trace().re, psi.norm_sqr(), epsilon = 1e-14);
        let id = GridOperator::identity(g);
        assert_abs_diff_eq!((w.pairing(&id).unwrap() - w.trace()).norm(), 0.0, epsilon = 1e-14);
        assert!(w.min_eigenvalue() > -1e-12);
        assert!(w.hermiticity_residual() < 1e-14);
    }

    #[test]
    fn no_event_cases() {
        let g = GridSpec::new(20.0, 2560).unwrap();
        let fam = SemigroupFamily::right_shift(g);
        let psi = GridFunction::from_real_fn(g, |x| 2f64.sqrt() * (-x).exp());
        let w = DensityOperator::pure(&psi);
        assert_eq!(no_event_apply(&fam, 0.0, &w).unwrap(), w);
        let out = no_event_apply(&fam, 1.0, &w).unwrap();
        assert_abs_diff_eq!(out.trace().re, (-2.0f64).exp(), epsilon = 1e-3);
        let g2 = GridSpec::new(4.0, 32).unwrap();
        let fam2 = SemigroupFamily::right_shift(g2);
        let early = crate::grid::indicator(g2, 0.0, 1.0).unwrap();
        let gone = no_event_apply(&fam2, 1.0, &DensityOperator::pure(&early)).unwrap();
        assert_eq!(gone, DensityOperator::zeros(g2));
    }

    #[test]
    fn no_event_matches_dense_formula_and_composes() {
        let g = GridSpec::new(6.0, 24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_state(g, &mut rng);
        let h = g.h();
        for fam in [SemigroupFamily::right_shift(g), SemigroupFamily::left_adjoint_shift(g)] {
            let t = fam.at(3.0 * h).unwrap();
            let dense = linalg::dagger(t.entries()).dot(w.kernel()).dot(t.entries());
            let fast = no_event_apply(&fam, 3.0 * h, &w).unwrap();
            assert_eq!(&dense, fast.kernel());
            let two = no_event_apply(&fam, 2.0 * h, &no_event_apply(&fam, 3.0 * h, &w).unwrap()).unwrap();
            assert_eq!(two, no_event_apply(&fam, 5.0 * h, &w).unwrap());
        }
        let spectral = SemigroupFamily::symmetric_generator(&crate::semigroup::dirichlet_laplacian(g)).unwrap();
        let t = spectral.at(0.2).unwrap();
        let dense = linalg::dagger(t.entries()).dot(w.kernel()).dot(t.entries());
        let fast = no_event_apply(&spectral, 0.2, &w).unwrap();
        assert!(linalg::frobenius(&(&dense - fast.kernel())) < 1e-12);
    }

    #[test]
    fn no_event_keeps_rank_one() {
        let g = GridSpec::new(20.0, 128).unwrap();
        let fam = SemigroupFamily::heat_extinction(g);
        let psi = GridFunction::from_real_fn(g, |x| x * (-x).exp());
        let out = no_event_apply(&fam, 0.5, &DensityOperator::pure(&psi)).unwrap();
        let ev = linalg::hermitian_eigenvalues(out.kernel());
        let top = ev.last().unwrap().abs();
        assert!(ev[..ev.len() - 1].iter().all(|v| v.abs() < 1e-12 * top.max(1.0)));
    }

    #[test]
    fn duality_of_no_event_pictures() {
        let g = GridSpec::new(8.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_op(g, &mut rng);
        let w = random_state(g, &mut rng);
        for fam in [SemigroupFamily::heat_extinction(g), SemigroupFamily::right_shift(g)] {
            let t = 4.0 * g.h();
            let lhs = w.pairing(&no_event_apply_heisenberg(&fam, t, &x).unwrap()).unwrap();
            let rhs = no_event_apply(&fam, t, &w).unwrap().pairing(&x).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10);
        }
    }

    #[test]
    fn lindblad_cases() {
        let g = GridSpec::new(8.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_op(g, &mut rng);
        let skew = a.sub(&a.adjoint()).unwrap();
        let zero = lindblad_apply(&skew, &[], &GridOperator::identity(g)).unwrap();
        assert!(zero.frobenius_norm() < 1e-12);

        let (k, ls) = diffusion_operators(g);
        let x = random_op(g, &mut rng);
        let w = random_state(g, &mut rng);
        let lhs = w.pairing(&lindblad_apply(&k, &ls, &x).unwrap()).unwrap();
        let rhs = lindblad_apply(&k, &ls, &w).unwrap().pairing(&x).unwrap();
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn diffusion_condition_holds_with_equality() {
        let g = GridSpec::new(10.0, 256).unwrap();
        let (k, ls) = diffusion_operators(g);
        let form = lindblad_apply(&k, &ls, &GridOperator::identity(g)).unwrap();
        let psi = GridFunction::from_real_fn(g, |x| x * (-x * x / 2.0).exp());
        let q = psi.inner(&form.apply(&psi).unwrap()).unwrap();
        assert!(q.norm() <= 1e-6, "{q}");
        // Away from the far edge the operator vanishes identically.
        let inner = form.leading_block_frobenius(g.n_points() - 1);
        assert!(inner < 1e-9 * form.frobenius_norm());
        assert!(dissipativity_margin(&k, &ls, &psi).unwrap() >= -1e-6);
    }

    #[test]
    fn gksl_trivial_generator() {
        let g = GridSpec::new(4.0, 8).unwrap();
        let w = DensityOperator::pure(&GridFunction::from_real_fn(g, |x| (-x).exp()));
        let tr = gksl_evolve(&GridOperator::zeros(g), &[], &w, 1.0, 10).unwrap();
        assert_eq!(tr.states.len(), 11);
        assert!(tr.states.iter().all(|s| s == &w));
        assert!(gksl_evolve(&GridOperator::zeros(g), &[], &w, 1.0, 0).is_err());
    }

    #[test]
    fn gksl_diffusion_trace_nonincreasing_and_flux() {
        let g = GridSpec::new(8.0, 32).unwrap();
        let (k, ls) = diffusion_operators(g);
        let w = DensityOperator::pure(&bump(g, 6.0, 0.7));
        let tr = gksl_evolve(&k, &ls, &w, 0.5, 200).unwrap();
        let scale = tr.trace_rates.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(scale > 1e-6);
        for pair in tr.traces.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-13);
        }
        let dt = 0.5 / 200.0;
        for i in 1..tr.traces.len() - 1 {
            let fd = (tr.traces[i + 1] - tr.traces[i - 1]) / (2.0 * dt);
            assert!((fd - tr.trace_rates[i]).abs() <= 1e-3 * scale);
        }
    }

    #[test]
    fn gksl_is_fourth_order() {
        let g = GridSpec::new(8.0, 16).unwrap();
        let (k, ls) = diffusion_operators(g);
        let w = DensityOperator::pure(&bump(g, 4.0, 1.0));
        let base = stable_step_count(&k, &ls, 0.2).max(8);
        let run = |m: usize| gksl_evolve(&k, &ls, &w, 0.2, base * m).unwrap().terminal().clone();
        let (a, b, r) = (run(1), run(2), run(4));
        let e1 = a.sub(&r).unwrap().hs_norm();
        let e2 = b.sub(&r).unwrap().hs_norm();
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn gksl_flags_instability() {
        let g = GridSpec::new(8.0, 64).unwrap();
        let (k, ls) = diffusion_operators(g);
        let w = DensityOperator::pure(&bump(g, 4.0, 1.0));
        let err = gksl_evolve(&k, &ls, &w, 0.5, 5).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure(_)));
    }
}
