//! Uniform midpoint grid on the half-line, grid functions and dense operators.

use ndarray::{s, Array1, Array2, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative slack allowed when deciding that a time sits on the grid.
const ALIGN_SLACK: f64 = 1e-9;

/// Uniform grid on `[0, x_max)` with nodes at cell midpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    x_max: f64,
    n_points: usize,
}

impl GridSpec {
    pub fn new(x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(Error::Domain(format!("x_max must be positive, got {x_max}")));
        }
        if n_points < 2 {
            return Err(Error::Domain(format!("n_points must be at least 2, got {n_points}")));
        }
        Ok(Self { x_max, n_points })
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn h(&self) -> f64 {
        self.x_max / self.n_points as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    pub fn nodes(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n_points, |i| self.node(i))
    }

    /// Same domain, twice the points.
    pub fn refined(&self) -> Self {
        Self { x_max: self.x_max, n_points: 2 * self.n_points }
    }

    /// Number of cells spanned by a grid-aligned nonnegative time.
    pub fn steps(&self, t: f64) -> Result<usize> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
        }
        let h = self.h();
        let r = t / h;
        let m = r.round();
        if (r - m).abs() > ALIGN_SLACK * m.max(1.0) {
            return Err(Error::Alignment { t, h });
        }
        Ok(m as usize)
    }

    /// Whether `t` is a nonnegative multiple of `h`.
    pub fn is_aligned(&self, t: f64) -> bool {
        self.steps(t).is_ok()
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("({}, {}) vs ({}, {})", self.x_max, self.n_points, other.x_max, other.n_points)))
        }
    }

    /// Index range `[lo, hi)` of nodes lying in `[a, b)`; endpoints must be aligned.
    pub fn cell_range(&self, a: f64, b: f64) -> Result<(usize, usize)> {
        if a > b {
            return Err(Error::Domain(format!("reversed interval [{a}, {b})")));
        }
        let lo = self.steps(a).map_err(as_domain)?;
        let hi = self.steps(b).map_err(as_domain)?;
        Ok((lo.min(self.n_points), hi.min(self.n_points)))
    }
}

fn as_domain(e: Error) -> Error {
    match e {
        Error::Alignment { t, h } => Error::Domain(format!("endpoint {t} is not a multiple of h = {h}")),
        other => other,
    }
}

/// Complex samples at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    spec: GridSpec,
    values: Array1<C64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Array1<C64>) -> Result<Self> {
        if values.len() != spec.n_points() {
            return Err(Error::SpecMismatch(format!("{} values for {} nodes", values.len(), spec.n_points())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("grid function has non-finite values".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: Array1::zeros(spec.n_points()) }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(f64) -> C64) -> Self {
        let values = Array1::from_shape_fn(spec.n_points(), |i| f(spec.node(i)));
        Self { spec, values }
    }

    pub fn from_real_fn(spec: GridSpec, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_fn(spec, |x| C64::new(f(x), 0.0))
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &Array1<C64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<C64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array1<C64> {
        self.values
    }

    pub fn inner(&self, other: &GridFunction) -> Result<C64> {
        inner_product(self, other)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.spec.h() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { spec: self.spec, values: self.values.mapv(|v| v * c) }
    }

    pub fn conj(&self) -> Self {
        Self { spec: self.spec, values: self.values.mapv(|v| v.conj()) }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: C64, x: &GridFunction) -> Result<()> {
        self.spec.ensure_same(&x.spec)?;
        Zip::from(&mut self.values).and(&x.values).for_each(|y, &v| *y += a * v);
        Ok(())
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    /// Index shift by `m` cells: right pushes mass away from the origin.
    pub fn shifted(&self, m: usize, direction: Direction) -> Self {
        let n = self.spec.n_points();
        let mut out = Array1::zeros(n);
        if m < n {
            match direction {
                Direction::Right => out.slice_mut(s![m..]).assign(&self.values.slice(s![..n - m])),
                Direction::LeftAdjoint => out.slice_mut(s![..n - m]).assign(&self.values.slice(s![m..])),
            }
        }
        Self { spec: self.spec, values: out }
    }

    /// Product with the indicator of the node range `[lo, hi)`.
    pub fn restricted(&self, lo: usize, hi: usize) -> Self {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if i < lo || i >= hi {
                *v = C64::new(0.0, 0.0);
            }
        }
        out
    }
}

/// Quadrature inner product, conjugate-linear in the first slot.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<C64> {
    f.spec.ensure_same(&g.spec)?;
    let s: C64 = f.values.iter().zip(g.values.iter()).map(|(a, b)| a.conj() * b).sum();
    Ok(s * f.spec.h())
}

/// Direction of a grid shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// `(S_t η)(x) = η(x - t)`, zero below `t`.
    Right,
    /// The adjoint left shift, truncated at `x_max`.
    LeftAdjoint,
}

/// Dense linear map on grid functions; the quadrature weight is folded into the entries.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOperator {
    spec: GridSpec,
    entries: Array2<C64>,
}

impl GridOperator {
    pub fn new(spec: GridSpec, entries: Array2<C64>) -> Result<Self> {
        let n = spec.n_points();
        if entries.dim() != (n, n) {
            return Err(Error::SpecMismatch(format!("operator shape {:?} for {n} nodes", entries.dim())));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("operator has non-finite entries".into()));
        }
        Ok(Self { spec, entries })
    }

    pub fn from_real(spec: GridSpec, entries: &Array2<f64>) -> Result<Self> {
        Self::new(spec, entries.mapv(|v| C64::new(v, 0.0)))
    }

    pub fn identity(spec: GridSpec) -> Self {
        Self { spec, entries: Array2::eye(spec.n_points()) }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n_points();
        Self { spec, entries: Array2::zeros((n, n)) }
    }

    pub fn diagonal(f: &GridFunction) -> Self {
        Self { spec: f.spec, entries: Array2::from_diag(&f.values) }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn entries(&self) -> &Array2<C64> {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut Array2<C64> {
        &mut self.entries
    }

    pub fn into_entries(self) -> Array2<C64> {
        self.entries
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.spec.ensure_same(&f.spec)?;
        Ok(GridFunction { spec: self.spec, values: self.entries.dot(&f.values) })
    }

    /// `self · other`.
    pub fn compose(&self, other: &GridOperator) -> Result<GridOperator> {
        self.spec.ensure_same(&other.spec)?;
        Ok(GridOperator { spec: self.spec, entries: self.entries.dot(&other.entries) })
    }

    pub fn adjoint(&self) -> GridOperator {
        GridOperator { spec: self.spec, entries: linalg::dagger(&self.entries) }
    }

    pub fn scaled(&self, c: C64) -> GridOperator {
        GridOperator { spec: self.spec, entries: self.entries.mapv(|v| v * c) }
    }

    pub fn axpy(&mut self, a: C64, x: &GridOperator) -> Result<()> {
        self.spec.ensure_same(&x.spec)?;
        self.entries.scaled_add(a, &x.entries);
        Ok(())
    }

    pub fn sub(&self, other: &GridOperator) -> Result<GridOperator> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        linalg::frobenius(&self.entries)
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        linalg::spectral_norm(&self.entries)
    }

    /// Frobenius norm of the leading `k × k` block.
    pub fn leading_block_frobenius(&self, k: usize) -> f64 {
        let k = k.min(self.spec.n_points());
        linalg::frobenius(&self.entries.slice(s![..k, ..k]).to_owned())
    }
}

/// Shift by a grid-aligned time `t`.
pub fn shift_op(spec: GridSpec, t: f64, direction: Direction) -> Result<GridOperator> {
    let m = spec.steps(t)?;
    let n = spec.n_points();
    let mut entries = Array2::zeros((n, n));
    for i in m..n {
        match direction {
            Direction::Right => entries[[i, i - m]] = C64::new(1.0, 0.0),
            Direction::LeftAdjoint => entries[[i - m, i]] = C64::new(1.0, 0.0),
        }
    }
    Ok(GridOperator { spec, entries })
}

/// Dirichlet heat kernel on the half-line sampled at the nodes, weight `h` included.
pub fn heat_op(spec: GridSpec, t: f64) -> Result<GridOperator> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("heat time must be positive, got {t}")));
    }
    let n = spec.n_points();
    let h = spec.h();
    let x = spec.nodes();
    let pref = h / (4.0 * std::f64::consts::PI * t).sqrt();
    let entries = Array2::from_shape_fn((n, n), |(i, j)| {
        let d = x[i] - x[j];
        let p = x[i] + x[j];
        let v = pref * ((-d * d / (4.0 * t)).exp() - (-p * p / (4.0 * t)).exp());
        C64::new(v, 0.0)
    });
    Ok(GridOperator { spec, entries })
}

/// Indicator of `[a, b)` on the nodes.
pub fn indicator(spec: GridSpec, a: f64, b: f64) -> Result<GridFunction> {
    if b > spec.x_max() * (1.0 + ALIGN_SLACK) || a < 0.0 {
        return Err(Error::Domain(format!("[{a}, {b}) is not inside [0, {})", spec.x_max())));
    }
    let (lo, hi) = spec.cell_range(a, b)?;
    let values = Array1::from_shape_fn(spec.n_points(), |i| if i >= lo && i < hi { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    Ok(GridFunction { spec, values })
}

/// Multiplication by the indicator of `[a, b)`.
pub fn indicator_op(spec: GridSpec, a: f64, b: f64) -> Result<GridOperator> {
    Ok(GridOperator::diagonal(&indicator(spec, a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(x_max: f64, n: usize) -> GridSpec {
        GridSpec::new(x_max, n).unwrap()
    }

    // Composite Simpson on a fine uniform grid, independent of the midpoint rule.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(0.0, 8).is_err());
        assert!(GridSpec::new(1.0, 1).is_err());
        let g = spec(2.0, 4);
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.nodes().to_vec(), vec![0.25, 0.75, 1.25, 1.75]);
        assert!(matches!(g.steps(0.3), Err(Error::Alignment { .. })));
        assert!(matches!(g.steps(-0.5), Err(Error::Domain(_))));
        assert_eq!(g.steps(1.0).unwrap(), 2);
    }

    #[test]
    fn inner_product_cases() {
        let g = spec(20.0, 2048);
        let z = GridFunction::zeros(g);
        assert_eq!(inner_product(&z, &z).unwrap(), C64::new(0.0, 0.0));
        let one = indicator(g, 0.0, 20.0).unwrap();
        assert_abs_diff_eq!(inner_product(&one, &one).unwrap().re, 20.0, epsilon = g.h());
        let f = GridFunction::from_real_fn(g, |x| (-x).exp());
        let e2 = GridFunction::from_real_fn(g, |x| (-2.0 * x).exp());
        let oracle = simpson(|x| (-3.0 * x).exp(), 0.0, 40.0, 40_000);
        assert_abs_diff_eq!(inner_product(&f, &e2).unwrap().re, oracle, epsilon = 1e-3);
        let other = GridFunction::zeros(spec(10.0, 2048));
        assert!(matches!(inner_product(&f, &other), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn inner_product_second_order() {
        let oracle = simpson(|x| (-3.0 * x).exp() * (x * x + 1.0), 0.0, 40.0, 80_000);
        let err = |n: usize| {
            let g = spec(20.0, n);
            let f = GridFunction::from_real_fn(g, |x| (-x).exp() * (x * x + 1.0));
            let e2 = GridFunction::from_real_fn(g, |x| (-2.0 * x).exp());
            (inner_product(&f, &e2).unwrap().re - oracle).abs()
        };
        let order = (err(256) / err(512)).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn conjugate_linear_first_slot() {
        let g = spec(4.0, 16);
        let f = GridFunction::from_real_fn(g, |x| x);
        let k = GridFunction::from_real_fn(g, |x| 1.0 + x * x);
        let c = C64::new(0.5, 2.0);
        let lhs = inner_product(&f.scaled(c), &k).unwrap();
        let rhs = c.conj() * inner_product(&f, &k).unwrap();
        assert_abs_diff_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_cases() {
        let g = spec(4.0, 16);
        let h = g.h();
        assert_eq!(shift_op(g, 0.0, Direction::Right).unwrap(), GridOperator::identity(g));
        let first = indicator(g, 0.0, h).unwrap();
        let moved = shift_op(g, h, Direction::Right).unwrap().apply(&first).unwrap();
        assert_eq!(moved, indicator(g, h, 2.0 * h).unwrap());
        assert!(matches!(shift_op(g, 0.1, Direction::Right), Err(Error::Alignment { .. })));
        assert!(matches!(shift_op(g, -h, Direction::Right), Err(Error::Domain(_))));
        let r = shift_op(g, 3.0 * h, Direction::Right).unwrap();
        let l = shift_op(g, 3.0 * h, Direction::LeftAdjoint).unwrap();
        assert_eq!(r.adjoint(), l);
        let ind = indicator(g, 1.0, 2.0).unwrap();
        assert_eq!(shift_op(g, 1.0, Direction::Right).unwrap().apply(&ind).unwrap(), indicator(g, 2.0, 3.0).unwrap());
        assert_eq!(first.shifted(1, Direction::Right), moved);
    }

    #[test]
    fn left_shift_tail_norm() {
        let g = spec(20.0, 2560);
        let f = GridFunction::from_real_fn(g, |x| (-x).exp());
        let l = shift_op(g, 1.0, Direction::LeftAdjoint).unwrap();
        let sf = l.apply(&f).unwrap();
        let oracle = simpson(|x| (-2.0 * x).exp(), 1.0, 40.0, 40_000);
        assert_abs_diff_eq!(sf.norm_sqr(), oracle, epsilon = 1e-3);
        assert_abs_diff_eq!(oracle, (-2.0f64).exp() / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn heat_kernel_properties() {
        let g = spec(20.0, 256);
        assert!(heat_op(g, 0.0).is_err());
        for t in [0.01, 0.1, 1.0] {
            let k = heat_op(g, t).unwrap();
            assert!(k.operator_norm() <= 1.0, "t = {t}: {}", k.operator_norm());
            assert!(k.sub(&k.adjoint()).unwrap().frobenius_norm() < 1e-14);
            assert!(k.entries().iter().all(|v| v.re >= -1e-12));
        }
        let k = heat_op(g, 1.0).unwrap();
        assert!(k.entries()[[0, 0]].re < 0.05 * k.entries()[[40, 40]].re);
    }

    #[test]
    fn indicator_cases() {
        let g = spec(4.0, 16);
        assert_eq!(indicator(g, 1.0, 1.0).unwrap(), GridFunction::zeros(g));
        assert_eq!(indicator_op(g, 0.0, 4.0).unwrap(), GridOperator::identity(g));
        assert!(indicator(g, 2.0, 1.0).is_err());
        assert!(indicator(g, 0.1, 1.0).is_err());
    }
}
