//! Traits shared by the vector, observable and state levels.

use std::fmt;

use ndarray::{Array1, ArrayView1};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Direction, GridFunction, GridOperator, GridSpec};

/// Which side of the trace pairing a quantity lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Picture {
    /// Observables, and vector-level dynamics written in the same order.
    Heisenberg,
    /// States (the predual).
    Schrodinger,
}

/// A finite-dimensional linear space the engine can march in.
pub trait LinearState: Clone + Send + Sync + fmt::Debug + 'static {
    const PICTURE: Picture;
    const LABEL: &'static str;

    fn spec(&self) -> GridSpec;
    fn zeros(spec: GridSpec) -> Self;
    /// Number of complex coordinates.
    fn dimension(spec: GridSpec) -> usize;
    fn flatten(&self) -> Array1<C64>;
    fn unflatten(spec: GridSpec, v: ArrayView1<C64>) -> Result<Self>;
    /// `self += a * x`.
    fn axpy(&mut self, a: C64, x: &Self) -> Result<()>;
    /// The natural Hilbert-Schmidt or L² norm.
    fn norm(&self) -> f64;
    fn trace(&self) -> Option<f64> {
        None
    }

    fn distance(&self, other: &Self) -> Result<f64> {
        let mut d = self.clone();
        d.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(d.norm())
    }
}

impl LinearState for GridFunction {
    const PICTURE: Picture = Picture::Heisenberg;
    const LABEL: &'static str = "vector";

    fn spec(&self) -> GridSpec {
        GridFunction::spec(self)
    }
    fn zeros(spec: GridSpec) -> Self {
        GridFunction::zeros(spec)
    }
    fn dimension(spec: GridSpec) -> usize {
        spec.n_points()
    }
    fn flatten(&self) -> Array1<C64> {
        self.values().clone()
    }
    fn unflatten(spec: GridSpec, v: ArrayView1<C64>) -> Result<Self> {
        GridFunction::new(spec, v.to_owned())
    }
    fn axpy(&mut self, a: C64, x: &Self) -> Result<()> {
        GridFunction::axpy(self, a, x)
    }
    fn norm(&self) -> f64 {
        GridFunction::norm(self)
    }
}

impl LinearState for GridOperator {
    const PICTURE: Picture = Picture::Heisenberg;
    const LABEL: &'static str = "observable";

    fn spec(&self) -> GridSpec {
        GridOperator::spec(self)
    }
    fn zeros(spec: GridSpec) -> Self {
        GridOperator::zeros(spec)
    }
    fn dimension(spec: GridSpec) -> usize {
        spec.n_points() * spec.n_points()
    }
    fn flatten(&self) -> Array1<C64> {
        self.entries().iter().cloned().collect()
    }
    fn unflatten(spec: GridSpec, v: ArrayView1<C64>) -> Result<Self> {
        let n = spec.n_points();
        let m = v.to_owned().into_shape_with_order((n, n)).map_err(|e| Error::SpecMismatch(e.to_string()))?;
        GridOperator::new(spec, m)
    }
    fn axpy(&mut self, a: C64, x: &Self) -> Result<()> {
        GridOperator::axpy(self, a, x)
    }
    fn norm(&self) -> f64 {
        self.frobenius_norm()
    }
}

/// A one-parameter family acting on a state space.
pub trait Evolution<S: LinearState>: Send + Sync {
    fn spec(&self) -> GridSpec;
    fn evolve(&self, t: f64, arg: &S) -> Result<S>;
    /// Set when the family is a pure grid shift (exactly invertible on its range).
    fn shift_direction(&self) -> Option<Direction> {
        None
    }
    /// A faster history convolution, when the family has one.
    fn fast_convolver(&self, _dt: f64) -> Option<Box<dyn Convolver<S> + '_>> {
        None
    }
}

/// Running sum `Σ_{j=1}^{k} evolve((j-1)Δ, items[k-j])` over a growing history.
pub trait Convolver<S>: Send {
    fn push(&mut self, item: S) -> Result<()>;
    fn sum(&self) -> Result<S>;
}

/// Picks the family's fast convolver or falls back to direct evaluation.
pub fn convolver_for<'a, S: LinearState>(base: &'a dyn Evolution<S>, dt: f64) -> Box<dyn Convolver<S> + 'a> {
    base.fast_convolver(dt).unwrap_or_else(|| Box::new(DirectConvolver { base, dt, items: Vec::new() }))
}

/// Evaluates every term through `evolve`.
pub struct DirectConvolver<'a, S> {
    base: &'a dyn Evolution<S>,
    dt: f64,
    items: Vec<S>,
}

impl<'a, S: LinearState> DirectConvolver<'a, S> {
    pub fn new(base: &'a dyn Evolution<S>, dt: f64) -> Self {
        Self { base, dt, items: Vec::new() }
    }
}

impl<S: LinearState> Convolver<S> for DirectConvolver<'_, S> {
    fn push(&mut self, item: S) -> Result<()> {
        self.items.push(item);
        Ok(())
    }

    fn sum(&self) -> Result<S> {
        let k = self.items.len();
        ordered_sum(self.base.spec(), k, |j| self.base.evolve(j as f64 * self.dt, &self.items[k - 1 - j]))
    }
}

/// Chunk size of [`ordered_sum`]; fixed so the reduction tree does not depend on scheduling.
const SUM_CHUNK: usize = 8;

/// `Σ_{j<k} term(j)`, evaluated in parallel with a deterministic summation order.
pub fn ordered_sum<S: LinearState>(spec: GridSpec, k: usize, term: impl Fn(usize) -> Result<S> + Sync) -> Result<S> {
    let partials: Vec<S> = (0..k.div_ceil(SUM_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = S::zeros(spec);
            for j in c * SUM_CHUNK..((c + 1) * SUM_CHUNK).min(k) {
                acc.axpy(C64::new(1.0, 0.0), &term(j)?)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = S::zeros(spec);
    for p in &partials {
        total.axpy(C64::new(1.0, 0.0), p)?;
    }
    Ok(total)
}
