//! Exponential vectors on the symmetric Fock space over the half-line grid.
//!
//! Everything is symbolic in test functions: `e(f)` is stored as `f`, rank-one operators
//! `c·|e(f)⟩⟨e(g)|` as `(c, f, g)`, and all observables are matrix elements against other
//! exponential vectors. The only discretization error is quadrature error.
//!
//! The embedding `e(f) ↦ Ω ⊕ ∫ e(S_t* f) ⊗ χ(dt) f` resolves its `L²` factor on `2n`
//! half-cells. Half-cell `2i + σ` covers `[(i + σ/2)h, (i + (1 + σ)/2)h)`, carries the
//! amplitude `f_i` and shifts the test function by the nearest grid edge `(i + σ)h`, so every
//! shift stays aligned and the pairing is second-order accurate.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{inner_product, Direction, GridFunction, GridSpec};

/// Default bound on the number of rank-one terms in an [`ExpOperatorSum`].
pub const DEFAULT_TERM_CAP: usize = 100_000;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Terms per parallel chunk when evaluating matrix elements.
const ELEMENT_CHUNK: usize = 64;

/// `⟨e(f), e(g)⟩ = exp⟨f, g⟩`.
pub fn exp_inner(f: &GridFunction, g: &GridFunction) -> Result<C64> {
    Ok(inner_product(f, g)?.exp())
}

/// `h Σ_{lo ≤ i < hi} conj(a_i) b_i`.
fn partial_inner(a: &GridFunction, b: &GridFunction, lo: usize, hi: usize) -> C64 {
    let (av, bv) = (a.values(), b.values());
    let s: C64 = (lo..hi.min(av.len())).map(|i| av[i].conj() * bv[i]).sum();
    s * a.spec().h()
}

/// `⟨S*_{p h} u, S*_{q h} v⟩` without materializing the shifted functions.
fn shifted_inner(u: &GridFunction, p: usize, v: &GridFunction, q: usize) -> C64 {
    let n = u.spec().n_points();
    let len = n.saturating_sub(p.max(q));
    let (uv, vv) = (u.values(), v.values());
    let s: C64 = (0..len).map(|j| uv[j + p].conj() * vv[j + q]).sum();
    s * u.spec().h()
}

/// The exponential vector `e(f)`; `e(0)` is the vacuum.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpVector {
    f: GridFunction,
}

impl ExpVector {
    pub fn new(f: GridFunction) -> Self {
        Self { f }
    }

    pub fn vacuum(spec: GridSpec) -> Self {
        Self { f: GridFunction::zeros(spec) }
    }

    pub fn spec(&self) -> GridSpec {
        self.f.spec()
    }

    pub fn test_function(&self) -> &GridFunction {
        &self.f
    }

    pub fn inner(&self, other: &ExpVector) -> Result<C64> {
        exp_inner(&self.f, &other.f)
    }

    /// `‖e(f)‖² = exp‖f‖²`.
    pub fn norm_sqr(&self) -> f64 {
        self.f.norm_sqr().exp()
    }
}

/// `coeff·|e(ket)⟩⟨e(bra)|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpRankOne {
    coeff: C64,
    ket: GridFunction,
    bra: GridFunction,
}

impl ExpRankOne {
    pub fn new(coeff: C64, ket: GridFunction, bra: GridFunction) -> Result<Self> {
        ket.spec().ensure_same(&bra.spec())?;
        if !coeff.is_finite() {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        Ok(Self { coeff, ket, bra })
    }

    pub fn spec(&self) -> GridSpec {
        self.ket.spec()
    }

    pub fn coeff(&self) -> C64 {
        self.coeff
    }

    pub fn ket(&self) -> &GridFunction {
        &self.ket
    }

    pub fn bra(&self) -> &GridFunction {
        &self.bra
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { coeff: self.coeff * c, ket: self.ket.clone(), bra: self.bra.clone() }
    }

    /// `⟨e(h1), X e(h2)⟩ = coeff·exp(⟨h1, ket⟩ + ⟨bra, h2⟩)`.
    pub fn matrix_element(&self, h1: &GridFunction, h2: &GridFunction) -> Result<C64> {
        let z = inner_product(h1, &self.ket)? + inner_product(&self.bra, h2)?;
        Ok(self.coeff * z.exp())
    }

    /// `Tr X = coeff·⟨e(bra), e(ket)⟩`.
    pub fn trace(&self) -> C64 {
        let z = partial_inner(&self.bra, &self.ket, 0, self.spec().n_points());
        self.coeff * z.exp()
    }
}

/// Finite sum of exponential rank-one operators with a bounded term count.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpOperatorSum {
    spec: GridSpec,
    terms: Vec<ExpRankOne>,
    cap: usize,
}

impl ExpOperatorSum {
    pub fn new(spec: GridSpec) -> Self {
        Self::with_cap(spec, DEFAULT_TERM_CAP)
    }

    pub fn with_cap(spec: GridSpec, cap: usize) -> Self {
        Self { spec, terms: Vec::new(), cap }
    }

    pub fn from_term(term: ExpRankOne) -> Self {
        let mut s = Self::new(term.spec());
        s.terms.push(term);
        s
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn terms(&self) -> &[ExpRankOne] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn push(&mut self, term: ExpRankOne) -> Result<()> {
        self.spec.ensure_same(&term.spec())?;
        if self.terms.len() >= self.cap {
            return Err(Error::TermCap { cap: self.cap });
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn extend(&mut self, other: &ExpOperatorSum) -> Result<()> {
        other.terms.iter().try_for_each(|t| self.push(t.clone()))
    }

    /// `self - other` as a longer sum.
    pub fn minus(&self, other: &ExpOperatorSum) -> Result<ExpOperatorSum> {
        let mut out = self.clone();
        other.terms.iter().try_for_each(|t| out.push(t.scaled(-ONE)))?;
        Ok(out)
    }

    pub fn matrix_element(&self, h1: &GridFunction, h2: &GridFunction) -> Result<C64> {
        matrix_element(self, h1, h2)
    }

    pub fn trace(&self) -> C64 {
        self.terms.iter().map(ExpRankOne::trace).sum()
    }
}

/// `Σ_terms coeff·exp(⟨h1, ket⟩)·exp(⟨bra, h2⟩)`, in a fixed summation order.
pub fn matrix_element(x: &ExpOperatorSum, h1: &GridFunction, h2: &GridFunction) -> Result<C64> {
    x.spec.ensure_same(&h1.spec())?;
    x.spec.ensure_same(&h2.spec())?;
    let partials: Vec<C64> = x
        .terms
        .par_chunks(ELEMENT_CHUNK)
        .map(|chunk| chunk.iter().map(|t| t.matrix_element(h1, h2)).sum::<Result<C64>>())
        .collect::<Result<_>>()?;
    Ok(partials.into_iter().sum())
}

/// Second quantization of a grid shift.
pub trait ShiftExp: Sized {
    fn shift_exp(&self, t: f64, direction: Direction) -> Result<Self>;
}

impl ShiftExp for ExpVector {
    fn shift_exp(&self, t: f64, direction: Direction) -> Result<Self> {
        let m = self.spec().steps(t)?;
        Ok(Self { f: self.f.shifted(m, direction) })
    }
}

impl ShiftExp for ExpRankOne {
    fn shift_exp(&self, t: f64, direction: Direction) -> Result<Self> {
        let m = self.spec().steps(t)?;
        Ok(Self { coeff: self.coeff, ket: self.ket.shifted(m, direction), bra: self.bra.shifted(m, direction) })
    }
}

impl ShiftExp for ExpOperatorSum {
    fn shift_exp(&self, t: f64, direction: Direction) -> Result<Self> {
        let terms = self.terms.iter().map(|r| r.shift_exp(t, direction)).collect::<Result<_>>()?;
        Ok(Self { spec: self.spec, terms, cap: self.cap })
    }
}

/// `e(f) ↦ e(S_t f)` (right) or `e(S_t* f)` (left-adjoint); on rank-one operators both sides move.
pub fn shift_exp<T: ShiftExp>(v: &T, t: f64, direction: Direction) -> Result<T> {
    v.shift_exp(t, direction)
}

/// Predual forgetting semigroup:
/// `|e(f)⟩⟨e(g)| ↦ exp(∫₀ᵗ conj(g) f)·|e(S_t* f)⟩⟨e(S_t* g)|`.
pub fn forgetting_apply(r: &ExpRankOne, t: f64) -> Result<ExpRankOne> {
    let m = r.spec().steps(t)?;
    let factor = partial_inner(&r.bra, &r.ket, 0, m).exp();
    Ok(ExpRankOne { coeff: r.coeff * factor, ket: r.ket.shifted(m, Direction::LeftAdjoint), bra: r.bra.shifted(m, Direction::LeftAdjoint) })
}

pub fn forgetting_apply_sum(x: &ExpOperatorSum, t: f64) -> Result<ExpOperatorSum> {
    let terms = x.terms.iter().map(|r| forgetting_apply(r, t)).collect::<Result<_>>()?;
    Ok(ExpOperatorSum { spec: x.spec, terms, cap: x.cap })
}

/// Heisenberg forgetting semigroup evaluated on exponential vectors:
/// `⟨e(h1), T̆_t X e(h2)⟩ = exp(∫₀ᵗ conj(h1) h2)·⟨e(S_t* h1), X e(S_t* h2)⟩`.
pub fn forgetting_element(x: &ExpOperatorSum, t: f64, h1: &GridFunction, h2: &GridFunction) -> Result<C64> {
    h1.spec().ensure_same(&h2.spec())?;
    let m = h1.spec().steps(t)?;
    let factor = partial_inner(h1, h2, 0, m).exp();
    let inner = x.matrix_element(&h1.shifted(m, Direction::LeftAdjoint), &h2.shifted(m, Direction::LeftAdjoint))?;
    Ok(factor * inner)
}

/// Predual Fock measure on `[a, b)`:
/// `∫_a^b |e(S_t* f)⟩⟨e(S_t* g)| conj(g(t)) f(t) dt`, two half-cell terms per node.
pub fn fock_measure_apply(r: &ExpRankOne, a: f64, b: f64) -> Result<ExpOperatorSum> {
    let mut out = ExpOperatorSum::new(r.spec());
    push_measure_terms(&mut out, r, a, b)?;
    Ok(out)
}

pub fn fock_measure_apply_sum(x: &ExpOperatorSum, a: f64, b: f64) -> Result<ExpOperatorSum> {
    let mut out = ExpOperatorSum::with_cap(x.spec, x.cap);
    for r in &x.terms {
        push_measure_terms(&mut out, r, a, b)?;
    }
    Ok(out)
}

fn push_measure_terms(out: &mut ExpOperatorSum, r: &ExpRankOne, a: f64, b: f64) -> Result<()> {
    let spec = r.spec();
    let (lo, hi) = spec.cell_range(a, b)?;
    let half = 0.5 * spec.h();
    for i in lo..hi {
        let w = r.coeff * half * r.bra.values()[i].conj() * r.ket.values()[i];
        if w == ZERO {
            continue;
        }
        for e in [i, i + 1] {
            out.push(ExpRankOne {
                coeff: w,
                ket: r.ket.shifted(e, Direction::LeftAdjoint),
                bra: r.bra.shifted(e, Direction::LeftAdjoint),
            })?;
        }
    }
    Ok(())
}

/// `∫₀ᵗ T̆_{*(t-s)} 𝔐_*(ds) r`: each half-cell term of the measure is forgotten for the
/// remaining time after its own edge.
pub fn forgetting_after_measure(r: &ExpRankOne, t: f64) -> Result<ExpOperatorSum> {
    let spec = r.spec();
    let m = spec.steps(t)?;
    let h = spec.h();
    let mut out = ExpOperatorSum::new(spec);
    for i in 0..m.min(spec.n_points()) {
        let cell = fock_measure_apply(r, i as f64 * h, (i + 1) as f64 * h)?;
        for (term, e) in cell.terms.iter().zip([i, i + 1]) {
            out.push(forgetting_apply(term, (m - e) as f64 * h)?)?;
        }
    }
    Ok(out)
}

/// Pairing of the embedded vectors, `⟨W e(f), W e(g)⟩`, by suffix sums:
/// `1 + Σ_i (h/2) conj(f_i) g_i (e^{⟨S*_i f, S*_i g⟩} + e^{⟨S*_{i+1} f, S*_{i+1} g⟩})`.
pub fn w_inner(f: &GridFunction, g: &GridFunction) -> Result<C64> {
    f.spec().ensure_same(&g.spec())?;
    let h = f.spec().h();
    let mut tail = ZERO;
    let mut acc = ZERO;
    for (fi, gi) in f.values().iter().zip(g.values().iter()).rev() {
        let a = h * fi.conj() * gi;
        let next = tail + a;
        acc += 0.5 * a * (next.exp() + tail.exp());
        tail = next;
    }
    Ok(ONE + acc)
}

/// One amplitude on a half-cell of the `L²` factor, paired with `e(S*_{shift h} source)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WEntry {
    pub cell: usize,
    pub amplitude: C64,
    pub source: usize,
    pub shift: usize,
}

/// Element of `ℂΩ ⊕ H ⊗ L²` spanned by exponential vectors on half-cells.
#[derive(Clone, Debug, PartialEq)]
pub struct WVector {
    spec: GridSpec,
    scalar: C64,
    sources: Vec<GridFunction>,
    entries: Vec<WEntry>,
}

impl WVector {
    pub fn zero(spec: GridSpec) -> Self {
        Self { spec, scalar: ZERO, sources: Vec::new(), entries: Vec::new() }
    }

    /// `W e(f) = Ω ⊕ J(f)`.
    pub fn embed(f: &GridFunction) -> Self {
        let mut w = Self::j_part(f);
        w.scalar = ONE;
        w
    }

    /// `J(g) = ∫ e(S_t* g) ⊗ χ(dt) g`.
    pub fn j_part(g: &GridFunction) -> Self {
        let spec = g.spec();
        let mut entries = Vec::with_capacity(2 * spec.n_points());
        for (i, &amp) in g.values().iter().enumerate() {
            if amp != ZERO {
                for sigma in 0..2 {
                    entries.push(WEntry { cell: 2 * i + sigma, amplitude: amp, source: 0, shift: i + sigma });
                }
            }
        }
        Self { spec, scalar: ZERO, sources: vec![g.clone()], entries }
    }

    /// `J(g1) - J(g2)`, dropping half-cells where both contributions coincide exactly.
    pub fn j_difference(g1: &GridFunction, g2: &GridFunction) -> Result<Self> {
        g1.spec().ensure_same(&g2.spec())?;
        let spec = g1.spec();
        let n = spec.n_points();
        let (v1, v2) = (g1.values(), g2.values());
        let mut entries = Vec::new();
        for i in 0..n {
            for sigma in 0..2 {
                let e = i + sigma;
                let same = v1[i] == v2[i] && (e..n).all(|j| v1[j] == v2[j]);
                if same {
                    continue;
                }
                let cell = 2 * i + sigma;
                if v1[i] != ZERO {
                    entries.push(WEntry { cell, amplitude: v1[i], source: 0, shift: e });
                }
                if v2[i] != ZERO {
                    entries.push(WEntry { cell, amplitude: -v2[i], source: 1, shift: e });
                }
            }
        }
        Ok(Self { spec, scalar: ZERO, sources: vec![g1.clone(), g2.clone()], entries })
    }

    /// `c·e(f) ⊗ χ[lo h, hi h)` on the `L²` factor.
    pub fn tensor_indicator(f: &GridFunction, c: C64, lo: usize, hi: usize) -> Self {
        let entries = (2 * lo..2 * hi).map(|cell| WEntry { cell, amplitude: c, source: 0, shift: 0 }).collect();
        Self { spec: f.spec(), scalar: ZERO, sources: vec![f.clone()], entries }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn scalar(&self) -> C64 {
        self.scalar
    }

    pub fn entries(&self) -> &[WEntry] {
        &self.entries
    }

    /// The test function `S*_{shift h} source` of an entry.
    pub fn test_function(&self, entry: &WEntry) -> GridFunction {
        self.sources[entry.source].shifted(entry.shift, Direction::LeftAdjoint)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: C64, other: &WVector, b: C64) -> Result<WVector> {
        self.spec.ensure_same(&other.spec)?;
        let offset = self.sources.len();
        let mut sources = self.sources.clone();
        sources.extend(other.sources.iter().cloned());
        let mut entries: Vec<WEntry> = self.entries.iter().map(|e| WEntry { amplitude: a * e.amplitude, ..*e }).collect();
        entries.extend(other.entries.iter().map(|e| WEntry { amplitude: b * e.amplitude, source: e.source + offset, ..*e }));
        Ok(Self { spec: self.spec, scalar: a * self.scalar + b * other.scalar, sources, entries })
    }

    /// `(1 ⊕ I ⊗ S)` on the `L²` factor by `m` cells.
    pub fn shifted(&self, m: usize, direction: Direction) -> WVector {
        let cells = 2 * self.spec.n_points();
        let entries = self
            .entries
            .iter()
            .filter_map(|e| {
                let cell = match direction {
                    Direction::Right => e.cell + 2 * m,
                    Direction::LeftAdjoint => e.cell.checked_sub(2 * m)?,
                };
                (cell < cells).then_some(WEntry { cell, ..*e })
            })
            .collect();
        Self { spec: self.spec, scalar: self.scalar, sources: self.sources.clone(), entries }
    }

    fn by_cell(&self) -> BTreeMap<usize, Vec<&WEntry>> {
        let mut map: BTreeMap<usize, Vec<&WEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(e.cell).or_default().push(e);
        }
        map
    }

    /// Inner product in `ℂΩ ⊕ H ⊗ L²`, term by term.
    pub fn pair(&self, other: &WVector) -> Result<C64> {
        self.spec.ensure_same(&other.spec)?;
        let half = 0.5 * self.spec.h();
        let mine = self.by_cell();
        let theirs = other.by_cell();
        let mut acc = ZERO;
        for (cell, ps) in &mine {
            let Some(qs) = theirs.get(cell) else { continue };
            for p in ps {
                for q in qs {
                    let z = shifted_inner(&self.sources[p.source], p.shift, &other.sources[q.source], q.shift);
                    acc += p.amplitude.conj() * q.amplitude * z.exp();
                }
            }
        }
        Ok(self.scalar.conj() * other.scalar + half * acc)
    }

    pub fn norm_sqr(&self) -> Result<f64> {
        Ok(self.pair(self)?.re)
    }

    /// `⟨self, (Y ⊗ χ[a, b)) other⟩`; the vacuum component does not contribute.
    pub fn sandwich(&self, y: &ExpOperatorSum, other: &WVector, a: f64, b: f64) -> Result<C64> {
        self.spec.ensure_same(&other.spec)?;
        let (lo, hi) = self.spec.cell_range(a, b)?;
        let half = 0.5 * self.spec.h();
        let mine = self.by_cell();
        let theirs = other.by_cell();
        let mut acc = ZERO;
        for (cell, ps) in mine.range(2 * lo..2 * hi) {
            let Some(qs) = theirs.get(cell) else { continue };
            for p in ps {
                let fp = self.test_function(p);
                for q in qs {
                    let fq = other.test_function(q);
                    acc += p.amplitude.conj() * q.amplitude * y.matrix_element(&fp, &fq)?;
                }
            }
        }
        Ok(half * acc)
    }

    /// Largest entrywise difference against another vector with the same cell layout,
    /// comparing amplitudes and materialized test functions.
    pub fn structural_deviation(&self, other: &WVector) -> Result<f64> {
        self.spec.ensure_same(&other.spec)?;
        let mut dev = (self.scalar - other.scalar).norm();
        let mine = self.by_cell();
        let theirs = other.by_cell();
        let empty = Vec::new();
        for cell in mine.keys().chain(theirs.keys()) {
            let ps = mine.get(cell).unwrap_or(&empty);
            let qs = theirs.get(cell).unwrap_or(&empty);
            for k in 0..ps.len().max(qs.len()) {
                let d = match (ps.get(k), qs.get(k)) {
                    (Some(p), Some(q)) => {
                        let diff = self.test_function(p).sub(&other.test_function(q))?;
                        (p.amplitude - q.amplitude).norm().max(diff.sup_norm())
                    }
                    (Some(p), None) => p.amplitude.norm(),
                    (None, Some(q)) => q.amplitude.norm(),
                    (None, None) => 0.0,
                };
                dev = dev.max(d);
            }
        }
        Ok(dev)
    }
}

/// `⟨W e(f), T̆_t^∧ X^∧ W e(g)⟩` through the embedded form of the forgetting semigroup:
/// the no-event part plus `∫₀ᵗ` of the forgetting semigroup on the `L²` factor.
pub fn forgetting_element_embedded(x: &ExpOperatorSum, t: f64, f: &GridFunction, g: &GridFunction) -> Result<C64> {
    f.spec().ensure_same(&g.spec())?;
    let spec = f.spec();
    let m = spec.steps(t)?;
    let h = spec.h();
    let shifted = |u: &GridFunction, e: usize| u.shifted(e, Direction::LeftAdjoint);
    let mut total = x.matrix_element(&shifted(f, m), &shifted(g, m))?;
    for i in 0..m.min(spec.n_points()) {
        let w = 0.5 * h * f.values()[i].conj() * g.values()[i];
        for e in [i, i + 1] {
            total += w * forgetting_element(x, (m - e) as f64 * h, &shifted(f, e), &shifted(g, e))?;
        }
    }
    Ok(total)
}

/// Residual of the scalar identity `1 + ∫₀ᵗ exp(∫_s^t conj(g) f) conj(g(s)) f(s) ds = exp(∫₀ᵗ conj(g) f)`
/// under the half-cell quadrature.
pub fn scalar_identity_residual(f: &GridFunction, g: &GridFunction, t: f64) -> Result<f64> {
    f.spec().ensure_same(&g.spec())?;
    let spec = f.spec();
    let m = spec.steps(t)?.min(spec.n_points());
    let h = spec.h();
    let mut tail = ZERO;
    let mut acc = ZERO;
    for i in (0..m).rev() {
        let a = h * g.values()[i].conj() * f.values()[i];
        let next = tail + a;
        acc += 0.5 * a * (next.exp() + tail.exp());
        tail = next;
    }
    Ok((ONE + acc - tail.exp()).norm())
}

/// Approximation of `f(0)·e(f) ⊗ χ[b, c)` by differences of `J` over `n_parts` pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorApproximation {
    pub n_parts: usize,
    pub distance: f64,
    pub target_norm: f64,
    /// `√n·(max_τ ‖e(S_τ* f) - e(f)‖·2|f(0)|·√δ + ‖e(f)‖·2|f'(0)|·δ^{3/2})`.
    pub bound: f64,
    pub warning: Option<String>,
}

/// Builds `Σ_k [J(S_{x_k} f) - J(χ[x_{k+1}, ∞) S_{x_k} f)]` and measures its distance to the target.
pub fn approx_indicator_tensor(f: &GridFunction, b: f64, c: f64, n_parts: usize) -> Result<IndicatorApproximation> {
    let spec = f.spec();
    if n_parts == 0 {
        return Err(Error::Domain("n_parts must be positive".into()));
    }
    let (lo, hi) = spec.cell_range(b, c)?;
    let span = hi - lo;
    if span % n_parts != 0 {
        return Err(Error::Alignment { t: (c - b) / n_parts as f64, h: spec.h() });
    }
    let p = span / n_parts;
    let h = spec.h();
    let v = f.values();
    let f0 = 1.5 * v[0] - 0.5 * v[1];
    let df0 = (v[1] - v[0]) / h;
    let warning = (f0.norm() <= 1e-12 * f.sup_norm().max(f64::MIN_POSITIVE))
        .then(|| "f(0) vanishes: the approximation is ill-conditioned".to_string());
    if span == 0 {
        return Ok(IndicatorApproximation { n_parts, distance: 0.0, target_norm: 0.0, bound: 0.0, warning });
    }

    let mut sum = WVector::zero(spec);
    for k in 0..n_parts {
        let start = lo + k * p;
        let g = f.shifted(start, Direction::Right);
        let cut = g.restricted(start + p, spec.n_points());
        sum = sum.combine(ONE, &WVector::j_difference(&g, &cut)?, ONE)?;
    }
    let target = WVector::tensor_indicator(f, f0, lo, hi);
    let distance = sum.combine(ONE, &target, -ONE)?.norm_sqr()?.max(0.0).sqrt();
    let target_norm = target.norm_sqr()?.max(0.0).sqrt();

    let ef = ExpVector::new(f.clone());
    let max_gap = (0..=p)
        .map(|tau| {
            let s = f.shifted(tau, Direction::LeftAdjoint);
            let cross = shifted_inner(&s, 0, f, 0).exp().re;
            (s.norm_sqr().exp() + ef.norm_sqr() - 2.0 * cross).max(0.0).sqrt()
        })
        .fold(0.0, f64::max);
    let delta = p as f64 * h;
    let bound =
        (n_parts as f64).sqrt() * (max_gap * 2.0 * f0.norm() * delta.sqrt() + ef.norm_sqr().sqrt() * 2.0 * df0.norm() * delta.powf(1.5));
    Ok(IndicatorApproximation { n_parts, distance, target_norm, bound, warning })
}

/// One summand of a [`SmoothProbe`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeTerm {
    /// `c·e^{-αx}`.
    Exponential { coeff: C64, rate: f64 },
    /// `c·e^{-β(x-μ)²}`.
    Gaussian { coeff: C64, width: f64, center: f64 },
}

/// Smooth, rapidly decaying test function given in closed form, so it can be sampled on any grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothProbe {
    terms: Vec<ProbeTerm>,
}

impl SmoothProbe {
    pub fn new(terms: Vec<ProbeTerm>) -> Self {
        Self { terms }
    }

    /// Two exponentials with rates in `[1, 3]` and two Gaussians with widths in `[0.5, 2]`
    /// and centers in `[0, 4]`; coefficients have modulus in `[0.1, 0.5]` and random phase.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let coeff = |rng: &mut R| C64::from_polar(rng.random_range(0.1..=0.5), rng.random_range(0.0..std::f64::consts::TAU));
        let mut terms = Vec::with_capacity(4);
        for _ in 0..2 {
            let c = coeff(rng);
            terms.push(ProbeTerm::Exponential { coeff: c, rate: rng.random_range(1.0..=3.0) });
        }
        for _ in 0..2 {
            let c = coeff(rng);
            terms.push(ProbeTerm::Gaussian { coeff: c, width: rng.random_range(0.5..=2.0), center: rng.random_range(0.0..=4.0) });
        }
        Self { terms }
    }

    pub fn terms(&self) -> &[ProbeTerm] {
        &self.terms
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.terms
            .iter()
            .map(|t| match *t {
                ProbeTerm::Exponential { coeff, rate } => coeff * (-rate * x).exp(),
                ProbeTerm::Gaussian { coeff, width, center } => coeff * (-width * (x - center).powi(2)).exp(),
            })
            .sum()
    }

    pub fn sample(&self, spec: GridSpec) -> GridFunction {
        GridFunction::from_fn(spec, |x| self.eval(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(x_max: f64, n: usize) -> GridSpec {
        GridSpec::new(x_max, n).unwrap()
    }

    fn sqrt2_exp(s: GridSpec) -> GridFunction {
        GridFunction::from_real_fn(s, |x| 2f64.sqrt() * (-x).exp())
    }

    fn gauss(s: GridSpec, c: f64, mu: f64) -> GridFunction {
        GridFunction::from_fn(s, |x| C64::new(c, 0.3) * (-(x - mu).powi(2)).exp())
    }

    fn rank_one(f: &GridFunction, g: &GridFunction) -> ExpRankOne {
        ExpRankOne::new(C64::new(0.7, -0.2), f.clone(), g.clone()).unwrap()
    }

    #[test]
    fn vacuum_and_conjugate_symmetry() {
        let s = spec(20.0, 512);
        let z = GridFunction::zeros(s);
        assert_eq!(exp_inner(&z, &z).unwrap(), ONE);
        let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, -0.4, 2.5));
        assert_relative_eq!((exp_inner(&f, &g).unwrap().conj() - exp_inner(&g, &f).unwrap()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn exp_inner_of_unit_vector_is_e() {
        let s = spec(20.0, 512);
        let f = sqrt2_exp(s);
        assert!((exp_inner(&f, &f).unwrap() - C64::new(1f64.exp(), 0.0)).norm() <= 1e-3);
    }

    #[test]
    fn right_shift_keeps_norm_and_matches_adjoint_route() {
        let s = spec(20.0, 512);
        let f = gauss(s, 1.0, 2.0);
        let hprobe = gauss(s, 0.5, 3.0);
        let t = 40.0 * s.h();
        let v = ExpVector::new(f.clone());
        assert_eq!(shift_exp(&v, 0.0, Direction::Right).unwrap(), v);
        let moved = shift_exp(&v, t, Direction::Right).unwrap();
        assert_relative_eq!(moved.norm_sqr(), v.norm_sqr(), max_relative = 1e-12);

        let direct = exp_inner(&hprobe, moved.test_function()).unwrap();
        let adjoint = exp_inner(&hprobe.shifted(40, Direction::LeftAdjoint), &f).unwrap();
        assert!((direct - adjoint).norm() <= 1e-10);
    }

    #[test]
    fn forgetting_factor_matches_integral() {
        let s = spec(8.0, 512);
        let f = sqrt2_exp(s);
        let r = ExpRankOne::new(ONE, f.clone(), f.clone()).unwrap();
        assert_eq!(forgetting_apply(&r, 0.0).unwrap(), r);
        let out = forgetting_apply(&r, 1.0).unwrap();
        let oracle = (1.0 - (-2f64).exp()).exp();
        assert!((out.coeff() - oracle).norm() <= 1e-3);
    }

    #[test]
    fn forgetting_with_disjoint_supports_is_pure_shift() {
        let s = spec(8.0, 256);
        let f = GridFunction::from_real_fn(s, |x| if x < 1.0 { x } else { 0.0 });
        let g = GridFunction::from_real_fn(s, |x| if x >= 1.0 { (-x).exp() } else { 0.0 });
        let r = rank_one(&f, &g);
        let out = forgetting_apply(&r, 2.0).unwrap();
        assert_eq!(out.coeff(), r.coeff());
        assert_eq!(out, shift_exp(&r, 2.0, Direction::LeftAdjoint).unwrap());
    }

    #[test]
    fn forgetting_preserves_trace_and_no_event_loses_it() {
        let s = spec(20.0, 512);
        let r = rank_one(&gauss(s, 1.0, 0.5), &gauss(s, 0.8, 1.0));
        let t = 64.0 * s.h();
        let kept = forgetting_apply(&r, t).unwrap().trace();
        assert_relative_eq!((kept - r.trace()).norm(), 0.0, epsilon = 1e-13 * r.trace().norm());
        let lost = shift_exp(&r, t, Direction::LeftAdjoint).unwrap().trace();
        assert!((lost - r.trace()).norm() > 1e-2);
    }

    #[test]
    fn forgetting_two_routes_agree() {
        let s = spec(20.0, 512);
        let (f, g) = (gauss(s, 1.0, 0.5), gauss(s, 0.6, 1.5));
        let (h1, h2) = (gauss(s, -0.3, 2.0), gauss(s, 0.9, 0.2));
        let r = rank_one(&f, &g);
        let m = 50;
        let t = m as f64 * s.h();
        let lhs = ExpOperatorSum::from_term(forgetting_apply(&r, t).unwrap()).matrix_element(&h1, &h2).unwrap();
        let z = partial_inner(&g, &f, 0, m)
            + inner_product(&g, &h2.shifted(m, Direction::Right)).unwrap()
            + inner_product(&h1.shifted(m, Direction::Right), &f).unwrap();
        let rhs = r.coeff() * z.exp();
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm());

        // Duality with the Heisenberg form: Tr(T̆_* ρ · X) = ⟨e(g), T̆ X e(f)⟩.
        let x = ExpOperatorSum::from_term(rank_one(&h1, &h2));
        let rho = ExpRankOne::new(ONE, f.clone(), g.clone()).unwrap();
        let schr = {
            let fr = forgetting_apply(&rho, t).unwrap();
            fr.coeff() * x.matrix_element(fr.bra(), fr.ket()).unwrap()
        };
        let heis = forgetting_element(&x, t, &g, &f).unwrap();
        assert!((schr - heis).norm() <= 1e-12 * heis.norm());
    }

    #[test]
    fn w_inner_trivial_cases() {
        let s = spec(20.0, 512);
        let z = GridFunction::zeros(s);
        assert_eq!(w_inner(&z, &z).unwrap(), ONE);
        let f = GridFunction::from_real_fn(s, |x| if (5.0..6.0).contains(&x) { 1.0 } else { 0.0 });
        let g = GridFunction::from_real_fn(s, |x| if x < 1.0 { 1.0 } else { 0.0 });
        assert_eq!(w_inner(&f, &g).unwrap(), ONE);
        assert_eq!(exp_inner(&f, &g).unwrap(), ONE);
    }

    #[test]
    fn w_inner_converges_at_second_order() {
        let err = |n: usize| {
            let s = spec(20.0, n);
            let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, 0.7, 1.6));
            (w_inner(&f, &g).unwrap() - exp_inner(&f, &g).unwrap()).norm()
        };
        let (e1, e2) = (err(512), err(1024));
        assert!(e1 <= 1e-3, "{e1}");
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn embedded_pairing_matches_suffix_sums() {
        let s = spec(20.0, 128);
        let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, 0.7, 1.6));
        let generic = WVector::embed(&f).pair(&WVector::embed(&g)).unwrap();
        assert!((generic - w_inner(&f, &g).unwrap()).norm() <= 1e-12);
    }

    #[test]
    fn embedding_intertwines_left_shift_exactly() {
        let s = spec(20.0, 128);
        let f = gauss(s, 1.0, 1.0);
        let m = 9;
        let lhs = WVector::embed(&f.shifted(m, Direction::LeftAdjoint));
        let rhs = WVector::embed(&f).shifted(m, Direction::LeftAdjoint);
        assert_eq!(lhs.structural_deviation(&rhs).unwrap(), 0.0);
    }

    #[test]
    fn measure_trivial_cases_and_total() {
        let s = spec(8.0, 512);
        let f = sqrt2_exp(s);
        let r = ExpRankOne::new(ONE, f.clone(), f.clone()).unwrap();
        assert!(fock_measure_apply(&r, 1.0, 1.0).unwrap().is_empty());
        let cut = f.restricted(128, 512);
        assert!(fock_measure_apply(&ExpRankOne::new(ONE, cut, f.clone()).unwrap(), 0.0, 1.0).unwrap().is_empty());
        let total: C64 = fock_measure_apply(&r, 0.0, 1.0).unwrap().terms().iter().map(|t| t.coeff()).sum();
        assert!((total - C64::new(1.0 - (-2f64).exp(), 0.0)).norm() <= 1e-3);
    }

    #[test]
    fn measure_is_covariant_exactly() {
        let s = spec(20.0, 256);
        let r = rank_one(&gauss(s, 1.0, 1.0), &gauss(s, 0.5, 2.0));
        let h = s.h();
        let (a, b, m) = (10.0 * h, 30.0 * h, 7usize);
        let lhs = fock_measure_apply(&shift_exp(&r, m as f64 * h, Direction::LeftAdjoint).unwrap(), a, b).unwrap();
        let rhs = fock_measure_apply(&r, a + m as f64 * h, b + m as f64 * h).unwrap();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn measure_matches_embedded_sandwich() {
        let s = spec(20.0, 256);
        let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, 0.5, 2.0));
        let y = ExpOperatorSum::from_term(rank_one(&gauss(s, 0.2, 0.0), &gauss(s, -0.4, 3.0)));
        let h = s.h();
        let (a, b) = (5.0 * h, 60.0 * h);
        let rho = ExpRankOne::new(ONE, f.clone(), g.clone()).unwrap();
        let m = fock_measure_apply(&rho, a, b).unwrap();
        let via_trace: C64 = m.terms().iter().map(|t| t.coeff() * y.matrix_element(t.bra(), t.ket()).unwrap()).sum();
        let via_w = WVector::embed(&g).sandwich(&y, &WVector::embed(&f), a, b).unwrap();
        assert!((via_trace - via_w).norm() <= 1e-12 * via_w.norm().max(1.0));
    }

    #[test]
    fn integral_equation_bookkeeping_is_exact() {
        let s = spec(20.0, 256);
        let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, 0.5, 2.0));
        let r = rank_one(&f, &g);
        let m = 32;
        let t = m as f64 * s.h();
        let after = forgetting_after_measure(&r, t).unwrap();
        let target = shift_exp(&r, t, Direction::LeftAdjoint).unwrap();
        for term in after.terms() {
            assert_eq!(term.ket(), target.ket());
            assert_eq!(term.bra(), target.bra());
        }
        let (h1, h2) = (gauss(s, 0.3, 0.4), gauss(s, -0.6, 1.1));
        let lhs = ExpOperatorSum::from_term(forgetting_apply(&r, t).unwrap()).minus(&after).unwrap();
        let resid = (lhs.matrix_element(&h1, &h2).unwrap() - target.matrix_element(&h1, &h2).unwrap()).norm();
        assert!(resid <= 1e-3, "{resid}");
    }

    #[test]
    fn scalar_identity_is_second_order() {
        let res = |n: usize| {
            let s = spec(20.0, n);
            scalar_identity_residual(&gauss(s, 1.0, 1.0), &gauss(s, 0.9, 0.5), 2.5).unwrap()
        };
        let ratio = res(256) / res(512);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn embedded_forgetting_route_is_second_order() {
        let err = |n: usize| {
            let s = spec(20.0, n);
            let (f, g) = (gauss(s, 1.0, 1.0), gauss(s, 0.9, 0.5));
            let x = ExpOperatorSum::from_term(rank_one(&gauss(s, 0.2, 2.0), &gauss(s, 0.4, 3.0)));
            let a = forgetting_element_embedded(&x, 2.5, &f, &g).unwrap();
            let b = forgetting_element(&x, 2.5, &f, &g).unwrap();
            (a - b).norm() / b.norm()
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e2 <= 1e-3);
        assert!((3.5..4.5).contains(&(e1 / e2)));
    }

    #[test]
    fn matrix_element_linearity_and_cap() {
        let s = spec(20.0, 128);
        let z = GridFunction::zeros(s);
        let id = ExpOperatorSum::from_term(ExpRankOne::new(ONE, z.clone(), z.clone()).unwrap());
        assert_eq!(id.matrix_element(&z, &z).unwrap(), ONE);

        let (a, b) = (rank_one(&gauss(s, 1.0, 1.0), &gauss(s, 0.5, 2.0)), rank_one(&gauss(s, 0.1, 0.0), &gauss(s, 0.3, 3.0)));
        let mut sum = ExpOperatorSum::from_term(a.clone());
        sum.push(b.clone()).unwrap();
        let (h1, h2) = (gauss(s, 0.2, 0.5), gauss(s, 0.1, 1.5));
        let parts = a.matrix_element(&h1, &h2).unwrap() + b.matrix_element(&h1, &h2).unwrap();
        assert!((sum.matrix_element(&h1, &h2).unwrap() - parts).norm() <= 1e-14);

        let mut capped = ExpOperatorSum::with_cap(s, 1);
        capped.push(a).unwrap();
        assert!(matches!(capped.push(b), Err(Error::TermCap { cap: 1 })));
    }

    #[test]
    fn indicator_approximation_improves() {
        let s = spec(8.0, 512);
        let f = sqrt2_exp(s);
        let d: Vec<IndicatorApproximation> = [8, 16, 32, 64].iter().map(|&k| approx_indicator_tensor(&f, 1.0, 2.0, k).unwrap()).collect();
        for w in d.windows(2) {
            assert!(w[1].distance < w[0].distance);
            let ratio = w[0].bound / w[1].bound;
            assert!((1.6..2.4).contains(&ratio), "{ratio}");
        }
        assert!(d[3].distance * 4.0 <= d[0].distance);
        assert!(d[0].warning.is_none());

        let empty = approx_indicator_tensor(&f, 1.0, 1.0, 4).unwrap();
        assert_eq!((empty.distance, empty.bound), (0.0, 0.0));
    }

    #[test]
    fn indicator_warns_when_f_vanishes_at_origin() {
        let s = spec(8.0, 512);
        let f = GridFunction::from_real_fn(s, |x| x);
        assert!(approx_indicator_tensor(&f, 1.0, 2.0, 8).unwrap().warning.is_some());
    }

    #[test]
    fn random_probes_are_reproducible() {
        let s = spec(20.0, 64);
        let a = SmoothProbe::random(&mut ChaCha8Rng::seed_from_u64(7)).sample(s);
        let b = SmoothProbe::random(&mut ChaCha8Rng::seed_from_u64(7)).sample(s);
        assert_eq!(a, b);
        assert!(a.values()[63].norm() < 1e-6);
    }
}
