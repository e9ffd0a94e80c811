//! Identities of the Fock-space forgetting semigroup and its measure on random smooth
//! test-function tuples, with a three-level order study for the quadrature parts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::fock::{
    approx_indicator_tensor, exp_inner, fock_measure_apply, forgetting_after_measure, forgetting_apply, forgetting_element,
    forgetting_element_embedded, scalar_identity_residual, shift_exp, w_inner, ExpOperatorSum, ExpRankOne, SmoothProbe, WVector,
};
use crate::grid::{inner_product, Direction, GridFunction, GridSpec};
use crate::C64;

use super::report::observed_order;
use super::{max_of, Run};

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const LEVELS: usize = 3;

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Six probes: the pair `(f, g)`, the matrix-element arguments `(h1, h2)`, and the ket and
/// bra of an observable.
struct Tuple([SmoothProbe; 6]);

struct Sampled {
    f: GridFunction,
    g: GridFunction,
    h1: GridFunction,
    h2: GridFunction,
    x: ExpOperatorSum,
}

impl Tuple {
    fn sample(&self, spec: GridSpec) -> Result<Sampled> {
        let s: Vec<GridFunction> = self.0.iter().map(|p| p.sample(spec)).collect();
        Ok(Sampled {
            f: s[0].clone(),
            g: s[1].clone(),
            h1: s[2].clone(),
            h2: s[3].clone(),
            x: ExpOperatorSum::from_term(ExpRankOne::new(ONE, s[4].clone(), s[5].clone())?),
        })
    }
}

#[derive(Default)]
struct Exact {
    two_route: f64,
    duality: f64,
    trace: f64,
    pairing: f64,
    intertwining: f64,
    sandwich: f64,
    covariance: f64,
    bookkeeping: f64,
}

/// Exact-shift identities at the base level.
fn exact_parts(p: &Sampled, t: f64, a: f64, b: f64) -> Result<Exact> {
    let spec = p.f.spec();
    let m = spec.steps(t)?;
    let r = ExpRankOne::new(ONE, p.f.clone(), p.g.clone())?;
    let forgotten = forgetting_apply(&r, t)?;

    let lhs = ExpOperatorSum::from_term(forgotten.clone()).matrix_element(&p.h1, &p.h2)?;
    let z = inner_product(&p.g.restricted(0, m), &p.f)?
        + inner_product(&p.g, &p.h2.shifted(m, Direction::Right))?
        + inner_product(&p.h1.shifted(m, Direction::Right), &p.f)?;
    let two_route = rel(lhs, r.coeff() * z.exp());

    let schr = forgotten.coeff() * p.x.matrix_element(forgotten.bra(), forgotten.ket())?;
    let heis = forgetting_element(&p.x, t, &p.g, &p.f)?;
    let duality = rel(schr, heis);
    let trace = rel(forgotten.trace(), r.trace());

    let generic = WVector::embed(&p.f).pair(&WVector::embed(&p.g))?;
    let pairing = rel(generic, w_inner(&p.f, &p.g)?);
    let intertwining = WVector::embed(&p.f.shifted(m, Direction::LeftAdjoint))
        .structural_deviation(&WVector::embed(&p.f).shifted(m, Direction::LeftAdjoint))?;

    let measured = fock_measure_apply(&r, a, b)?;
    let via_trace: C64 =
        measured.terms().iter().map(|term| Ok(term.coeff() * p.x.matrix_element(term.bra(), term.ket())?)).sum::<Result<C64>>()?;
    let via_w = WVector::embed(&p.g).sandwich(&p.x, &WVector::embed(&p.f), a, b)?;
    let sandwich = rel(via_trace, via_w);

    let lag = a;
    let moved = fock_measure_apply(&shift_exp(&r, lag, Direction::LeftAdjoint)?, a, b)?;
    let translated = fock_measure_apply(&r, a + lag, b + lag)?;
    let covariance =
        if moved == translated { 0.0 } else { rel(moved.matrix_element(&p.h1, &p.h2)?, translated.matrix_element(&p.h1, &p.h2)?) };

    let target = shift_exp(&r, t, Direction::LeftAdjoint)?;
    let after = forgetting_after_measure(&r, t)?;
    let bookkeeping = after.terms().iter().filter(|term| term.ket() != target.ket() || term.bra() != target.bra()).count() as f64;

    Ok(Exact { two_route, duality, trace, pairing, intertwining, sandwich, covariance, bookkeeping })
}

/// Quadrature quantities at one level: three defects against exact values and two raw
/// values for self-convergence.
struct Integral {
    pairing: f64,
    embedded: f64,
    scalar: f64,
    exponent: C64,
    element: C64,
}

fn integral_parts(p: &Sampled, t: f64, a: f64, b: f64) -> Result<Integral> {
    let spec = p.f.spec();
    let m = spec.steps(t)?;
    let direct = forgetting_element(&p.x, t, &p.f, &p.g)?;
    let rho = ExpRankOne::new(ONE, p.f.clone(), p.g.clone())?;
    Ok(Integral {
        pairing: rel(w_inner(&p.f, &p.g)?, exp_inner(&p.f, &p.g)?),
        embedded: rel(forgetting_element_embedded(&p.x, t, &p.f, &p.g)?, direct),
        scalar: scalar_identity_residual(&p.f, &p.g, t)?,
        exponent: inner_product(&p.g.restricted(0, m), &p.f)?,
        element: fock_measure_apply(&rho, a, b)?.matrix_element(&p.h1, &p.h2)?,
    })
}

struct TupleResult {
    exact: Exact,
    levels: Vec<Integral>,
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

pub(super) fn run(run: &mut Run<'_>) -> Result<()> {
    let cfg = run.cfg;
    let base = cfg.grid_spec()?;
    let t = cfg.time.t_max;
    let (a, b) = (t / 4.0, 5.0 * t / 4.0);
    let levels = if run.nested { LEVELS } else { 1 };
    let specs: Vec<GridSpec> = (0..levels).map(|l| GridSpec::new(base.x_max(), base.n_points() << l)).collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let tuples: Vec<Tuple> = (0..cfg.params.tuples).map(|_| Tuple(std::array::from_fn(|_| SmoothProbe::random(&mut rng)))).collect();
    let results: Vec<TupleResult> = tuples
        .par_iter()
        .map(|tuple| {
            let sampled = specs.iter().map(|s| tuple.sample(*s)).collect::<Result<Vec<_>>>()?;
            Ok(TupleResult {
                exact: exact_parts(&sampled[0], t, a, b)?,
                levels: sampled.iter().map(|p| integral_parts(p, t, a, b)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;

    let worst = |f: fn(&Exact) -> f64| max_of(results.iter().map(|r| f(&r.exact)));
    run.record("forgetting_two_route", worst(|e| e.two_route));
    run.record("forgetting_duality", worst(|e| e.duality));
    run.record("trace_preservation", worst(|e| e.trace));
    run.record("embedding_pairing", worst(|e| e.pairing));
    run.record("embedding_intertwining", worst(|e| e.intertwining));
    run.record("measure_sandwich", worst(|e| e.sandwich));
    run.record("measure_covariance", worst(|e| e.covariance));
    run.record("integral_equation_bookkeeping", worst(|e| e.bookkeeping));

    let hs: Vec<f64> = specs.iter().map(|s| s.h()).collect();
    let n = results.len();
    let defect_study = |run: &mut Run<'_>, name: &str, f: fn(&Integral) -> f64| {
        run.record_note(
            &format!("{name}_defect"),
            max_of(results.iter().map(|r| f(&r.levels[0]))),
            format!("worst of {n} tuples at the base level"),
        );
        let rows: Vec<(f64, Option<f64>, f64)> = (0..levels).map(|l| (hs[l], None, rms(results.iter().map(|r| f(&r.levels[l]))))).collect();
        record_order(run, &format!("{name}_order"), &rows);
        run.rows(&format!("{name}_defect"), &rows);
    };
    defect_study(run, "embedding_pairing", |i| i.pairing);
    defect_study(run, "embedded_forgetting", |i| i.embedded);
    defect_study(run, "scalar_identity", |i| i.scalar);

    let self_study = |run: &mut Run<'_>, name: &str, f: fn(&Integral) -> C64| {
        let rows: Vec<(f64, Option<f64>, f64)> = (0..levels.saturating_sub(1))
            .map(|l| (hs[l], None, rms(results.iter().map(|r| (f(&r.levels[l]) - f(&r.levels[l + 1])).norm()))))
            .collect();
        record_order(run, &format!("{name}_order"), &rows);
        run.rows(&format!("{name}_increment"), &rows);
    };
    self_study(run, "forgetting_exponent", |i| i.exponent);
    self_study(run, "measure_element", |i| i.element);

    indicator_study(run)
}

/// Order between the two finest rows.
fn record_order(run: &mut Run<'_>, name: &str, rows: &[(f64, Option<f64>, f64)]) {
    if rows.len() < 2 {
        run.skipped(name);
        return;
    }
    let (h0, _, r0) = rows[rows.len() - 2];
    let (h1, _, r1) = rows[rows.len() - 1];
    let order = observed_order(h0, r0, h1, r1);
    match order.value() {
        Some(v) => {
            run.record(name, v);
        }
        None => run.record_note(name, f64::NAN, format!("order not measurable: {}", order.describe())),
    }
}

fn indicator_study(run: &mut Run<'_>) -> Result<()> {
    let p = &run.cfg.params;
    let spec = GridSpec::new(p.indicator_grid.x_max, p.indicator_grid.n_points)?;
    let f = GridFunction::from_real_fn(spec, |x| 2f64.sqrt() * (-x).exp());
    let [b, c] = p.indicator_interval;
    let parts = p.indicator_parts.clone();
    let studies = parts.iter().map(|&k| approx_indicator_tensor(&f, b, c, k)).collect::<Result<Vec<_>>>()?;
    let violations = studies.windows(2).filter(|w| w[1].distance >= w[0].distance).count();
    run.record("indicator_monotonicity_violations", violations as f64);
    let first = &studies[0];
    let last = &studies[studies.len() - 1];
    run.record_note(
        "indicator_gain",
        first.distance / last.distance,
        format!("distance {:.3e} at {} parts, {:.3e} at {} parts", first.distance, first.n_parts, last.distance, last.n_parts),
    );
    let rows: Vec<(f64, Option<f64>, f64)> = studies.iter().map(|s| ((c - b) / s.n_parts as f64, None, s.distance)).collect();
    run.rows("indicator_distance", &rows);
    let bounds: Vec<(f64, Option<f64>, f64)> = studies.iter().map(|s| ((c - b) / s.n_parts as f64, None, s.bound)).collect();
    run.rows("indicator_bound", &bounds);
    for s in &studies {
        if let Some(w) = &s.warning {
            run.warn(format!("indicator with {} parts: {w}", s.n_parts));
        }
    }
    Ok(())
}
