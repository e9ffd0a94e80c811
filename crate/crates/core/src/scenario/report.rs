//! Scenario reports: checks, refinement tables, rendering and schema validation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{OutputFormat, ScenarioConfig, ScenarioName};
use crate::error::{Error, Result};

/// Version of the report schema emitted by this build.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Residuals at or below this are treated as rounding noise when estimating orders. Sums of
/// a few hundred dense operator applications accumulate errors of this size.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;

/// Acceptance rule of one check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Criterion {
    AtMost { bound: f64 },
    AtLeast { bound: f64 },
    Within { lo: f64, hi: f64 },
}

impl Criterion {
    pub fn accepts(&self, value: f64) -> bool {
        match *self {
            Criterion::AtMost { bound } => value <= bound,
            Criterion::AtLeast { bound } => value >= bound,
            Criterion::Within { lo, hi } => (lo..=hi).contains(&value),
        }
    }

    /// The same rule with its bound replaced, for tolerance overrides.
    pub fn with_bound(&self, bound: f64) -> Criterion {
        match *self {
            Criterion::AtMost { .. } => Criterion::AtMost { bound },
            Criterion::AtLeast { .. } => Criterion::AtLeast { bound },
            within => within,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Criterion::AtMost { bound } => format!("<= {bound:.1e}"),
            Criterion::AtLeast { bound } => format!(">= {bound}"),
            Criterion::Within { lo, hi } => format!("in [{lo}, {hi}]"),
        }
    }
}

/// Outcome of one named check. A non-finite value is recorded as `null` and fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: Option<f64>,
    pub criterion: Criterion,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    pub fn new(name: &str, value: f64, criterion: Criterion) -> Self {
        let value = value.is_finite().then_some(value);
        let passed = value.is_some_and(|v| criterion.accepts(v));
        Self { name: name.to_string(), value, criterion, passed, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderLabel {
    /// Residual identically zero on both levels.
    Exact,
    /// Residual at rounding level on both levels; no order is measurable.
    Roundoff,
}

/// Observed convergence order between consecutive levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservedOrder {
    Value(f64),
    Label(OrderLabel),
}

impl ObservedOrder {
    pub fn value(&self) -> Option<f64> {
        match self {
            ObservedOrder::Value(v) => Some(*v),
            ObservedOrder::Label(_) => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ObservedOrder::Value(v) => format!("{v:.2}"),
            ObservedOrder::Label(OrderLabel::Exact) => "exact".into(),
            ObservedOrder::Label(OrderLabel::Roundoff) => "roundoff".into(),
        }
    }
}

/// One level of a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub check: String,
    pub level: usize,
    /// Discretization parameter of the level (space step, or partition width).
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<ObservedOrder>,
}

/// Order between two levels with parameters `h0 > h1`.
pub fn observed_order(h0: f64, r0: f64, h1: f64, r1: f64) -> ObservedOrder {
    if r0 == 0.0 && r1 == 0.0 {
        ObservedOrder::Label(OrderLabel::Exact)
    } else if r1 <= ROUNDOFF_FLOOR || r0 <= ROUNDOFF_FLOOR {
        ObservedOrder::Label(OrderLabel::Roundoff)
    } else {
        ObservedOrder::Value((r0 / r1).ln() / (h0 / h1).ln())
    }
}

/// Builds rows for one check from `(h, dt, residual)` per level, filling in orders.
pub fn refinement_rows(check: &str, levels: &[(f64, Option<f64>, f64)]) -> Vec<RefinementRow> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &(h, dt, r))| RefinementRow {
            check: check.to_string(),
            level: i,
            h,
            dt,
            residual: r.is_finite().then_some(r),
            order: (i > 0 && r.is_finite() && levels[i - 1].2.is_finite()).then(|| observed_order(levels[i - 1].0, levels[i - 1].2, h, r)),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Result of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioReport {
    pub report_schema_version: u32,
    pub scenario: ScenarioName,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub checks: Vec<CheckResult>,
    pub refinement: Vec<RefinementRow>,
    pub warnings: Vec<String>,
    pub passed: bool,
    /// Not part of the deterministic payload.
    pub timing: Timing,
}

impl ScenarioReport {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            report_schema_version: REPORT_SCHEMA_VERSION,
            scenario: config.scenario,
            seed: config.seed(),
            config: config.clone(),
            checks: Vec::new(),
            refinement: Vec::new(),
            warnings: Vec::new(),
            passed: true,
            timing: Timing::default(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Value of a check, `NaN` when missing or non-finite.
    pub fn value(&self, name: &str) -> f64 {
        self.check(name).and_then(|c| c.value).unwrap_or(f64::NAN)
    }

    pub(crate) fn finish(&mut self) {
        self.passed = self.checks.iter().all(|c| c.passed);
    }

    /// Checks the report against the schema: version, declared checks, consistency of verdicts
    /// and refinement rows.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Report(msg));
        if self.report_schema_version != REPORT_SCHEMA_VERSION {
            return fail(format!("report_schema_version {} (expected {REPORT_SCHEMA_VERSION})", self.report_schema_version));
        }
        if self.config.scenario != self.scenario {
            return fail("scenario does not match the echoed config".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.checks {
            if !seen.insert(c.name.as_str()) {
                return fail(format!("check `{}` appears twice", c.name));
            }
            let verdict = c.value.is_some_and(|v| v.is_finite() && c.criterion.accepts(v));
            if verdict != c.passed {
                return fail(format!("check `{}` verdict disagrees with its value", c.name));
            }
        }
        let declared: BTreeSet<&str> = super::declared_checks(self.scenario).iter().map(|d| d.name).collect();
        if declared != seen {
            let missing: Vec<_> = declared.difference(&seen).collect();
            let extra: Vec<_> = seen.difference(&declared).collect();
            return fail(format!("declared checks differ: missing {missing:?}, unexpected {extra:?}"));
        }
        if self.passed != self.checks.iter().all(|c| c.passed) {
            return fail("overall verdict disagrees with the checks".into());
        }
        let mut last: Option<(&str, usize)> = None;
        for row in &self.refinement {
            if !(row.h.is_finite() && row.h > 0.0) {
                return fail(format!("refinement row for `{}` has invalid h", row.check));
            }
            let expected = match last {
                Some((name, level)) if name == row.check => level + 1,
                _ => 0,
            };
            if row.level != expected {
                return fail(format!("refinement rows for `{}` are out of sequence", row.check));
            }
            if row.level == 0 && row.order.is_some() {
                return fail(format!("order reported for a single level of `{}`", row.check));
            }
            last = Some((row.check.as_str(), row.level));
        }
        if !(self.timing.wall_seconds.is_finite() && self.timing.wall_seconds >= 0.0) {
            return fail("timing.wall_seconds must be a nonnegative number".into());
        }
        Ok(())
    }

    /// Decodes and validates a JSON report.
    pub fn from_json(text: &str) -> Result<Self> {
        let report: ScenarioReport = serde_json::from_str(text).map_err(|e| Error::Report(e.to_string()))?;
        report.validate()?;
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON without the timing key; identical configs give identical payloads.
    pub fn payload_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("timing");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Table => self.to_table(),
            OutputFormat::Csv => self.to_csv(),
        }
    }

    fn to_table(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "scenario {}  grid {}x{}  time {}/{}  seed {}  {verdict}  ({:.2} s)",
            self.scenario,
            self.config.grid.x_max,
            self.config.grid.n_points,
            self.config.time.t_max,
            self.config.time.n_steps,
            self.seed,
            self.timing.wall_seconds
        );
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(out, "{:<width$}  {:>12}  {:<20}  status", "check", "value", "criterion");
        for c in &self.checks {
            let value = c.value.map_or("non-finite".to_string(), |v| format!("{v:.4e}"));
            let status = if c.passed { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<width$}  {value:>12}  {:<20}  {status}", c.name, c.criterion.describe());
            if let Some(note) = &c.note {
                let _ = writeln!(out, "{:<width$}    {note}", "");
            }
        }
        if !self.refinement.is_empty() {
            out.push_str(&table_of_rows(&self.refinement));
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(["section", "name", "level", "h", "dt", "value", "criterion", "status", "order"]);
        for c in &self.checks {
            let _ = w.write_record([
                "check".to_string(),
                c.name.clone(),
                String::new(),
                String::new(),
                String::new(),
                c.value.map_or(String::new(), |v| format!("{v:e}")),
                c.criterion.describe(),
                if c.passed { "pass" } else { "fail" }.to_string(),
                String::new(),
            ]);
        }
        write_rows_csv(&mut w, &self.refinement);
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }
}

fn table_of_rows(rows: &[RefinementRow]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "{:<width$}  level  {:>10}  {:>10}  {:>12}  order", "refinement", "h", "dt", "residual");
    for r in rows {
        let dt = r.dt.map_or("-".to_string(), |d| format!("{d:.4e}"));
        let res = r.residual.map_or("non-finite".to_string(), |v| format!("{v:.4e}"));
        let order = r.order.map_or("-".to_string(), |o| o.describe());
        let _ = writeln!(out, "{:<width$}  {:>5}  {:>10.4e}  {dt:>10}  {res:>12}  {order}", r.check, r.level, r.h);
    }
    out
}

fn write_rows_csv(w: &mut csv::Writer<Vec<u8>>, rows: &[RefinementRow]) {
    for r in rows {
        let _ = w.write_record([
            "refinement".to_string(),
            r.check.clone(),
            r.level.to_string(),
            format!("{:e}", r.h),
            r.dt.map_or(String::new(), |d| format!("{d:e}")),
            r.residual.map_or(String::new(), |v| format!("{v:e}")),
            String::new(),
            String::new(),
            r.order.map_or(String::new(), |o| o.describe()),
        ]);
    }
}

/// Output of a convergence study over successively refined grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceTable {
    pub report_schema_version: u32,
    pub scenario: ScenarioName,
    pub levels_requested: usize,
    pub levels_completed: usize,
    pub rows: Vec<RefinementRow>,
    pub warnings: Vec<String>,
    pub timing: Timing,
}

impl ConvergenceTable {
    pub fn is_complete(&self) -> bool {
        self.levels_completed == self.levels_requested
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => serde_json::to_string_pretty(self).expect("table serializes"),
            OutputFormat::Table => {
                let mut out = format!(
                    "convergence {}  levels {}/{}  ({:.2} s)\n",
                    self.scenario, self.levels_completed, self.levels_requested, self.timing.wall_seconds
                );
                out.push_str(&table_of_rows(&self.rows));
                for w in &self.warnings {
                    let _ = writeln!(out, "warning: {w}");
                }
                out
            }
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let _ = w.write_record(["section", "name", "level", "h", "dt", "value", "criterion", "status", "order"]);
                write_rows_csv(&mut w, &self.rows);
                String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
            }
        }
    }
}
