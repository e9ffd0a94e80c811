//! Scenario configuration: TOML input, defaults and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::volterra::{TimeGrid, DEFAULT_REFERENCE_CAP};

/// Version of the configuration schema understood by this build.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the reference-mode capacity cap.
pub const REFERENCE_CAP_ENV: &str = "COVLAB_REFERENCE_CAP";

/// Named scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    DiffusionGkslMatch,
    ShiftTraceRestoration,
    RankOneSingular,
    FockIdentities,
    CovarianceSuite,
    ReconstructionRoundtrip,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::DiffusionGkslMatch,
        ScenarioName::ShiftTraceRestoration,
        ScenarioName::RankOneSingular,
        ScenarioName::FockIdentities,
        ScenarioName::CovarianceSuite,
        ScenarioName::ReconstructionRoundtrip,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::DiffusionGkslMatch => "diffusion-gksl-match",
            ScenarioName::ShiftTraceRestoration => "shift-trace-restoration",
            ScenarioName::RankOneSingular => "rank-one-singular",
            ScenarioName::FockIdentities => "fock-identities",
            ScenarioName::CovarianceSuite => "covariance-suite",
            ScenarioName::ReconstructionRoundtrip => "reconstruction-roundtrip",
        }
    }

    pub fn summary(&self) -> &'static str {
        match self {
            ScenarioName::DiffusionGkslMatch => "jump-measure perturbation of the no-event diffusion vs a direct master-equation solve",
            ScenarioName::ShiftTraceRestoration => "boundary injection restores the trace lost by the extinguishing shift",
            ScenarioName::RankOneSingular => "singular rank-one measure: scalar renewal vs vector march vs Dyson series",
            ScenarioName::FockIdentities => "exponential-vector identities of the forgetting semigroup and its measure",
            ScenarioName::CovarianceSuite => "covariance, additivity, duality and semigroup-law invariants",
            ScenarioName::ReconstructionRoundtrip => "recover the base family and the initial state from perturbed evolutions",
        }
    }

    /// Time step must be a whole number of space cells.
    pub fn needs_shift_alignment(&self) -> bool {
        !matches!(self, ScenarioName::DiffusionGkslMatch)
    }

    /// Baseline configuration used by `list-scenarios` and the examples.
    pub fn default_config(&self) -> ScenarioConfig {
        let (x_max, n_points, t_max, n_steps) = match self {
            ScenarioName::DiffusionGkslMatch => (8.0, 32, 0.5, 200),
            ScenarioName::ShiftTraceRestoration => (8.0, 256, 2.0, 64),
            ScenarioName::RankOneSingular => (20.0, 256, 5.0, 64),
            ScenarioName::FockIdentities => (20.0, 512, 2.5, 64),
            ScenarioName::CovarianceSuite => (20.0, 256, 1.25, 16),
            ScenarioName::ReconstructionRoundtrip => (20.0, 256, 5.0, 64),
        };
        ScenarioConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            scenario: *self,
            seed: None,
            grid: GridSection { x_max, n_points },
            time: TimeSection { t_max, n_steps },
            solver: SolverSection::default(),
            tolerances: BTreeMap::new(),
            params: Params::default(),
            output: OutputSection::default(),
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| Error::Config(format!("scenario: unknown name `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_max: f64,
    pub n_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_max: f64,
    pub n_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    #[default]
    Trajectory,
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub mode: SolverMode,
    /// Largest `n_points` allowed in reference mode; the environment variable wins.
    pub reference_cap: usize,
    pub dyson_order_cap: usize,
    pub dyson_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { mode: SolverMode::Trajectory, reference_cap: DEFAULT_REFERENCE_CAP, dyson_order_cap: 512, dyson_tol: 1e-15 }
    }
}

/// Scenario-specific knobs; each scenario reads only its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Random test-function tuples in the Fock suite.
    pub tuples: usize,
    /// Grid of the indicator-approximation study.
    pub indicator_grid: GridSection,
    pub indicator_interval: [f64; 2],
    pub indicator_parts: Vec<usize>,
    /// Replace every measure by zero.
    pub zero_measure: bool,
    /// Step at which initial states are reconstructed; defaults to half the run.
    pub reconstruct_step: Option<usize>,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            tuples: 24,
            indicator_grid: GridSection { x_max: 8.0, n_points: 512 },
            indicator_interval: [1.0, 2.0],
            indicator_parts: vec![8, 16, 32, 64],
            zero_measure: false,
            reconstruct_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(OutputFormat::Table),
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Config(format!("output.format: unknown format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub format: OutputFormat,
    pub path: Option<String>,
}

/// Parsed scenario configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub scenario: ScenarioName,
    /// Seed for random probes; a fixed per-scenario value when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    /// Overrides of check bounds, keyed by check name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0x5eed_0000 + self.scenario as u64)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.x_max, self.grid.n_points)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_max, self.time.n_steps)
    }

    /// Reference cap after applying the environment override.
    pub fn reference_cap(&self) -> Result<usize> {
        match std::env::var(REFERENCE_CAP_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|c| *c > 0)
                .ok_or_else(|| Error::Config(format!("{REFERENCE_CAP_ENV}: expected a positive integer, got `{v}`"))),
            Err(_) => Ok(self.solver.reference_cap),
        }
    }

    /// Same scenario with space and time grids refined `level` times.
    pub fn refined(&self, level: u32) -> ScenarioConfig {
        let mut c = self.clone();
        c.grid.n_points <<= level;
        c.time.n_steps <<= level;
        c
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut bad = |field: &str, msg: String| problems.push(format!("{field}: {msg}"));

        if self.schema_version != CONFIG_SCHEMA_VERSION {
            bad("schema_version", format!("expected {CONFIG_SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if !(self.grid.x_max.is_finite() && self.grid.x_max > 0.0) {
            bad("grid.x_max", format!("must be positive and finite, got {}", self.grid.x_max));
        }
        if self.grid.n_points < 2 {
            bad("grid.n_points", format!("must be at least 2, got {}", self.grid.n_points));
        }
        if !(self.time.t_max.is_finite() && self.time.t_max > 0.0) {
            bad("time.t_max", format!("must be positive and finite, got {}", self.time.t_max));
        }
        if self.time.n_steps == 0 {
            bad("time.n_steps", "must be positive".into());
        }
        if self.solver.reference_cap == 0 {
            bad("solver.reference_cap", "must be positive".into());
        }
        if !(self.solver.dyson_tol.is_finite() && self.solver.dyson_tol > 0.0) {
            bad("solver.dyson_tol", format!("must be positive, got {}", self.solver.dyson_tol));
        }
        if self.solver.dyson_order_cap == 0 {
            bad("solver.dyson_order_cap", "must be positive".into());
        }
        if self.output.path.as_deref() == Some("") {
            bad("output.path", "must not be empty".into());
        }

        let declared = super::declared_checks(self.scenario);
        for (name, value) in &self.tolerances {
            match declared.iter().find(|d| d.name == name) {
                None => bad(&format!("tolerances.{name}"), format!("no such check in {}", self.scenario)),
                Some(d) if !d.overridable() => bad(&format!("tolerances.{name}"), "range checks cannot be overridden".into()),
                Some(_) if !value.is_finite() => bad(&format!("tolerances.{name}"), format!("must be finite, got {value}")),
                Some(_) => {}
            }
        }

        if let (Ok(spec), Ok(tg)) = (self.grid_spec(), self.time_grid()) {
            if self.scenario.needs_shift_alignment() && !tg.is_aligned(spec) {
                bad("time", format!("step {} is not a whole number of cells of width {}", tg.dt(), spec.h()));
            }
            if let Some(k) = self.params.reconstruct_step {
                if k > self.time.n_steps {
                    bad("params.reconstruct_step", format!("{k} exceeds time.n_steps = {}", self.time.n_steps));
                }
            }
            if self.scenario == ScenarioName::FockIdentities {
                self.validate_fock(&mut bad);
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn validate_fock(&self, bad: &mut impl FnMut(&str, String)) {
        let p = &self.params;
        if p.tuples == 0 {
            bad("params.tuples", "must be positive".into());
        }
        if let Ok(spec) = self.grid_spec() {
            if !spec.is_aligned(self.time.t_max / 4.0) {
                bad("time.t_max", format!("t_max/4 = {} must be a whole number of cells of width {}", self.time.t_max / 4.0, spec.h()));
            }
        }
        let [b, c] = p.indicator_interval;
        match GridSpec::new(p.indicator_grid.x_max, p.indicator_grid.n_points) {
            Err(e) => bad("params.indicator_grid", e.to_string()),
            Ok(spec) => match spec.cell_range(b, c) {
                Err(e) => bad("params.indicator_interval", e.to_string()),
                Ok((lo, hi)) => {
                    if lo >= hi {
                        bad("params.indicator_interval", format!("empty interval [{b}, {c})"));
                    }
                    for &k in &p.indicator_parts {
                        if k == 0 || (hi - lo) % k != 0 {
                            bad("params.indicator_parts", format!("{k} does not divide the {} cells of the interval", hi - lo));
                        }
                    }
                }
            },
        }
        if p.indicator_parts.len() < 2 {
            bad("params.indicator_parts", "need at least two part counts".into());
        }
        if !p.indicator_parts.windows(2).all(|w| w[0] < w[1]) {
            bad("params.indicator_parts", "must be strictly increasing".into());
        }
    }
}
