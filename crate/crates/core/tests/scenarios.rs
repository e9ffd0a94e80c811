use std::path::{Path, PathBuf};

use covlab_core::scenario::{
    convergence_report, declared_checks, run_scenario, OutputFormat, ScenarioConfig, ScenarioName, ScenarioReport,
};
use covlab_core::Error;

fn workspace_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn config(name: &str) -> ScenarioConfig {
    ScenarioConfig::from_path(&workspace_path(&format!("configs/{name}.toml"))).unwrap()
}

fn small_rank_one() -> ScenarioConfig {
    config("rank-one-reference")
}

#[test]
fn reports_are_deterministic() {
    let cfg = small_rank_one();
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.payload_json(), b.payload_json());
    let fock = ScenarioName::FockIdentities.default_config();
    assert_eq!(run_scenario(&fock).unwrap().payload_json(), run_scenario(&fock).unwrap().payload_json());
}

#[test]
fn json_round_trip_validates() {
    let report = run_scenario(&small_rank_one()).unwrap();
    assert!(report.passed);
    let back = ScenarioReport::from_json(&report.to_json()).unwrap();
    assert_eq!(back.payload_json(), report.payload_json());
    let names: Vec<_> = report.checks.iter().map(|c| c.name.as_str()).collect();
    let declared: Vec<_> = declared_checks(ScenarioName::RankOneSingular).iter().map(|c| c.name).collect();
    assert_eq!(names, declared);
}

#[test]
fn renderings_cover_every_check() {
    let report = run_scenario(&small_rank_one()).unwrap();
    let csv = report.render(OutputFormat::Csv);
    assert!(csv.starts_with("section,name,level,h,dt,value,criterion,status,order"));
    let table = report.render(OutputFormat::Table);
    for c in &report.checks {
        assert!(csv.contains(&c.name) && table.contains(&c.name), "{} missing", c.name);
    }
}

#[test]
fn tolerance_override_flips_verdict() {
    let mut cfg = small_rank_one();
    cfg.tolerances.insert("renewal_closed_form".into(), 1e-9);
    let report = run_scenario(&cfg).unwrap();
    assert!(!report.passed);
    let check = report.check("renewal_closed_form").unwrap();
    assert!(!check.passed);
    assert_eq!(report.checks.iter().filter(|c| !c.passed).count(), 1);
    ScenarioReport::from_json(&report.to_json()).unwrap();
}

#[test]
fn range_checks_cannot_be_overridden() {
    let mut cfg = ScenarioName::FockIdentities.default_config();
    cfg.tolerances.insert("scalar_identity_order".into(), 3.0);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = small_rank_one();
    cfg.tolerances.insert("no_such_check".into(), 1.0);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_measure_reconstruction_is_exact() {
    let report = run_scenario(&config("reconstruction-zero-measure")).unwrap();
    assert!(report.passed);
    for name in ["base_roundtrip_vector", "base_roundtrip_density", "base_roundtrip_diffusion"] {
        assert!(report.value(name) <= 1e-12, "{name} = {}", report.value(name));
    }
}

#[test]
fn reference_mode_respects_capacity() {
    let mut cfg = small_rank_one();
    cfg.solver.reference_cap = 16;
    assert!(matches!(run_scenario(&cfg), Err(Error::Capacity(_))));
}

#[test]
fn convergence_table_stops_at_capacity() {
    let table = convergence_report(&small_rank_one(), 2).unwrap();
    assert_eq!((table.levels_requested, table.levels_completed), (2, 1));
    assert!(!table.is_complete());
    assert_eq!(table.warnings.len(), 1);
    assert!(table.rows.iter().all(|r| r.level == 0 && r.order.is_none()));
}

#[test]
fn convergence_table_reports_orders() {
    let mut cfg = small_rank_one();
    cfg.solver.reference_cap = 128;
    let table = convergence_report(&cfg, 3).unwrap();
    assert!(table.is_complete());
    let renewal: Vec<_> = table.rows.iter().filter(|r| r.check == "renewal_closed_form").collect();
    assert_eq!(renewal.len(), 3);
    assert!(renewal[1..].iter().all(|r| r.order.is_some()));
    assert!(table.render(OutputFormat::Json).contains("\"levels_completed\": 3"));
}

#[test]
fn convergence_needs_two_levels() {
    assert!(matches!(convergence_report(&small_rank_one(), 1), Err(Error::Config(_))));
}

#[test]
fn shipped_configs_validate() {
    for entry in std::fs::read_dir(workspace_path("configs")).unwrap() {
        let path = entry.unwrap().path();
        ScenarioConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for name in ScenarioName::ALL {
        name.default_config().validate().unwrap();
    }
}

/// The fuzz seeds double as regression inputs: nothing panics, valid seeds decode.
#[test]
fn fuzz_corpus_seeds_are_handled() {
    let dir = workspace_path("fuzz/corpus/config_parse");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let expect_ok = !["bad-version", "misaligned", "range-override"].iter().any(|b| path.to_string_lossy().contains(b));
        match ScenarioConfig::from_toml(&text) {
            Ok(cfg) => {
                assert!(expect_ok, "{} should be rejected", path.display());
                assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
            }
            Err(e) => assert!(!expect_ok, "{}: {e}", path.display()),
        }
    }
    let dir = workspace_path("fuzz/corpus/report_decode");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let expect_ok = !["verdict-mismatch", "missing-check", "truncated"].iter().any(|b| path.to_string_lossy().contains(b));
        assert_eq!(ScenarioReport::from_json(&text).is_ok(), expect_ok, "{}", path.display());
    }
}
