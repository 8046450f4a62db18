//! Report snapshot tests on the small shipped configuration: frozen
//! fixture comparison, worker-count determinism, and manifest round-trip.
//!
//! Regenerate fixtures after an intentional format or numeric change with
//! `UPDATE_GOLDEN=1 cargo test -p fadelab-core --test golden_report`.

use fadelab_core::config::RunConfig;
use fadelab_core::harness::{
    emit_report, invariant_checks, run_sweep, StatisticsReport, SweepConfig,
};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

const FILES: [&str; 5] = [
    "summary.csv",
    "curves.csv",
    "histograms.csv",
    "manifest.txt",
    "checks.txt",
];

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn quick_config() -> SweepConfig {
    let path = manifest_dir().join("../../configs/quick.conf");
    let run = RunConfig::from_file(&path).expect("quick config parses");
    SweepConfig::new(run).expect("quick config is admissible")
}

fn quick_report() -> &'static StatisticsReport {
    static REPORT: OnceLock<StatisticsReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let cfg = quick_config();
        let master = cfg.run.master_seed.expect("quick config pins a seed");
        run_sweep(&cfg, master, Some(1)).expect("quick sweep runs")
    })
}

fn emit_to_temp(report: &StatisticsReport, tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fadelab-golden-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    emit_report(report, &dir).expect("report emits");
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing {name} in {}: {e}", dir.display()))
}

#[test]
fn quick_sweep_report_matches_frozen_fixtures() {
    let golden = manifest_dir().join("tests/golden/quick");
    let out = emit_to_temp(quick_report(), "fixture");
    if std::env::var("UPDATE_GOLDEN").is_ok() {
        std::fs::create_dir_all(&golden).expect("golden dir");
        for name in FILES {
            std::fs::copy(out.join(name), golden.join(name)).expect("freeze fixture");
        }
        let _ = std::fs::remove_dir_all(&out);
        return;
    }
    for name in FILES {
        let got = read(&out, name);
        let want = read(&golden, name);
        assert!(
            got == want,
            "{name} drifted from the frozen fixture; rerun with UPDATE_GOLDEN=1 \
             if the change is intentional"
        );
    }
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let cfg = quick_config();
    let master = cfg.run.master_seed.unwrap();
    let two = run_sweep(&cfg, master, Some(2)).expect("two-worker sweep runs");
    let dir_one = emit_to_temp(quick_report(), "w1");
    let dir_two = emit_to_temp(&two, "w2");
    for name in FILES {
        assert!(
            read(&dir_one, name) == read(&dir_two, name),
            "{name} differs between worker counts"
        );
    }
    let _ = std::fs::remove_dir_all(&dir_one);
    let _ = std::fs::remove_dir_all(&dir_two);
}

#[test]
fn manifest_round_trips_through_the_parser() {
    let out = emit_to_temp(quick_report(), "manifest");
    let text = read(&out, "manifest.txt");
    let reparsed = RunConfig::parse_str(&text).expect("manifest body reparses");
    let mut canon = Vec::new();
    reparsed.write_canonical(&mut canon).unwrap();
    let mut original = Vec::new();
    quick_report()
        .config
        .write_canonical(&mut original)
        .unwrap();
    assert_eq!(
        canon, original,
        "manifest does not reproduce the run config"
    );
    assert_eq!(reparsed.master_seed, quick_report().config.master_seed);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn quick_sweep_passes_its_own_invariant_checks() {
    let checks = invariant_checks(quick_report());
    assert!(!checks.is_empty());
    for c in &checks {
        assert!(
            c.passed || c.skipped,
            "invariant {} failed: {}",
            c.name,
            c.detail
        );
    }
}
