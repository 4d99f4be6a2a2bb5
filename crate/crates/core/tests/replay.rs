use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use costgate::adapter::mock::MockConfig;
use costgate::adapter::prompt::ContextAnswer;
use costgate::catalog::Catalog;
use costgate::replay::fixture::load_fixtures;
use costgate::replay::report::parse_csv;
use costgate::replay::routing::{routing_report, RoutingPolicyFile};
use costgate::replay::{parse_strategies, replay, ReplayOptions};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_costgate"))
}

#[test]
fn shipped_conversations_are_mostly_standalone() {
    let fixtures = load_fixtures(fixtures_dir().join("conversations")).unwrap();
    assert_eq!(fixtures.len(), 10);
    let decisions: Vec<&Vec<ContextAnswer>> = fixtures
        .iter()
        .flat_map(|f| f.context_decisions.as_ref().unwrap())
        .collect();
    let standalone = decisions
        .iter()
        .filter(|d| d.iter().all(|a| *a == ContextAnswer::Standalone))
        .count();
    assert_eq!((standalone, decisions.len()), (96, 120));
}

#[tokio::test]
async fn smart_context_cost_sits_between_lastk_extremes() {
    let fixtures = load_fixtures(fixtures_dir().join("conversations")).unwrap();
    let strategies = parse_strategies("plan:lastk:0,plan:lastk:5,smart_context").unwrap();
    let reports = replay(fixtures, &strategies, &ReplayOptions::default()).await.unwrap();
    let (none, five, smart) = (&reports[0], &reports[1], &reports[2]);
    assert!(none.total_usd < smart.total_usd, "{} vs {}", none.total_usd, smart.total_usd);
    assert!(smart.total_usd < five.total_usd, "{} vs {}", smart.total_usd, five.total_usd);
    // the baseline judges itself as identical, and dropping needed context costs points
    assert_eq!(five.mean_score, Some(10.0));
    assert!(none.mean_score.unwrap() < 10.0);
    assert_eq!(smart.mean_score, Some(10.0));
}

#[tokio::test]
async fn shipped_routing_fixture_escalates_38_of_160() {
    let policy = RoutingPolicyFile::load(fixtures_dir().join("routing-policy.toml")).unwrap();
    let fixtures = load_fixtures(fixtures_dir().join("routing-160")).unwrap();
    let r = routing_report(Arc::new(Catalog::builtin()), &policy, &fixtures, MockConfig::default())
        .await
        .unwrap();
    assert_eq!((r.escalated, r.queries), (38, 160));
    assert_eq!(r.escalation_fraction, 0.2375);
    assert_eq!(r.verified.expensive_answers, 38);
    assert_eq!(r.random.len(), 3);
}

#[test]
fn cli_curve_prints_totals() {
    let out = bin()
        .args(["curve", "--n", "50", "--k", "0,1,50"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("query,k=0,k=1,k=50"));
    assert_eq!(lines.last(), Some("50,5000,14800,250000"));
}

#[test]
fn cli_replay_writes_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["replay", "--fixtures"])
        .arg(fixtures_dir().join("conversations"))
        .args(["--strategies", "plan:lastk:0,plan:lastk:1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let per_query = std::fs::read_to_string(dir.path().join("per_query.csv")).unwrap();
    let reports = parse_csv(&summary, &per_query).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].per_query.len(), 120);
    assert_eq!(reports[0].normalized_cost, 1.0);
    assert!(reports[1].total_usd > reports[0].total_usd);
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn cli_rejects_bad_input() {
    let out = bin().args(["curve", "--n", "0"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin()
        .args(["replay", "--fixtures", "/nonexistent/fixtures"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_route_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = fixtures_dir();
    let out = bin()
        .args(["route", "--policy"])
        .arg(root.join("routing-policy.toml"))
        .arg("--fixtures")
        .arg(root.join("routing-160"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("routing.json")).unwrap()).unwrap();
    assert_eq!(json["escalated"], 38);
    assert!(dir.path().join("routing.csv").exists());
}
