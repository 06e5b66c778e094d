//! Shape of the bundled scenarios.

mod common;

use common::{fixture, FIXTURES};
use gfz::config::CampaignConfig;
use gfz::engine::plan_campaign;
use gfz::inference::{KnowledgeBase, Rule};
use gfz::sim::{brute_force_min_trigger, oracle_tractable, MAX_ORACLE_LEN};

fn inferred(name: &str, target: &str) -> Vec<(String, Rule)> {
    let sc = fixture(name);
    let plan = plan_campaign(&sc, target, &CampaignConfig::default(), &KnowledgeBase::bundled(), None).unwrap();
    plan.inferred.into_iter().map(|s| (s.name, s.source_rule)).collect()
}

#[test]
fn all_fixtures_load_with_targets() {
    for name in FIXTURES {
        let sc = fixture(name);
        assert_eq!(sc.name, name);
        assert!(!sc.targets().is_empty(), "{name}");
    }
}

#[test]
fn oracle_minimum_lengths() {
    let want = [
        ("pipefs", "page_read", 2),
        ("constant_variant", "tcgets", 2),
        ("dependency_chain", "accept_conn", 4),
        ("error_fork", "fault_error", 3),
        ("deep_chain", "sink", 1),
    ];
    for (name, target, len) in want {
        let sc = fixture(name);
        assert!(oracle_tractable(&sc), "{name}");
        let t = sc.target(target).unwrap().block;
        let best = brute_force_min_trigger(&sc, t, MAX_ORACLE_LEN).unwrap().unwrap();
        assert_eq!(best.len(), len, "{name}: {best}");
    }
    for name in ["indirect_required", "decoy_rich"] {
        assert!(!oracle_tractable(&fixture(name)), "{name}");
    }
}

#[test]
fn inference_per_fixture() {
    use Rule::*;
    let s = |v: &[(&str, Rule)]| v.iter().map(|&(n, r)| (n.to_string(), r)).collect::<Vec<_>>();
    assert_eq!(
        inferred("constant_variant", "tcgets"),
        s(&[("ioctl", CallChain), ("ioctl$TCGETS", SpecializedVariant), ("openat$ptmx", KnowledgeBase)])
    );
    assert_eq!(
        inferred("pipefs", "page_read"),
        s(&[("read", CallChain), ("pipe", KnowledgeBase), ("pipe2", KnowledgeBase)])
    );
    assert_eq!(
        inferred("error_fork", "fault_error"),
        s(&[("mprotect", CallChain), ("mmap", KnowledgeBase), ("munmap", KnowledgeBase)])
    );
    assert_eq!(
        inferred("indirect_required", "special"),
        s(&[("devctl", CallChain), ("devctl$ARM", SpecializedVariant), ("devctl$FIRE", SpecializedVariant)])
    );
    let decoy: Vec<String> = inferred("decoy_rich", "deliver").into_iter().map(|x| x.0).collect();
    assert_eq!(decoy, ["fdatasync", "fstatfs", "fsync", "syncfs"]);
}
