//! Inferred syscalls for each bundled target, with the rule behind each.

use gfz::config::CampaignConfig;
use gfz::engine::plan_campaign;
use gfz::inference::KnowledgeBase;
use gfz::sim::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase::bundled();
    for name in ["pipefs", "constant_variant", "error_fork", "indirect_required", "decoy_rich"] {
        let sc = load_scenario(format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR")))?;
        for t in sc.targets() {
            let plan = plan_campaign(&sc, &t.name, &CampaignConfig::default(), &kb, None)?;
            let list: Vec<String> = plan.inferred.iter().map(|s| format!("{} ({})", s.name, s.source_rule)).collect();
            println!("{name}/{}: {}", t.name, list.join(", "));
        }
    }
    Ok(())
}
