//! Selection probability of each inferred syscall over one campaign.

use gfz::config::CampaignConfig;
use gfz::engine::{plan_campaign, run_campaign};
use gfz::inference::KnowledgeBase;
use gfz::sim::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/decoy_rich.json"))?;
    let cfg = CampaignConfig::default();
    let plan = plan_campaign(&sc, "deliver", &cfg, &KnowledgeBase::bundled(), None)?;
    let r = run_campaign(&sc, &plan, &cfg)?;
    let names: Vec<&str> = plan.inferred.iter().map(|s| s.name.as_str()).collect();
    println!("{:>7}  {}", "t(s)", names.iter().map(|n| format!("{n:>10}")).collect::<String>());
    for s in &r.probability_trace {
        let row: String = s.probabilities.iter().map(|(_, p)| format!("{p:>10.3}")).collect();
        println!("{:>7.0}  {row}", s.t_secs);
    }
    println!("hit: {} after {} executions", r.hit, r.executions);
    Ok(())
}
