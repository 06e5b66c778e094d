//! One directed campaign; prints the PoC and the phase timeline.

use gfz::config::CampaignConfig;
use gfz::engine::{plan_campaign, run_campaign};
use gfz::inference::KnowledgeBase;
use gfz::sim::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/dependency_chain.json"))?;
    let cfg = CampaignConfig {
        rng_seed: std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?,
        ..CampaignConfig::default()
    };
    let plan = plan_campaign(&sc, "accept_conn", &cfg, &KnowledgeBase::bundled(), None)?;
    let r = run_campaign(&sc, &plan, &cfg)?;
    println!("hit: {}, executions: {}, tte: {}s", r.hit, r.executions, r.tte_secs);
    for p in &r.phase_timeline {
        println!("  t={:>6.0}s {:?}", p.t_secs, p.phase);
    }
    if let Some(poc) = r.poc {
        print!("{poc}");
    }
    Ok(())
}
