//! Median executions to target per mode on the decoy-rich fixture.

use gfz::config::{CampaignConfig, Mode};
use gfz::engine::{plan_campaign, run_campaign};
use gfz::inference::KnowledgeBase;
use gfz::sim::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/decoy_rich.json"))?;
    let kb = KnowledgeBase::bundled();
    let reps = 20;
    for mode in Mode::ALL {
        let cfg = CampaignConfig { mode, ..CampaignConfig::default() };
        let plan = plan_campaign(&sc, "deliver", &cfg, &kb, None)?;
        let mut execs = Vec::new();
        let mut hits = 0;
        for i in 0..reps {
            let c = CampaignConfig { rng_seed: cfg.repetition_seed(i), ..cfg.clone() };
            let r = run_campaign(&sc, &plan, &c)?;
            hits += r.hit as usize;
            execs.push(r.executions);
        }
        execs.sort_unstable();
        let median = (execs[reps / 2 - 1] + execs[reps / 2]) as f64 / 2.0;
        println!("{:<13} hits {hits:>2}/{reps}  median executions {median:>7.1}", mode.as_str());
    }
    Ok(())
}
