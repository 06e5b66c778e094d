//! Reachability and block distances for the deep-chain fixture, with and
//! without indirect-call resolution.

use gfz::distance::{Analysis, TargetSite};
use gfz::graph::{CallGraph, Resolution};
use gfz::sim::load_scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/deep_chain.json");
    let sc = load_scenario(path)?;
    let target = TargetSite::new(&sc.program, sc.target("sink").unwrap().block)?;
    for res in [Resolution::Rta, Resolution::DirectOnly] {
        let an = Analysis::run(&sc.program, &CallGraph::build(&sc.program, res), target);
        println!(
            "{res:?}: {} of {} functions reachable ({:.1}%), {} of {} blocks visited",
            an.reachable.functions.len(),
            sc.program.function_count(),
            100.0 * an.reachable.function_ratio(&sc.program),
            an.icfg.node_count(),
            sc.program.total_blocks()
        );
    }
    let an = Analysis::run(&sc.program, &CallGraph::build(&sc.program, Resolution::Rta), target);
    for (b, d) in an.distances.iter().take(8) {
        println!("  {:<12} {d}", sc.program.display_block(b));
    }
    Ok(())
}
