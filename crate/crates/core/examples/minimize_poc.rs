//! Pad a known trigger with noise calls, minimize it, and compare against
//! the brute-force shortest trigger.

use gfz::engine::minimize_poc;
use gfz::input::Input;
use gfz::sim::{brute_force_min_trigger, load_scenario, MAX_ORACLE_LEN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/error_fork.json"))?;
    let target = sc.target("fault_error").unwrap().block;
    let poc = Input::parse("getpid()\nmmap(0x0, 0x7)\nuname()\nmmap(0x0, 0x0)\nmunmap(@1)\ngetpid()\nmprotect(@1, 0x3)\n")?;
    let min = minimize_poc(&poc, &sc, target)?;
    let best = brute_force_min_trigger(&sc, target, MAX_ORACLE_LEN)?.expect("trigger exists");
    println!("original {} calls, minimized {} calls, shortest possible {}", poc.len(), min.len(), best.len());
    print!("{min}");
    Ok(())
}
