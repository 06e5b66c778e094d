//! Comparison table from two sets of TTE values.

use gfz::stats::{compare, render_table, Alternative, TteSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let timeout = 86_400.0;
    let baseline = TteSample::new(vec![7_400.0, 12_000.0, 86_400.0, 9_100.0, 30_500.0], timeout)?;
    let ours = TteSample::new(vec![310.0, 1_020.0, 450.0, 2_200.0, 95.0], timeout)?;
    let rows = [
        compare("ours", &ours, &baseline, Alternative::Less)?,
        compare("baseline", &baseline, &baseline, Alternative::Less)?,
    ];
    print!("{}", render_table(&rows));
    Ok(())
}
