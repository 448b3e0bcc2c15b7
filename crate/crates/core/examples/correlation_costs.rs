//! Correlation entry counts of the three strategies, and a measured
//! benchmark at a few sizes (the global volume is skipped once it passes
//! 256 MiB).

use patchflow::bench::{run_bench, to_csv, BenchOptions};
use patchflow::correlation::{cost_report, CostParams, Strategy};

fn main() -> patchflow::Result<()> {
    println!(
        "{:>6} {:>14} {:>16} {:>12}",
        "size", "local d=4", "global", "patchmatch"
    );
    for n in [32, 64, 128, 256, 512] {
        let local = cost_report(Strategy::Local, n, n, CostParams::Local { d_max: 4 })?.entries;
        let global = cost_report(Strategy::Global, n, n, CostParams::Global { levels: 1 })?.entries;
        let pm = cost_report(
            Strategy::Patchmatch,
            n,
            n,
            CostParams::Patchmatch { seeds: 4, radius: 2 },
        )?
        .entries;
        println!("{n:>6} {local:>14} {global:>16} {pm:>12}");
    }

    let opts = BenchOptions {
        byte_cap: 256 << 20,
        ..BenchOptions::default()
    };
    let all = [Strategy::Local, Strategy::Global, Strategy::Patchmatch];
    let rows = run_bench(&[(32, 32), (64, 64), (128, 128)], &all, &opts)?;
    print!("\n{}", to_csv(&rows));
    Ok(())
}
