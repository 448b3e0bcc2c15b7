//! Seed propagation three ways on the same random instance: direct
//! propagation, inverse propagation (exact) and its approximation.
//! Prints how far each deviates from direct propagation and what it cost.

use patchflow::patchmatch::{inverse_prop_init, inverse_propagate, propagate, OpCounters, PropagationOps};
use patchflow::rng;
use patchflow::tensor::{FeatureMap, FlowField, SeedSet};
use patchflow::PropagationMode;
use rand::Rng;

fn main() -> patchflow::Result<()> {
    let (h, w, c) = (32, 32, 8);
    let mut r = rng::stream(7, 0);
    let mut feat = || FeatureMap::from_fn(h, w, c, |_, _, _| r.random::<f32>() - 0.5).l2_normalized();
    let (f1, f2) = (feat(), feat());
    let mut r = rng::stream(7, 1);
    let flow = FlowField::from_fn(h, w, |_, _| {
        (r.random_range(-3..=3) as f32, r.random_range(-3..=3) as f32)
    });
    let seeds = SeedSet::diag4();

    let mut base_ops = OpCounters::default();
    let base = propagate(&f1, &f2, &flow, &seeds, &mut base_ops)?;
    println!("{:<14} {:?}", "Propagate", PropagationOps::observed(&base_ops));

    for mode in [PropagationMode::InverseExact, PropagationMode::InverseApprox] {
        let mut ops = OpCounters::default();
        let st = inverse_prop_init(&f2, &seeds, &mut ops)?;
        let cands = inverse_propagate(&f1, &st, &flow, mode, &seeds, &mut ops)?;
        let m = 4;
        let mut worst = 0.0f32;
        for y in m..h - m {
            for x in m..w - m {
                for s in 0..cands.k {
                    worst = worst.max((cands.score(x, y, s) - base.score(x, y, s)).abs());
                }
            }
        }
        println!(
            "{:<14} {:?}\n               max interior score gap {worst:.3e}, stacked targets {} bytes",
            format!("{mode:?}"),
            PropagationOps::observed(&ops),
            st.bytes()
        );
    }

    println!("\nper-run operation counts for 4 seeds, 12 iterations:");
    for mode in [
        PropagationMode::Propagate,
        PropagationMode::InverseApprox,
        PropagationMode::InverseExact,
    ] {
        println!(
            "  {:<14} {:?}",
            format!("{mode:?}"),
            PropagationOps::predict(mode, 4, 12)
        );
    }
    Ok(())
}
