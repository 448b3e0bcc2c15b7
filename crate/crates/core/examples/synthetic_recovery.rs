//! Renders a translated texture, estimates its flow and scores the result.
//!
//! cargo run --release --example synthetic_recovery -- [U V] [mode]

use patchflow::metrics::EvalReport;
use patchflow::pyramid::run_pyramid;
use patchflow::synth::{synthesize, Motion};
use patchflow::{EngineConfig, PropagationMode};

fn main() -> patchflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f32| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (u, v) = (num(0, 18.0), num(1, -12.0));
    let mode = args.get(2).map(String::as_str).unwrap_or("inverse-exact");
    let pair = synthesize(128, 128, Motion::Translation { u, v }, 7)?;
    let cfg = EngineConfig {
        propagation: PropagationMode::parse(mode)?,
        ..EngineConfig::default()
    };
    let t = std::time::Instant::now();
    let out = run_pyramid(&pair.frame1, &pair.frame2, &cfg, None)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    println!("mode={mode} motion=({u},{v}) {ms:.0} ms");
    for l in &out.diagnostics.levels {
        println!("  level 1/{}: epe={:.3}", l.factor, l.epe_against(&pair.flow)?);
    }
    println!("  full frame: {}", EvalReport::compute(&out.flow, &pair.flow)?);
    Ok(())
}
