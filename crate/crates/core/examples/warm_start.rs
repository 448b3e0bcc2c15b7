//! Three-frame sequence under constant motion: the second pair starts from
//! the forward-splatted flow of the first, and the pyramid depth is chosen
//! from that initial flow.

use patchflow::features::GrayImage;
use patchflow::metrics::EvalReport;
use patchflow::pyramid::{adaptive_levels, run_pyramid, run_pyramid_with_schedule, warm_start};
use patchflow::synth::Texture;
use patchflow::tensor::FlowField;
use patchflow::{EngineConfig, PropagationMode};

fn main() -> patchflow::Result<()> {
    let (h, w, step) = (96, 96, (5.0f32, -3.0f32));
    let tex = Texture::new(96, 24, 11);
    let frame = |t: f32| GrayImage::from_fn(h, w, |x, y| tex.sample(x as f32 - t * step.0, y as f32 - t * step.1));
    let frames = [frame(0.0), frame(1.0), frame(2.0)];
    let gt = FlowField::constant(h, w, step.0, step.1);
    let cfg = EngineConfig {
        propagation: PropagationMode::InverseExact,
        ..EngineConfig::default()
    };

    let first = run_pyramid(&frames[0], &frames[1], &cfg, None)?;
    println!("pair 0-1, cold start: {}", EvalReport::compute(&first.flow, &gt)?);

    let init = warm_start(&first.flow);
    let holes = init.valid().iter().filter(|v| !**v).count();
    let schedule = adaptive_levels(&init, 1, cfg.radius, 6)?;
    println!(
        "warm start leaves {holes} holes; adaptive factors {:?}",
        schedule.factors()
    );
    let second = run_pyramid_with_schedule(&frames[1], &frames[2], &cfg, &schedule, Some(&init))?;
    println!("pair 1-2, warm start: {}", EvalReport::compute(&second.flow, &gt)?);
    Ok(())
}
