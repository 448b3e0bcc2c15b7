//! Rectified stereo: frame 2 is frame 1 shifted left by a per-column
//! disparity ramp, and the search runs along rows only.

use patchflow::features::GrayImage;
use patchflow::pyramid::run_pyramid;
use patchflow::synth::Texture;
use patchflow::{EngineConfig, PropagationMode, SearchMode};

fn main() -> patchflow::Result<()> {
    let (h, w) = (64, 128);
    let tex = Texture::new(128, 16, 5);
    let disparity = |x: usize| 2.0 + 6.0 * x as f32 / w as f32;
    let left = GrayImage::from_fn(h, w, |x, y| tex.sample(x as f32, y as f32));
    // right image pixel x shows the scene point at x + d
    let right = GrayImage::from_fn(h, w, |x, y| tex.sample(x as f32 + disparity(x), y as f32));
    let cfg = EngineConfig {
        search: SearchMode::Stereo1d,
        propagation: PropagationMode::InverseExact,
        init_range: 2.0,
        ..EngineConfig::default()
    };
    let out = run_pyramid(&left, &right, &cfg, None)?;
    let max_v = out.flow.v().iter().fold(0.0f32, |m, v| m.max(v.abs()));
    println!("largest |v| = {max_v}");
    for x in (8..w - 8).step_by(24) {
        let col: Vec<f32> = (8..h - 8).map(|y| out.flow.at(x, y).0).collect();
        let mean = col.iter().sum::<f32>() / col.len() as f32;
        println!(
            "column {x:>3}: expected u {:>6.2}, mean estimate {mean:>6.2}",
            -disparity(x)
        );
    }
    Ok(())
}
