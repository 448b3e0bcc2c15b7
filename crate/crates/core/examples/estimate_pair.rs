//! Estimates the flow between two image files, or a synthetic pair when no
//! paths are given, and writes `flow.flo` plus a colour-coded `flow.png`.
//!
//! cargo run --release --example estimate_pair -- [img1 img2] [out_dir]

use std::path::{Path, PathBuf};

use patchflow::flowio::{flow_to_color, load_image, save_flow};
use patchflow::metrics::EvalReport;
use patchflow::pyramid::run_pyramid;
use patchflow::synth::{synthesize, Motion};
use patchflow::{EngineConfig, PropagationMode};

fn main() -> patchflow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = EngineConfig {
        propagation: PropagationMode::InverseExact,
        ..EngineConfig::default()
    };
    let (img1, img2, gt, out_dir) = if args.len() >= 2 {
        let dir = args.get(2).map(PathBuf::from).unwrap_or_else(|| ".".into());
        (
            load_image(Path::new(&args[0]))?,
            load_image(Path::new(&args[1]))?,
            None,
            dir,
        )
    } else {
        let pair = synthesize(96, 128, Motion::Rotation { degrees: 3.0 }, 1)?;
        (pair.frame1, pair.frame2, Some(pair.flow), std::env::temp_dir())
    };

    let out = run_pyramid(&img1, &img2, &cfg, None)?;
    for level in &out.diagnostics.levels {
        println!(
            "level 1/{}: {}x{}, {} half-rounds, {:.1} ms",
            level.factor,
            level.width,
            level.height,
            level.trace.len(),
            level.millis
        );
    }
    if let Some(gt) = gt {
        println!("vs ground truth: {}", EvalReport::compute(&out.flow, &gt)?);
    }

    let flo = out_dir.join("flow.flo");
    let png = out_dir.join("flow.png");
    save_flow(&flo, &out.flow)?;
    std::fs::write(&png, flow_to_color(&out.flow, None).encode_png()?)?;
    println!("wrote {} and {}", flo.display(), png.display());
    Ok(())
}
