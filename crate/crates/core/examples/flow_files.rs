//! Writes a rotation field as `.flo` and KITTI PNG, reads both back, and
//! renders the colour wheel visualisation.
//!
//! cargo run --example flow_files -- [out_dir]

use std::path::PathBuf;

use patchflow::flowio::{flow_to_color, load_flow, save_flow};
use patchflow::metrics::epe;
use patchflow::tensor::FlowField;

fn main() -> patchflow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let (h, w) = (64, 96);
    let (cx, cy) = (w as f32 / 2.0, h as f32 / 2.0);
    let flow = FlowField::from_fn(h, w, |x, y| (-(y as f32 - cy) / 8.0, (x as f32 - cx) / 8.0));

    let flo = dir.join("swirl.flo");
    let kitti = dir.join("swirl_kitti.png");
    save_flow(&flo, &flow)?;
    save_flow(&kitti, &flow)?;
    let a = load_flow(&flo)?;
    let b = load_flow(&kitti)?;
    println!(".flo bit-identical: {}", a == flow);
    println!("KITTI epe after 1/64 px quantisation: {:.2e}", epe(&b, &flow)?);

    let png = dir.join("swirl_color.png");
    std::fs::write(&png, flow_to_color(&flow, None).encode_png()?)?;
    println!("wrote {}, {} and {}", flo.display(), kitti.display(), png.display());
    Ok(())
}
