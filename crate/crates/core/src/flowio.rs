//! Flow and image file formats.
//!
//! - Middlebury `.flo`: `PIEH` magic, little-endian `u32` width and height,
//!   then `width * height` pairs of little-endian `f32` (u, v), row-major.
//!   Components with magnitude `>= 1e9` mark an invalid pixel.
//! - KITTI flow PNG: 16-bit RGB, `u = (R - 2^15) / 64`, `v = (G - 2^15) / 64`,
//!   valid iff `B != 0`.
//! - Images: 8/16-bit grayscale or RGB PNG and PGM/PPM, loaded as luma in
//!   `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb};

use crate::error::{FlowError, Result};
use crate::features::GrayImage;
use crate::tensor::FlowField;

pub const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Magnitude from which `.flo` components are treated as unknown flow.
pub const FLO_INVALID_THRESHOLD: f32 = 1e9;
/// Value written for invalid pixels.
const FLO_UNKNOWN: f32 = 1e10;
const KITTI_OFFSET: f64 = 32768.0;
const KITTI_SCALE: f64 = 64.0;

/// Parsed `.flo` header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowFileHeader {
    pub width: u32,
    pub height: u32,
}

pub fn read_flo_header(bytes: &[u8]) -> Result<FlowFileHeader> {
    if bytes.len() < 12 {
        return Err(FlowError::format("flo file shorter than its 12-byte header"));
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(FlowError::format("bad .flo magic, expected PIEH"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    Ok(FlowFileHeader { width, height })
}

/// Decodes a `.flo` byte buffer.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    let FlowFileHeader { width, height } = read_flo_header(bytes)?;
    if width == 0 || height == 0 {
        return Err(FlowError::format("flo dimensions must be positive"));
    }
    let n = (width as usize)
        .checked_mul(height as usize)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| FlowError::format("flo dimensions overflow"))?;
    let body = &bytes[12..];
    if body.len() != n * 8 {
        return Err(FlowError::format(format!(
            "flo body has {} bytes, expected {}",
            body.len(),
            n * 8
        )));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in body.chunks_exact(8) {
        let a = f32::from_le_bytes(px[..4].try_into().unwrap());
        let b = f32::from_le_bytes(px[4..].try_into().unwrap());
        let ok = a.is_finite() && b.is_finite() && a.abs() < FLO_INVALID_THRESHOLD && b.abs() < FLO_INVALID_THRESHOLD;
        u.push(a);
        v.push(b);
        valid.push(ok);
    }
    FlowField::new(height as usize, width as usize, u, v, valid)
}

/// Encodes a flow field as `.flo`. Invalid pixels are written as `1e10`.
pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + flow.len() * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for i in 0..flow.len() {
        let (a, b) = if flow.valid()[i] {
            (flow.u()[i], flow.v()[i])
        } else {
            (FLO_UNKNOWN, FLO_UNKNOWN)
        };
        if flow.valid()[i] && (a.abs() >= FLO_INVALID_THRESHOLD || b.abs() >= FLO_INVALID_THRESHOLD) {
            return Err(FlowError::param("flow magnitude collides with the .flo invalid marker"));
        }
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a KITTI 16-bit flow PNG.
pub fn read_kitti_png(bytes: &[u8]) -> Result<FlowField> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| FlowError::format(format!("cannot decode KITTI png: {e}")))?;
    let DynamicImage::ImageRgb16(buf) = img else {
        return Err(FlowError::format("KITTI flow png must be 16-bit RGB"));
    };
    let (w, h) = buf.dimensions();
    let n = (w * h) as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for p in buf.pixels() {
        let ok = p[2] != 0;
        u.push(((p[0] as f64 - KITTI_OFFSET) / KITTI_SCALE) as f32);
        v.push(((p[1] as f64 - KITTI_OFFSET) / KITTI_SCALE) as f32);
        valid.push(ok);
    }
    FlowField::new(h as usize, w as usize, u, v, valid)
}

fn kitti_encode(c: f32) -> Result<u16> {
    let q = (c as f64 * KITTI_SCALE + KITTI_OFFSET).round();
    if !(0.0..=65535.0).contains(&q) {
        return Err(FlowError::param(format!("flow component {c} exceeds the KITTI range")));
    }
    Ok(q as u16)
}

/// Encodes a flow field as a KITTI 16-bit PNG, rounding to the 1/64 px grid.
/// Invalid pixels are written as all-zero.
pub fn write_kitti_png(flow: &FlowField) -> Result<Vec<u8>> {
    let (w, h) = (flow.width() as u32, flow.height() as u32);
    let mut raw = Vec::with_capacity(flow.len() * 3);
    for i in 0..flow.len() {
        if flow.valid()[i] {
            raw.push(kitti_encode(flow.u()[i])?);
            raw.push(kitti_encode(flow.v()[i])?);
            raw.push(1);
        } else {
            raw.extend_from_slice(&[0, 0, 0]);
        }
    }
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, raw).expect("buffer sized from the flow");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| FlowError::format(format!("cannot encode png: {e}")))?;
    Ok(out.into_inner())
}

/// Loads a flow file, choosing the decoder by extension (`.png` is KITTI,
/// anything else `.flo`).
pub fn load_flow(path: &Path) -> Result<FlowField> {
    let bytes = std::fs::read(path)?;
    match extension(path).as_deref() {
        Some("png") => read_kitti_png(&bytes),
        _ => read_flo(&bytes),
    }
}

/// Saves a flow field; `.png` paths are written in KITTI format.
pub fn save_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let bytes = match extension(path).as_deref() {
        Some("png") => write_kitti_png(flow)?,
        _ => write_flo(flow)?,
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Decodes a grayscale or RGB image into luma in `[0, 1]`.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory(bytes).map_err(|e| FlowError::format(format!("cannot decode image: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => {
            GrayImage::new(h, w, b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(b) => {
            GrayImage::new(h, w, b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect())
        }
        DynamicImage::ImageRgb8(b) => {
            let rgb: Vec<f32> = b.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            GrayImage::from_rgb(h, w, &rgb)
        }
        DynamicImage::ImageRgb16(b) => {
            let rgb: Vec<f32> = b.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect();
            GrayImage::from_rgb(h, w, &rgb)
        }
        other => {
            let rgb: Vec<f32> = other
                .to_rgb8()
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect();
            GrayImage::from_rgb(h, w, &rgb)
        }
    }
}

pub fn load_image(path: &Path) -> Result<GrayImage> {
    decode_image(&std::fs::read(path)?)
}

/// Writes an 8-bit grayscale image (values clamped to `[0, 1]`). The format
/// follows the extension: `.pgm` writes binary PGM, anything else PNG.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let raw: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<image::Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw).expect("sized buffer");
    let fmt = match extension(path).as_deref() {
        Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    buf.save_with_format(path, fmt)
        .map_err(|e| FlowError::format(format!("cannot write {}: {e}", path.display())))
}

/// 8-bit RGB raster, row-major interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.data.clone()).expect("sized buffer");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| FlowError::format(format!("cannot encode png: {e}")))?;
        Ok(out.into_inner())
    }
}

/// Middlebury colour wheel: 55 hues in six ramps (red-yellow 15,
/// yellow-green 6, green-cyan 4, cyan-blue 11, blue-magenta 13, magenta-red 6).
pub fn color_wheel() -> Vec<[f32; 3]> {
    const RAMPS: [(usize, [f32; 3], [f32; 3]); 6] = [
        (15, [255., 0., 0.], [255., 255., 0.]),
        (6, [255., 255., 0.], [0., 255., 0.]),
        (4, [0., 255., 0.], [0., 255., 255.]),
        (11, [0., 255., 255.], [0., 0., 255.]),
        (13, [0., 0., 255.], [255., 0., 255.]),
        (6, [255., 0., 255.], [255., 0., 0.]),
    ];
    let mut wheel = Vec::with_capacity(55);
    for (n, from, to) in RAMPS {
        for i in 0..n {
            let t = i as f32 / n as f32;
            wheel.push([0, 1, 2].map(|c| (from[c] + (to[c] - from[c]) * t).floor()));
        }
    }
    wheel
}

/// Hue angle used by the wheel, in `[-1, 1]` (units of pi).
pub fn flow_angle(u: f32, v: f32) -> f32 {
    (-v).atan2(-u) / std::f32::consts::PI
}

/// Colour-codes a flow field: hue from direction, saturation from
/// `|flow| / max_norm` (capped at 1). With `max_norm = None` the largest valid
/// magnitude is used. Invalid pixels are black.
pub fn flow_to_color(flow: &FlowField, max_norm: Option<f32>) -> RgbImage {
    let wheel = color_wheel();
    let ncols = wheel.len();
    let norm = max_norm.unwrap_or_else(|| {
        (0..flow.len())
            .filter(|&i| flow.valid()[i])
            .map(|i| flow.u()[i].hypot(flow.v()[i]))
            .fold(0.0, f32::max)
    });
    let mut data = Vec::with_capacity(flow.len() * 3);
    for i in 0..flow.len() {
        if !flow.valid()[i] {
            data.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let (u, v) = (flow.u()[i], flow.v()[i]);
        let rad = if norm > 0.0 { (u.hypot(v) / norm).min(1.0) } else { 0.0 };
        let fk = (flow_angle(u, v) + 1.0) / 2.0 * (ncols - 1) as f32;
        let k0 = (fk.floor() as usize).min(ncols - 1);
        let k1 = (k0 + 1) % ncols;
        let f = fk - k0 as f32;
        for (a, b) in wheel[k0].iter().zip(&wheel[k1]) {
            let col = ((1.0 - f) * a + f * b) / 255.0;
            let col = 1.0 - rad * (1.0 - col);
            data.push((255.0 * col).round() as u8);
        }
    }
    RgbImage {
        height: flow.height(),
        width: flow.width(),
        data,
    }
}
