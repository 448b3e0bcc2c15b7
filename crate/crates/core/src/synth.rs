//! Synthetic image pairs with exact ground-truth flow.
//!
//! Frames satisfy `frame1(x) ~ frame2(x + flow(x))`: the second frame is
//! rendered by sampling a continuous (bilinearly interpolated) band-limited
//! texture at the pre-image of every pixel.

use rand::Rng;

use crate::error::{FlowError, Result};
use crate::features::GrayImage;
use crate::rng;
use crate::tensor::FlowField;

/// Motion model of a synthetic scene.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Motion {
    /// Global translation by `(u, v)` pixels.
    Translation { u: f32, v: f32 },
    /// Rotation by `degrees` about the image centre.
    Rotation { degrees: f32 },
    /// Background translating by `bg`, plus a rectangle (frame-1 coordinates,
    /// `x0..x1` by `y0..y1`) of a second texture translating by `fg`.
    TwoLayer {
        bg: (f32, f32),
        fg: (f32, f32),
        rect: (usize, usize, usize, usize),
    },
}

impl Motion {
    /// Parses `translate:U,V`, `rotate:DEG` or
    /// `layers:BU,BV,FU,FV,X0,Y0,X1,Y1`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (kind, args) = spec
            .split_once(':')
            .ok_or_else(|| FlowError::param(format!("motion '{spec}' needs KIND:ARGS")))?;
        let nums = args
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .map_err(|_| FlowError::param(format!("bad number '{s}' in motion spec")))
            })
            .collect::<Result<Vec<_>>>()?;
        let arity = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(FlowError::param(format!("motion '{kind}' takes {n} numbers")))
            }
        };
        match kind {
            "translate" => {
                arity(2)?;
                Ok(Motion::Translation { u: nums[0], v: nums[1] })
            }
            "rotate" => {
                arity(1)?;
                Ok(Motion::Rotation { degrees: nums[0] })
            }
            "layers" => {
                arity(8)?;
                if nums[4..].iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                    return Err(FlowError::param("rectangle corners must be non-negative integers"));
                }
                let r = |i: usize| nums[i] as usize;
                Ok(Motion::TwoLayer {
                    bg: (nums[0], nums[1]),
                    fg: (nums[2], nums[3]),
                    rect: (r(4), r(5), r(6), r(7)),
                })
            }
            other => Err(FlowError::param(format!("unknown motion kind '{other}'"))),
        }
    }
}

/// Gaussian scales of the texture octaves, each normalised to unit variance.
const OCTAVES: [f32; 3] = [1.0, 2.0, 4.0];

/// Band-limited random texture: white noise blurred at each of [`OCTAVES`],
/// summed and rescaled to `[0, 1]`. It can be sampled at any real coordinate.
#[derive(Clone, Debug)]
pub struct Texture {
    size: usize,
    origin: f32,
    data: Vec<f32>,
}

fn gaussian_blur(src: &[f32], size: usize, sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let pass = |input: &[f32], horizontal: bool| {
        let mut out = vec![0.0f32; size * size];
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for (k, wgt) in kernel.iter().enumerate() {
                    let d = k as i64 - r;
                    let (sx, sy) = if horizontal {
                        ((x as i64 + d).clamp(0, size as i64 - 1) as usize, y)
                    } else {
                        (x, (y as i64 + d).clamp(0, size as i64 - 1) as usize)
                    };
                    acc += wgt * input[sy * size + sx];
                }
                out[y * size + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

impl Texture {
    /// Texture covering `[-margin, extent + margin)` in both axes.
    pub fn new(extent: usize, margin: usize, seed: u64) -> Self {
        let size = extent + 2 * margin;
        let mut r = rng::stream(seed, 0);
        let noise: Vec<f32> = (0..size * size).map(|_| r.random::<f32>()).collect();
        let mut data = vec![0.0f32; size * size];
        for &sigma in &OCTAVES {
            let layer = gaussian_blur(&noise, size, sigma);
            let n = layer.len() as f32;
            let mean = layer.iter().sum::<f32>() / n;
            let sd = (layer.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n).sqrt();
            for (d, v) in data.iter_mut().zip(&layer) {
                *d += (v - mean) / sd.max(f32::EPSILON);
            }
        }
        let (lo, hi) = data
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = (hi - lo).max(f32::EPSILON);
        data.iter_mut().for_each(|v| *v = (*v - lo) / span);
        Self {
            size,
            origin: margin as f32,
            data,
        }
    }

    /// Bilinear sample at texture coordinate `(x, y)`.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let max = (self.size - 1) as f32;
        let sx = (x + self.origin).clamp(0.0, max);
        let sy = (y + self.origin).clamp(0.0, max);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as usize, y0 as usize);
        let (x1, y1) = ((x0 + 1).min(self.size - 1), (y0 + 1).min(self.size - 1));
        let at = |x: usize, y: usize| self.data[y * self.size + x];
        let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
        let bot = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
        top + (bot - top) * fy
    }
}

/// A rendered pair and its ground truth.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub frame1: GrayImage,
    pub frame2: GrayImage,
    pub flow: FlowField,
}

/// Renders a `height x width` scene under `motion`, deterministic per `seed`.
pub fn synthesize(height: usize, width: usize, motion: Motion, seed: u64) -> Result<SynthPair> {
    if height < 2 || width < 2 {
        return Err(FlowError::param("synthetic scenes need at least 2x2 pixels"));
    }
    let extent = height.max(width);
    let reach = match motion {
        Motion::Translation { u, v } => u.abs().max(v.abs()),
        Motion::Rotation { .. } => extent as f32,
        Motion::TwoLayer { bg, fg, .. } => bg.0.abs().max(bg.1.abs()).max(fg.0.abs()).max(fg.1.abs()),
    };
    if !reach.is_finite() {
        return Err(FlowError::param("motion parameters must be finite"));
    }
    let margin = reach.ceil() as usize + 2;
    let bg = Texture::new(extent, margin, seed);
    let (cx, cy) = ((width - 1) as f32 / 2.0, (height - 1) as f32 / 2.0);
    let pair = match motion {
        Motion::Translation { u, v } => SynthPair {
            frame1: GrayImage::from_fn(height, width, |x, y| bg.sample(x as f32, y as f32)),
            frame2: GrayImage::from_fn(height, width, |x, y| bg.sample(x as f32 - u, y as f32 - v)),
            flow: FlowField::constant(height, width, u, v),
        },
        Motion::Rotation { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            SynthPair {
                frame1: GrayImage::from_fn(height, width, |x, y| bg.sample(x as f32, y as f32)),
                // pre-image under the rotation: R^-1 (p - centre) + centre
                frame2: GrayImage::from_fn(height, width, |x, y| {
                    let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                    bg.sample(c * dx + s * dy + cx, -s * dx + c * dy + cy)
                }),
                flow: FlowField::from_fn(height, width, |x, y| {
                    let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                    (c * dx - s * dy - dx, s * dx + c * dy - dy)
                }),
            }
        }
        Motion::TwoLayer { bg: tb, fg: tf, rect } => {
            let (x0, y0, x1, y1) = rect;
            if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
                return Err(FlowError::param(
                    "foreground rectangle must be non-empty and inside the frame",
                ));
            }
            let fgt = Texture::new(extent, margin, rng::derive(seed, 0xF6));
            let inside = |x: f32, y: f32| x >= x0 as f32 && x < x1 as f32 && y >= y0 as f32 && y < y1 as f32;
            SynthPair {
                frame1: GrayImage::from_fn(height, width, |x, y| {
                    let (fx, fy) = (x as f32, y as f32);
                    if inside(fx, fy) {
                        fgt.sample(fx, fy)
                    } else {
                        bg.sample(fx, fy)
                    }
                }),
                frame2: GrayImage::from_fn(height, width, |x, y| {
                    let (sx, sy) = (x as f32 - tf.0, y as f32 - tf.1);
                    if inside(sx, sy) {
                        fgt.sample(sx, sy)
                    } else {
                        bg.sample(x as f32 - tb.0, y as f32 - tb.1)
                    }
                }),
                flow: FlowField::from_fn(height, width, |x, y| if inside(x as f32, y as f32) { tf } else { tb }),
            }
        }
    };
    Ok(pair)
}
