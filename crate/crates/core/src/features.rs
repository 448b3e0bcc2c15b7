//! Hand-crafted per-pixel descriptors: a 7x7 census signature and central
//! difference gradients.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::tensor::FeatureMap;

/// Single-channel real image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(FlowError::dim(format!(
                "image {width}x{height} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { height, width, data }
    }

    /// Converts interleaved RGB to luma with Rec. 601 weights.
    pub fn from_rgb(height: usize, width: usize, rgb: &[f32]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(FlowError::dim("RGB buffer length does not match dimensions"));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Self::new(height, width, data)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Edge-clamped lookup.
    #[inline]
    pub fn at_clamped(&self, x: i64, y: i64) -> f32 {
        let xi = x.clamp(0, self.width as i64 - 1) as usize;
        let yi = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[yi * self.width + xi]
    }

    /// Pads bottom/right edges by replication up to `height x width`.
    pub fn padded(&self, height: usize, width: usize) -> GrayImage {
        GrayImage::from_fn(height, width, |x, y| self.at_clamped(x as i64, y as i64))
    }
}

/// Which descriptor to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Descriptor {
    /// 48 channels of +1/-1 census comparisons over a 7x7 window.
    Census7,
    /// 3 channels: d/dx, d/dy, gradient magnitude.
    Gradients,
    /// Census followed by gradients, 51 channels.
    Census7Gradients,
}

impl Descriptor {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "census7" => Ok(Self::Census7),
            "gradients" => Ok(Self::Gradients),
            "census7+gradients" => Ok(Self::Census7Gradients),
            other => Err(FlowError::param(format!("unknown descriptor '{other}'"))),
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::Census7 => CENSUS_CHANNELS,
            Self::Gradients => 3,
            Self::Census7Gradients => CENSUS_CHANNELS + 3,
        }
    }

    /// Side of the square support window.
    pub fn window(self) -> usize {
        match self {
            Self::Gradients => 3,
            _ => CENSUS_SIDE,
        }
    }
}

const CENSUS_SIDE: usize = 7;
const CENSUS_CHANNELS: usize = CENSUS_SIDE * CENSUS_SIDE - 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeatureConfig {
    pub descriptor: Descriptor,
    /// Multiplier applied to the gradient channels.
    pub gradient_weight: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            descriptor: Descriptor::Census7Gradients,
            gradient_weight: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn channels(&self) -> usize {
        self.descriptor.channels()
    }
}

/// Computes the configured descriptor at every pixel.
///
/// Census channel `i` compares the `i`-th window neighbour (row-major,
/// centre skipped) with the centre: `+1` if the neighbour is strictly darker,
/// `-1` otherwise. Gradients are central differences `(I(x+1) - I(x-1)) / 2`.
/// Lookups outside the image are edge-clamped.
pub fn extract_features(image: &GrayImage, cfg: &FeatureConfig) -> Result<FeatureMap> {
    let win = cfg.descriptor.window();
    if image.height < win || image.width < win {
        return Err(FlowError::dim(format!(
            "image {}x{} is smaller than the {win}x{win} descriptor window",
            image.width, image.height
        )));
    }
    let (h, w) = (image.height, image.width);
    let c = cfg.channels();
    let census = matches!(cfg.descriptor, Descriptor::Census7 | Descriptor::Census7Gradients);
    let grads = matches!(cfg.descriptor, Descriptor::Gradients | Descriptor::Census7Gradients);
    let half = (CENSUS_SIDE / 2) as i64;
    let mut data = vec![0.0f32; h * w * c];
    data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        let yi = y as i64;
        for x in 0..w {
            let xi = x as i64;
            let out = &mut row[x * c..(x + 1) * c];
            let mut ch = 0;
            if census {
                let centre = image.at(x, y);
                for dy in -half..=half {
                    for dx in -half..=half {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let n = image.at_clamped(xi + dx, yi + dy);
                        out[ch] = if n < centre { 1.0 } else { -1.0 };
                        ch += 1;
                    }
                }
            }
            if grads {
                let gx = 0.5 * (image.at_clamped(xi + 1, yi) - image.at_clamped(xi - 1, yi));
                let gy = 0.5 * (image.at_clamped(xi, yi + 1) - image.at_clamped(xi, yi - 1));
                let wgt = cfg.gradient_weight;
                out[ch] = wgt * gx;
                out[ch + 1] = wgt * gy;
                out[ch + 2] = wgt * (gx * gx + gy * gy).sqrt();
            }
        }
    });
    FeatureMap::new(h, w, c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{shift, Offset};
    use rand::{Rng, SeedableRng};

    fn noise(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        GrayImage::from_fn(h, w, |_, _| rng.random::<f32>())
    }

    #[test]
    fn channel_counts() {
        assert_eq!(Descriptor::Census7.channels(), 48);
        assert_eq!(Descriptor::Gradients.channels(), 3);
        assert_eq!(Descriptor::Census7Gradients.channels(), 51);
        let f = extract_features(&noise(9, 9, 0), &FeatureConfig::default()).unwrap();
        assert_eq!(f.shape(), (9, 9, 51));
    }

    #[test]
    fn constant_image_census_is_all_minus_one() {
        let img = GrayImage::from_fn(8, 8, |_, _| 0.4);
        let cfg = FeatureConfig {
            descriptor: Descriptor::Census7,
            ..Default::default()
        };
        let f = extract_features(&img, &cfg).unwrap();
        assert!(f.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn ramp_gradient_at_centre() {
        let img = GrayImage::from_fn(3, 3, |x, _| x as f32);
        let cfg = FeatureConfig {
            descriptor: Descriptor::Gradients,
            ..Default::default()
        };
        let f = extract_features(&img, &cfg).unwrap();
        assert_eq!(f.pixel(1, 1), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn census_bit_order() {
        // Only the top-left neighbour of the centre is darker.
        let img = GrayImage::from_fn(7, 7, |x, y| if (x, y) == (0, 0) { 0.0 } else { 1.0 });
        let cfg = FeatureConfig {
            descriptor: Descriptor::Census7,
            ..Default::default()
        };
        let f = extract_features(&img, &cfg).unwrap();
        let px = f.pixel(3, 3);
        assert_eq!(px[0], 1.0);
        assert!(px[1..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        assert!(extract_features(&noise(6, 20, 1), &FeatureConfig::default()).is_err());
        let cfg = FeatureConfig {
            descriptor: Descriptor::Gradients,
            ..Default::default()
        };
        assert!(extract_features(&noise(3, 3, 1), &cfg).is_ok());
    }

    #[test]
    fn translation_equivariance_on_interior() {
        let img = noise(24, 24, 2);
        let (dx, dy) = (2i64, -3i64);
        let moved = GrayImage::from_fn(24, 24, |x, y| img.at_clamped(x as i64 - dx, y as i64 - dy));
        let cfg = FeatureConfig::default();
        let a = extract_features(&moved, &cfg).unwrap();
        let b = shift(
            &extract_features(&img, &cfg).unwrap(),
            Offset::new(dx as i32, dy as i32),
        )
        .unwrap();
        // window radius 3 plus the shift keeps clamping away from this band
        for y in 7..17 {
            for x in 7..17 {
                assert_eq!(a.pixel(x, y), b.pixel(x, y));
            }
        }
    }

    #[test]
    fn rgb_to_luma() {
        let g = GrayImage::from_rgb(1, 2, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((g.data[0] - 1.0).abs() < 1e-6);
        assert!((g.data[1] - 0.299).abs() < 1e-6);
    }
}
