//! Dense 2D tensor primitives: feature maps, flow fields and the shift,
//! warp, correlate, pool and resample kernels the engine is built from.
//!
//! Feature maps are stored row-major with channels interleaved, so the
//! descriptor of pixel `(x, y)` is the contiguous slice
//! `data[(y * width + x) * channels..][..channels]`.
//!
//! Boundary handling is edge-clamp everywhere: shifted or warped lookups
//! that fall outside the map replicate the nearest edge pixel.

use rayon::prelude::*;

use crate::error::{FlowError, Result};

/// Integer 2D offset in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

impl std::ops::Neg for Offset {
    type Output = Offset;

    fn neg(self) -> Self {
        Self::new(-self.dx, -self.dy)
    }
}

#[inline]
fn clamp_index(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

fn check_offset(dp: Offset, height: usize, width: usize) -> Result<()> {
    if dp.dx.unsigned_abs() as usize >= width || dp.dy.unsigned_abs() as usize >= height {
        return Err(FlowError::dim(format!(
            "offset ({}, {}) does not fit a {}x{} map",
            dp.dx, dp.dy, width, height
        )));
    }
    Ok(())
}

/// Dense H x W x C descriptor tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(FlowError::dim("feature map dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(FlowError::dim(format!(
                "expected {} values for {}x{}x{}, got {}",
                height * width * channels,
                height,
                width,
                channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::param("feature values must be finite"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(height > 0 && width > 0 && channels > 0);
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a map by evaluating `f(x, y, c)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(height, width, channels, data).expect("from_fn produced an invalid map")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Descriptor of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    /// Size of the tensor payload in bytes.
    pub fn bytes(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    /// L2-normalizes every pixel descriptor. All-zero descriptors stay zero.
    pub fn l2_normalized(&self) -> FeatureMap {
        let c = self.channels;
        let mut data = self.data.clone();
        data.par_chunks_mut(c).for_each(|px| {
            let norm = px.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in px.iter_mut() {
                    *v = (*v as f64 / norm) as f32;
                }
            }
        });
        FeatureMap { data, ..*self }
    }

    /// Samples the map bilinearly at real coordinates `(sx, sy)` into `out`.
    ///
    /// Coordinates are clamped to `[0, W-1] x [0, H-1]` before interpolation.
    #[inline]
    pub fn sample_bilinear(&self, sx: f32, sy: f32, out: &mut [f32]) {
        let (x0, x1, fx) = bilinear_axis(sx, self.width);
        let (y0, y1, fy) = bilinear_axis(sy, self.height);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for (c, o) in out.iter_mut().enumerate() {
            *o = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
        }
    }
}

/// Splits a clamped sample coordinate into the two neighbouring indices and
/// the fractional weight of the second one.
#[inline]
fn bilinear_axis(s: f32, len: usize) -> (usize, usize, f32) {
    let max = (len - 1) as f32;
    let s = s.clamp(0.0, max);
    let i0 = s.floor();
    let frac = s - i0;
    let i0 = i0 as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, frac)
}

/// Dense H x W displacement field with a per-pixel validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FlowError::dim("flow dimensions must be positive"));
        }
        let n = height * width;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(FlowError::dim(format!(
                "flow components must hold {n} entries (u={}, v={}, valid={})",
                u.len(),
                v.len(),
                valid.len()
            )));
        }
        if u.iter()
            .zip(&v)
            .zip(&valid)
            .any(|((a, b), &ok)| ok && !(a.is_finite() && b.is_finite()))
        {
            return Err(FlowError::param("valid flow vectors must be finite"));
        }
        Ok(Self {
            height,
            width,
            u,
            v,
            valid,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        assert!(height > 0 && width > 0);
        let n = height * width;
        Self {
            height,
            width,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    /// Builds an all-valid field from `f(x, y) -> (u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let n = height * width;
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(height, width, u, v, vec![true; n]).expect("from_fn produced an invalid flow")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    pub fn same_dims(&self, h: usize, w: usize) -> bool {
        self.height == h && self.width == w
    }

    /// Largest absolute component over valid pixels.
    pub fn max_abs_component(&self) -> f32 {
        self.u
            .iter()
            .zip(&self.v)
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|((a, b), _)| a.abs().max(b.abs()))
            .fold(0.0, f32::max)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [f32], &mut [f32], &mut [bool]) {
        (&mut self.u, &mut self.v, &mut self.valid)
    }

    pub fn into_parts(self) -> (Vec<f32>, Vec<f32>, Vec<bool>) {
        (self.u, self.v, self.valid)
    }
}

/// Per-pixel scalar map, e.g. a correlation score plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ScoreMap {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Ordered set of integer seed offsets used by propagation.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SeedSet {
    offsets: Vec<Offset>,
}

impl SeedSet {
    pub fn new(offsets: Vec<Offset>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(FlowError::param("seed set must not be empty"));
        }
        for (i, o) in offsets.iter().enumerate() {
            if o.dx == 0 && o.dy == 0 {
                return Err(FlowError::param("seed offset (0, 0) is implicit and not allowed"));
            }
            if offsets[..i].contains(o) {
                return Err(FlowError::param(format!("duplicate seed offset ({}, {})", o.dx, o.dy)));
            }
        }
        Ok(Self { offsets })
    }

    /// The four diagonal neighbours: top-left, top-right, bottom-left, bottom-right.
    pub fn diag4() -> Self {
        Self {
            offsets: vec![
                Offset::new(-1, -1),
                Offset::new(1, -1),
                Offset::new(-1, 1),
                Offset::new(1, 1),
            ],
        }
    }

    pub fn plus4() -> Self {
        Self {
            offsets: vec![
                Offset::new(0, -1),
                Offset::new(-1, 0),
                Offset::new(1, 0),
                Offset::new(0, 1),
            ],
        }
    }

    pub fn ring8() -> Self {
        let mut offsets = Vec::with_capacity(8);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if dx != 0 || dy != 0 {
                    offsets.push(Offset::new(dx, dy));
                }
            }
        }
        Self { offsets }
    }

    /// Parses `diag4`, `plus4` or `8`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "diag4" => Ok(Self::diag4()),
            "plus4" => Ok(Self::plus4()),
            "8" | "ring8" => Ok(Self::ring8()),
            other => Err(FlowError::param(format!("unknown seed set '{other}'"))),
        }
    }

    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn index_of(&self, o: Offset) -> Option<usize> {
        self.offsets.iter().position(|&p| p == o)
    }

    /// True when every offset's negation is also in the set.
    pub fn is_symmetric(&self) -> bool {
        self.offsets.iter().all(|o| self.offsets.contains(&-*o))
    }
}

impl Default for SeedSet {
    fn default() -> Self {
        Self::diag4()
    }
}

/// Types that can be translated by an integer offset with edge clamping.
pub trait Shift: Sized {
    /// `out(x, y) = in(x - dp.dx, y - dp.dy)`, clamped at the edges.
    fn shift(&self, dp: Offset) -> Result<Self>;
}

impl Shift for FeatureMap {
    fn shift(&self, dp: Offset) -> Result<Self> {
        check_offset(dp, self.height, self.width)?;
        let (h, w, c) = self.shape();
        let mut data = vec![0.0f32; self.data.len()];
        data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
            let sy = clamp_index(y as i64 - dp.dy as i64, h);
            for x in 0..w {
                let sx = clamp_index(x as i64 - dp.dx as i64, w);
                row[x * c..(x + 1) * c].copy_from_slice(self.pixel(sx, sy));
            }
        });
        Ok(FeatureMap { data, ..*self })
    }
}

impl Shift for FlowField {
    fn shift(&self, dp: Offset) -> Result<Self> {
        check_offset(dp, self.height, self.width)?;
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
        for y in 0..h {
            let sy = clamp_index(y as i64 - dp.dy as i64, h);
            for x in 0..w {
                let sx = clamp_index(x as i64 - dp.dx as i64, w);
                let (i, s) = (y * w + x, sy * w + sx);
                u[i] = self.u[s];
                v[i] = self.v[s];
                valid[i] = self.valid[s];
            }
        }
        Ok(FlowField {
            height: h,
            width: w,
            u,
            v,
            valid,
        })
    }
}

/// Shifts a feature map or flow field by `dp` with edge clamping.
pub fn shift<T: Shift>(input: &T, dp: Offset) -> Result<T> {
    input.shift(dp)
}

/// Samples `f` at `(x + u, y + v)` for every pixel, bilinearly.
pub fn warp_bilinear(f: &FeatureMap, flow: &FlowField) -> Result<FeatureMap> {
    if !flow.same_dims(f.height, f.width) {
        return Err(FlowError::dim(format!(
            "warp: features are {}x{}, flow is {}x{}",
            f.width, f.height, flow.width, flow.height
        )));
    }
    let (_, w, c) = f.shape();
    let mut data = vec![0.0f32; f.data.len()];
    data.par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (u, v) = flow.at(x, y);
            f.sample_bilinear(x as f32 + u, y as f32 + v, &mut row[x * c..(x + 1) * c]);
        }
    });
    Ok(FeatureMap { data, ..*f })
}

/// Channel dot product of two equally sized slices, accumulated in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
}

/// Per-pixel channel dot product of two feature maps.
///
/// Inputs are used as given; normalize them with
/// [`FeatureMap::l2_normalized`] first for cosine similarity.
pub fn correlate(a: &FeatureMap, b: &FeatureMap) -> Result<ScoreMap> {
    if !a.same_shape(b) {
        return Err(FlowError::dim(format!(
            "correlate: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let c = a.channels;
    let data = a
        .data
        .par_chunks(c)
        .zip(b.data.par_chunks(c))
        .map(|(p, q)| dot(p, q))
        .collect();
    Ok(ScoreMap {
        height: a.height,
        width: a.width,
        data,
    })
}

/// Non-overlapping `factor x factor` mean pooling per channel.
///
/// Dimensions must be divisible by `factor`; see [`pad_to_multiple`].
pub fn average_pool(f: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor < 2 {
        return Err(FlowError::param(format!("pooling factor must be >= 2, got {factor}")));
    }
    let (h, w, c) = f.shape();
    if h % factor != 0 || w % factor != 0 {
        return Err(FlowError::dim(format!(
            "{w}x{h} map is not divisible by pooling factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut data = vec![0.0f32; oh * ow * c];
    data.par_chunks_mut(ow * c).enumerate().for_each(|(oy, row)| {
        let mut acc = vec![0.0f64; c];
        for ox in 0..ow {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for y in oy * factor..(oy + 1) * factor {
                for x in ox * factor..(ox + 1) * factor {
                    for (a, &v) in acc.iter_mut().zip(f.pixel(x, y)) {
                        *a += v as f64;
                    }
                }
            }
            for (o, a) in row[ox * c..(ox + 1) * c].iter_mut().zip(&acc) {
                *o = (a * norm) as f32;
            }
        }
    });
    Ok(FeatureMap {
        height: oh,
        width: ow,
        channels: c,
        data,
    })
}

/// Smallest multiple of `factor` that is `>= n`.
pub fn round_up(n: usize, factor: usize) -> usize {
    n.div_ceil(factor) * factor
}

/// Pads a feature map on the bottom/right edges by edge replication so that
/// both dimensions become multiples of `factor`.
pub fn pad_to_multiple(f: &FeatureMap, factor: usize) -> FeatureMap {
    let (h, w, c) = f.shape();
    let (ph, pw) = (round_up(h, factor.max(1)), round_up(w, factor.max(1)));
    if (ph, pw) == (h, w) {
        return f.clone();
    }
    FeatureMap::from_fn(ph, pw, c, |x, y, ch| f.get(x.min(w - 1), y.min(h - 1), ch))
}

/// Edge-replicating pad of a flow field to `height x width` (bottom/right).
pub fn pad_flow(flow: &FlowField, height: usize, width: usize) -> FlowField {
    let (h, w) = (flow.height, flow.width);
    let n = height * width;
    let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
    for y in 0..height {
        for x in 0..width {
            let s = y.min(h - 1) * w + x.min(w - 1);
            let i = y * width + x;
            u[i] = flow.u[s];
            v[i] = flow.v[s];
            valid[i] = flow.valid[s];
        }
    }
    FlowField {
        height,
        width,
        u,
        v,
        valid,
    }
}

/// Top-left `height x width` window of a flow field.
pub fn crop_flow(flow: &FlowField, height: usize, width: usize) -> Result<FlowField> {
    if height > flow.height || width > flow.width || height == 0 || width == 0 {
        return Err(FlowError::dim("crop window exceeds the flow field"));
    }
    let n = height * width;
    let (mut u, mut v, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in 0..height {
        let s = y * flow.width;
        u.extend_from_slice(&flow.u[s..s + width]);
        v.extend_from_slice(&flow.v[s..s + width]);
        valid.extend_from_slice(&flow.valid[s..s + width]);
    }
    Ok(FlowField {
        height,
        width,
        u,
        v,
        valid,
    })
}

/// Bilinear flow upsampling by an integer factor.
///
/// Sampling uses pixel-centre alignment: output pixel `X` reads source
/// coordinate `(X + 0.5) / factor - 0.5`, clamped to the source extent (edge
/// replication). Displacements are multiplied by `factor`. The validity mask
/// is upsampled by nearest neighbour.
pub fn upsample_flow(flow: &FlowField, factor: usize) -> Result<FlowField> {
    if factor < 2 {
        return Err(FlowError::param(format!(
            "upsampling factor must be >= 2, got {factor}"
        )));
    }
    let (h, w) = (flow.height, flow.width);
    let (oh, ow) = (h * factor, w * factor);
    let k = factor as f32;
    let axis = |o: usize, len: usize| bilinear_axis((o as f32 + 0.5) / k - 0.5, len);
    let xs: Vec<_> = (0..ow).map(|x| axis(x, w)).collect();
    let n = oh * ow;
    let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
    for oy in 0..oh {
        let (y0, y1, fy) = axis(oy, h);
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let lerp = |c: &[f32]| {
                let (a, b) = (c[y0 * w + x0], c[y0 * w + x1]);
                let top = a + (b - a) * fx;
                let (a, b) = (c[y1 * w + x0], c[y1 * w + x1]);
                let bot = a + (b - a) * fx;
                (top + (bot - top) * fy) * k
            };
            let i = oy * ow + ox;
            u[i] = lerp(&flow.u);
            v[i] = lerp(&flow.v);
            valid[i] = flow.valid[(oy / factor) * w + ox / factor];
        }
    }
    Ok(FlowField {
        height: oh,
        width: ow,
        u,
        v,
        valid,
    })
}

/// Block-mean flow downsampling by an integer factor, displacements divided
/// by `factor`. Only valid pixels contribute; a block with no valid pixel is
/// zero and invalid.
pub fn downsample_flow(flow: &FlowField, factor: usize) -> Result<FlowField> {
    if factor < 2 {
        return Err(FlowError::param(format!(
            "downsampling factor must be >= 2, got {factor}"
        )));
    }
    let (h, w) = (flow.height, flow.width);
    if h % factor != 0 || w % factor != 0 {
        return Err(FlowError::dim(format!("{w}x{h} flow is not divisible by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let n = oh * ow;
    let (mut u, mut v, mut valid) = (vec![0.0; n], vec![0.0; n], vec![false; n]);
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut su, mut sv, mut cnt) = (0.0f64, 0.0f64, 0usize);
            for y in oy * factor..(oy + 1) * factor {
                for x in ox * factor..(ox + 1) * factor {
                    let s = y * w + x;
                    if flow.valid[s] {
                        su += flow.u[s] as f64;
                        sv += flow.v[s] as f64;
                        cnt += 1;
                    }
                }
            }
            if cnt > 0 {
                let i = oy * ow + ox;
                let d = (cnt * factor) as f64;
                u[i] = (su / d) as f32;
                v[i] = (sv / d) as f32;
                valid[i] = true;
            }
        }
    }
    Ok(FlowField {
        height: oh,
        width: ow,
        u,
        v,
        valid,
    })
}

/// Component-wise 3x3 median filter with edge clamping. Validity is kept.
pub fn median3x3(flow: &FlowField) -> FlowField {
    let (h, w) = (flow.height, flow.width);
    let filter = |c: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0; h * w];
        let mut win = [0.0f32; 9];
        for y in 0..h {
            for x in 0..w {
                let mut k = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sy = clamp_index(y as i64 + dy, h);
                        let sx = clamp_index(x as i64 + dx, w);
                        win[k] = c[sy * w + sx];
                        k += 1;
                    }
                }
                win.sort_by(|a, b| a.total_cmp(b));
                out[y * w + x] = win[4];
            }
        }
        out
    };
    FlowField {
        height: h,
        width: w,
        u: filter(&flow.u),
        v: filter(&flow.v),
        valid: flow.valid.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, |x, y, ch| (y * w * c + x * c + ch) as f32)
    }

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shift_zero_is_identity() {
        let f = random_map(5, 7, 3, 1);
        assert_eq!(shift(&f, Offset::new(0, 0)).unwrap(), f);
    }

    #[test]
    fn shift_right_by_one_clamps_left_column() {
        let f = FeatureMap::new(3, 3, 1, (1..=9).map(|v| v as f32).collect()).unwrap();
        let s = shift(&f, Offset::new(1, 0)).unwrap();
        assert_eq!(s.data(), &[1., 1., 2., 4., 4., 5., 7., 7., 8.]);
    }

    #[test]
    fn shift_diagonal_moves_content_to_bottom_right() {
        let f = ramp(3, 3, 1);
        let s = shift(&f, Offset::new(1, 1)).unwrap();
        assert_eq!(s.get(1, 1, 0), f.get(0, 0, 0));
    }

    #[test]
    fn shift_rejects_oversized_offset() {
        let f = ramp(3, 4, 1);
        assert!(matches!(shift(&f, Offset::new(4, 0)), Err(FlowError::Dimension(_))));
        assert!(matches!(shift(&f, Offset::new(0, -3)), Err(FlowError::Dimension(_))));
        assert!(shift(&f, Offset::new(3, 2)).is_ok());
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let f = random_map(6, 5, 4, 2);
        let w = warp_bilinear(&f, &FlowField::zeros(6, 5)).unwrap();
        assert_eq!(w, f);
    }

    #[test]
    fn warp_half_pixel_interpolates() {
        let f = FeatureMap::new(1, 4, 1, vec![0., 2., 4., 6.]).unwrap();
        let w = warp_bilinear(&f, &FlowField::constant(1, 4, 0.5, 0.0)).unwrap();
        assert_eq!(&w.data()[..3], &[1., 3., 5.]);
        // last sample clamps to the border
        assert_eq!(w.data()[3], 6.0);
    }

    #[test]
    fn warp_rejects_mismatched_flow() {
        let f = ramp(4, 4, 1);
        assert!(matches!(
            warp_bilinear(&f, &FlowField::zeros(4, 5)),
            Err(FlowError::Dimension(_))
        ));
    }

    #[test]
    fn correlate_examples() {
        let a = FeatureMap::new(1, 1, 3, vec![1., 2., 3.]).unwrap();
        let b = FeatureMap::new(1, 1, 3, vec![4., 5., 6.]).unwrap();
        assert_eq!(correlate(&a, &b).unwrap().data, vec![32.0]);

        let e1 = FeatureMap::new(1, 1, 2, vec![1., 0.]).unwrap();
        let e2 = FeatureMap::new(1, 1, 2, vec![0., 1.]).unwrap();
        assert_eq!(correlate(&e1, &e2).unwrap().data, vec![0.0]);

        let f = random_map(4, 4, 5, 3).l2_normalized();
        for s in correlate(&f, &f).unwrap().data {
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert!(correlate(&a, &e1).is_err());
    }

    #[test]
    fn l2_normalize_keeps_zero_vectors() {
        let f = FeatureMap::new(1, 2, 2, vec![0., 0., 3., 4.]).unwrap().l2_normalized();
        assert_eq!(f.data(), &[0., 0., 0.6, 0.8]);
    }

    #[test]
    fn average_pool_examples() {
        let f = FeatureMap::new(2, 2, 1, vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(average_pool(&f, 2).unwrap().data(), &[2.5]);

        let c = FeatureMap::filled(8, 4, 2, 0.75);
        let p = average_pool(&c, 2).unwrap();
        assert_eq!(p.shape(), (4, 2, 2));
        assert!(p.data().iter().all(|&v| v == 0.75));

        assert!(matches!(average_pool(&f, 1), Err(FlowError::Parameter(_))));
        assert!(matches!(average_pool(&ramp(3, 4, 1), 2), Err(FlowError::Dimension(_))));
    }

    #[test]
    fn pool_composition_on_block_constant_input() {
        let f = FeatureMap::from_fn(8, 8, 1, |x, y, _| ((x / 4) * 10 + y / 4) as f32);
        let twice = average_pool(&average_pool(&f, 2).unwrap(), 2).unwrap();
        assert_eq!(twice, average_pool(&f, 4).unwrap());
    }

    #[test]
    fn pad_replicates_edges() {
        let f = ramp(3, 3, 1);
        let p = pad_to_multiple(&f, 2);
        assert_eq!(p.shape(), (4, 4, 1));
        assert_eq!(p.get(3, 3, 0), f.get(2, 2, 0));
        assert_eq!(p.get(3, 0, 0), f.get(2, 0, 0));
    }

    #[test]
    fn upsample_examples() {
        let c = upsample_flow(&FlowField::constant(3, 2, 3.0, -1.0), 4).unwrap();
        assert_eq!((c.height(), c.width()), (12, 8));
        assert!(c.u().iter().all(|&u| u == 12.0) && c.v().iter().all(|&v| v == -4.0));

        let z = upsample_flow(&FlowField::zeros(2, 2), 2).unwrap();
        assert!(z.u().iter().chain(z.v()).all(|&v| v == 0.0));

        // Oracle for pixel-centre sampling: source coords -0.25, 0.25, 0.75, 1.25
        // clamp to 0, 0.25, 0.75, 1 -> u = 1, 1.5, 2.5, 3, times 2.
        let f = FlowField::new(1, 2, vec![1., 3.], vec![0., 0.], vec![true, true]).unwrap();
        let up = upsample_flow(&f, 2).unwrap();
        assert_eq!(up.u(), &[2., 3., 5., 6., 2., 3., 5., 6.]);
        assert!(upsample_flow(&f, 1).is_err());
    }

    #[test]
    fn downsample_divides_displacement() {
        let f = FlowField::constant(8, 8, 8.0, -4.0);
        let d = downsample_flow(&f, 4).unwrap();
        assert_eq!((d.height(), d.width()), (2, 2));
        assert!(d.u().iter().all(|&u| u == 2.0) && d.v().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn median_removes_isolated_outlier() {
        let mut f = FlowField::constant(5, 5, 1.0, 2.0);
        f.set(2, 2, 50.0, -50.0);
        let m = median3x3(&f);
        assert_eq!(m.at(2, 2), (1.0, 2.0));
    }

    #[test]
    fn seed_set_validation() {
        assert!(SeedSet::new(vec![Offset::new(0, 0)]).is_err());
        assert!(SeedSet::new(vec![Offset::new(1, 0), Offset::new(1, 0)]).is_err());
        assert_eq!(SeedSet::default().len(), 4);
        assert!(SeedSet::diag4().is_symmetric());
        assert!(SeedSet::ring8().is_symmetric() && SeedSet::ring8().len() == 8);
        assert!(!SeedSet::new(vec![Offset::new(1, 0)]).unwrap().is_symmetric());
        assert!(SeedSet::from_name("hex").is_err());
    }

    proptest! {
        #[test]
        fn shift_unshift_identity_on_interior(seed in 0u64..1000, dx in -3i32..=3, dy in -3i32..=3) {
            let f = random_map(9, 10, 2, seed);
            let dp = Offset::new(dx, dy);
            let back = shift(&shift(&f, dp).unwrap(), -dp).unwrap();
            let (ax, ay) = (dx.unsigned_abs() as usize, dy.unsigned_abs() as usize);
            for y in ay..9 - ay {
                for x in ax..10 - ax {
                    prop_assert_eq!(back.pixel(x, y), f.pixel(x, y));
                }
            }
        }

        #[test]
        fn integer_warp_equals_shift_on_interior(seed in 0u64..1000, dx in -3i32..=3, dy in -3i32..=3) {
            let f = random_map(9, 10, 3, seed);
            let warped = warp_bilinear(&f, &FlowField::constant(9, 10, dx as f32, dy as f32)).unwrap();
            let shifted = shift(&f, Offset::new(-dx, -dy)).unwrap();
            let (ax, ay) = (dx.unsigned_abs() as usize, dy.unsigned_abs() as usize);
            for y in ay..9 - ay {
                for x in ax..10 - ax {
                    prop_assert_eq!(warped.pixel(x, y), shifted.pixel(x, y));
                }
            }
        }

        #[test]
        fn correlate_is_symmetric(seed in 0u64..1000) {
            let a = random_map(4, 5, 6, seed);
            let b = random_map(4, 5, 6, seed + 7);
            prop_assert_eq!(correlate(&a, &b).unwrap(), correlate(&b, &a).unwrap());
        }

        #[test]
        fn average_pool_preserves_channel_mean(seed in 0u64..1000, factor in 2usize..=4) {
            let f = random_map(4 * factor, 2 * factor, 3, seed);
            let p = average_pool(&f, factor).unwrap();
            for ch in 0..3 {
                let mean = |m: &FeatureMap| {
                    let vals: Vec<f64> = m.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                let (a, b) = (mean(&f), mean(&p));
                prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }

        #[test]
        fn upsample_constant_scales(u in -20.0f32..20.0, v in -20.0f32..20.0, k in 2usize..=5) {
            let up = upsample_flow(&FlowField::constant(3, 4, u, v), k).unwrap();
            let (eu, ev) = (u * k as f32, v * k as f32);
            for (&a, &b) in up.u().iter().zip(up.v()) {
                prop_assert!((a - eu).abs() <= 1e-4 * eu.abs().max(1.0));
                prop_assert!((b - ev).abs() <= 1e-4 * ev.abs().max(1.0));
            }
        }
    }
}
