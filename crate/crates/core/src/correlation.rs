//! Baseline correlation volumes (local window and pooled all-pairs) and the
//! closed-form entry counts used to compare them against patchmatch.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{FlowError, Result};
use crate::tensor::{dot, FeatureMap};

/// Correlation of every pixel against a `(2 d_max + 1)^2` window of target
/// displacements.
///
/// Candidates are ordered row-major over the displacement: `dy` outer,
/// `dx` inner, each running from `-d_max` to `d_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalCorrVolume {
    pub height: usize,
    pub width: usize,
    pub d_max: usize,
    pub scores: Vec<f32>,
}

impl LocalCorrVolume {
    /// Candidates per pixel.
    pub fn k(&self) -> usize {
        (2 * self.d_max + 1).pow(2)
    }

    /// Slot of displacement `(dx, dy)` in the per-pixel candidate list.
    pub fn slot(&self, dx: i32, dy: i32) -> usize {
        let side = 2 * self.d_max as i32 + 1;
        ((dy + self.d_max as i32) * side + dx + self.d_max as i32) as usize
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let k = self.k();
        let start = (y * self.width + x) * k;
        &self.scores[start..start + k]
    }
}

/// Computes `F1(x) . F2(x + d)` for every `d` in `[-d_max, d_max]^2`, with
/// edge-clamped lookups into `f2`.
pub fn local_correlation(f1: &FeatureMap, f2: &FeatureMap, d_max: usize) -> Result<LocalCorrVolume> {
    if !f1.same_shape(f2) {
        return Err(FlowError::dim("local correlation: feature shapes differ"));
    }
    let (h, w, _) = f1.shape();
    if d_max >= h.min(w) {
        return Err(FlowError::param(format!(
            "d_max {d_max} must be smaller than min(H, W) = {}",
            h.min(w)
        )));
    }
    let side = 2 * d_max + 1;
    let k = side * side;
    let d = d_max as i64;
    let mut scores = vec![0.0f32; h * w * k];
    scores.par_chunks_mut(w * k).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let src = f1.pixel(x, y);
            let out = &mut row[x * k..(x + 1) * k];
            let mut slot = 0;
            for dy in -d..=d {
                let ty = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in -d..=d {
                    let tx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    out[slot] = dot(src, f2.pixel(tx, ty));
                    slot += 1;
                }
            }
        }
    });
    Ok(LocalCorrVolume {
        height: h,
        width: w,
        d_max,
        scores,
    })
}

/// One level of the all-pairs pyramid. The target side is pooled by
/// `2^level`, so `scores` holds `H * W * target_h * target_w` entries indexed
/// as `((y * W + x) * target_h + ty) * target_w + tx`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCorrLevel {
    pub level: usize,
    pub target_h: usize,
    pub target_w: usize,
    pub scores: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalCorrPyramid {
    pub height: usize,
    pub width: usize,
    pub levels: Vec<GlobalCorrLevel>,
}

impl GlobalCorrPyramid {
    pub fn entry(&self, level: usize, x: usize, y: usize, tx: usize, ty: usize) -> f32 {
        let l = &self.levels[level];
        l.scores[((y * self.width + x) * l.target_h + ty) * l.target_w + tx]
    }

    pub fn total_entries(&self) -> usize {
        self.levels.iter().map(|l| l.scores.len()).sum()
    }
}

/// Builds the all-pairs dot-product volume and `num_levels - 1` pooled
/// levels, each averaging 2x2 target blocks of the level before it.
pub fn global_correlation(f1: &FeatureMap, f2: &FeatureMap, num_levels: usize) -> Result<GlobalCorrPyramid> {
    if !f1.same_shape(f2) {
        return Err(FlowError::dim("global correlation: feature shapes differ"));
    }
    if num_levels == 0 {
        return Err(FlowError::param("global correlation needs at least one level"));
    }
    let (h, w, _) = f1.shape();
    let div = 1usize << (num_levels - 1);
    if h % div != 0 || w % div != 0 {
        return Err(FlowError::param(format!(
            "{w}x{h} is not divisible by 2^{} for {num_levels} levels",
            num_levels - 1
        )));
    }
    let n = h * w;
    let mut level0 = vec![0.0f32; n * n];
    level0.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
        let src = f1.pixel(p % w, p / w);
        for (t, out) in row.iter_mut().enumerate() {
            *out = dot(src, f2.pixel(t % w, t / w));
        }
    });
    let mut levels = vec![GlobalCorrLevel {
        level: 0,
        target_h: h,
        target_w: w,
        scores: level0,
    }];
    for m in 1..num_levels {
        let prev = &levels[m - 1];
        let (ph, pw) = (prev.target_h, prev.target_w);
        let (th, tw) = (ph / 2, pw / 2);
        let mut scores = vec![0.0f32; n * th * tw];
        scores
            .par_chunks_mut(th * tw)
            .zip(prev.scores.par_chunks(ph * pw))
            .for_each(|(out, src)| {
                for ty in 0..th {
                    for tx in 0..tw {
                        let s = |yy: usize, xx: usize| src[yy * pw + xx] as f64;
                        let sum = s(2 * ty, 2 * tx)
                            + s(2 * ty, 2 * tx + 1)
                            + s(2 * ty + 1, 2 * tx)
                            + s(2 * ty + 1, 2 * tx + 1);
                        out[ty * tw + tx] = (sum * 0.25) as f32;
                    }
                }
            });
        levels.push(GlobalCorrLevel {
            level: m,
            target_h: th,
            target_w: tw,
            scores,
        });
    }
    Ok(GlobalCorrPyramid {
        height: h,
        width: w,
        levels,
    })
}

/// Correlation strategy compared by [`cost_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Local,
    Global,
    Patchmatch,
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "local" => Ok(Strategy::Local),
            "global" => Ok(Strategy::Global),
            "patchmatch" | "pm" => Ok(Strategy::Patchmatch),
            other => Err(FlowError::param(format!("unknown correlation strategy '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Global => "global",
            Strategy::Patchmatch => "patchmatch",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of one strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum CostParams {
    Local { d_max: usize },
    Global { levels: usize },
    Patchmatch { seeds: usize, radius: usize },
}

impl CostParams {
    pub fn strategy(&self) -> Strategy {
        match self {
            CostParams::Local { .. } => Strategy::Local,
            CostParams::Global { .. } => Strategy::Global,
            CostParams::Patchmatch { .. } => Strategy::Patchmatch,
        }
    }
}

impl fmt::Display for CostParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostParams::Local { d_max } => write!(f, "d_max={d_max}"),
            CostParams::Global { levels } => write!(f, "levels={levels}"),
            CostParams::Patchmatch { seeds, radius } => write!(f, "n={seeds};r={radius}"),
        }
    }
}

/// Exact correlation-entry count of one strategy at one resolution.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct CostReport {
    pub strategy: Strategy,
    pub height: usize,
    pub width: usize,
    pub params: CostParams,
    pub entries: u64,
}

/// Closed-form entry counts:
///
/// - local: `h w (2 d_max + 1)^2`
/// - global: `(h w)^2` (level 0 of the pyramid)
/// - patchmatch, per full iteration: `h w ((n + 1) + (2 r + 1)^2)`, i.e. the
///   `n` seed candidates plus the current flow, then the full search window.
pub fn cost_report(strategy: Strategy, h: usize, w: usize, params: CostParams) -> Result<CostReport> {
    if h == 0 || w == 0 {
        return Err(FlowError::param("cost report needs positive dimensions"));
    }
    if params.strategy() != strategy {
        return Err(FlowError::param(format!(
            "parameters {params:?} do not belong to strategy {strategy}"
        )));
    }
    let overflow = || FlowError::param("entry count overflows u64");
    let hw = (h as u64).checked_mul(w as u64).ok_or_else(overflow)?;
    let per_pixel = |k: u64| hw.checked_mul(k).ok_or_else(overflow);
    let entries = match params {
        CostParams::Local { d_max } => per_pixel((2 * d_max as u64 + 1).pow(2))?,
        CostParams::Global { levels } => {
            if levels == 0 {
                return Err(FlowError::param("global strategy needs at least one level"));
            }
            hw.checked_mul(hw).ok_or_else(overflow)?
        }
        CostParams::Patchmatch { seeds, radius } => {
            if radius == 0 {
                return Err(FlowError::param("patchmatch radius must be >= 1"));
            }
            per_pixel(seeds as u64 + 1 + (2 * radius as u64 + 1).pow(2))?
        }
    };
    Ok(CostReport {
        strategy,
        height: h,
        width: w,
        params,
        entries,
    })
}

/// Writes a raw volume dump: the ASCII header `CORR <strategy> <h> <w> <k>\n`
/// followed by `h * w * k` little-endian f32 values, row-major.
pub fn write_volume_dump(
    mut out: impl Write,
    strategy: &str,
    h: usize,
    w: usize,
    k: usize,
    scores: &[f32],
) -> Result<()> {
    if scores.len() != h * w * k {
        return Err(FlowError::dim(format!(
            "dump expects {} scores, got {}",
            h * w * k,
            scores.len()
        )));
    }
    if strategy.is_empty() || strategy.contains(char::is_whitespace) {
        return Err(FlowError::param("strategy tag must be a single word"));
    }
    writeln!(out, "CORR {strategy} {h} {w} {k}")?;
    let mut buf = Vec::with_capacity(scores.len() * 4);
    for s in scores {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parsed volume dump.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeDump {
    pub strategy: String,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub scores: Vec<f32>,
}

pub fn read_volume_dump(mut input: impl Read) -> Result<VolumeDump> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FlowError::format("volume dump has no header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| FlowError::format("header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != "CORR" {
        return Err(FlowError::format(format!("bad volume header '{header}'")));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| FlowError::format(format!("bad number '{s}' in volume header")))
    };
    let (h, w, k) = (num(fields[2])?, num(fields[3])?, num(fields[4])?);
    let count = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(|| FlowError::format("volume dimensions overflow"))?;
    let body = &bytes[nl + 1..];
    if body.len() != count * 4 {
        return Err(FlowError::format(format!(
            "volume body has {} bytes, expected {}",
            body.len(),
            count * 4
        )));
    }
    let scores = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(VolumeDump {
        strategy: fields[1].to_string(),
        height: h,
        width: w,
        k,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        FeatureMap::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn local_volume_layout() {
        let f = random_map(5, 5, 3, 0);
        let v = local_correlation(&f, &f, 1).unwrap();
        assert_eq!(v.k(), 9);
        assert_eq!(v.scores.len(), 5 * 5 * 9);
        assert_eq!(v.slot(-1, -1), 0);
        assert_eq!(v.slot(0, 0), 4);
        assert_eq!(v.slot(1, 1), 8);
    }

    #[test]
    fn local_self_match_is_maximal() {
        let f = random_map(6, 6, 8, 1).l2_normalized();
        let v = local_correlation(&f, &f, 2).unwrap();
        let centre = v.slot(0, 0);
        for y in 0..6 {
            for x in 0..6 {
                let px = v.pixel(x, y);
                assert!(px.iter().all(|&s| s <= px[centre] + 1e-6));
            }
        }
    }

    #[test]
    fn local_rejects_bad_inputs() {
        let f = random_map(4, 6, 2, 2);
        assert!(matches!(local_correlation(&f, &f, 4), Err(FlowError::Parameter(_))));
        assert!(local_correlation(&f, &random_map(4, 5, 2, 2), 1).is_err());
    }

    #[test]
    fn global_level_sizes_and_self_similarity() {
        let f = random_map(8, 8, 4, 3).l2_normalized();
        let g = global_correlation(&f, &f, 3).unwrap();
        assert_eq!(g.levels[0].scores.len(), 4096);
        assert_eq!(g.levels[1].scores.len(), 64 * 16);
        assert_eq!(g.levels[2].scores.len(), 64 * 4);
        for y in 0..8 {
            for x in 0..8 {
                assert!((g.entry(0, x, y, x, y) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn global_level_one_averages_blocks() {
        let (f1, f2) = (random_map(8, 8, 3, 4), random_map(8, 8, 3, 5));
        let g = global_correlation(&f1, &f2, 2).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for ty in 0..4 {
                    for tx in 0..4 {
                        // Oracle: mean of direct dot products over the 2x2 target block.
                        let mut sum = 0.0f64;
                        for (py, px) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let t = f2.pixel(2 * tx + px, 2 * ty + py);
                            sum += f1
                                .pixel(x, y)
                                .iter()
                                .zip(t)
                                .map(|(a, b)| (*a as f64) * (*b as f64))
                                .sum::<f64>();
                        }
                        assert!((g.entry(1, x, y, tx, ty) as f64 - sum / 4.0).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn global_rejects_indivisible() {
        let f = random_map(6, 8, 2, 6);
        assert!(matches!(global_correlation(&f, &f, 3), Err(FlowError::Parameter(_))));
    }

    #[test]
    fn cost_report_examples() {
        let r = cost_report(Strategy::Local, 64, 64, CostParams::Local { d_max: 4 }).unwrap();
        assert_eq!(r.entries, 331_776);
        let r = cost_report(Strategy::Global, 64, 64, CostParams::Global { levels: 1 }).unwrap();
        assert_eq!(r.entries, 16_777_216);
        let r = cost_report(
            Strategy::Patchmatch,
            64,
            64,
            CostParams::Patchmatch { seeds: 4, radius: 2 },
        )
        .unwrap();
        assert_eq!(r.entries, 122_880);
        assert!(Strategy::parse("sparse").is_err());
        assert!(cost_report(Strategy::Local, 4, 4, CostParams::Global { levels: 1 }).is_err());
    }

    #[test]
    fn dump_roundtrip_and_header() {
        let f = random_map(3, 4, 2, 7);
        let v = local_correlation(&f, &f, 1).unwrap();
        let mut buf = Vec::new();
        write_volume_dump(&mut buf, "local", 3, 4, 9, &v.scores).unwrap();
        assert!(buf.starts_with(b"CORR local 3 4 9\n"));
        assert_eq!(buf.len(), 17 + 3 * 4 * 9 * 4);
        let d = read_volume_dump(&buf[..]).unwrap();
        assert_eq!(d.scores, v.scores);
        assert_eq!((d.height, d.width, d.k), (3, 4, 9));
        assert!(read_volume_dump(&buf[..buf.len() - 1]).is_err());
        assert!(read_volume_dump(&b"CORX local 1 1 1\n\0\0\0\0"[..]).is_err());
    }
}
