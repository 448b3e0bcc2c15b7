//! Coarse-to-fine driver.
//!
//! Features are extracted once at full resolution and average-pooled down to
//! each level. The coarsest level starts from a random flow (or a provided
//! initial flow, downscaled); every level runs [`pm_iterate`] and hands its
//! flow to the next level through [`upsample_flow`].

use std::time::Instant;

use crate::config::SearchMode;
pub use crate::config::{EngineConfig, Level, PyramidSchedule};
use crate::error::{FlowError, Result};
use crate::features::{extract_features, GrayImage};
use crate::metrics;
use crate::patchmatch::{pm_iterate, random_init, OpCounters};
use crate::rng;
use crate::tensor::{
    average_pool, crop_flow, downsample_flow, pad_flow, round_up, upsample_flow, FeatureMap, FlowField,
};

/// What happened on one pyramid level.
#[derive(Clone, Debug)]
pub struct LevelReport {
    pub factor: usize,
    pub iterations: usize,
    pub height: usize,
    pub width: usize,
    pub counters: OpCounters,
    /// Flow after every half-round, at this level's resolution.
    pub trace: Vec<FlowField>,
    /// Per-pixel best correlation after every half-round.
    pub score_trace: Vec<Vec<f32>>,
    pub millis: f64,
    /// Bytes of source and target features held at this level.
    pub feature_bytes: usize,
}

impl LevelReport {
    pub fn final_flow(&self) -> &FlowField {
        self.trace.last().expect("levels run at least one iteration")
    }

    /// Endpoint error of this level's final flow against a full-resolution
    /// ground truth, after upsampling the level flow by its factor and
    /// cropping to the ground-truth size.
    pub fn epe_against(&self, gt: &FlowField) -> Result<f64> {
        let full = to_full_resolution(self.final_flow(), self.factor)?;
        metrics::epe(&crop_flow(&full, gt.height(), gt.width())?, gt)
    }

    /// True when no pixel's best score decreased between consecutive
    /// half-rounds.
    pub fn scores_monotone(&self) -> bool {
        self.score_trace
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b >= a))
    }
}

#[derive(Clone, Debug)]
pub struct PyramidDiagnostics {
    pub schedule: PyramidSchedule,
    pub levels: Vec<LevelReport>,
    /// Padded working size.
    pub padded: (usize, usize),
    pub millis: f64,
}

impl PyramidDiagnostics {
    pub fn total_counters(&self) -> OpCounters {
        let mut total = OpCounters::default();
        for l in &self.levels {
            total.merge(&l.counters);
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct PyramidOutput {
    pub flow: FlowField,
    pub diagnostics: PyramidDiagnostics,
}

fn to_full_resolution(flow: &FlowField, factor: usize) -> Result<FlowField> {
    if factor == 1 {
        Ok(flow.clone())
    } else {
        upsample_flow(flow, factor)
    }
}

/// Estimates the flow from `img1` to `img2`.
///
/// Images are edge-padded to a multiple of the coarsest factor and the result
/// is cropped back. `init`, when given, must have the image size; it is
/// downscaled to the coarsest level (values divided by the factor).
/// Otherwise the coarsest level starts from [`random_init`] within
/// `cfg.init_range`, rounded to whole pixels. In stereo mode the vertical component starts at zero.
pub fn run_pyramid(
    img1: &GrayImage,
    img2: &GrayImage,
    cfg: &EngineConfig,
    init: Option<&FlowField>,
) -> Result<PyramidOutput> {
    run_pyramid_with_schedule(img1, img2, cfg, &cfg.schedule, init)
}

/// [`run_pyramid`] with an explicit schedule, e.g. from [`adaptive_levels`].
pub fn run_pyramid_with_schedule(
    img1: &GrayImage,
    img2: &GrayImage,
    cfg: &EngineConfig,
    schedule: &PyramidSchedule,
    init: Option<&FlowField>,
) -> Result<PyramidOutput> {
    cfg.validate()?;
    if (img1.height, img1.width) != (img2.height, img2.width) {
        return Err(FlowError::dim(format!(
            "frames differ in size: {}x{} vs {}x{}",
            img1.width, img1.height, img2.width, img2.height
        )));
    }
    if let Some(f) = init {
        if !f.same_dims(img1.height, img1.width) {
            return Err(FlowError::dim("initial flow does not match the image size"));
        }
    }
    let start = Instant::now();
    let (h, w) = (img1.height, img1.width);
    let coarse = schedule.coarsest_factor();
    let (ph, pw) = (round_up(h, coarse), round_up(w, coarse));
    let (p1, p2) = (img1.padded(ph, pw), img2.padded(ph, pw));
    let full1 = extract_features(&p1, &cfg.features)?;
    let full2 = extract_features(&p2, &cfg.features)?;

    let mut flow: Option<FlowField> = None;
    let mut prev_factor = 0;
    let mut levels = Vec::with_capacity(schedule.levels().len());
    for (li, level) in schedule.levels().iter().enumerate() {
        let t0 = Instant::now();
        let (f1, f2) = level_features(&full1, &full2, level.factor, cfg.normalize)?;
        let (lh, lw) = (f1.height(), f1.width());
        let start_flow = match flow.take() {
            Some(prev) => upsample_flow(&prev, prev_factor / level.factor)?,
            None => initial_flow(init, cfg, level.factor, ph, pw, lh, lw)?,
        };
        let level_cfg = EngineConfig {
            iterations: level.iterations,
            rng_seed: rng::derive(cfg.rng_seed, li as u64 + 1),
            ..cfg.clone()
        };
        let run = pm_iterate(&f1, &f2, start_flow, &level_cfg)?;
        flow = Some(run.state.flow.clone());
        prev_factor = level.factor;
        levels.push(LevelReport {
            factor: level.factor,
            iterations: level.iterations,
            height: lh,
            width: lw,
            counters: run.counters,
            trace: run.trace,
            score_trace: run.score_trace,
            millis: t0.elapsed().as_secs_f64() * 1e3,
            feature_bytes: f1.bytes() + f2.bytes(),
        });
    }
    let last = flow.expect("schedule has at least one level");
    let full = to_full_resolution(&last, prev_factor)?;
    let flow = crop_flow(&full, h, w)?;
    Ok(PyramidOutput {
        flow,
        diagnostics: PyramidDiagnostics {
            schedule: schedule.clone(),
            levels,
            padded: (ph, pw),
            millis: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

fn level_features(
    full1: &FeatureMap,
    full2: &FeatureMap,
    factor: usize,
    normalize: bool,
) -> Result<(FeatureMap, FeatureMap)> {
    let (mut f1, mut f2) = if factor == 1 {
        (full1.clone(), full2.clone())
    } else {
        (average_pool(full1, factor)?, average_pool(full2, factor)?)
    };
    if normalize {
        f1 = f1.l2_normalized();
        f2 = f2.l2_normalized();
    }
    Ok((f1, f2))
}

fn initial_flow(
    init: Option<&FlowField>,
    cfg: &EngineConfig,
    factor: usize,
    ph: usize,
    pw: usize,
    lh: usize,
    lw: usize,
) -> Result<FlowField> {
    let flow = match init {
        Some(given) => {
            let padded = pad_flow(given, ph, pw);
            let small = if factor == 1 {
                padded
            } else {
                downsample_flow(&padded, factor)?
            };
            // invalid init pixels (e.g. warm-start holes) start at zero
            let (u, v, valid) = small.into_parts();
            let u = u.iter().zip(&valid).map(|(&a, &ok)| if ok { a } else { 0.0 }).collect();
            let v = v.iter().zip(&valid).map(|(&b, &ok)| if ok { b } else { 0.0 }).collect();
            FlowField::new(lh, lw, u, v, vec![true; lh * lw])?
        }
        // snapped to whole pixels: local search moves in integer steps and
        // could never remove a random fractional part
        None => {
            let (u, v, valid) = random_init(lh, lw, cfg.init_range, rng::derive(cfg.rng_seed, 0))?.into_parts();
            let snap = |c: Vec<f32>| c.into_iter().map(f32::round).collect();
            FlowField::new(lh, lw, snap(u), snap(v), valid)?
        }
    };
    if cfg.search == SearchMode::Stereo1d {
        let (u, _, valid) = flow.into_parts();
        return FlowField::new(lh, lw, u, vec![0.0; lh * lw], valid);
    }
    Ok(flow)
}

/// Picks the number of pyramid levels from the largest initial displacement.
///
/// With `M` the largest `|u|` or `|v|` over valid pixels and
/// `reach = radius * iterations`, the smallest `k >= 0` with
/// `M / 2^k <= reach` is chosen and the schedule becomes
/// `finest * 2^k, ..., finest * 2, finest`, each level running
/// `iterations` rounds. The reach rule is a heuristic bound on how far local
/// search can walk in one level.
pub fn adaptive_levels(
    init_flow: &FlowField,
    finest_factor: usize,
    radius: usize,
    iterations: usize,
) -> Result<PyramidSchedule> {
    if finest_factor == 0 || radius == 0 || iterations == 0 {
        return Err(FlowError::param(
            "adaptive levels need positive factor, radius and iterations",
        ));
    }
    let reach = (radius * iterations) as f64;
    // M is measured in pixels of the finest level
    let m = init_flow.max_abs_component() as f64 / finest_factor as f64;
    let mut k = 0u32;
    while m / 2f64.powi(k as i32) > reach {
        k += 1;
    }
    let factors: Vec<usize> = (0..=k).rev().map(|i| finest_factor << i).collect();
    PyramidSchedule::from_factors(&factors, iterations)
}

/// Forward-splats a previous frame's flow into the current frame.
///
/// Each valid source pixel writes its flow to `round(x + u, y + v)`. When two
/// sources land on the same pixel the larger magnitude wins (the earlier one
/// in raster order on exact ties). Pixels nobody writes to are zero and
/// invalid.
pub fn warm_start(prev_flow: &FlowField) -> FlowField {
    let (h, w) = (prev_flow.height(), prev_flow.width());
    let n = h * w;
    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            if !prev_flow.is_valid(x, y) {
                continue;
            }
            let (fu, fv) = prev_flow.at(x, y);
            let tx = (x as f32 + fu).round();
            let ty = (y as f32 + fv).round();
            if tx < 0.0 || ty < 0.0 || tx >= w as f32 || ty >= h as f32 {
                continue;
            }
            let t = ty as usize * w + tx as usize;
            if !valid[t] || fu.hypot(fv) > u[t].hypot(v[t]) {
                u[t] = fu;
                v[t] = fv;
                valid[t] = true;
            }
        }
    }
    FlowField::new(h, w, u, v, valid).expect("splat keeps finite values")
}
