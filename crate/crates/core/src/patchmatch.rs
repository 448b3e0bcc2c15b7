//! Single-scale patchmatch engine.
//!
//! Each iteration scores a stack of flow candidates per pixel and keeps the
//! best one (winner-take-all, lowest index on ties). Two stacks are built per
//! iteration: seed candidates from propagation, then the local search
//! window around the updated flow.
//!
//! Seed candidates come in three flavours (see [`PropagationMode`]):
//!
//! - propagate: for each seed `dp`, shift the flow by `dp` and warp the target
//!   with it, so pixel `x` tries the flow of pixel `x - dp`.
//! - inverse exact: the target is shifted once per seed up front
//!   ([`inverse_prop_init`]); each iteration warps those stacks with the
//!   unshifted flow and shifts the result back. Identical scores on interior
//!   pixels, but the per-iteration flow shifts disappear.
//! - inverse approximate: as above without the shift back. Pixel `x` is then
//!   scored against the target at `x + flow(x) + dp`, so the slot records
//!   that flow. Under winner-take-all this is a sparse perturbation of each
//!   pixel's own flow rather than a hand-off between neighbours.
//!
//! All updates inside a half-round are synchronous, so every kernel is a pure
//! per-pixel map.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EngineConfig, PropagationMode, SearchMode};
use crate::error::{FlowError, Result};
use crate::rng;
use crate::tensor::{
    correlate, dot, median3x3, warp_bilinear, FeatureMap, FlowField, Offset, ScoreMap, SeedSet, Shift,
};

/// Instrumented operation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpCounters {
    /// Shifts of a flow field by a seed offset.
    pub flow_shifts: u64,
    /// Shifts of a target feature map (stack construction or shift-back).
    pub feature_shifts: u64,
    /// Warps of one seed's target (per-seed granularity).
    pub seed_warps: u64,
    /// Warps of the whole stacked target tensor (inverse modes, one per call).
    pub stack_warps: u64,
    /// Warps scoring the current flow (candidate 0 and state refreshes).
    pub center_warps: u64,
    /// Candidate evaluations of local and random search.
    pub search_samples: u64,
    /// Individual correlation scores computed.
    pub correlations: u64,
    /// Largest candidate stack held at once, in entries.
    pub peak_stack_entries: u64,
}

impl OpCounters {
    pub fn merge(&mut self, other: &OpCounters) {
        self.flow_shifts += other.flow_shifts;
        self.feature_shifts += other.feature_shifts;
        self.seed_warps += other.seed_warps;
        self.stack_warps += other.stack_warps;
        self.center_warps += other.center_warps;
        self.search_samples += other.search_samples;
        self.correlations += other.correlations;
        self.peak_stack_entries = self.peak_stack_entries.max(other.peak_stack_entries);
    }

    fn note_stack(&mut self, stack: &CandidateStack) {
        self.peak_stack_entries = self.peak_stack_entries.max(stack.scores.len() as u64);
    }
}

/// `k` scored flow candidates per pixel, stored pixel-major:
/// entry `(y * width + x) * k + slot`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateStack {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub scores: Vec<f32>,
    pub flow_u: Vec<f32>,
    pub flow_v: Vec<f32>,
}

impl CandidateStack {
    fn from_planes(planes: Vec<(ScoreMap, Vec<f32>, Vec<f32>)>) -> Self {
        let (height, width) = (planes[0].0.height, planes[0].0.width);
        let k = planes.len();
        let n = height * width;
        let mut scores = vec![0.0; n * k];
        let mut flow_u = vec![0.0; n * k];
        let mut flow_v = vec![0.0; n * k];
        for (slot, (s, u, v)) in planes.into_iter().enumerate() {
            for p in 0..n {
                scores[p * k + slot] = s.data[p];
                flow_u[p * k + slot] = u[p];
                flow_v[p * k + slot] = v[p];
            }
        }
        Self {
            height,
            width,
            k,
            scores,
            flow_u,
            flow_v,
        }
    }

    #[inline]
    pub fn score(&self, x: usize, y: usize, slot: usize) -> f32 {
        self.scores[(y * self.width + x) * self.k + slot]
    }

    #[inline]
    pub fn flow(&self, x: usize, y: usize, slot: usize) -> (f32, f32) {
        let i = (y * self.width + x) * self.k + slot;
        (self.flow_u[i], self.flow_v[i])
    }

    /// Score plane of one slot.
    pub fn slot_scores(&self, slot: usize) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.scores.iter().skip(slot).step_by(self.k).copied().collect(),
        }
    }
}

/// Target features pre-shifted by every seed offset: `stacks[i] = S(F2, seeds[i])`.
/// Built once per (target, seed set) and reused by every iteration. The
/// unshifted target is kept for scoring the current flow.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedTargets {
    pub seeds: SeedSet,
    pub target: FeatureMap,
    pub stacks: Vec<FeatureMap>,
}

impl StackedTargets {
    pub fn bytes(&self) -> usize {
        self.stacks.iter().map(FeatureMap::bytes).sum()
    }
}

/// Engine state: the current flow and the correlation it achieves.
#[derive(Clone, Debug, PartialEq)]
pub struct PmState {
    pub flow: FlowField,
    pub best_score: Vec<f32>,
    pub iteration: usize,
}

impl PmState {
    /// Scores `flow` and wraps it as a fresh state.
    pub fn new(f1: &FeatureMap, f2: &FeatureMap, flow: FlowField, counters: &mut OpCounters) -> Result<Self> {
        let best_score = score_flow(f1, f2, &flow, counters)?.data;
        Ok(Self {
            flow,
            best_score,
            iteration: 0,
        })
    }

    /// Largest deviation between `best_score` and a fresh correlation of the
    /// stored flow.
    pub fn consistency_error(&self, f1: &FeatureMap, f2: &FeatureMap) -> Result<f32> {
        let fresh = correlate(f1, &warp_bilinear(f2, &self.flow)?)?;
        Ok(fresh
            .data
            .iter()
            .zip(&self.best_score)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

fn check_pair(f1: &FeatureMap, f2: &FeatureMap, flow: &FlowField) -> Result<()> {
    if !f1.same_shape(f2) {
        return Err(FlowError::dim(format!(
            "source {:?} and target {:?} features differ",
            f1.shape(),
            f2.shape()
        )));
    }
    if !flow.same_dims(f1.height(), f1.width()) {
        return Err(FlowError::dim(format!(
            "flow is {}x{}, features are {}x{}",
            flow.width(),
            flow.height(),
            f1.width(),
            f1.height()
        )));
    }
    Ok(())
}

fn score_flow(f1: &FeatureMap, f2: &FeatureMap, flow: &FlowField, counters: &mut OpCounters) -> Result<ScoreMap> {
    check_pair(f1, f2, flow)?;
    counters.center_warps += 1;
    counters.correlations += flow.len() as u64;
    correlate(f1, &warp_bilinear(f2, flow)?)
}

/// Uniform random flow in `[-range, range]^2`, valid everywhere.
pub fn random_init(height: usize, width: usize, range: f32, rng_seed: u64) -> Result<FlowField> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(FlowError::param(format!(
            "initialization range must be > 0, got {range}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(FlowError::param("initialization needs positive dimensions"));
    }
    let mut r = rng::stream(rng_seed, 0);
    let n = height * width;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        u.push(r.random_range(-range..=range));
        v.push(r.random_range(-range..=range));
    }
    FlowField::new(height, width, u, v, vec![true; n])
}

/// Scores the current flow (slot 0) and, for each seed `dp`, the shifted flow
/// `S(flow, dp)` against `W(F2, S(flow, dp))`.
pub fn propagate(
    f1: &FeatureMap,
    f2: &FeatureMap,
    flow: &FlowField,
    seeds: &SeedSet,
    counters: &mut OpCounters,
) -> Result<CandidateStack> {
    check_pair(f1, f2, flow)?;
    let mut planes = Vec::with_capacity(seeds.len() + 1);
    planes.push((
        score_flow(f1, f2, flow, counters)?,
        flow.u().to_vec(),
        flow.v().to_vec(),
    ));
    for &dp in seeds.offsets() {
        let shifted = flow.shift(dp)?;
        counters.flow_shifts += 1;
        let warped = warp_bilinear(f2, &shifted)?;
        counters.seed_warps += 1;
        let s = correlate(f1, &warped)?;
        counters.correlations += flow.len() as u64;
        let (u, v, _) = shifted.into_parts();
        planes.push((s, u, v));
    }
    let stack = CandidateStack::from_planes(planes);
    counters.note_stack(&stack);
    Ok(stack)
}

/// Shifts the target once per seed offset.
pub fn inverse_prop_init(f2: &FeatureMap, seeds: &SeedSet, counters: &mut OpCounters) -> Result<StackedTargets> {
    let stacks = seeds
        .offsets()
        .iter()
        .map(|&dp| f2.shift(dp))
        .collect::<Result<Vec<_>>>()?;
    counters.feature_shifts += seeds.len() as u64;
    Ok(StackedTargets {
        seeds: seeds.clone(),
        target: f2.clone(),
        stacks,
    })
}

/// Scores seed candidates from pre-shifted target stacks.
///
/// Slot `i + 1` belongs to `seeds[i]` and is aligned with slot `i + 1` of
/// [`propagate`]: it reads the stack shifted by `-seeds[i]`, so the seed set
/// must be closed under negation. In exact mode the warped stack is shifted
/// back by `seeds[i]` and the slot records `S(flow, seeds[i])`, reproducing
/// the propagate scores on interior pixels. In approximate mode the shift
/// back is skipped and the slot records `flow + seeds[i]`, the displacement
/// actually scored.
pub fn inverse_propagate(
    f1: &FeatureMap,
    st: &StackedTargets,
    flow: &FlowField,
    mode: PropagationMode,
    seeds: &SeedSet,
    counters: &mut OpCounters,
) -> Result<CandidateStack> {
    if st.seeds != *seeds {
        return Err(FlowError::param("stacked targets were built for a different seed set"));
    }
    if st.stacks.is_empty() || !st.stacks[0].same_shape(f1) {
        return Err(FlowError::dim("stacked targets do not match the source features"));
    }
    let exact = match mode {
        PropagationMode::InverseExact => true,
        PropagationMode::InverseApprox => false,
        PropagationMode::Propagate => {
            return Err(FlowError::param("inverse_propagate needs an inverse mode"));
        }
    };
    let mirror = seeds
        .offsets()
        .iter()
        .map(|&dp| {
            seeds
                .index_of(-dp)
                .ok_or_else(|| FlowError::param("inverse propagation needs a seed set closed under negation"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut planes = Vec::with_capacity(seeds.len() + 1);
    planes.push((
        score_flow(f1, &st.target, flow, counters)?,
        flow.u().to_vec(),
        flow.v().to_vec(),
    ));
    counters.stack_warps += 1;
    for (&dp, &j) in seeds.offsets().iter().zip(&mirror) {
        let warped = warp_bilinear(&st.stacks[j], flow)?;
        counters.seed_warps += 1;
        let (target, u, v) = if exact {
            let back = warped.shift(dp)?;
            counters.feature_shifts += 1;
            let attributed = flow.shift(dp)?;
            counters.flow_shifts += 1;
            let (u, v, _) = attributed.into_parts();
            (back, u, v)
        } else {
            let u = flow.u().iter().map(|&a| a + dp.dx as f32).collect();
            let v = flow.v().iter().map(|&b| b + dp.dy as f32).collect();
            (warped, u, v)
        };
        let s = correlate(f1, &target)?;
        counters.correlations += flow.len() as u64;
        planes.push((s, u, v));
    }
    let stack = CandidateStack::from_planes(planes);
    counters.note_stack(&stack);
    Ok(stack)
}

/// Propagation-stage operation counts predicted for `iterations` rounds with
/// `n` seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PropagationOps {
    pub flow_shifts: u64,
    pub feature_shifts: u64,
    pub seed_warps: u64,
    pub stack_warps: u64,
}

impl PropagationOps {
    /// - propagate: `n m` flow shifts and `n m` per-seed warps
    /// - inverse approximate: `n` target shifts once, one stack warp per round
    /// - inverse exact: as approximate plus `n m` shift-backs of the warped
    ///   features and `n m` flow shifts recording the attributed flow
    pub fn predict(mode: PropagationMode, n: usize, iterations: usize) -> Self {
        let (n, m) = (n as u64, iterations as u64);
        match mode {
            PropagationMode::Propagate => Self {
                flow_shifts: n * m,
                feature_shifts: 0,
                seed_warps: n * m,
                stack_warps: 0,
            },
            PropagationMode::InverseApprox => Self {
                flow_shifts: 0,
                feature_shifts: n,
                seed_warps: n * m,
                stack_warps: m,
            },
            PropagationMode::InverseExact => Self {
                flow_shifts: n * m,
                feature_shifts: n + n * m,
                seed_warps: n * m,
                stack_warps: m,
            },
        }
    }

    pub fn observed(c: &OpCounters) -> Self {
        Self {
            flow_shifts: c.flow_shifts,
            feature_shifts: c.feature_shifts,
            seed_warps: c.seed_warps,
            stack_warps: c.stack_warps,
        }
    }
}

/// Candidate offsets of the local search window, `dy` outer and `dx` inner.
pub fn search_offsets(radius: usize, mode: SearchMode) -> Vec<Offset> {
    let r = radius as i32;
    match mode {
        SearchMode::Flow2d => (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| Offset::new(dx, dy)))
            .collect(),
        SearchMode::Stereo1d => (-r..=r).map(|dx| Offset::new(dx, 0)).collect(),
    }
}

/// Scores `flow + df` for every `df` in the search window.
///
/// Each candidate is scored as `F1(x) . F2(x + flow(x) + df)` with bilinear
/// sampling, i.e. exactly `correlate(F1, W(F2, flow + df))`.
pub fn local_search(
    f1: &FeatureMap,
    f2: &FeatureMap,
    flow: &FlowField,
    radius: usize,
    mode: SearchMode,
    counters: &mut OpCounters,
) -> Result<CandidateStack> {
    if radius < 1 {
        return Err(FlowError::param("local search radius must be >= 1"));
    }
    check_pair(f1, f2, flow)?;
    let offsets = search_offsets(radius, mode);
    let k = offsets.len();
    let (h, w, c) = f1.shape();
    let n = h * w;
    let mut scores = vec![0.0f32; n * k];
    let mut flow_u = vec![0.0f32; n * k];
    let mut flow_v = vec![0.0f32; n * k];
    scores
        .par_chunks_mut(w * k)
        .zip(flow_u.par_chunks_mut(w * k))
        .zip(flow_v.par_chunks_mut(w * k))
        .enumerate()
        .for_each(|(y, ((srow, urow), vrow))| {
            let mut buf = vec![0.0f32; c];
            for x in 0..w {
                let (u, v) = flow.at(x, y);
                let src = f1.pixel(x, y);
                for (slot, df) in offsets.iter().enumerate() {
                    let (cu, cv) = (u + df.dx as f32, v + df.dy as f32);
                    f2.sample_bilinear(x as f32 + cu, y as f32 + cv, &mut buf);
                    let i = x * k + slot;
                    srow[i] = dot(src, &buf);
                    urow[i] = cu;
                    vrow[i] = cv;
                }
            }
        });
    counters.search_samples += k as u64;
    counters.correlations += (n * k) as u64;
    let stack = CandidateStack {
        height: h,
        width: w,
        k,
        scores,
        flow_u,
        flow_v,
    };
    counters.note_stack(&stack);
    Ok(stack)
}

/// Radii visited by random search: `initial_radius * decay^k`.
pub fn random_search_radii(initial_radius: f32, decay: f32, steps: usize) -> Vec<f32> {
    (0..steps).map(|k| initial_radius * decay.powi(k as i32)).collect()
}

/// Classic patchmatch random search.
///
/// Each pixel draws `steps` candidates, uniformly in a square of radius
/// `initial_radius * decay^k` around its current best flow, and adopts a
/// candidate only if it correlates strictly better. Pixel `p` uses ChaCha
/// stream `p` of `rng_seed`, so results do not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    f1: &FeatureMap,
    f2: &FeatureMap,
    state: &PmState,
    initial_radius: f32,
    decay: f32,
    steps: usize,
    mode: SearchMode,
    rng_seed: u64,
    counters: &mut OpCounters,
) -> Result<PmState> {
    if initial_radius.is_nan() || initial_radius < 1.0 || !(decay > 0.0 && decay < 1.0) || steps < 1 {
        return Err(FlowError::param(
            "random search needs initial_radius >= 1, decay in (0, 1), steps >= 1",
        ));
    }
    check_pair(f1, f2, &state.flow)?;
    let radii = random_search_radii(initial_radius, decay, steps);
    let (h, w, c) = f1.shape();
    let mut flow = state.flow.clone();
    let mut best = state.best_score.clone();
    {
        let (us, vs, _) = flow.parts_mut();
        us.par_chunks_mut(w)
            .zip(vs.par_chunks_mut(w))
            .zip(best.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((urow, vrow), brow))| {
                let mut buf = vec![0.0f32; c];
                for x in 0..w {
                    let mut r = rng::stream(rng_seed, (y * w + x) as u64);
                    let src = f1.pixel(x, y);
                    for &rad in &radii {
                        let du = r.random_range(-rad..=rad);
                        let dv = r.random_range(-rad..=rad);
                        let dv = if mode == SearchMode::Stereo1d { 0.0 } else { dv };
                        let (cu, cv) = (urow[x] + du, vrow[x] + dv);
                        f2.sample_bilinear(x as f32 + cu, y as f32 + cv, &mut buf);
                        let s = dot(src, &buf);
                        if s > brow[x] {
                            urow[x] = cu;
                            vrow[x] = cv;
                            brow[x] = s;
                        }
                    }
                }
            });
    }
    counters.search_samples += steps as u64;
    counters.correlations += (h * w * steps) as u64;
    Ok(PmState {
        flow,
        best_score: best,
        iteration: state.iteration,
    })
}

/// Tie-breaking rule for [`argmax_update`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Lowest candidate index wins.
    #[default]
    First,
}

/// Winner-take-all: a pixel adopts its best candidate if that candidate
/// scores strictly above the current best.
pub fn argmax_update(state: PmState, cands: &CandidateStack, tie_break: TieBreak) -> Result<PmState> {
    let TieBreak::First = tie_break;
    if !state.flow.same_dims(cands.height, cands.width) {
        return Err(FlowError::dim("candidate stack does not match the state"));
    }
    let k = cands.k;
    let PmState {
        mut flow,
        mut best_score,
        iteration,
    } = state;
    let (us, vs, _) = flow.parts_mut();
    for (p, best) in best_score.iter_mut().enumerate() {
        let row = &cands.scores[p * k..(p + 1) * k];
        let mut arg = 0;
        for (i, &s) in row.iter().enumerate().skip(1) {
            if s > row[arg] {
                arg = i;
            }
        }
        if row[arg] > *best {
            *best = row[arg];
            us[p] = cands.flow_u[p * k + arg];
            vs[p] = cands.flow_v[p * k + arg];
        }
    }
    Ok(PmState {
        flow,
        best_score,
        iteration,
    })
}

/// Output of [`pm_iterate`].
#[derive(Clone, Debug)]
pub struct PmRun {
    pub state: PmState,
    /// Flow after every half-round: two entries per iteration.
    pub trace: Vec<FlowField>,
    /// `best_score` after every half-round, aligned with `trace`.
    pub score_trace: Vec<Vec<f32>>,
    pub counters: OpCounters,
}

impl PmRun {
    pub fn flow(&self) -> &FlowField {
        &self.state.flow
    }
}

/// Runs `cfg.iterations` rounds of seed propagation followed by local search,
/// each half-round closed by a winner-take-all update.
///
/// Inverse modes build the stacked targets once for the whole run. When
/// enabled, random search and the median filter run after the local search
/// update; the median filter re-scores the filtered flow, so it is the one
/// step that can lower a pixel's score.
pub fn pm_iterate(f1: &FeatureMap, f2: &FeatureMap, init: FlowField, cfg: &EngineConfig) -> Result<PmRun> {
    cfg.validate()?;
    check_pair(f1, f2, &init)?;
    let mut counters = OpCounters::default();
    let stacked = if cfg.propagation.is_inverse() {
        Some(inverse_prop_init(f2, &cfg.seeds, &mut counters)?)
    } else {
        None
    };
    let mut state = PmState::new(f1, f2, init, &mut counters)?;
    let mut trace = Vec::with_capacity(2 * cfg.iterations);
    let mut score_trace = Vec::with_capacity(2 * cfg.iterations);
    for it in 0..cfg.iterations {
        let cands = match &stacked {
            Some(st) => inverse_propagate(f1, st, &state.flow, cfg.propagation, &cfg.seeds, &mut counters)?,
            None => propagate(f1, f2, &state.flow, &cfg.seeds, &mut counters)?,
        };
        state = argmax_update(state, &cands, TieBreak::First)?;
        trace.push(state.flow.clone());
        score_trace.push(state.best_score.clone());

        let cands = local_search(f1, f2, &state.flow, cfg.radius, cfg.search, &mut counters)?;
        state = argmax_update(state, &cands, TieBreak::First)?;
        if let Some(rs) = &cfg.random_search {
            state = random_search(
                f1,
                f2,
                &state,
                rs.initial_radius,
                rs.decay,
                rs.steps,
                cfg.search,
                rng::derive(cfg.rng_seed, 0x5EA2C4 + it as u64),
                &mut counters,
            )?;
        }
        if cfg.median_filter {
            let filtered = median3x3(&state.flow);
            state = PmState {
                best_score: score_flow(f1, f2, &filtered, &mut counters)?.data,
                flow: filtered,
                iteration: state.iteration,
            };
        }
        state.iteration = it + 1;
        trace.push(state.flow.clone());
        score_trace.push(state.best_score.clone());
    }
    Ok(PmRun {
        state,
        trace,
        score_trace,
        counters,
    })
}
