//! Correlation-strategy benchmark: exact entry counts plus measured build
//! time and score-tensor bytes on random features.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::config::{EngineConfig, PropagationMode};
use crate::correlation::{cost_report, global_correlation, local_correlation, CostParams, Strategy};
use crate::error::{FlowError, Result};
use crate::patchmatch::{pm_iterate, random_init};
use crate::rng;
use crate::tensor::{FeatureMap, SeedSet};

pub const CSV_HEADER: &str = "strategy,h,w,params,entries,bytes,ms";

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub d_max: usize,
    pub levels: usize,
    pub seeds: SeedSet,
    pub radius: usize,
    /// Feature channels of the random inputs.
    pub channels: usize,
    /// Volumes whose score tensor would exceed this many bytes are counted
    /// but not built.
    pub byte_cap: u64,
    pub rng_seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            d_max: 4,
            levels: 1,
            seeds: SeedSet::diag4(),
            radius: 2,
            channels: 8,
            byte_cap: 1 << 30,
            rng_seed: 0,
        }
    }
}

impl BenchOptions {
    pub fn params(&self, strategy: Strategy) -> CostParams {
        match strategy {
            Strategy::Local => CostParams::Local { d_max: self.d_max },
            Strategy::Global => CostParams::Global { levels: self.levels },
            Strategy::Patchmatch => CostParams::Patchmatch {
                seeds: self.seeds.len(),
                radius: self.radius,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub h: usize,
    pub w: usize,
    pub params: String,
    pub entries: u64,
    /// Bytes of the largest score tensor actually held; `None` when skipped.
    pub bytes: Option<u64>,
    pub ms: Option<f64>,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.strategy,
            self.h,
            self.w,
            self.params,
            self.entries,
            opt(self.bytes.map(|b| b.to_string())),
            opt(self.ms.map(|m| format!("{m:.3}")))
        )
    }
}

/// Renders rows as CSV with the fixed header.
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv());
    }
    out
}

fn random_features(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap {
    let mut r = rng::stream(seed, 0);
    FeatureMap::from_fn(h, w, c, |_, _, _| r.random::<f32>() - 0.5).l2_normalized()
}

/// Parses `64` or `64x48` (width x height) size lists separated by commas.
pub fn parse_sizes(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            let (w, h) = s.split_once('x').unwrap_or((s, s));
            match (h.parse::<usize>(), w.parse::<usize>()) {
                (Ok(h), Ok(w)) if h > 0 && w > 0 => Ok((h, w)),
                _ => Err(FlowError::param(format!("bad size '{s}'"))),
            }
        })
        .collect()
}

/// One row for `strategy` at `h x w`.
pub fn bench_one(strategy: Strategy, h: usize, w: usize, opts: &BenchOptions) -> Result<BenchRow> {
    let params = opts.params(strategy);
    let report = cost_report(strategy, h, w, params)?;
    let mut row = BenchRow {
        strategy,
        h,
        w,
        params: params.to_string(),
        entries: report.entries,
        bytes: None,
        ms: None,
    };
    let estimated = report.entries.saturating_mul(4);
    if estimated > opts.byte_cap {
        return Ok(row);
    }
    let seed = rng::derive(opts.rng_seed, (h * 65_537 + w) as u64);
    let f1 = random_features(h, w, opts.channels, seed);
    let f2 = random_features(h, w, opts.channels, rng::derive(seed, 1));
    let start = Instant::now();
    let bytes = match strategy {
        Strategy::Local => local_correlation(&f1, &f2, opts.d_max)?.scores.len() * 4,
        Strategy::Global => global_correlation(&f1, &f2, opts.levels)?.total_entries() * 4,
        Strategy::Patchmatch => {
            let cfg = EngineConfig {
                seeds: opts.seeds.clone(),
                radius: opts.radius,
                iterations: 1,
                propagation: PropagationMode::InverseApprox,
                ..EngineConfig::default()
            };
            let init = random_init(h, w, 4.0, seed)?;
            let run = pm_iterate(&f1, &f2, init, &cfg)?;
            run.counters.peak_stack_entries as usize * 4
        }
    };
    row.ms = Some(start.elapsed().as_secs_f64() * 1e3);
    row.bytes = Some(bytes as u64);
    Ok(row)
}

/// Rows for every size and strategy, sizes outer.
pub fn run_bench(sizes: &[(usize, usize)], strategies: &[Strategy], opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || strategies.is_empty() {
        return Err(FlowError::param("bench needs at least one size and one strategy"));
    }
    let mut rows = Vec::new();
    for &(h, w) in sizes {
        for &s in strategies {
            rows.push(bench_one(s, h, w, opts)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_at_64() {
        let all = [Strategy::Local, Strategy::Global, Strategy::Patchmatch];
        let opts = BenchOptions::default();
        let rows = run_bench(&[(64, 64)], &all, &opts).unwrap();
        let entries: Vec<u64> = rows.iter().map(|r| r.entries).collect();
        assert_eq!(entries, vec![331_776, 16_777_216, 122_880]);
        let csv = to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert!(lines.next().unwrap().starts_with("local,64,64,d_max=4,331776,1327104,"));
        assert_eq!(rows[1].bytes, Some(16_777_216 * 4));
    }

    #[test]
    fn growth_ratios() {
        let opts = BenchOptions {
            byte_cap: 0,
            ..Default::default()
        };
        let e = |s, n| bench_one(s, n, n, &opts).unwrap().entries;
        assert_eq!(e(Strategy::Patchmatch, 64) * 4, e(Strategy::Patchmatch, 128));
        assert_eq!(e(Strategy::Global, 64) * 16, e(Strategy::Global, 128));
    }

    #[test]
    fn byte_cap_skips_measurement() {
        let opts = BenchOptions {
            byte_cap: 1000,
            ..Default::default()
        };
        let r = bench_one(Strategy::Global, 64, 64, &opts).unwrap();
        assert_eq!((r.bytes, r.ms), (None, None));
        assert!(r.csv().ends_with("16777216,,"));
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_sizes("64,32x16").unwrap(), vec![(64, 64), (16, 32)]);
        assert!(parse_sizes("0").is_err());
        assert!(parse_sizes("ax4").is_err());
    }
}
