//! Flow evaluation: endpoint error, KITTI-style outlier rate and a
//! discounted sequence error over iteration traces.

use std::fmt;

use serde::Serialize;

use crate::error::{FlowError, Result};
use crate::tensor::FlowField;

/// Pairwise summation, so the result does not depend on how a caller splits
/// the work.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn check(est: &FlowField, gt: &FlowField) -> Result<()> {
    if !est.same_dims(gt.height(), gt.width()) {
        return Err(FlowError::dim(format!(
            "estimate is {}x{}, ground truth is {}x{}",
            est.width(),
            est.height(),
            gt.width(),
            gt.height()
        )));
    }
    if !gt.valid().iter().any(|&v| v) {
        return Err(FlowError::param("ground truth has no valid pixels"));
    }
    Ok(())
}

/// Per-pixel endpoint errors and ground-truth magnitudes over valid GT pixels.
fn endpoint_errors(est: &FlowField, gt: &FlowField) -> (Vec<f64>, Vec<f64>) {
    let mut err = Vec::new();
    let mut mag = Vec::new();
    for i in 0..gt.len() {
        if !gt.valid()[i] {
            continue;
        }
        let (gu, gv) = (gt.u()[i] as f64, gt.v()[i] as f64);
        let du = est.u()[i] as f64 - gu;
        let dv = est.v()[i] as f64 - gv;
        err.push((du * du + dv * dv).sqrt());
        mag.push((gu * gu + gv * gv).sqrt());
    }
    (err, mag)
}

fn is_outlier(err: f64, mag: f64) -> bool {
    err > 3.0 && err > 0.05 * mag
}

/// Mean endpoint error over valid ground-truth pixels.
pub fn epe(est: &FlowField, gt: &FlowField) -> Result<f64> {
    check(est, gt)?;
    let (err, _) = endpoint_errors(est, gt);
    Ok(pairwise_sum(&err) / err.len() as f64)
}

/// Percentage of valid pixels whose endpoint error exceeds both 3 px and 5%
/// of the ground-truth magnitude.
pub fn f1_all(est: &FlowField, gt: &FlowField) -> Result<f64> {
    check(est, gt)?;
    let (err, mag) = endpoint_errors(est, gt);
    let outliers = err.iter().zip(&mag).filter(|(&e, &m)| is_outlier(e, m)).count();
    Ok(100.0 * outliers as f64 / err.len() as f64)
}

/// Weights `gamma^(N - i - 1)` for a trace of `n` predictions.
pub fn sequence_weights(n: usize, gamma: f64) -> Vec<f64> {
    (0..n).map(|i| gamma.powi((n - i - 1) as i32)).collect()
}

/// Mean absolute error over both components of the valid GT pixels.
pub fn mean_abs_error(est: &FlowField, gt: &FlowField) -> Result<f64> {
    check(est, gt)?;
    let mut terms = Vec::new();
    for i in 0..gt.len() {
        if gt.valid()[i] {
            terms.push((est.u()[i] as f64 - gt.u()[i] as f64).abs());
            terms.push((est.v()[i] as f64 - gt.v()[i] as f64).abs());
        }
    }
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Discounted sum `sum_i gamma^(N-i-1) * M(|f_i - f_gt|)` where `M` is the
/// mean absolute error of prediction `i`. Later predictions weigh more.
pub fn sequence_loss(trace: &[FlowField], gt: &FlowField, gamma: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(FlowError::param("sequence loss needs a non-empty trace"));
    }
    let weights = sequence_weights(trace.len(), gamma);
    let terms = trace
        .iter()
        .zip(&weights)
        .map(|(f, w)| mean_abs_error(f, gt).map(|m| w * m))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Endpoint-error summary of one estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub epe: f64,
    pub f1_all: f64,
    /// Valid ground-truth pixels evaluated.
    pub n: usize,
    /// Pixels with endpoint error above 1, 3 and 5 px.
    pub over_1px: usize,
    pub over_3px: usize,
    pub over_5px: usize,
}

impl EvalReport {
    pub fn compute(est: &FlowField, gt: &FlowField) -> Result<Self> {
        check(est, gt)?;
        let (err, mag) = endpoint_errors(est, gt);
        let n = err.len();
        let over = |t: f64| err.iter().filter(|&&e| e > t).count();
        let outliers = err.iter().zip(&mag).filter(|(&e, &m)| is_outlier(e, m)).count();
        Ok(Self {
            epe: pairwise_sum(&err) / n as f64,
            f1_all: 100.0 * outliers as f64 / n as f64,
            n,
            over_1px: over(1.0),
            over_3px: over(3.0),
            over_5px: over(5.0),
        })
    }
}

impl fmt::Display for EvalReport {
    /// `epe=<f> f1_all=<f> n=<int>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epe={:.6} f1_all={:.6} n={}", self.epe, self.f1_all, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(h: usize, w: usize, f: impl FnMut(usize, usize) -> (f32, f32)) -> FlowField {
        FlowField::from_fn(h, w, f)
    }

    #[test]
    fn epe_examples() {
        let gt = field(4, 4, |x, y| (x as f32, -(y as f32)));
        assert_eq!(epe(&gt, &gt).unwrap(), 0.0);
        let off = field(4, 4, |x, y| (x as f32 + 3.0, -(y as f32) + 4.0));
        assert_eq!(epe(&off, &gt).unwrap(), 5.0);
        let half = field(4, 4, |x, y| (x as f32 + if y < 2 { 1.0 } else { 0.0 }, -(y as f32)));
        assert_eq!(epe(&half, &gt).unwrap(), 0.5);
    }

    #[test]
    fn epe_respects_valid_mask() {
        let mut valid = vec![true; 4];
        valid[3] = false;
        let gt = FlowField::new(2, 2, vec![0.0; 4], vec![0.0; 4], valid).unwrap();
        let est = FlowField::new(2, 2, vec![1.0, 1.0, 1.0, 100.0], vec![0.0; 4], vec![true; 4]).unwrap();
        assert_eq!(epe(&est, &gt).unwrap(), 1.0);
        let none = FlowField::new(2, 2, vec![0.0; 4], vec![0.0; 4], vec![false; 4]).unwrap();
        assert!(epe(&est, &none).is_err());
        assert!(epe(&FlowField::zeros(2, 3), &gt).is_err());
    }

    #[test]
    fn f1_examples() {
        let gt = FlowField::constant(3, 3, 10.0, 0.0);
        assert_eq!(f1_all(&gt, &gt).unwrap(), 0.0);
        let off = FlowField::constant(3, 3, 20.0, 0.0);
        assert_eq!(f1_all(&off, &gt).unwrap(), 100.0);
        // 4 px error against a 100 px flow: above 3 px but below 5%.
        let big = FlowField::constant(3, 3, 100.0, 0.0);
        let est = FlowField::constant(3, 3, 104.0, 0.0);
        assert_eq!(f1_all(&est, &big).unwrap(), 0.0);
    }

    #[test]
    fn sequence_weights_and_loss() {
        let w = sequence_weights(4, 0.8);
        let expect = [0.512, 0.64, 0.8, 1.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let gt = FlowField::zeros(2, 2);
        assert_eq!(sequence_loss(&[gt.clone(), gt.clone()], &gt, 0.8).unwrap(), 0.0);
        // M = 1.0 then 0.5: 0.8 * 1.0 + 1.0 * 0.5
        let t = vec![FlowField::constant(2, 2, 1.0, 1.0), FlowField::constant(2, 2, 0.5, 0.5)];
        assert!((sequence_loss(&t, &gt, 0.8).unwrap() - 1.3).abs() < 1e-12);
        assert!(sequence_loss(&[], &gt, 0.8).is_err());
    }

    #[test]
    fn report_format() {
        let gt = FlowField::zeros(2, 2);
        let r = EvalReport::compute(&gt, &gt).unwrap();
        assert_eq!(r.to_string(), "epe=0.000000 f1_all=0.000000 n=4");
        let r = EvalReport::compute(&FlowField::constant(2, 2, 3.0, 4.0), &gt).unwrap();
        assert_eq!(r.to_string(), "epe=5.000000 f1_all=100.000000 n=4");
        assert_eq!((r.over_1px, r.over_3px, r.over_5px), (4, 4, 0));
    }

    type Vectors = Vec<(f32, f32)>;

    fn arb_pair() -> impl Strategy<Value = (Vectors, Vectors)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec((-50.0f32..50.0, -50.0f32..50.0), n),
                prop::collection::vec((-50.0f32..50.0, -50.0f32..50.0), n),
            )
        })
    }

    fn line(v: &[(f32, f32)]) -> FlowField {
        FlowField::new(
            1,
            v.len(),
            v.iter().map(|p| p.0).collect(),
            v.iter().map(|p| p.1).collect(),
            vec![true; v.len()],
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn unit_gamma_is_plain_sum(seq in prop::collection::vec((-5.0f32..5.0, -5.0f32..5.0), 1..6)) {
            let gt = FlowField::zeros(3, 3);
            let trace: Vec<_> = seq.iter().map(|&(u, v)| FlowField::constant(3, 3, u, v)).collect();
            let plain: f64 = trace.iter().map(|f| mean_abs_error(f, &gt).unwrap()).sum();
            prop_assert!((sequence_loss(&trace, &gt, 1.0).unwrap() - plain).abs() < 1e-12);
        }

        #[test]
        fn metrics_are_permutation_invariant((est, gt) in arb_pair(), rot in 0usize..40) {
            let n = est.len();
            let r = rot % n;
            let mut pe = est.clone();
            let mut pg = gt.clone();
            pe.rotate_left(r);
            pg.rotate_left(r);
            let a = epe(&line(&est), &line(&gt)).unwrap();
            let b = epe(&line(&pe), &line(&pg)).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            prop_assert_eq!(f1_all(&line(&est), &line(&gt)).unwrap(), f1_all(&line(&pe), &line(&pg)).unwrap());
        }

        #[test]
        fn f1_monotone_in_error((est, gt) in arb_pair(), idx in 0usize..40, grow in 0.0f32..30.0) {
            let i = idx % est.len();
            let before = f1_all(&line(&est), &line(&gt)).unwrap();
            let mut worse = est.clone();
            let (du, dv) = (est[i].0 - gt[i].0, est[i].1 - gt[i].1);
            let norm = (du * du + dv * dv).sqrt();
            let (eu, ev) = if norm > 0.0 { (du / norm, dv / norm) } else { (1.0, 0.0) };
            worse[i] = (est[i].0 + eu * grow, est[i].1 + ev * grow);
            let after = f1_all(&line(&worse), &line(&gt)).unwrap();
            prop_assert!(after >= before);
        }
    }
}
