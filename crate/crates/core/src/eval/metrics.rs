//! Equal error rate and minimum detection cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(score, is_target)` pairs sorted by ascending score, with class totals.
fn sorted(scores: &[(f64, bool)]) -> Result<(Vec<(f64, bool)>, usize, usize)> {
    if let Some(s) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {}", s.0)));
    }
    let n_tgt = scores.iter().filter(|s| s.1).count();
    let n_non = scores.len() - n_tgt;
    if n_tgt == 0 || n_non == 0 {
        return Err(Error::InvalidInput("need at least one target and one nontarget trial".into()));
    }
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((v, n_tgt, n_non))
}

/// Operating points `(threshold, P_fa, P_miss)` for "accept when score ≥ threshold",
/// one per distinct score in ascending order, then reject-all at `+∞`.
pub fn operating_points(scores: &[(f64, bool)]) -> Result<Vec<(f64, f64, f64)>> {
    let (v, n_tgt, n_non) = sorted(scores)?;
    let mut pts = Vec::new();
    let (mut miss, mut fa) = (0usize, n_non);
    let mut i = 0;
    while i < v.len() {
        let s = v[i].0;
        pts.push((s, fa as f64 / n_non as f64, miss as f64 / n_tgt as f64));
        while i < v.len() && v[i].0 == s {
            if v[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
    }
    pts.push((f64::INFINITY, 0.0, 1.0));
    Ok(pts)
}

/// Locate the equal error point along a sequence of operating points.
pub(crate) fn eer_from_points(pts: &[(f64, f64, f64)]) -> (f64, f64) {
    for w in pts.windows(2) {
        let (t0, fa0, miss0) = w[0];
        let (t1, fa1, miss1) = w[1];
        if miss0 == fa0 {
            return (fa0, t0);
        }
        if miss1 >= fa1 {
            if miss1 == fa1 {
                return (fa1, t1);
            }
            // Interpolate where the two error curves cross.
            let d0 = fa0 - miss0;
            let d1 = fa1 - miss1;
            let a = d0 / (d0 - d1);
            let eer = fa0 + a * (fa1 - fa0);
            let thr = if t1.is_finite() { t0 + a * (t1 - t0) } else { t0 };
            return (eer, thr);
        }
    }
    let (t, fa, _) = pts[pts.len() - 1];
    (fa, t)
}

/// Equal error rate and the threshold at which it is reached.
pub fn compute_eer(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    Ok(eer_from_points(&operating_points(scores)?))
}

/// Normalized detection cost minimized over all thresholds.
pub fn compute_min_dcf(scores: &[(f64, bool)], p_target: f64, c_fa: f64, c_miss: f64) -> Result<(f64, f64)> {
    if !(p_target > 0.0 && p_target < 1.0) || !(c_fa > 0.0) || !(c_miss > 0.0) {
        return Err(Error::InvalidInput("p_target must lie in (0, 1) and costs be positive".into()));
    }
    let pts = operating_points(scores)?;
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    let mut best = (f64::INFINITY, 0.0);
    for &(t, fa, miss) in &pts {
        let dcf = (c_miss * p_target * miss + c_fa * (1.0 - p_target) * fa) / norm;
        if dcf < best.0 {
            best = (dcf, t);
        }
    }
    if best.1 == f64::INFINITY {
        // Reject-all: report a threshold just above the highest score.
        let top = pts[pts.len() - 2].0;
        best.1 = top + 1e-9 * top.abs().max(1.0);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
}

pub const P_TARGET: f64 = 0.01;

pub fn compute_metrics(scores: &[(f64, bool)]) -> Result<Metrics> {
    let (eer, eer_threshold) = compute_eer(scores)?;
    let (min_dcf, dcf_threshold) = compute_min_dcf(scores, P_TARGET, 1.0, 1.0)?;
    let eer_threshold = if eer_threshold.is_finite() { eer_threshold } else { dcf_threshold };
    Ok(Metrics { eer, eer_threshold, min_dcf, dcf_threshold })
}
