//! Moment retrieval (R1@IoU, mAP) and highlight detection (mAP, HIT@1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open `[start, end)` interval in frames or seconds.
pub type Interval = (f64, f64);

/// IoU thresholds averaged into the "Avg." column.
pub const AVG_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentPrediction {
    pub intervals: Vec<Interval>,
    pub scores: Vec<f64>,
}

impl MomentPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.intervals.len() != self.scores.len() {
            return Err(Error::shape(
                "moment_prediction",
                &[self.intervals.len()],
                &[self.scores.len()],
            ));
        }
        for (i, &(s, e)) in self.intervals.iter().enumerate() {
            if !(s < e) || !s.is_finite() || !e.is_finite() {
                return Err(Error::Argument(format!("interval {i} is ({s}, {e})")));
            }
        }
        if let Some(i) = self.scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: self.scores[i],
            });
        }
        Ok(())
    }

    /// Prediction indices by descending score, earlier start first on ties.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.intervals[a].0.total_cmp(&self.intervals[b].0))
        });
        idx
    }

    pub fn top(&self) -> Option<Interval> {
        self.ranked().first().map(|&i| self.intervals[i])
    }
}

/// Maximal runs of frames scoring above `threshold`, scored by their mean and
/// sorted by score descending.
pub fn decode_moments(scores: &[f64], threshold: f64) -> MomentPrediction {
    let mut runs: Vec<(Interval, f64)> = Vec::new();
    let mut i = 0;
    while i < scores.len() {
        if scores[i] > threshold {
            let start = i;
            while i < scores.len() && scores[i] > threshold {
                i += 1;
            }
            let mean = scores[start..i].iter().sum::<f64>() / (i - start) as f64;
            runs.push(((start as f64, i as f64), mean));
        } else {
            i += 1;
        }
    }
    runs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0 .0.total_cmp(&b.0 .0)));
    let (intervals, scores) = runs.into_iter().unzip();
    MomentPrediction { intervals, scores }
}

pub fn temporal_iou(a: Interval, b: Interval) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(s < e) {
            return Err(Error::Argument(format!("interval ({s}, {e}) has no length")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    Ok(inter / union)
}

fn check_aligned<A, B>(op: &'static str, preds: &[A], gts: &[B]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape(op, &[preds.len()], &[gts.len()]));
    }
    Ok(())
}

/// Share of queries whose top prediction overlaps some ground truth with IoU ≥ `theta`.
/// Queries without ground truth are skipped; empty predictions count as misses.
pub fn recall_at_1(preds: &[MomentPrediction], gts: &[Vec<Interval>], theta: f64) -> Result<f64> {
    check_aligned("recall_at_1", preds, gts)?;
    let mut hits = 0usize;
    let mut counted = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            continue;
        }
        counted += 1;
        if let Some(top) = p.top() {
            for &gt in g {
                if temporal_iou(top, gt)? >= theta {
                    hits += 1;
                    break;
                }
            }
        }
    }
    Ok(if counted == 0 {
        0.0
    } else {
        hits as f64 / counted as f64
    })
}

/// Average precision of one query at IoU threshold `theta`, `None` without ground truth.
pub fn average_precision(pred: &MomentPrediction, gt: &[Interval], theta: f64) -> Result<Option<f64>> {
    if gt.is_empty() {
        return Ok(None);
    }
    let mut matched = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut precision_sum = 0.0;
    for (rank, i) in pred.ranked().into_iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, &g) in gt.iter().enumerate() {
            if matched[j] {
                continue;
            }
            let iou = temporal_iou(pred.intervals[i], g)?;
            if iou >= theta && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            matched[j] = true;
            tp += 1;
            precision_sum += tp as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(precision_sum / gt.len() as f64))
}

/// Mean AP over queries with ground truth.
pub fn moment_map(preds: &[MomentPrediction], gts: &[Vec<Interval>], theta: f64) -> Result<f64> {
    check_aligned("moment_map", preds, gts)?;
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (q, (p, g)) in preds.iter().zip(gts).enumerate() {
        match average_precision(p, g, theta)? {
            Some(ap) => {
                sum += ap;
                counted += 1;
            }
            None => log::warn!("query {q} has no ground-truth interval, excluded from mAP"),
        }
    }
    Ok(if counted == 0 { 0.0 } else { sum / counted as f64 })
}

/// Mean of [`moment_map`] over [`AVG_THRESHOLDS`].
pub fn moment_map_avg(preds: &[MomentPrediction], gts: &[Vec<Interval>]) -> Result<f64> {
    let mut sum = 0.0;
    for theta in AVG_THRESHOLDS {
        sum += moment_map(preds, gts, theta)?;
    }
    Ok(sum / AVG_THRESHOLDS.len() as f64)
}

/// Per-clip ratings 0–4 and the rating from which a clip counts as relevant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyGroundTruth {
    pub ratings: Vec<u8>,
    pub threshold: u8,
}

impl SaliencyGroundTruth {
    pub fn new(ratings: Vec<u8>) -> Result<Self> {
        if let Some(i) = ratings.iter().position(|&r| r > 4) {
            return Err(Error::Argument(format!("rating {} at clip {i} exceeds 4", ratings[i])));
        }
        Ok(SaliencyGroundTruth { ratings, threshold: 4 })
    }

    pub fn relevant(&self) -> Vec<bool> {
        self.ratings.iter().map(|&r| r >= self.threshold).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightMetrics {
    pub map: f64,
    pub hit_at_1: f64,
    /// Queries that had at least one relevant clip.
    pub queries: usize,
}

/// AP of ranking `scores` against binary relevance; `None` if nothing is relevant.
pub fn ranking_ap(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, i) in idx.into_iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

pub fn highlight_metrics(scores: &[Vec<f64>], gts: &[SaliencyGroundTruth]) -> Result<HighlightMetrics> {
    check_aligned("highlight_metrics", scores, gts)?;
    let mut map = 0.0;
    let mut hits = 0usize;
    let mut counted = 0usize;
    for (q, (s, g)) in scores.iter().zip(gts).enumerate() {
        if s.len() != g.ratings.len() {
            return Err(Error::shape("highlight_metrics", &[s.len()], &[g.ratings.len()]));
        }
        let relevant = g.relevant();
        let Some(ap) = ranking_ap(s, &relevant) else {
            log::warn!("query {q} has no relevant clip, excluded from HD metrics");
            continue;
        };
        counted += 1;
        map += ap;
        let top = (0..s.len()).fold(0, |best, i| if s[i] > s[best] { i } else { best });
        if relevant[top] {
            hits += 1;
        }
    }
    if counted == 0 {
        return Ok(HighlightMetrics {
            map: 0.0,
            hit_at_1: 0.0,
            queries: 0,
        });
    }
    Ok(HighlightMetrics {
        map: map / counted as f64,
        hit_at_1: hits as f64 / counted as f64,
        queries: counted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(items: &[(f64, f64, f64)]) -> MomentPrediction {
        MomentPrediction {
            intervals: items.iter().map(|&(s, e, _)| (s, e)).collect(),
            scores: items.iter().map(|&(_, _, v)| v).collect(),
        }
    }

    #[test]
    fn decode_cases() {
        let p = decode_moments(&[0.9, 0.8, 0.1, 0.7], 0.5);
        assert_eq!(p.intervals, vec![(0.0, 2.0), (3.0, 4.0)]);
        assert!((p.scores[0] - 0.85).abs() < 1e-12 && (p.scores[1] - 0.7).abs() < 1e-12);
        assert!(decode_moments(&[0.1, 0.2], 0.5).intervals.is_empty());
        assert_eq!(decode_moments(&[0.6, 0.7, 0.9], 0.5).intervals, vec![(0.0, 3.0)]);
    }

    #[test]
    fn iou_cases() {
        assert!((temporal_iou((0.0, 10.0), (5.0, 15.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(temporal_iou((2.0, 4.0), (2.0, 4.0)).unwrap(), 1.0);
        assert_eq!(temporal_iou((0.0, 1.0), (2.0, 4.0)).unwrap(), 0.0);
        assert!(temporal_iou((1.0, 1.0), (0.0, 2.0)).is_err());
    }

    #[test]
    fn recall_cases() {
        // IoU([0,6),[0,10)) = 0.6
        let p = vec![pred(&[(0.0, 6.0, 0.9)])];
        let g = vec![vec![(0.0, 10.0)]];
        assert_eq!(recall_at_1(&p, &g, 0.5).unwrap(), 1.0);
        assert_eq!(recall_at_1(&p, &g, 0.7).unwrap(), 0.0);
        assert_eq!(recall_at_1(&[MomentPrediction::default()], &g, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn ap_cases() {
        let g = vec![(2.0, 5.0)];
        let perfect = pred(&[(2.0, 5.0, 0.3)]);
        for theta in AVG_THRESHOLDS {
            assert_eq!(average_precision(&perfect, &g, theta).unwrap(), Some(1.0));
        }
        let half = pred(&[(10.0, 12.0, 0.9), (2.0, 5.0, 0.4)]);
        assert_eq!(average_precision(&half, &g, 0.5).unwrap(), Some(0.5));
        assert_eq!(average_precision(&half, &[], 0.5).unwrap(), None);
    }

    #[test]
    fn highlight_cases() {
        let g = SaliencyGroundTruth::new(vec![4, 1, 0]).unwrap();
        let m = highlight_metrics(&[vec![0.9, 0.2, 0.1]], &[g]).unwrap();
        assert_eq!((m.map, m.hit_at_1), (1.0, 1.0));
        let all = SaliencyGroundTruth::new(vec![4, 4, 4]).unwrap();
        let m = highlight_metrics(&[vec![0.3, -2.0, 0.1]], &[all]).unwrap();
        assert_eq!(m.map, 1.0);
        let none = SaliencyGroundTruth::new(vec![0, 1]).unwrap();
        let m = highlight_metrics(&[vec![0.3, 0.2]], &[none]).unwrap();
        assert_eq!(m.queries, 0);
        assert!(SaliencyGroundTruth::new(vec![5]).is_err());
    }
}
