//! Turning localizer outputs into predictions and scoring them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::localizer::Localizer;
use crate::report::{HighlightSection, MetricsReport, RunMeta};
use crate::retrieval_metrics::{
    decode_moments, moment_map, moment_map_avg, ranking_ap, recall_at_1, Interval, MomentPrediction,
    SaliencyGroundTruth,
};

/// Threshold applied to min-max normalised relevance when decoding moments.
pub const DECODE_THRESHOLD: f64 = 0.5;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub intervals: Vec<Interval>,
    pub scores: Vec<f64>,
    pub clip_scores: Vec<f64>,
}

impl PredictionRecord {
    pub fn moments(&self) -> MomentPrediction {
        MomentPrediction {
            intervals: self.intervals.clone(),
            scores: self.scores.clone(),
        }
    }
}

/// Rescales to `[0, 1]`; a constant vector maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Moments decoded from relevance plus the raw relevance as clip scores.
pub fn prediction_from_relevance(query_id: &str, relevance: &[f64]) -> PredictionRecord {
    let moments = decode_moments(&min_max_normalize(relevance), DECODE_THRESHOLD);
    PredictionRecord {
        query_id: query_id.to_string(),
        intervals: moments.intervals,
        scores: moments.scores,
        clip_scores: relevance.to_vec(),
    }
}

pub fn predict(model: &Localizer, samples: &[VideoSample]) -> Result<Vec<PredictionRecord>> {
    samples
        .iter()
        .map(|s| Ok(prediction_from_relevance(&s.video_id, &model.infer(s)?.relevance)))
        .collect()
}

/// Clip rating 0–4 from ground-truth saliency in `[-1, 1]`.
pub fn saliency_rating(s: f64) -> u8 {
    (2.0 * (s + 1.0)).round().clamp(0.0, 4.0) as u8
}

pub fn ground_truth_ratings(sample: &VideoSample) -> SaliencyGroundTruth {
    SaliencyGroundTruth {
        ratings: sample.saliency.iter().map(|&s| saliency_rating(s)).collect(),
        threshold: 4,
    }
}

/// Scores `preds` against `samples`; a sample without a prediction scores zero.
pub fn evaluate(preds: &[PredictionRecord], samples: &[VideoSample]) -> Result<MetricsReport> {
    let by_id: BTreeMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.query_id.as_str(), p)).collect();
    let mut moments = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    let mut hd_sum = 0.0;
    let mut hits = 0usize;
    let mut hd_queries = 0usize;
    for sample in samples {
        let pred = by_id.get(sample.video_id.as_str());
        let m = pred.map(|p| p.moments()).unwrap_or_default();
        m.validate()?;
        moments.push(m);
        gts.push(
            sample
                .intervals
                .iter()
                .map(|&(s, e)| (s as f64, e as f64))
                .collect::<Vec<_>>(),
        );

        let relevant = ground_truth_ratings(sample).relevant();
        if !relevant.iter().any(|&r| r) {
            log::warn!("{} has no relevant clip, excluded from HD metrics", sample.video_id);
            continue;
        }
        hd_queries += 1;
        let Some(p) = pred else { continue };
        if p.clip_scores.len() != relevant.len() {
            return Err(Error::validation(
                "clip_scores",
                &sample.video_id,
                format!("{} scores for {} clips", p.clip_scores.len(), relevant.len()),
            ));
        }
        hd_sum += ranking_ap(&p.clip_scores, &relevant).unwrap_or(0.0);
        let top = crate::localizer::top_k_indices(&p.clip_scores, 1);
        if top.first().is_some_and(|&i| relevant[i]) {
            hits += 1;
        }
    }
    let highlight = (hd_queries > 0).then(|| HighlightSection {
        map: hd_sum / hd_queries as f64,
        hit_at_1: hits as f64 / hd_queries as f64,
    });
    Ok(MetricsReport {
        r1_05: recall_at_1(&moments, &gts, 0.5)?,
        r1_07: recall_at_1(&moments, &gts, 0.7)?,
        map_05: moment_map(&moments, &gts, 0.5)?,
        map_075: moment_map(&moments, &gts, 0.75)?,
        map_avg: moment_map_avg(&moments, &gts)?,
        highlight,
        qa: None,
        meta: RunMeta {
            queries: samples.len(),
            ..RunMeta::default()
        },
    })
}

pub fn evaluate_model(model: &Localizer, samples: &[VideoSample]) -> Result<MetricsReport> {
    evaluate(&predict(model, samples)?, samples)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_predictions(path: impl AsRef<Path>, preds: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for p in preds {
        serde_json::to_writer(&mut buf, p)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
