use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::localizer::Localizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerOutput {
    pub foreground: Vec<f64>,
    pub saliency: Vec<f64>,
    pub relevance: Vec<f64>,
    pub top_k: Vec<usize>,
}

/// Indices of the `k` largest scores, descending, lower index first on ties.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fuses foreground and saliency into relevance and selects the top frames.
pub fn relevance_and_topk(
    f_hat: &[f64],
    s_hat: &[f64],
    w_f: f64,
    w_s: f64,
    k_frames: usize,
) -> Result<LocalizerOutput> {
    if k_frames == 0 {
        return Err(Error::Argument("k_frames must be at least 1".into()));
    }
    if f_hat.len() != s_hat.len() {
        return Err(Error::shape("relevance_and_topk", &[f_hat.len()], &[s_hat.len()]));
    }
    let relevance: Vec<f64> = f_hat.iter().zip(s_hat).map(|(&f, &s)| w_f * f + w_s * s).collect();
    let top_k = top_k_indices(&relevance, k_frames);
    Ok(LocalizerOutput {
        foreground: f_hat.to_vec(),
        saliency: s_hat.to_vec(),
        relevance,
        top_k,
    })
}

/// Pseudo foreground and saliency labels for one frame from answer correctness.
pub fn pseudo_labels(answer_correct: bool, relevance: f64, r_theta: f64) -> (f64, f64) {
    let agree = if answer_correct {
        relevance > r_theta
    } else {
        relevance < r_theta
    };
    if agree {
        (1.0, 1.0)
    } else {
        (0.0, -1.0)
    }
}

impl Localizer {
    pub fn infer(&self, sample: &VideoSample) -> Result<LocalizerOutput> {
        let (f, s) = self.forward(sample)?;
        relevance_and_topk(&f, &s, self.w_f(), self.w_s(), self.config.k_frames)
    }

    /// Relabels `sample` from a downstream answer verdict, keeping its features.
    pub fn pseudo_label_sample(&self, sample: &VideoSample, answer_correct: bool) -> Result<VideoSample> {
        let out = self.infer(sample)?;
        let mut relabeled = sample.clone();
        let (f, s): (Vec<f64>, Vec<f64>) = out
            .relevance
            .iter()
            .map(|&r| pseudo_labels(answer_correct, r, self.config.r_theta))
            .unzip();
        relabeled.intervals = runs(&f);
        relabeled.foreground = f;
        relabeled.saliency = s;
        Ok(relabeled)
    }
}

fn runs(f: &[f64]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in f.iter().chain(std::iter::once(&0.0)).enumerate() {
        match (v == 1.0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relevance_cases() {
        let f = [0.2, 0.7, 0.4];
        let s = [1.5, -0.3, 0.0];
        let out = relevance_and_topk(&f, &s, 1.0, 0.0, 3).unwrap();
        assert_eq!(out.relevance, f);
        let out = relevance_and_topk(&f, &s, 0.0, 0.0, 2).unwrap();
        assert_eq!(out.relevance, vec![0.0; 3]);
        assert_eq!(out.top_k, vec![0, 1]);
        let out = relevance_and_topk(&f, &s, 1.0, 1.0, 10).unwrap();
        assert_eq!(out.top_k.len(), 3);
        assert!(relevance_and_topk(&f, &s, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        assert_eq!(top_k_indices(&[0.2, 0.9, 0.9], 2), vec![1, 2]);
    }

    #[test]
    fn pseudo_label_truth_table() {
        assert_eq!(pseudo_labels(true, 0.9, 0.5), (1.0, 1.0));
        assert_eq!(pseudo_labels(false, 0.9, 0.5), (0.0, -1.0));
        assert_eq!(pseudo_labels(true, 0.1, 0.5), (0.0, -1.0));
        assert_eq!(pseudo_labels(false, 0.1, 0.5), (1.0, 1.0));
        assert_eq!(pseudo_labels(true, 0.5, 0.5), (0.0, -1.0));
        assert_eq!(pseudo_labels(false, 0.5, 0.5), (0.0, -1.0));
    }

    #[test]
    fn runs_of_ones() {
        assert_eq!(runs(&[1.0, 1.0, 0.0, 1.0]), vec![(0, 2), (3, 4)]);
        assert!(runs(&[0.0, 0.0]).is_empty());
    }
}
