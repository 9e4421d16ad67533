use rand::Rng;

use crate::data::VideoSample;
use crate::error::Result;
use crate::localizer::model::{Forward, Net};
use crate::localizer::NegativeSet;
use crate::numerics::ops::{binary_cross_entropy, log_sum_exp};
use crate::numerics::{Graph, NodeId, Tensor};

/// Summed frame-wise cross-entropy between predicted and true foreground labels.
pub fn alignment_loss(f_hat: &[f64], f: &[f64]) -> Result<f64> {
    binary_cross_entropy(f_hat, f)
}

/// Frames eligible as the intra-video positive: foreground with positive saliency.
pub fn eligible_positives(f: &[f64], s: &[f64]) -> Vec<usize> {
    (0..f.len()).filter(|&i| f[i] == 1.0 && s[i] > 0.0).collect()
}

pub fn sample_positive<R: Rng>(f: &[f64], s: &[f64], rng: &mut R) -> Option<usize> {
    let eligible = eligible_positives(f, s);
    if eligible.is_empty() {
        None
    } else {
        Some(eligible[rng.random_range(0..eligible.len())])
    }
}

/// Negatives for positive `p`: frames with lower ground-truth saliency,
/// restricted to `j < p` unless widened.
pub fn negative_set(s: &[f64], p: usize, mode: NegativeSet) -> Vec<usize> {
    let end = match mode {
        NegativeSet::Preceding => p,
        NegativeSet::All => s.len(),
    };
    (0..end).filter(|&j| j != p && s[j] < s[p]).collect()
}

/// Contrastive loss of the positive against `negatives` at temperature `tau`.
pub fn intra_loss_at(s_hat: &[f64], p: usize, negatives: &[usize], tau: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(p)
        .chain(negatives.iter().copied())
        .map(|i| s_hat[i] / tau)
        .collect();
    log_sum_exp(&logits) - logits[0]
}

/// Intra-video loss with a randomly drawn positive, or `None` when the video has
/// no eligible positive.
pub fn intra_contrastive_loss<R: Rng>(
    s_hat: &[f64],
    f: &[f64],
    s: &[f64],
    tau: f64,
    mode: NegativeSet,
    rng: &mut R,
) -> Option<f64> {
    let p = sample_positive(f, s, rng)?;
    Some(intra_loss_at(s_hat, p, &negative_set(s, p, mode), tau))
}

/// Inter-video loss from a square cross-score matrix: row `a` holds anchor
/// `a`'s query scored against every batch video at the anchor's positive.
pub fn inter_contrastive_loss(cross: &[Vec<f64>], tau: f64) -> f64 {
    if cross.is_empty() {
        return 0.0;
    }
    let total: f64 = cross
        .iter()
        .enumerate()
        .map(|(a, row)| {
            let logits: Vec<f64> = row.iter().map(|v| v / tau).collect();
            log_sum_exp(&logits) - logits[a]
        })
        .sum();
    total / cross.len() as f64
}

pub fn total_loss(l_a: f64, l_intra: f64, l_inter: f64, lambdas: (f64, f64, f64)) -> f64 {
    lambdas.0 * l_a + lambdas.1 * l_intra + lambdas.2 * l_inter
}

/// Loss terms of one batch as graph nodes.
#[derive(Debug, Clone)]
pub(crate) struct BatchLoss {
    pub l_a: NodeId,
    pub l_intra: NodeId,
    pub l_inter: NodeId,
    pub total: NodeId,
    /// Weighted per-frame and per-video terms whose sum is the value of `total`.
    pub parts: Vec<f64>,
    /// Videos without an eligible positive.
    pub skipped: usize,
}

impl Net<'_> {
    pub fn batch_loss<R: Rng>(&self, g: &mut Graph, batch: &[VideoSample], rng: &mut R) -> Result<BatchLoss> {
        let b = batch.len() as f64;
        let mut outs: Vec<Forward> = Vec::with_capacity(batch.len());
        for sample in batch {
            outs.push(self.forward(g, sample)?);
        }

        let mut align = Vec::with_capacity(batch.len());
        for (out, sample) in outs.iter().zip(batch) {
            align.push(g.bce(out.f_hat, &sample.foreground)?);
        }
        let l_a = sum_nodes(g, &align)?;
        let l_a = g.scale(l_a, 1.0 / b);

        let mut positives = Vec::with_capacity(batch.len());
        let mut intra = Vec::new();
        for (out, sample) in outs.iter().zip(batch) {
            let p = sample_positive(&sample.foreground, &sample.saliency, rng);
            positives.push(p);
            if let Some(p) = p {
                let neg = negative_set(&sample.saliency, p, self.cfg.negatives);
                let idx: Vec<usize> = std::iter::once(p).chain(neg).collect();
                let picked = g.gather(out.saliency, &idx)?;
                let logits = g.scale(picked, 1.0 / self.cfg.tau);
                intra.push(g.neg_log_softmax(logits, 0)?);
            }
        }
        let skipped = positives.iter().filter(|p| p.is_none()).count();
        if skipped > 0 {
            log::debug!("{skipped} of {} videos lack an eligible positive", batch.len());
        }
        let l_intra = sum_nodes(g, &intra)?;
        let l_intra = g.scale(l_intra, 1.0 / b);

        let mut inter = Vec::new();
        for (a, anchor) in outs.iter().enumerate() {
            let Some(p) = positives[a] else { continue };
            let mut scores = Vec::with_capacity(outs.len());
            for other in &outs {
                let at = p.min(other.n_frames - 1);
                let x = g.slice_rows(other.xv, at, 1)?;
                let s = g.slice_rows(other.sv, at, 1)?;
                let cx = g.row_cosine(x, anchor.q_prime)?;
                let cs = g.row_cosine(s, anchor.q_prime)?;
                scores.push(g.add(cx, cs)?);
            }
            let scores = g.concat_rows(&scores)?;
            let logits = g.scale(scores, 1.0 / self.cfg.tau);
            inter.push(g.neg_log_softmax(logits, a)?);
        }
        let l_inter = sum_nodes(g, &inter)?;
        let l_inter = g.scale(l_inter, 1.0 / inter.len().max(1) as f64);

        let (la, li, le) = self.cfg.effective_lambdas();
        let weighted = [g.scale(l_a, la), g.scale(l_intra, li), g.scale(l_inter, le)];
        let total = sum_nodes(g, &weighted)?;
        let n_inter = inter.len().max(1) as f64;
        let mut parts = Vec::new();
        for (out, sample) in outs.iter().zip(batch) {
            let f = g.value(out.f_hat).data();
            for (p, y) in f.iter().zip(&sample.foreground) {
                parts.push(la / b * binary_cross_entropy(&[*p], &[*y])?);
            }
        }
        for (nodes, w) in [(&intra, li / b), (&inter, le / n_inter)] {
            for &n in nodes {
                parts.push(w * g.value(n).item()?);
            }
        }
        Ok(BatchLoss {
            l_a,
            l_intra,
            l_inter,
            total,
            parts,
            skipped,
        })
    }
}

fn sum_nodes(g: &mut Graph, nodes: &[NodeId]) -> Result<NodeId> {
    let Some((&first, rest)) = nodes.split_first() else {
        return Ok(g.constant(Tensor::from_parts(vec![1, 1], vec![0.0])));
    };
    let mut acc = first;
    for &n in rest {
        acc = g.add(acc, n)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alignment_loss_cases() {
        let f = [1.0, 0.0, 1.0, 0.0];
        let l = alignment_loss(&f, &f).unwrap();
        assert!((0.0..1e-5).contains(&l));
        let half = alignment_loss(&[0.5; 4], &f).unwrap();
        assert!((half - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn intra_loss_cases() {
        assert_eq!(intra_loss_at(&[0.3, 0.9], 1, &[], 0.07), 0.0);
        let l = intra_loss_at(&[0.4, 0.4], 1, &[0], 0.07);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let tau = 0.07;
        let l = intra_loss_at(&[0.0, 20.0 * tau], 1, &[0], tau);
        assert!(l < 1e-8);
        let mut prev = f64::INFINITY;
        for gap in 0..20 {
            let l = intra_loss_at(&[0.0, gap as f64 * tau], 1, &[0], tau);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn negatives_are_literal_or_widened() {
        let s = [-0.5, 1.0, -0.2, 1.0, -0.9];
        assert_eq!(negative_set(&s, 3, NegativeSet::Preceding), vec![0, 2]);
        assert_eq!(negative_set(&s, 3, NegativeSet::All), vec![0, 2, 4]);
        assert!(negative_set(&s, 0, NegativeSet::Preceding).is_empty());
    }

    #[test]
    fn no_positive_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = intra_contrastive_loss(
            &[0.1, 0.2],
            &[0.0, 0.0],
            &[-0.5, -0.1],
            0.07,
            NegativeSet::Preceding,
            &mut rng,
        );
        assert!(got.is_none());
        // foreground but non-positive saliency is not eligible either
        assert!(eligible_positives(&[1.0, 1.0], &[0.0, 0.5]) == vec![1]);
    }

    #[test]
    fn positive_sampling_is_uniform_over_eligible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = [0.0, 1.0, 1.0, 1.0];
        let s = [-1.0, 1.0, 1.0, 1.0];
        let mut counts = [0usize; 4];
        for _ in 0..3000 {
            counts[sample_positive(&f, &s, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        assert!(counts[1..].iter().all(|&c| (900..1100).contains(&c)), "{counts:?}");
    }

    #[test]
    fn inter_loss_cases() {
        assert_eq!(inter_contrastive_loss(&[vec![0.7]], 0.07), 0.0);
        let uniform = vec![vec![0.3; 4]; 4];
        assert!((inter_contrastive_loss(&uniform, 0.07) - 4f64.ln()).abs() < 1e-12);
        let tau = 0.07;
        let dominant = vec![vec![20.0 * tau, 0.0], vec![0.0, 20.0 * tau]];
        assert!(inter_contrastive_loss(&dominant, tau) < 1e-8);
    }

    #[test]
    fn total_loss_weights() {
        assert_eq!(total_loss(2.5, 1.0, 0.5, (1.0, 0.0, 0.0)), 2.5);
        assert_eq!(total_loss(2.5, 1.0, 0.5, (0.0, 1.0, 1.0)), 1.5);
        assert_eq!(total_loss(2.5, 1.0, 0.5, (0.0, 0.0, 0.0)), 0.0);
    }
}
