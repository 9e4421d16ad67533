//! Value-level kernels shared by the differentiable graph and the forward-only
//! scene-graph head.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Prediction clamp applied before logarithms in cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Additive attention mask with entries in {0, −∞}, stored as a blocked flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl Mask {
    /// Mask with every position visible.
    pub fn open(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            blocked: vec![false; rows * cols],
        }
    }

    /// Parses an additive mask; entries must be exactly 0 or −∞.
    pub fn from_additive(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Length {
                shape: vec![rows, cols],
                expected: rows * cols,
                actual: values.len(),
            });
        }
        let blocked = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == f64::NEG_INFINITY {
                    Ok(true)
                } else {
                    Err(Error::Argument(format!("mask entry {i} is {v}, expected 0 or -inf")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mask { rows, cols, blocked })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_blocked(&self, r: usize, c: usize) -> bool {
        self.blocked[r * self.cols + c]
    }

    pub fn set_blocked(&mut self, r: usize, c: usize, blocked: bool) {
        self.blocked[r * self.cols + c] = blocked;
    }

    pub fn blocked_count(&self) -> usize {
        self.blocked.iter().filter(|&&b| b).count()
    }

    /// Additive form: 0 where visible, −∞ where blocked.
    pub fn additive(&self) -> Vec<f64> {
        self.blocked
            .iter()
            .map(|&b| if b { f64::NEG_INFINITY } else { 0.0 })
            .collect()
    }
}

/// Row-wise softmax of `logits + mask`. Blocked positions come out exactly 0.
pub fn masked_softmax(logits: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    let (r, c) = logits.dims2()?;
    if let Some(m) = mask {
        if m.rows != r || m.cols != c {
            return Err(Error::shape("masked_softmax", &[r, c], &[m.rows, m.cols]));
        }
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = logits.row_slice(i);
        let visible = |j: usize| mask.is_none_or(|m| !m.is_blocked(i, j));
        let max = (0..c)
            .filter(|&j| visible(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: i });
        }
        let out_row = &mut out[i * c..(i + 1) * c];
        let mut total = 0.0;
        for j in 0..c {
            if visible(j) {
                let e = (row[j] - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

/// `aᵀb / (‖a‖‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn binary_cross_entropy(pred: &[f64], label: &[f64]) -> Result<f64> {
    if pred.len() != label.len() {
        return Err(Error::shape("binary_cross_entropy", &[pred.len()], &[label.len()]));
    }
    check_labels(label)?;
    Ok(pred
        .iter()
        .zip(label)
        .map(|(&p, &f)| {
            let p = clamp_prob(p);
            -(f * p.ln() + (1.0 - f) * (1.0 - p).ln())
        })
        .sum())
}

pub(crate) fn check_labels(label: &[f64]) -> Result<()> {
    match label.iter().position(|&f| f != 0.0 && f != 1.0) {
        Some(index) => Err(Error::Label {
            index,
            value: label[index],
        }),
        None => Ok(()),
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sinusoidal position code for `positions` rows of width `width`.
pub fn sinusoidal_positions(positions: usize, width: usize) -> Tensor {
    let mut out = vec![0.0; positions * width];
    let denom: Vec<f64> = (0..width)
        .map(|i| 10000f64.powf(2.0 * (i / 2) as f64 / width as f64))
        .collect();
    for pos in 0..positions {
        for (i, d) in denom.iter().enumerate() {
            let angle = pos as f64 / d;
            out[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_parts(vec![positions, width], out)
}
