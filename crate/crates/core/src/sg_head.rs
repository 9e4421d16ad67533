//! Frozen scene-graph feature head.
//!
//! Per-frame object detections pass through an object-context biLSTM, a greedy
//! label decoder, an edge-context biLSTM with a one-layer MLP, and a pairwise
//! relation classifier. The `k` most probable ordered pairs supply the
//! relation features consumed by the localizer. Forward only: weights come
//! from a file or a seeded initialisation and are never trained here.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{self, sigmoid};
use crate::numerics::{ParamStore, Tensor, TensorFile};

pub const SG_WEIGHTS_FORMAT: &str = "graphloc-sg-head-v1";

/// Tolerance on the sum of a label distribution.
pub const LABEL_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgConfig {
    /// Detector feature width.
    pub d_f: usize,
    pub n_classes: usize,
    /// Width of the projected label distribution `W_ctx p_i`.
    pub d_class_embed: usize,
    /// Hidden width of each direction of the object-context biLSTM.
    pub d_context: usize,
    /// Width of decoded-label embeddings.
    pub d_label: usize,
    /// Hidden width of each direction of the edge-context biLSTM.
    pub d_edge_hidden: usize,
    pub d_edge: usize,
    /// Relation feature width, the localizer's `d_s`.
    pub d_s: usize,
    /// Relation classes including the no-relation class 0.
    pub n_relations: usize,
}

impl Default for SgConfig {
    fn default() -> Self {
        SgConfig {
            d_f: 16,
            n_classes: 8,
            d_class_embed: 8,
            d_context: 16,
            d_label: 8,
            d_edge_hidden: 16,
            d_edge: 16,
            d_s: 8,
            n_relations: 6,
        }
    }
}

impl SgConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("d_f", self.d_f),
            ("n_classes", self.n_classes),
            ("d_class_embed", self.d_class_embed),
            ("d_context", self.d_context),
            ("d_label", self.d_label),
            ("d_edge_hidden", self.d_edge_hidden),
            ("d_edge", self.d_edge),
            ("d_s", self.d_s),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(*name, "sg_head", "must be positive"));
        }
        if self.n_relations < 2 {
            return Err(Error::validation(
                "n_relations",
                "sg_head",
                "need the no-relation class plus at least one relation",
            ));
        }
        Ok(())
    }

    /// Output width of the object-context biLSTM.
    pub fn d_c(&self) -> usize {
        2 * self.d_context
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub feature: Vec<f64>,
    /// Class distribution `p_i`.
    pub labels: Vec<f64>,
    /// `(x1, y1, x2, y2)`.
    pub bbox: [f64; 4],
}

/// Detected objects of one frame, in sequence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub objects: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(objects: Vec<Detection>) -> Result<Self> {
        let set = DetectionSet { objects };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |i: usize, field: &str, reason: String| Err(Error::validation(field, format!("object {i}"), reason));
        if self.objects.is_empty() {
            return Err(Error::validation(
                "objects",
                "detections",
                "at least one object required",
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.labels.iter().any(|&p| !(p >= 0.0)) {
                return fail(i, "labels", "negative or NaN probability".into());
            }
            let total: f64 = o.labels.iter().sum();
            if (total - 1.0).abs() > LABEL_SUM_TOLERANCE {
                return fail(i, "labels", format!("sums to {total}"));
            }
            let [x1, y1, x2, y2] = o.bbox;
            if !(x1 < x2 && y1 < y2) {
                return fail(i, "bbox", format!("{:?} is not ordered", o.bbox));
            }
            if o.feature.iter().any(|v| !v.is_finite()) {
                return fail(i, "feature", "non-finite value".into());
            }
        }
        Ok(())
    }
}

/// Every ordered pair `i ≠ j` in `(source, target)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    /// Softmax over relation classes per pair.
    pub class_probs: Vec<Vec<f64>>,
    /// Largest probability among classes `1..`.
    pub probabilities: Vec<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFeatureSet {
    /// One row per kept pair, `count × d_s`.
    pub features: Vec<Vec<f64>>,
    pub sources: Vec<usize>,
    pub targets: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub count: usize,
}

impl RelationFeatureSet {
    /// Features laid out as `k × d_s`, rows past `count` zero.
    pub fn padded(&self, k: usize, d_s: usize) -> Result<Vec<f64>> {
        if self.count > k {
            return Err(Error::Argument(format!("{} relations exceed k = {k}", self.count)));
        }
        let mut out = vec![0.0; k * d_s];
        for (r, row) in self.features.iter().enumerate() {
            if row.len() != d_s {
                return Err(Error::shape("padded", &[row.len()], &[d_s]));
            }
            out[r * d_s..(r + 1) * d_s].copy_from_slice(row);
        }
        Ok(out)
    }
}

/// The `k` most probable pairs in non-increasing order; ties keep `(source, target)` order.
pub fn topk_relations(pairs: &PairSet, k: usize) -> Result<RelationFeatureSet> {
    if k == 0 {
        return Err(Error::Argument("top-k needs k >= 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs.probabilities[b].total_cmp(&pairs.probabilities[a]));
    order.truncate(k);
    Ok(RelationFeatureSet {
        features: order.iter().map(|&i| pairs.features[i].clone()).collect(),
        sources: order.iter().map(|&i| pairs.sources[i]).collect(),
        targets: order.iter().map(|&i| pairs.targets[i]).collect(),
        probabilities: order.iter().map(|&i| pairs.probabilities[i]).collect(),
        count: order.len(),
    })
}

/// `x · W + b` for a row vector `x` and `W: in × out`.
fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let cols = w.cols();
    let mut out = match b {
        Some(b) => b.data().to_vec(),
        None => vec![0.0; cols],
    };
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row_slice(i)) {
            *o += xi * wv;
        }
    }
    out
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Lstm<'a> {
    w_ih: &'a Tensor,
    w_hh: &'a Tensor,
    b: &'a Tensor,
}

impl Lstm<'_> {
    fn hidden(&self) -> usize {
        self.w_hh.rows()
    }

    /// One step with gate order input, forget, cell, output.
    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden();
        let mut gates = affine(x, self.w_ih, Some(self.b));
        for (g, r) in gates.iter_mut().zip(affine(h, self.w_hh, None)) {
            *g += r;
        }
        let mut c_new = vec![0.0; n];
        let mut h_new = vec![0.0; n];
        for j in 0..n {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[n + j]);
            let g = gates[2 * n + j].tanh();
            let o = sigmoid(gates[3 * n + j]);
            c_new[j] = f * c[j] + i * g;
            h_new[j] = o * c_new[j].tanh();
        }
        (h_new, c_new)
    }

    /// Hidden states from zero initial state, indexed like `inputs`.
    fn run(&self, inputs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
        let n = self.hidden();
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        let mut out = vec![Vec::new(); inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for i in order {
            (h, c) = self.step(&inputs[i], &h, &c);
            out[i] = h.clone();
        }
        out
    }
}

fn bilstm(fwd: &Lstm, bwd: &Lstm, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = fwd.run(inputs, false);
    let b = bwd.run(inputs, true);
    f.iter().zip(&b).map(|(f, b)| concat(f, b)).collect()
}

/// Frozen scene-graph head: configuration plus named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SgHead {
    pub config: SgConfig,
    pub params: ParamStore,
}

impl SgHead {
    /// Every weight shape, in file order.
    pub fn shape_table(c: &SgConfig) -> Vec<(String, Vec<usize>)> {
        let lstm = |p: &str, input: usize, hidden: usize| {
            vec![
                (format!("{p}.w_ih"), vec![input, 4 * hidden]),
                (format!("{p}.w_hh"), vec![hidden, 4 * hidden]),
                (format!("{p}.b"), vec![1, 4 * hidden]),
            ]
        };
        let obj_in = c.d_f + c.d_class_embed;
        let edge_in = c.d_c() + c.d_label;
        let mut t = vec![("ctx.w".to_string(), vec![c.n_classes, c.d_class_embed])];
        t.extend(lstm("obj.fwd", obj_in, c.d_context));
        t.extend(lstm("obj.bwd", obj_in, c.d_context));
        // decoded labels plus a start symbol at index n_classes
        t.push(("dec.embed".into(), vec![c.n_classes + 1, c.d_label]));
        t.extend(lstm("dec", c.d_c() + c.d_label, c.d_context));
        t.push(("dec.w_o".into(), vec![c.d_context, c.n_classes]));
        t.push(("edge.w_d".into(), vec![c.n_classes + 1, c.d_label]));
        t.extend(lstm("edge.fwd", edge_in, c.d_edge_hidden));
        t.extend(lstm("edge.bwd", edge_in, c.d_edge_hidden));
        t.push(("edge.mlp.w".into(), vec![2 * c.d_edge_hidden, c.d_edge]));
        t.push(("edge.mlp.b".into(), vec![1, c.d_edge]));
        t.push(("rel.w_h".into(), vec![c.d_edge, c.d_s]));
        t.push(("rel.w_t".into(), vec![c.d_edge, c.d_s]));
        t.push(("rel.w_r".into(), vec![c.d_s, c.n_relations]));
        t
    }

    /// All weights zero.
    pub fn zeros(config: SgConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in Self::shape_table(&config) {
            params.insert(name, Tensor::zeros(&shape), false)?;
        }
        Ok(SgHead { config, params })
    }

    /// Gaussian weights with variance `1 / fan_in` and zero biases.
    pub fn new(config: SgConfig, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape) in Self::shape_table(&config) {
            if name.ends_with(".b") {
                continue;
            }
            let normal = Normal::new(0.0, (1.0 / shape[0] as f64).sqrt()).expect("positive std");
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            head.params.set(&name, Tensor::new(shape, data)?)?;
        }
        Ok(head)
    }

    fn w(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("shape table covers every weight")
    }

    fn lstm(&self, prefix: &str) -> Lstm<'_> {
        Lstm {
            w_ih: self.w(&format!("{prefix}.w_ih")),
            w_hh: self.w(&format!("{prefix}.w_hh")),
            b: self.w(&format!("{prefix}.b")),
        }
    }

    /// `C = biLSTM([f_i; W_ctx p_i])`, one row of width `2·d_context` per object.
    pub fn object_context(&self, dets: &DetectionSet) -> Result<Tensor> {
        dets.validate()?;
        let c = &self.config;
        let inputs = dets
            .objects
            .iter()
            .map(|o| {
                if o.feature.len() != c.d_f {
                    return Err(Error::shape("object_context", &[o.feature.len()], &[c.d_f]));
                }
                if o.labels.len() != c.n_classes {
                    return Err(Error::shape("object_context", &[o.labels.len()], &[c.n_classes]));
                }
                Ok(concat(&o.feature, &affine(&o.labels, self.w("ctx.w"), None)))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = bilstm(&self.lstm("obj.fwd"), &self.lstm("obj.bwd"), &inputs);
        Tensor::from_rows(&rows)
    }

    /// Greedy label decoding followed by the edge-context biLSTM and MLP.
    pub fn edge_context(&self, context: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let c = &self.config;
        let (n, width) = context.dims2()?;
        if width != c.d_c() {
            return Err(Error::shape("edge_context", &[n, width], &[n, c.d_c()]));
        }
        let start = c.n_classes;
        let dec = self.lstm("dec");
        let embed = self.w("dec.embed");
        let (mut h, mut cell) = (vec![0.0; c.d_context], vec![0.0; c.d_context]);
        let mut labels = Vec::with_capacity(n);
        let mut prev = start;
        for i in 0..n {
            let x = concat(context.row_slice(i), embed.row_slice(prev));
            (h, cell) = dec.step(&x, &h, &cell);
            let label = argmax(&affine(&h, self.w("dec.w_o"), None));
            labels.push(label);
            prev = label;
        }

        let w_d = self.w("edge.w_d");
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let prev = if i == 0 { start } else { labels[i - 1] };
                concat(context.row_slice(i), w_d.row_slice(prev))
            })
            .collect();
        let hidden = bilstm(&self.lstm("edge.fwd"), &self.lstm("edge.bwd"), &inputs);
        let rows: Vec<Vec<f64>> = hidden
            .iter()
            .map(|h| {
                affine(h, self.w("edge.mlp.w"), Some(self.w("edge.mlp.b")))
                    .into_iter()
                    .map(f64::tanh)
                    .collect()
            })
            .collect();
        Ok((labels, Tensor::from_rows(&rows)?))
    }

    /// `s_ij = (W_h d_i) ∘ (W_t d_j)` and class probabilities `softmax(W_r s_ij)` for all `i ≠ j`.
    pub fn pair_relation_features(&self, d: &Tensor) -> Result<PairSet> {
        let c = &self.config;
        let (n, width) = d.dims2()?;
        if width != c.d_edge {
            return Err(Error::shape("pair_relation_features", &[n, width], &[n, c.d_edge]));
        }
        let heads: Vec<Vec<f64>> = (0..n)
            .map(|i| affine(d.row_slice(i), self.w("rel.w_h"), None))
            .collect();
        let tails: Vec<Vec<f64>> = (0..n)
            .map(|i| affine(d.row_slice(i), self.w("rel.w_t"), None))
            .collect();
        let mut pairs = PairSet {
            sources: Vec::new(),
            targets: Vec::new(),
            features: Vec::new(),
            class_probs: Vec::new(),
            probabilities: Vec::new(),
        };
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let s: Vec<f64> = heads[i].iter().zip(&tails[j]).map(|(a, b)| a * b).collect();
                let logits = Tensor::row(affine(&s, self.w("rel.w_r"), None))?;
                let probs = ops::masked_softmax(&logits, None)?.into_data();
                let best = probs[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                pairs.sources.push(i);
                pairs.targets.push(j);
                pairs.features.push(s);
                pairs.class_probs.push(probs);
                pairs.probabilities.push(best);
            }
        }
        Ok(pairs)
    }

    /// Full forward pass for one frame.
    pub fn relations(&self, dets: &DetectionSet, k: usize) -> Result<RelationFeatureSet> {
        let context = self.object_context(dets)?;
        let (_, d) = self.edge_context(&context)?;
        topk_relations(&self.pair_relation_features(&d)?, k)
    }

    /// Relation tensor `n × k × d_s` and valid counts for a sequence of frames.
    pub fn video_relations(&self, frames: &[DetectionSet], k: usize) -> Result<(Tensor, Vec<usize>)> {
        let d_s = self.config.d_s;
        let mut data = Vec::with_capacity(frames.len() * k * d_s);
        let mut counts = Vec::with_capacity(frames.len());
        for dets in frames {
            let rel = self.relations(dets, k)?;
            data.extend(rel.padded(k, d_s)?);
            counts.push(rel.count);
        }
        Ok((Tensor::new(vec![frames.len(), k, d_s], data)?, counts))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TensorFile {
            format: SG_WEIGHTS_FORMAT.to_string(),
            config: self.config,
            tensors: self.params.to_named(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses a weights file, validating every name and shape against the table.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TensorFile<SgConfig> = serde_json::from_str(text)?;
        if file.format != SG_WEIGHTS_FORMAT {
            return Err(Error::validation(
                "format",
                "sg weights",
                format!("expected {SG_WEIGHTS_FORMAT}, got {}", file.format),
            ));
        }
        let mut head = SgHead::zeros(file.config)?;
        head.params.load_named(file.tensors)?;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SgHead::from_json(&text)
    }
}
