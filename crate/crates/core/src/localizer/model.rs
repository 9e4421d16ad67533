use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::localizer::params::LayerNames;
use crate::localizer::{Localizer, LocalizerConfig, MaskMode};
use crate::numerics::ops::sinusoidal_positions;
use crate::numerics::{BoundParams, Graph, Mask, NodeId, Tensor};

/// Attention mask over the `[frames; scene-graph; query]` sequence.
pub fn build_attention_mask(n_frames: usize, n_query: usize, mode: MaskMode) -> Mask {
    let t = 2 * n_frames + n_query;
    let mut m = Mask::open(t, t);
    let segment = |i: usize| {
        if i < n_frames {
            0
        } else if i < 2 * n_frames {
            1
        } else {
            2
        }
    };
    for r in 0..t {
        for c in 0..t {
            let blocked = match (mode, segment(r), segment(c)) {
                (MaskMode::None, _, _) => false,
                (_, 2, _) | (_, _, 2) => false,
                (MaskMode::Blocking, a, b) => a != b,
                (MaskMode::Strict, _, _) => true,
            };
            m.set_blocked(r, c, blocked);
        }
    }
    m
}

/// Graph handles produced by one forward pass over a sample.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub n_frames: usize,
    /// Foreground probabilities, `[n×1]`.
    pub f_hat: NodeId,
    /// Saliency scores, `[n×1]`.
    pub saliency: NodeId,
    pub xv: NodeId,
    pub sv: NodeId,
    /// Pooled question vector, `[1×d_m]`.
    pub q_prime: NodeId,
    /// Attention weights per layer, per head.
    pub attention: Vec<Vec<NodeId>>,
}

/// Builds localizer sub-graphs against bound parameters.
pub(crate) struct Net<'a> {
    pub cfg: &'a LocalizerConfig,
    pub bp: &'a BoundParams,
    names: Vec<LayerNames>,
}

impl<'a> Net<'a> {
    pub fn new(cfg: &'a LocalizerConfig, bp: &'a BoundParams) -> Self {
        let names = (0..cfg.layers).map(|l| LayerNames::new(l, cfg.heads)).collect();
        Net { cfg, bp, names }
    }

    fn p(&self, name: &str) -> Result<NodeId> {
        self.bp.id(name)
    }

    pub fn pool_project(&self, g: &mut Graph, sample: &VideoSample) -> Result<(NodeId, NodeId)> {
        let px = g.constant(sample.pooled_frames());
        let ps = g.constant(sample.pooled_relations());
        let xv = g.matmul(px, self.p("proj.frame")?)?;
        let sv = g.matmul(ps, self.p("proj.sg")?)?;
        Ok((xv, sv))
    }

    pub fn project_query(&self, g: &mut Graph, query: &Tensor) -> Result<NodeId> {
        let q = g.constant(query.clone());
        g.matmul(q, self.p("proj.query")?)
    }

    fn embed(&self, g: &mut Graph, x: NodeId, type_name: &str) -> Result<NodeId> {
        let rows = g.value(x).rows();
        let pos = g.constant(sinusoidal_positions(rows, self.cfg.d_model));
        let x = g.add(x, pos)?;
        g.add_row(x, self.p(type_name)?)
    }

    pub fn assemble(&self, g: &mut Graph, xv: NodeId, sv: NodeId, qp: NodeId) -> Result<NodeId> {
        let x = self.embed(g, xv, "type.frame")?;
        let s = self.embed(g, sv, "type.sg")?;
        let q = self.embed(g, qp, "type.query")?;
        g.concat_rows(&[x, s, q])
    }

    fn affine_norm(&self, g: &mut Graph, x: NodeId, gain: &str, bias: &str) -> Result<NodeId> {
        let n = g.layer_norm(x);
        let n = g.mul_row(n, self.p(gain)?)?;
        g.add_row(n, self.p(bias)?)
    }

    /// Returns the encoder output and the attention weights of every head.
    pub fn encode(&self, g: &mut Graph, z0: NodeId, mask: &Mask) -> Result<(NodeId, Vec<Vec<NodeId>>)> {
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let mut z = z0;
        let mut attention = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let names = &self.names[l];
            let mut heads = Vec::with_capacity(self.cfg.heads);
            let mut weights = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let q = g.matmul(z, self.p(&names.q[h])?)?;
                let k = g.matmul(z, self.p(&names.k[h])?)?;
                let v = g.matmul(z, self.p(&names.v[h])?)?;
                let kt = g.transpose(k);
                let logits = g.matmul(q, kt)?;
                let logits = g.scale(logits, scale);
                let a = g.softmax(logits, Some(mask))?;
                weights.push(a);
                heads.push(g.matmul(a, v)?);
            }
            let cat = g.concat_cols(&heads)?;
            let mixed = g.matmul(cat, self.p(&names.out)?)?;
            let r1 = g.add(z, mixed)?;
            let z1 = self.affine_norm(g, r1, &names.ln1_gain, &names.ln1_bias)?;
            let ff = g.matmul(z1, self.p(&names.ff_w)?)?;
            let ff = g.add_row(ff, self.p(&names.ff_b)?)?;
            let r2 = g.add(z1, ff)?;
            z = self.affine_norm(g, r2, &names.ln2_gain, &names.ln2_bias)?;
            attention.push(weights);
        }
        Ok((z, attention))
    }

    fn conv3(&self, g: &mut Graph, x: NodeId, w: &str, b: &str) -> Result<NodeId> {
        let prev = g.shift_rows(x, -1);
        let next = g.shift_rows(x, 1);
        let window = g.concat_cols(&[prev, x, next])?;
        let y = g.matmul(window, self.p(w)?)?;
        g.add_row(y, self.p(b)?)
    }

    /// Foreground probabilities from the frame and scene-graph rows of `zk`.
    pub fn alignment_head(&self, g: &mut Graph, zk: NodeId, n_frames: usize) -> Result<NodeId> {
        let frames = g.slice_rows(zk, 0, n_frames)?;
        let sg = g.slice_rows(zk, n_frames, n_frames)?;
        let x = g.concat_cols(&[frames, sg])?;
        let h = self.conv3(g, x, "conv1.w", "conv1.b")?;
        let h = g.relu(h);
        let y = self.conv3(g, h, "conv2.w", "conv2.b")?;
        Ok(g.sigmoid(y))
    }

    /// Attention-pooled question vector from projected query tokens `qp`.
    pub fn question_pool(&self, g: &mut Graph, qp: NodeId) -> Result<NodeId> {
        let scores = g.matmul(qp, self.p("pool.query")?)?;
        let scores = g.transpose(scores);
        let weights = g.softmax(scores, None)?;
        g.matmul(weights, qp)
    }

    pub fn saliency(&self, g: &mut Graph, xv: NodeId, sv: NodeId, q_prime: NodeId) -> Result<NodeId> {
        let a = g.row_cosine(xv, q_prime)?;
        let b = g.row_cosine(sv, q_prime)?;
        g.add(a, b)
    }

    pub fn forward(&self, g: &mut Graph, sample: &VideoSample) -> Result<Forward> {
        check_widths(self.cfg, sample)?;
        let n = sample.n_frames();
        if sample.relation_counts.contains(&0) {
            log::warn!(
                "video {}: frame without scene-graph relations, its similarity counts as 0",
                sample.video_id
            );
        }
        let (xv, sv) = self.pool_project(g, sample)?;
        let qp = self.project_query(g, &sample.query)?;
        let z0 = self.assemble(g, xv, sv, qp)?;
        let mask = build_attention_mask(n, sample.n_query(), self.cfg.mask_mode);
        let (zk, attention) = self.encode(g, z0, &mask)?;
        let f_hat = self.alignment_head(g, zk, n)?;
        let q_prime = self.question_pool(g, qp)?;
        let saliency = self.saliency(g, xv, sv, q_prime)?;
        Ok(Forward {
            n_frames: n,
            f_hat,
            saliency,
            xv,
            sv,
            q_prime,
            attention,
        })
    }
}

fn check_widths(cfg: &LocalizerConfig, sample: &VideoSample) -> Result<()> {
    let pairs = [
        ("X", sample.d_v(), cfg.d_v),
        ("S", sample.d_s(), cfg.d_s),
        ("Q", sample.d_t(), cfg.d_t),
    ];
    for (field, got, want) in pairs {
        if got != want {
            return Err(Error::validation(
                field,
                &sample.video_id,
                format!("feature width {got}, model expects {want}"),
            ));
        }
    }
    Ok(())
}

/// Plain-value entry points over a trained model.
impl Localizer {
    fn with_graph<T>(&self, f: impl FnOnce(&mut Graph, &Net) -> Result<T>) -> Result<T> {
        let mut g = Graph::new();
        let bp = self.params.bind(&mut g);
        let net = Net::new(&self.config, &bp);
        f(&mut g, &net)
    }

    /// Per-frame projected means `(X_v, S_v)`, each `[n×d_m]`.
    pub fn pool_project(&self, sample: &VideoSample) -> Result<(Tensor, Tensor)> {
        check_widths(&self.config, sample)?;
        self.with_graph(|g, net| {
            let (x, s) = net.pool_project(g, sample)?;
            Ok((g.value(x).clone(), g.value(s).clone()))
        })
    }

    /// `Z_0` for already projected frame, scene-graph and raw query tokens.
    pub fn assemble_sequence(&self, xv: &Tensor, sv: &Tensor, query: &Tensor) -> Result<Tensor> {
        self.with_graph(|g, net| {
            let x = g.constant(xv.clone());
            let s = g.constant(sv.clone());
            let q = net.project_query(g, query)?;
            let z = net.assemble(g, x, s, q)?;
            Ok(g.value(z).clone())
        })
    }

    /// Encoder output and per-layer, per-head attention weights.
    pub fn encoder_forward(&self, z0: &Tensor, mask: &Mask) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        let t = z0.rows();
        if mask.rows() != t || mask.cols() != t {
            return Err(Error::shape("encoder_forward", &[t, t], &[mask.rows(), mask.cols()]));
        }
        self.with_graph(|g, net| {
            let z = g.constant(z0.clone());
            let (zk, att) = net.encode(g, z, mask)?;
            let att = att
                .iter()
                .map(|layer| layer.iter().map(|&a| g.value(a).clone()).collect())
                .collect();
            Ok((g.value(zk).clone(), att))
        })
    }

    pub fn alignment_head(&self, zk: &Tensor, n_frames: usize) -> Result<Vec<f64>> {
        if zk.rows() < 2 * n_frames + 1 {
            return Err(Error::Argument(format!(
                "alignment head needs {} rows, got {}",
                2 * n_frames + 1,
                zk.rows()
            )));
        }
        self.with_graph(|g, net| {
            let z = g.constant(zk.clone());
            let f = net.alignment_head(g, z, n_frames)?;
            Ok(g.value(f).data().to_vec())
        })
    }

    /// Pooled question vector `Q'` from raw query tokens.
    pub fn question_pool(&self, query: &Tensor) -> Result<Tensor> {
        self.with_graph(|g, net| {
            let qp = net.project_query(g, query)?;
            let q = net.question_pool(g, qp)?;
            Ok(g.value(q).clone())
        })
    }

    pub fn forward(&self, sample: &VideoSample) -> Result<(Vec<f64>, Vec<f64>)> {
        self.with_graph(|g, net| {
            let out = net.forward(g, sample)?;
            Ok((
                g.value(out.f_hat).data().to_vec(),
                g.value(out.saliency).data().to_vec(),
            ))
        })
    }

    /// Attention weights of every layer and head for `sample`.
    pub fn attention_maps(&self, sample: &VideoSample) -> Result<Vec<Vec<Tensor>>> {
        self.with_graph(|g, net| {
            let out = net.forward(g, sample)?;
            Ok(out
                .attention
                .iter()
                .map(|layer| layer.iter().map(|&a| g.value(a).clone()).collect())
                .collect())
        })
    }
}

/// `ŝ_i = cos(x_i, Q') + cos(s_i, Q')`; zero vectors contribute 0.
pub fn saliency_scores(xv: &Tensor, sv: &Tensor, q_prime: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let s = g.constant(sv.clone());
    let q = g.constant(q_prime.clone());
    let a = g.row_cosine(x, q)?;
    let b = g.row_cosine(s, q)?;
    let out = g.add(a, b)?;
    Ok(g.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> LocalizerConfig {
        LocalizerConfig {
            d_v: 3,
            d_s: 2,
            d_t: 4,
            d_model: 8,
            layers: 2,
            heads: 2,
            conv_hidden: 4,
            ..LocalizerConfig::test_default()
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn sample(n: usize, rng: &mut ChaCha8Rng) -> VideoSample {
        let frames = Tensor::new(vec![n, 2, 3], (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let relations = Tensor::new(vec![n, 2, 2], (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        VideoSample {
            video_id: "v".into(),
            frames,
            relations,
            relation_counts: vec![2; n],
            query: random(2, 4, rng),
            foreground: vec![0.0; n],
            saliency: vec![0.0; n],
            intervals: vec![],
            question: None,
            answer: None,
        }
    }

    #[test]
    fn blocking_mask_layout() {
        let m = build_attention_mask(2, 1, MaskMode::Blocking);
        assert_eq!(m.blocked_count(), 8);
        for r in 0..2 {
            for c in 2..4 {
                assert!(m.is_blocked(r, c) && m.is_blocked(c, r));
            }
        }
        for r in 0..5 {
            assert!(!m.is_blocked(r, 4));
        }
        assert_eq!(build_attention_mask(3, 2, MaskMode::None).blocked_count(), 0);
        let strict = build_attention_mask(2, 1, MaskMode::Strict);
        assert_eq!(strict.blocked_count(), 16);
        assert!(!strict.is_blocked(0, 4) && !strict.is_blocked(4, 0));
    }

    #[test]
    fn pool_project_identity_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Localizer::new(
            LocalizerConfig {
                d_model: 3,
                heads: 1,
                ..config()
            },
            0,
        )
        .unwrap();
        m.params.set("proj.frame", Tensor::identity(3)).unwrap();
        let mut s = sample(1, &mut rng);
        s.frames = Tensor::new(vec![1, 1, 3], vec![0.5, -2.0, 1.25]).unwrap();
        let (x, _) = m.pool_project(&s).unwrap();
        assert_eq!(x.data(), &[0.5, -2.0, 1.25]);

        // project each patch, then average
        let m = Localizer::new(config(), 4).unwrap();
        let s = sample(3, &mut rng);
        let w = m.params.get("proj.frame").unwrap();
        let (x, _) = m.pool_project(&s).unwrap();
        for i in 0..3 {
            for c in 0..8 {
                let mut acc = 0.0;
                for j in 0..2 {
                    for d in 0..3 {
                        acc += s.frames.data()[(i * 2 + j) * 3 + d] * w.get(d, c);
                    }
                }
                assert!((x.get(i, c) - acc / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assembled_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Localizer::new(config(), 0).unwrap();
        for t in ["type.frame", "type.sg", "type.query"] {
            m.params.set(t, Tensor::zeros(&[1, 8])).unwrap();
        }
        let xv = random(1, 8, &mut rng);
        let sv = random(1, 8, &mut rng);
        let q = random(1, 4, &mut rng);
        let z = m.assemble_sequence(&xv, &sv, &q).unwrap();
        assert_eq!(z.shape(), &[3, 8]);
        let pos = sinusoidal_positions(1, 8);
        for c in 0..8 {
            assert_eq!(z.get(0, c), xv.get(0, c) + pos.get(0, c));
            assert_eq!(z.get(1, c), sv.get(0, c) + pos.get(0, c));
        }
        // row n is the first scene-graph token
        let xv = random(3, 8, &mut rng);
        let sv = random(3, 8, &mut rng);
        let z = m.assemble_sequence(&xv, &sv, &q).unwrap();
        assert_eq!(z.rows(), 7);
        assert_eq!(z.get(3, 5), sv.get(0, 5) + sinusoidal_positions(1, 8).get(0, 5));
    }

    #[test]
    fn zero_attention_weights_are_uniform_over_open_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Localizer::new(config(), 0).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                for w in ["q", "k"] {
                    m.params.set(&format!("enc{l}.{w}{h}"), Tensor::zeros(&[8, 4])).unwrap();
                }
            }
        }
        let z0 = random(7, 8, &mut rng);
        let mask = build_attention_mask(3, 1, MaskMode::Blocking);
        let (zk, att) = m.encoder_forward(&z0, &mask).unwrap();
        assert_eq!(zk.shape(), z0.shape());
        let a = &att[1][0];
        for c in 0..7 {
            let want = if c < 3 || c == 6 { 0.25 } else { 0.0 };
            assert!((a.get(0, c) - want).abs() < 1e-15);
        }
        for c in 0..7 {
            assert!((a.get(6, c) - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_pairs_get_exactly_zero_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Localizer::new(config(), 9).unwrap();
        let s = sample(4, &mut rng);
        for layer in m.attention_maps(&s).unwrap() {
            for a in layer {
                for i in 0..4 {
                    for j in 0..4 {
                        assert_eq!(a.get(i, 4 + j), 0.0);
                        assert_eq!(a.get(4 + i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn alignment_head_range_and_interior_shift_invariance() {
        let m = Localizer::new(config(), 5).unwrap();
        let n = 6;
        let mut rows = Vec::new();
        let frame: Vec<f64> = (0..8).map(|c| (c as f64 * 0.3).sin()).collect();
        let sg: Vec<f64> = (0..8).map(|c| (c as f64 * 0.7).cos()).collect();
        for _ in 0..n {
            rows.push(frame.clone());
        }
        for _ in 0..n {
            rows.push(sg.clone());
        }
        rows.push(vec![9.0; 8]);
        let zk = Tensor::from_rows(&rows).unwrap();
        let f = m.alignment_head(&zk, n).unwrap();
        assert_eq!(f.len(), n);
        assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        for i in 2..n - 2 {
            assert_eq!(f[i], f[2]);
        }
    }

    #[test]
    fn question_pool_cases() {
        let mut m = Localizer::new(LocalizerConfig { d_t: 8, ..config() }, 6).unwrap();
        m.params.set("proj.query", Tensor::identity(8)).unwrap();
        let tok: Vec<f64> = (0..8).map(|c| c as f64 - 3.5).collect();
        let one = Tensor::from_rows(std::slice::from_ref(&tok)).unwrap();
        assert_eq!(m.question_pool(&one).unwrap().data(), &tok[..]);
        let two = Tensor::from_rows(&[tok.clone(), tok.clone()]).unwrap();
        let q = m.question_pool(&two).unwrap();
        for (a, b) in q.data().iter().zip(&tok) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saliency_cases() {
        let q = Tensor::row(vec![1.0, 2.0, -1.0]).unwrap();
        let same = Tensor::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap();
        assert!((saliency_scores(&same, &same, &q).unwrap()[0] - 2.0).abs() < 1e-12);
        let orth = Tensor::from_rows(&[vec![2.0, -1.0, 0.0]]).unwrap();
        assert_eq!(saliency_scores(&orth, &orth, &q).unwrap()[0], 0.0);
        let x = Tensor::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap();
        let s = Tensor::from_rows(&[vec![-0.5, 0.4, 0.1]]).unwrap();
        let a = saliency_scores(&x, &s, &q).unwrap()[0];
        let b = saliency_scores(&x.scale(3.0), &s, &q).unwrap()[0];
        assert!((a - b).abs() < 1e-12);
    }
}
