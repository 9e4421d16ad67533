use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::Result;
use crate::localizer::model::Net;
use crate::localizer::{Localizer, LocalizerConfig, MaskMode, NegativeSet};
use crate::numerics::{finite_diff_check_terms, Graph, ParamGrads, ParamStore, Stencil, Tensor};

/// Step size of the suite, balancing rounding against O(h²) truncation.
pub const GRADCHECK_STEP: f64 = 5e-5;

/// Largest accepted relative error of the suite.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// A small random model and batch for gradient verification.
#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub model: Localizer,
    pub batch: Vec<VideoSample>,
    /// Seed for positive sampling, fixed across every loss evaluation.
    pub loss_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite values")
}

fn random_sample(rng: &mut ChaCha8Rng, cfg: &LocalizerConfig, id: usize) -> VideoSample {
    let n = rng.random_range(1..=6);
    let patches = rng.random_range(1..=3);
    let n_q = rng.random_range(1..=3);
    let start = rng.random_range(0..n);
    let end = rng.random_range(start + 1..=n);
    let intervals = vec![(start, end)];
    let foreground = VideoSample::labels_from_intervals(n, &intervals);
    let saliency = foreground
        .iter()
        .map(|&f| {
            if f == 1.0 {
                rng.random_range(0.1..=1.0)
            } else {
                rng.random_range(-1.0..=0.0)
            }
        })
        .collect();
    VideoSample {
        video_id: format!("case-{id}"),
        frames: uniform(rng, &[n, patches, cfg.d_v]),
        relations: uniform(rng, &[n, cfg.k_sg, cfg.d_s]),
        relation_counts: (0..n).map(|_| rng.random_range(1..=cfg.k_sg)).collect(),
        query: uniform(rng, &[n_q, cfg.d_t]),
        foreground,
        saliency,
        intervals,
        question: None,
        answer: None,
    }
}

/// Draws a configuration with at most 6 frames, `4 ≤ d_m ≤ 16` and 2 layers.
pub fn random_case(rng: &mut ChaCha8Rng) -> Result<GradcheckCase> {
    let heads = *[1usize, 2, 4].choose(rng).expect("non-empty");
    let d_model = heads * rng.random_range(4usize.div_ceil(heads)..=16 / heads);
    let cfg = LocalizerConfig {
        d_v: rng.random_range(2..=4),
        d_s: rng.random_range(2..=4),
        d_t: rng.random_range(2..=4),
        d_model,
        layers: 2,
        heads,
        conv_hidden: rng.random_range(1..=4),
        k_sg: rng.random_range(1..=3),
        k_frames: 2,
        tau: rng.random_range(0.07..=1.0),
        lambda_align: rng.random_range(0.0..=1.0),
        lambda_intra: rng.random_range(0.0..=1.0),
        lambda_inter: rng.random_range(0.0..=1.0),
        mask_mode: *[MaskMode::Blocking, MaskMode::None, MaskMode::Strict]
            .choose(rng)
            .expect("non-empty"),
        negatives: *[NegativeSet::Preceding, NegativeSet::All]
            .choose(rng)
            .expect("non-empty"),
        ..LocalizerConfig::test_default()
    };
    let mut model = Localizer::new(cfg, rng.random())?;
    // move norms and biases off their initial values
    let names: Vec<String> = model.params.entries().iter().map(|e| e.name.clone()).collect();
    for name in names {
        if name.contains(".ln") || name.ends_with(".b") {
            let t = model.params.get(&name)?;
            let noise = uniform(rng, t.shape()).scale(0.1);
            let t = t.add(&noise)?;
            model.params.set(&name, t)?;
        }
    }
    let b = rng.random_range(1..=3);
    let batch = (0..b).map(|i| random_sample(rng, &model.config, i)).collect();
    Ok(GradcheckCase {
        model,
        batch,
        loss_seed: rng.random(),
    })
}

impl GradcheckCase {
    /// Total loss at `params` with the case's fixed sampling seed.
    pub fn loss(&self, params: &ParamStore) -> Result<f64> {
        let mut g = Graph::new();
        let bp = params.bind(&mut g);
        let net = Net::new(&self.model.config, &bp);
        let mut rng = ChaCha8Rng::seed_from_u64(self.loss_seed);
        let loss = net.batch_loss(&mut g, &self.batch, &mut rng)?;
        g.value(loss.total).item()
    }

    /// Weighted per-frame and per-video terms of [`GradcheckCase::loss`].
    pub fn loss_terms(&self, params: &ParamStore) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bp = params.bind(&mut g);
        let net = Net::new(&self.model.config, &bp);
        let mut rng = ChaCha8Rng::seed_from_u64(self.loss_seed);
        let loss = net.batch_loss(&mut g, &self.batch, &mut rng)?;
        Ok(loss.parts)
    }

    pub fn analytic(&self) -> Result<ParamGrads> {
        let mut g = Graph::new();
        let bp = self.model.params.bind(&mut g);
        let net = Net::new(&self.model.config, &bp);
        let mut rng = ChaCha8Rng::seed_from_u64(self.loss_seed);
        let loss = net.batch_loss(&mut g, &self.batch, &mut rng)?;
        Ok(bp.collect(&g.backward(loss.total)?))
    }

    /// Largest relative error over every trainable entry, with the parameter it occurred in.
    pub fn check(&self, h: f64, stencil: Stencil) -> Result<(f64, String, usize)> {
        let grads = self.analytic()?;
        let mut worst = (0.0, String::new());
        let mut entries = 0;
        for (name, g) in &grads {
            let err = finite_diff_check_terms(&self.model.params, name, g, h, None, stencil, |p| self.loss_terms(p))?;
            entries += g.numel();
            if err > worst.0 {
                worst = (err, name.clone());
            }
        }
        Ok((worst.0, worst.1, entries))
    }
}

/// Checks `cases` random configurations drawn from `seed`.
pub fn gradcheck_suite(cases: usize, seed: u64, h: f64, stencil: Stencil) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        cases,
        entries: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
    };
    for _ in 0..cases {
        let case = random_case(&mut rng)?;
        let (err, name, entries) = case.check(h, stencil)?;
        report.entries += entries;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_param = name;
        }
    }
    Ok(report)
}
