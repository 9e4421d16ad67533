use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{save_dataset, VideoSample};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Parameters of a planted-segment corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub videos: usize,
    pub held_out: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub d_t: usize,
    pub patches: usize,
    pub k_sg: usize,
    pub n_query: usize,
    pub interval_min: usize,
    pub interval_max: usize,
    /// Signal-to-noise ratio ρ of in-interval features.
    pub snr: f64,
    /// Standard deviation of the per-token query noise.
    pub query_noise: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            videos: 64,
            held_out: 32,
            frames_min: 32,
            frames_max: 32,
            d_v: 8,
            d_s: 8,
            d_t: 8,
            patches: 8,
            k_sg: 4,
            n_query: 4,
            interval_min: 6,
            interval_max: 12,
            snr: 4.0,
            query_noise: 0.1,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, reason: &str| Err(Error::validation(field, "corpus", reason));
        let positive = [
            ("videos", self.videos),
            ("frames_min", self.frames_min),
            ("d_v", self.d_v),
            ("d_s", self.d_s),
            ("d_t", self.d_t),
            ("patches", self.patches),
            ("k_sg", self.k_sg),
            ("n_query", self.n_query),
            ("interval_min", self.interval_min),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(name, "must be positive");
        }
        if self.frames_min > self.frames_max {
            return fail("frames_max", "empty frame-count range");
        }
        if self.interval_min > self.interval_max {
            return fail("interval_max", "empty interval-length range");
        }
        if self.interval_max > self.frames_min {
            return fail("interval_max", "interval longer than the shortest video");
        }
        if !(self.snr >= 0.0 && self.snr.is_finite()) {
            return fail("snr", "must be finite and non-negative");
        }
        if !(self.query_noise >= 0.0 && self.query_noise.is_finite()) {
            return fail("query_noise", "must be finite and non-negative");
        }
        Ok(())
    }
}

/// Fixed linear maps from query space into the frame and scene-graph spaces,
/// shared by every video of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub frame_map: Tensor,
    pub sg_map: Tensor,
}

impl World {
    pub fn frame_signal(&self, latent: &[f64]) -> Result<Tensor> {
        Tensor::row(latent.to_vec())?.matmul(&self.frame_map)
    }

    pub fn sg_signal(&self, latent: &[f64]) -> Result<Tensor> {
        Tensor::row(latent.to_vec())?.matmul(&self.sg_map)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<VideoSample>,
    pub held_out: Vec<VideoSample>,
    pub world: World,
    /// Latent query vector of every train video, then every held-out video.
    pub latents: Vec<Vec<f64>>,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn normals(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    /// `(ρ·signal + ε) / √(1 + ρ²)`, unit variance whatever ρ is.
    fn planted(&mut self, signal: &[f64], snr: f64) -> Vec<f64> {
        let norm = (1.0 + snr * snr).sqrt();
        signal.iter().map(|&s| (snr * s + self.normal()) / norm).collect()
    }
}

fn video(gen: &mut Gen, spec: &CorpusSpec, world: &World, video_id: String) -> Result<(VideoSample, Vec<f64>)> {
    let n = gen.rng.random_range(spec.frames_min..=spec.frames_max);
    let len = gen.rng.random_range(spec.interval_min..=spec.interval_max);
    let start = gen.rng.random_range(0..=n - len);
    let latent = gen.normals(spec.d_t, 1.0);
    let frame_signal = world.frame_signal(&latent)?;
    let sg_signal = world.sg_signal(&latent)?;

    let mut frames = Vec::with_capacity(n * spec.patches * spec.d_v);
    let mut relations = Vec::with_capacity(n * spec.k_sg * spec.d_s);
    let mut relation_counts = Vec::with_capacity(n);
    let mut saliency = Vec::with_capacity(n);
    for i in 0..n {
        let inside = (start..start + len).contains(&i);
        for _ in 0..spec.patches {
            if inside {
                frames.extend(gen.planted(frame_signal.data(), spec.snr));
            } else {
                frames.extend(gen.normals(spec.d_v, 1.0));
            }
        }
        let valid = gen.rng.random_range(1..=spec.k_sg);
        relation_counts.push(valid);
        for j in 0..spec.k_sg {
            if j >= valid {
                relations.extend(std::iter::repeat_n(0.0, spec.d_s));
            } else if inside {
                relations.extend(gen.planted(sg_signal.data(), spec.snr));
            } else {
                relations.extend(gen.normals(spec.d_s, 1.0));
            }
        }
        saliency.push(if inside { 1.0 } else { -gen.rng.random_range(0.0..=1.0) });
    }
    let mut query = Vec::with_capacity(spec.n_query * spec.d_t);
    for _ in 0..spec.n_query {
        for &z in &latent {
            query.push(z + spec.query_noise * gen.normal());
        }
    }
    let intervals = vec![(start, start + len)];
    let sample = VideoSample {
        video_id,
        frames: Tensor::new(vec![n, spec.patches, spec.d_v], frames)?,
        relations: Tensor::new(vec![n, spec.k_sg, spec.d_s], relations)?,
        relation_counts,
        query: Tensor::matrix(spec.n_query, spec.d_t, query)?,
        foreground: VideoSample::labels_from_intervals(n, &intervals),
        saliency,
        intervals,
        question: None,
        answer: None,
    };
    Ok((sample, latent))
}

/// Generates train and held-out videos that share one set of world maps.
pub fn synthesize_corpus(spec: &CorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut gen = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let std = (1.0 / spec.d_t as f64).sqrt();
    let world = World {
        frame_map: Tensor::matrix(spec.d_t, spec.d_v, gen.normals(spec.d_t * spec.d_v, std))?,
        sg_map: Tensor::matrix(spec.d_t, spec.d_s, gen.normals(spec.d_t * spec.d_s, std))?,
    };
    let mut latents = Vec::with_capacity(spec.videos + spec.held_out);
    let mut train = Vec::with_capacity(spec.videos);
    for i in 0..spec.videos {
        let (s, z) = video(&mut gen, spec, &world, format!("train-{i:04}"))?;
        train.push(s);
        latents.push(z);
    }
    let mut held_out = Vec::with_capacity(spec.held_out);
    for i in 0..spec.held_out {
        let (s, z) = video(&mut gen, spec, &world, format!("heldout-{i:04}"))?;
        held_out.push(s);
        latents.push(z);
    }
    Ok(SyntheticCorpus {
        train,
        held_out,
        world,
        latents,
    })
}

/// Writes `train.jsonl` and `heldout.jsonl` into `dir` and returns their paths.
pub fn write_corpus(spec: &CorpusSpec, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let corpus = synthesize_corpus(spec)?;
    let train = dir.join("train.jsonl");
    let held_out = dir.join("heldout.jsonl");
    save_dataset(&train, &corpus.train)?;
    save_dataset(&held_out, &corpus.held_out)?;
    Ok((train, held_out))
}
