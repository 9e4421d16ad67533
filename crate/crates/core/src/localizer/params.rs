use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::localizer::{LocalizerConfig, ScoreVariant};
use crate::numerics::{ParamStore, Tensor, TensorFile};

pub const CHECKPOINT_FORMAT: &str = "graphloc-checkpoint-v1";

/// Parameter names for one encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerNames {
    pub q: Vec<String>,
    pub k: Vec<String>,
    pub v: Vec<String>,
    pub out: String,
    pub ln1_gain: String,
    pub ln1_bias: String,
    pub ff_w: String,
    pub ff_b: String,
    pub ln2_gain: String,
    pub ln2_bias: String,
}

impl LayerNames {
    pub fn new(layer: usize, heads: usize) -> Self {
        let p = |s: &str| format!("enc{layer}.{s}");
        LayerNames {
            q: (0..heads).map(|h| p(&format!("q{h}"))).collect(),
            k: (0..heads).map(|h| p(&format!("k{h}"))).collect(),
            v: (0..heads).map(|h| p(&format!("v{h}"))).collect(),
            out: p("out"),
            ln1_gain: p("ln1.gain"),
            ln1_bias: p("ln1.bias"),
            ff_w: p("ff.w"),
            ff_b: p("ff.b"),
            ln2_gain: p("ln2.gain"),
            ln2_bias: p("ln2.bias"),
        }
    }
}

/// The trainable localizer: configuration plus every named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Localizer {
    pub config: LocalizerConfig,
    pub params: ParamStore,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::from_parts(vec![rows, cols], data)
    }

    /// Variance-preserving linear map.
    fn linear(&mut self, fan_in: usize, fan_out: usize) -> Tensor {
        self.normal(fan_in, fan_out, (1.0 / fan_in as f64).sqrt())
    }
}

impl Localizer {
    pub fn new(config: LocalizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (dm, dk) = (c.d_model, c.head_dim());
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut p = ParamStore::new();

        p.insert("proj.frame", init.linear(c.d_v, dm), true)?;
        p.insert("proj.sg", init.linear(c.d_s, dm), true)?;
        p.insert("proj.query", init.linear(c.d_t, dm), true)?;
        for name in ["type.frame", "type.sg", "type.query"] {
            p.insert(name, init.normal(1, dm, 0.02), true)?;
        }
        for l in 0..c.layers {
            let n = LayerNames::new(l, c.heads);
            for h in 0..c.heads {
                p.insert(n.q[h].clone(), init.linear(dm, dk), true)?;
                p.insert(n.k[h].clone(), init.linear(dm, dk), true)?;
                p.insert(n.v[h].clone(), init.linear(dm, dk), true)?;
            }
            p.insert(n.out, init.linear(dm, dm), true)?;
            p.insert(n.ln1_gain, Tensor::filled(&[1, dm], 1.0), true)?;
            p.insert(n.ln1_bias, Tensor::zeros(&[1, dm]), true)?;
            p.insert(n.ff_w, init.linear(dm, dm), true)?;
            p.insert(n.ff_b, Tensor::zeros(&[1, dm]), true)?;
            p.insert(n.ln2_gain, Tensor::filled(&[1, dm], 1.0), true)?;
            p.insert(n.ln2_bias, Tensor::zeros(&[1, dm]), true)?;
        }
        let relu_std = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        p.insert("conv1.w", init.normal(6 * dm, c.conv_hidden, relu_std(6 * dm)), true)?;
        p.insert("conv1.b", Tensor::zeros(&[1, c.conv_hidden]), true)?;
        p.insert("conv2.w", init.linear(3 * c.conv_hidden, 1), true)?;
        p.insert("conv2.b", Tensor::zeros(&[1, 1]), true)?;
        p.insert("pool.query", init.linear(dm, 1), true)?;

        let (w_f, w_s) = match c.variant {
            ScoreVariant::Both => (c.w_f_init, c.w_s_init),
            ScoreVariant::NoAlignment => (0.0, c.w_s_init),
            ScoreVariant::NoSaliency => (c.w_f_init, 0.0),
        };
        p.insert(
            "fuse.w_f",
            Tensor::filled(&[1, 1], w_f),
            c.variant != ScoreVariant::NoAlignment,
        )?;
        p.insert(
            "fuse.w_s",
            Tensor::filled(&[1, 1], w_s),
            c.variant != ScoreVariant::NoSaliency,
        )?;

        Ok(Localizer { config, params: p })
    }

    pub fn w_f(&self) -> f64 {
        self.params.get("fuse.w_f").map(|t| t.data()[0]).unwrap_or(0.0)
    }

    pub fn w_s(&self) -> f64 {
        self.params.get("fuse.w_s").map(|t| t.data()[0]).unwrap_or(0.0)
    }

    pub fn set_fusion(&mut self, w_f: f64, w_s: f64) -> Result<()> {
        self.params.set("fuse.w_f", Tensor::scalar(w_f)?.reshape(&[1, 1])?)?;
        self.params.set("fuse.w_s", Tensor::scalar(w_s)?.reshape(&[1, 1])?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TensorFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            tensors: self.params.to_named(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TensorFile<LocalizerConfig> = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::validation(
                "format",
                "checkpoint",
                format!("expected {CHECKPOINT_FORMAT}, got {}", file.format),
            ));
        }
        let mut model = Localizer::new(file.config, 0)?;
        model.params.load_named(file.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Localizer::from_json(&text)
    }
}
