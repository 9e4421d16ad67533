//! Flat `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphloc::data::CorpusSpec;
use graphloc::localizer::{LocalizerConfig, TrainOptions, GRADCHECK_STEP};
use graphloc::numerics::Stencil;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
}

/// Every setting of a run. Missing keys keep the values of [`RunConfig::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub model: LocalizerConfig,
    pub train: TrainOptions,
    pub ablate_seeds: usize,
    pub gradcheck_cases: usize,
    pub gradcheck_step: f64,
    pub gradcheck_stencil: Stencil,
    pub out: PathBuf,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: CorpusSpec::default(),
            model: LocalizerConfig::test_default(),
            train: TrainOptions::default(),
            ablate_seeds: 5,
            gradcheck_cases: 100,
            gradcheck_step: GRADCHECK_STEP,
            gradcheck_stencil: Stencil::ThreePoint,
            out: PathBuf::from("runs"),
            train_data: None,
            eval_data: None,
            checkpoint: None,
            predictions: None,
            answers: None,
            taxonomy: None,
        }
    }
}

fn parse<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    /// Applies one setting. Feature widths are shared by the corpus and the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        let c = &mut self.corpus;
        let m = &mut self.model;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "videos" => c.videos = parse(key, v)?,
            "held_out" => c.held_out = parse(key, v)?,
            "frames_min" => c.frames_min = parse(key, v)?,
            "frames_max" => c.frames_max = parse(key, v)?,
            "patches" => c.patches = parse(key, v)?,
            "n_query" => c.n_query = parse(key, v)?,
            "interval_min" => c.interval_min = parse(key, v)?,
            "interval_max" => c.interval_max = parse(key, v)?,
            "snr" => c.snr = parse(key, v)?,
            "query_noise" => c.query_noise = parse(key, v)?,
            "d_v" => (c.d_v, m.d_v) = (parse(key, v)?, parse(key, v)?),
            "d_s" => (c.d_s, m.d_s) = (parse(key, v)?, parse(key, v)?),
            "d_t" => (c.d_t, m.d_t) = (parse(key, v)?, parse(key, v)?),
            "k_sg" => (c.k_sg, m.k_sg) = (parse(key, v)?, parse(key, v)?),
            "d_model" => m.d_model = parse(key, v)?,
            "layers" => m.layers = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "conv_hidden" => m.conv_hidden = parse(key, v)?,
            "k_frames" => m.k_frames = parse(key, v)?,
            "r_theta" => m.r_theta = parse(key, v)?,
            "tau" => m.tau = parse(key, v)?,
            "lambda_align" => m.lambda_align = parse(key, v)?,
            "lambda_intra" => m.lambda_intra = parse(key, v)?,
            "lambda_inter" => m.lambda_inter = parse(key, v)?,
            "mask_mode" => m.mask_mode = parse(key, v)?,
            "negatives" => m.negatives = parse(key, v)?,
            "variant" => m.variant = parse(key, v)?,
            "w_f_init" => m.w_f_init = parse(key, v)?,
            "w_s_init" => m.w_s_init = parse(key, v)?,
            "steps" => self.train.steps = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "ablate_seeds" => self.ablate_seeds = parse(key, v)?,
            "gradcheck_cases" => self.gradcheck_cases = parse(key, v)?,
            "gradcheck_step" => self.gradcheck_step = parse(key, v)?,
            "gradcheck_stencil" => self.gradcheck_stencil = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "train_data" => self.train_data = Some(PathBuf::from(v)),
            "eval_data" => self.eval_data = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "predictions" => self.predictions = Some(PathBuf::from(v)),
            "answers" => self.answers = Some(PathBuf::from(v)),
            "taxonomy" => self.taxonomy = Some(PathBuf::from(v)),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: assignment.to_string(),
            value: String::new(),
            reason: "expected key=value".into(),
        })?;
        self.set(k.trim(), v.trim())
    }

    /// Reads settings from text; blank lines and `#` comments are skipped.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: origin.to_string(),
                    line: i + 1,
                });
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = RunConfig::default();
        cfg.merge_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Corpus spec with the run seed applied.
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.seed,
            ..self.corpus.clone()
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn train_data(&self) -> PathBuf {
        self.train_data.clone().unwrap_or_else(|| self.out.join("train.jsonl"))
    }

    pub fn eval_data(&self) -> PathBuf {
        self.eval_data.clone().unwrap_or_else(|| self.out.join("heldout.jsonl"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.json"))
    }
}
