use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention layout between frame, scene-graph and query tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Frames see frames + query, scene-graph tokens see scene-graph + query,
    /// query sees everything.
    #[default]
    Blocking,
    /// No masking.
    None,
    /// Frame and scene-graph tokens see only query tokens.
    Strict,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blocking" => Ok(MaskMode::Blocking),
            "none" => Ok(MaskMode::None),
            "strict" => Ok(MaskMode::Strict),
            other => Err(Error::Argument(format!(
                "unknown mask mode `{other}` (blocking|none|strict)"
            ))),
        }
    }
}

/// Which frames count as intra-video negatives for a positive at `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NegativeSet {
    /// `j < p` with lower ground-truth saliency.
    #[default]
    Preceding,
    /// Any `j != p` with lower ground-truth saliency.
    All,
}

impl std::str::FromStr for NegativeSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preceding" => Ok(NegativeSet::Preceding),
            "all" => Ok(NegativeSet::All),
            other => Err(Error::Argument(format!(
                "unknown negative set `{other}` (preceding|all)"
            ))),
        }
    }
}

/// Score/loss ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreVariant {
    #[default]
    Both,
    NoAlignment,
    NoSaliency,
}

impl ScoreVariant {
    pub const ALL: [ScoreVariant; 3] = [ScoreVariant::Both, ScoreVariant::NoAlignment, ScoreVariant::NoSaliency];

    pub fn label(self) -> &'static str {
        match self {
            ScoreVariant::Both => "both",
            ScoreVariant::NoAlignment => "no-alignment",
            ScoreVariant::NoSaliency => "no-saliency",
        }
    }
}

impl std::str::FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreVariant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::Argument(format!("unknown score variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub d_v: usize,
    pub d_s: usize,
    pub d_t: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Channels between the two alignment-head convolutions.
    pub conv_hidden: usize,
    pub k_sg: usize,
    pub k_frames: usize,
    pub r_theta: f64,
    pub tau: f64,
    pub lambda_align: f64,
    pub lambda_intra: f64,
    pub lambda_inter: f64,
    pub mask_mode: MaskMode,
    pub negatives: NegativeSet,
    pub variant: ScoreVariant,
    pub w_f_init: f64,
    pub w_s_init: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        LocalizerConfig {
            d_v: 8,
            d_s: 8,
            d_t: 8,
            d_model: 1024,
            layers: 4,
            heads: 4,
            conv_hidden: 64,
            k_sg: 4,
            k_frames: 4,
            r_theta: 0.5,
            tau: 0.07,
            lambda_align: 1.0,
            lambda_intra: 1.0,
            lambda_inter: 1.0,
            mask_mode: MaskMode::Blocking,
            negatives: NegativeSet::Preceding,
            variant: ScoreVariant::Both,
            w_f_init: 1.0,
            w_s_init: 0.125,
        }
    }
}

impl LocalizerConfig {
    /// Desk-scale configuration used by tests and the synthetic runs.
    pub fn test_default() -> Self {
        LocalizerConfig {
            d_model: 64,
            ..LocalizerConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Loss weights after applying the score variant.
    pub fn effective_lambdas(&self) -> (f64, f64, f64) {
        match self.variant {
            ScoreVariant::Both => (self.lambda_align, self.lambda_intra, self.lambda_inter),
            ScoreVariant::NoAlignment => (0.0, self.lambda_intra, self.lambda_inter),
            ScoreVariant::NoSaliency => (self.lambda_align, 0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_v", self.d_v),
            ("d_s", self.d_s),
            ("d_t", self.d_t),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("conv_hidden", self.conv_hidden),
            ("k_sg", self.k_sg),
            ("k_frames", self.k_frames),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(*name, "localizer", "must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::validation(
                "heads",
                "localizer",
                format!("d_model {} not divisible by {} heads", self.d_model, self.heads),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::validation("tau", "localizer", "must be positive"));
        }
        if !(self.r_theta > 0.0 && self.r_theta < 1.0) {
            return Err(Error::validation("r_theta", "localizer", "must lie in (0, 1)"));
        }
        for (name, v) in [
            ("lambda_align", self.lambda_align),
            ("lambda_intra", self.lambda_intra),
            ("lambda_inter", self.lambda_inter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "localizer", "must be non-negative"));
            }
        }
        if !(self.w_f_init.is_finite() && self.w_s_init.is_finite()) {
            return Err(Error::validation("w_init", "localizer", "must be finite"));
        }
        Ok(())
    }
}
