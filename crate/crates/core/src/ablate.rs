//! Score-variant and attention-mask ablations over several seeds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{synthesize_corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_model;
use crate::localizer::{train, Localizer, LocalizerConfig, MaskMode, ScoreVariant, TrainOptions};
use crate::report::{render_rows, HighlightSection, MetricsReport, RunMeta};

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub variant: ScoreVariant,
    pub mask: MaskMode,
}

impl Arm {
    pub fn label(&self) -> String {
        let mask = match self.mask {
            MaskMode::Blocking => "mask",
            MaskMode::None => "no-mask",
            MaskMode::Strict => "strict-mask",
        };
        format!("{}/{mask}", self.variant.label())
    }

    /// `{both, no-alignment, no-saliency} × {blocking, none}`.
    pub fn grid() -> Vec<Arm> {
        [MaskMode::Blocking, MaskMode::None]
            .into_iter()
            .flat_map(|mask| ScoreVariant::ALL.into_iter().map(move |variant| Arm { variant, mask }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub corpus: CorpusSpec,
    pub config: LocalizerConfig,
    pub train: TrainOptions,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl AblationSpec {
    /// Grid over seeds `base..base + n`.
    pub fn new(corpus: CorpusSpec, config: LocalizerConfig, train: TrainOptions, base: u64, n: usize) -> Self {
        AblationSpec {
            corpus,
            config,
            train,
            seeds: (base..base + n as u64).collect(),
            arms: Arm::grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    /// One held-out report per seed, in seed order.
    pub runs: Vec<MetricsReport>,
    pub median: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmResult>,
}

impl AblationResult {
    pub fn arm(&self, variant: ScoreVariant, mask: MaskMode) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == Arm { variant, mask })
    }

    /// Median table, one row per arm.
    pub fn render(&self) -> String {
        let rows: Vec<(String, &MetricsReport)> = self.arms.iter().map(|a| (a.arm.label(), &a.median)).collect();
        render_rows(&rows)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Column-wise median of several reports.
pub fn median_report(runs: &[MetricsReport]) -> MetricsReport {
    let col = |f: fn(&MetricsReport) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
    let highlight = if runs.iter().all(|r| r.highlight.is_some()) && !runs.is_empty() {
        let hd = |f: fn(&HighlightSection) -> f64| {
            median(
                &runs
                    .iter()
                    .map(|r| f(r.highlight.as_ref().unwrap()))
                    .collect::<Vec<_>>(),
            )
        };
        Some(HighlightSection {
            map: hd(|h| h.map),
            hit_at_1: hd(|h| h.hit_at_1),
        })
    } else {
        None
    };
    MetricsReport {
        r1_05: col(|r| r.r1_05),
        r1_07: col(|r| r.r1_07),
        map_05: col(|r| r.map_05),
        map_075: col(|r| r.map_075),
        map_avg: col(|r| r.map_avg),
        highlight,
        qa: None,
        meta: RunMeta {
            queries: runs.first().map_or(0, |r| r.meta.queries),
            ..RunMeta::default()
        },
    }
}

/// Trains and evaluates one arm on the corpus and model drawn from `seed`.
pub fn run_arm(spec: &AblationSpec, arm: Arm, seed: u64) -> Result<MetricsReport> {
    let corpus = synthesize_corpus(&CorpusSpec {
        seed,
        ..spec.corpus.clone()
    })?;
    let config = LocalizerConfig {
        variant: arm.variant,
        mask_mode: arm.mask,
        ..spec.config.clone()
    };
    let model = Localizer::new(config, seed)?;
    let opts = TrainOptions {
        seed,
        ..spec.train.clone()
    };
    let (model, _) = train(model, &corpus.train, &opts, None)?;
    let mut report = evaluate_model(&model, &corpus.held_out)?;
    report.meta.seed = Some(seed);
    log::info!("{} seed {seed}: avg mAP {:.4}", arm.label(), report.map_avg);
    Ok(report)
}

/// Runs every arm on every seed. Runs are independent and fan out across threads.
pub fn run_ablation(spec: &AblationSpec) -> Result<AblationResult> {
    if spec.seeds.is_empty() || spec.arms.is_empty() {
        return Err(Error::Argument("ablation needs at least one seed and one arm".into()));
    }
    let jobs: Vec<(Arm, u64)> = spec
        .arms
        .iter()
        .flat_map(|&arm| spec.seeds.iter().map(move |&s| (arm, s)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(arm, seed)| run_arm(spec, arm, seed))
        .collect::<Result<Vec<_>>>()?;
    let arms = spec
        .arms
        .iter()
        .zip(reports.chunks(spec.seeds.len()))
        .map(|(&arm, runs)| ArmResult {
            arm,
            runs: runs.to_vec(),
            median: median_report(runs),
        })
        .collect();
    Ok(AblationResult {
        seeds: spec.seeds.clone(),
        arms,
    })
}
