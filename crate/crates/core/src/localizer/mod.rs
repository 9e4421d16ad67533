//! The query-conditioned frame localizer: masked encoder over frame,
//! scene-graph and query tokens, alignment and saliency heads, losses,
//! relevance fusion and training.

mod check;
mod config;
mod infer;
mod losses;
mod model;
mod params;
mod train;

pub use check::{gradcheck_suite, random_case, GradcheckCase, GradcheckReport, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
pub use config::{LocalizerConfig, MaskMode, NegativeSet, ScoreVariant};
pub use infer::{pseudo_labels, relevance_and_topk, top_k_indices, LocalizerOutput};
pub use losses::{
    alignment_loss, eligible_positives, inter_contrastive_loss, intra_contrastive_loss, intra_loss_at, negative_set,
    sample_positive, total_loss,
};
pub use model::{build_attention_mask, saliency_scores};
pub use params::{Localizer, CHECKPOINT_FORMAT};
pub use train::{train, LossBreakdown, TrainOptions, Trainer};
