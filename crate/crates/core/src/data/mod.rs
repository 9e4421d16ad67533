//! Dataset I/O, the synthetic corpus, and question templating.

mod questions;
mod sample;
mod synth;

pub use questions::{
    generate_questions, ActivitySpan, Entity, Motion, QaRecord, QuestionKind, Relation, SceneFrame, ToySceneGraph,
};
pub use sample::{load_dataset, save_dataset, FrameInterval, VideoSample};
pub use synth::{synthesize_corpus, write_corpus, CorpusSpec, SyntheticCorpus, World};
