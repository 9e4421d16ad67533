pub mod ablate;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod localizer;
pub mod numerics;
pub mod qa_metrics;
pub mod report;
pub mod retrieval_metrics;
pub mod sg_head;

pub use error::{Error, Result};
