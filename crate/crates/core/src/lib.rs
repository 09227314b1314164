//! Semantic and spatial scanpath similarity.
//!
//! Fixations are encoded as image patches or marked full images, described
//! by an external vision-language model, and aggregated into scanpath
//! summaries. Summaries are compared with text metrics, fixation sequences
//! with classical geometric and temporal metrics, and the two families are
//! related through rank correlation and a signed divergence score.

pub mod analysis;
pub mod cache;
pub mod dataset;
pub mod encoding;
pub mod pipeline;
pub mod report;
pub mod semantic;
pub mod spatial;
pub mod vlm;
