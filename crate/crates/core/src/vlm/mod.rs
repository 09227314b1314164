//! Vision-language model access: prompts, the chat-completions transport,
//! and a cached client that turns encoded fixations into descriptions and
//! description sequences into scanpath summaries.

mod client;
pub mod prompts;
pub mod transport;

pub use client::{
    backoff_delay, response_cache_key, CachedResponse, DescriptionProvenance,
    FixationDescription, ResponseKind, ScanpathSummary, SummaryProvenance, VlmClient, VlmConfig,
    VlmError, DEFAULT_MODEL,
};
pub use prompts::FixationListStyle;
pub use transport::{ChatRequest, HttpTransport, TransportError, VlmTransport};
