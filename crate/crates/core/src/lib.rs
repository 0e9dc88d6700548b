//! Instruction-tuning data selection with Instruction-Following Difficulty.
//!
//! IFD is the ratio of a response's perplexity given its instruction to its
//! perplexity alone. A cheap scorer model computes it for every sample; the
//! highest-IFD samples below 1.0 are kept for finetuning a stronger model.
//!
//! - [`data`]: dataset loading, canonical formats, prompt templates
//! - [`scoring`]: perplexity, IFD, built-in backends, the scoring engine
//! - [`remote`]: client for the HTTP log-probability/embedding protocol
//! - [`selection`]: capped top-IFD selection
//! - [`analysis`]: Spearman's rho, overlap ratios, quantile summaries, winning score
//! - [`diversity`]: facility-location compression of an IFD-selected pool
//! - [`report`]: verb-noun tables and dataset quality reports

pub mod analysis;
pub mod data;
pub mod diversity;
pub mod error;
pub mod numfmt;
pub mod remote;
pub mod report;
pub mod scoring;
pub mod selection;

pub use data::{load_dataset, render_prompt, Dataset, DatasetFormat, InstructionSample, PromptTemplate};
pub use error::{Error, ErrorKind, Result};
pub use scoring::{ifd_score, perplexity, score_dataset, LogProbBackend, ScoredSample, TokenLogProbs};
pub use selection::{materialize_subset, select_top_ifd, SelectionConfig, SelectionResult};
