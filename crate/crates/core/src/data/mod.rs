//! Tokenizers, synthetic corpora and batching.

pub mod batches;
pub mod dataset;
pub mod listops;
pub mod regime;
pub mod vocab;

pub use batches::{crop_batch, crop_batches, tiled_batches, LmBatch};
pub use dataset::{read_records, write_records, Record};
pub use listops::{evaluate_listops, evaluate_listops_stack, generate_listops, ListOpsGenerator, ListOpsParams, ListOpsSample};
pub use regime::{unigram_entropy, RegimeParams, RegimeSource};
pub use vocab::{load_text_corpus, split_stream, CharVocab, CorpusSplits};
