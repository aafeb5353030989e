//! Triplet datasets: captions, paraphrases, generation, vocabulary and storage.

pub mod build;
pub mod caption;
pub mod store;
pub mod vocab;

pub use build::{build_dataset, generate, stream_rng, DatasetConfig};
pub use caption::{caption_template, paraphrase, parse_caption, ParsedCaption};
pub use store::{read_jsonl, write_jsonl, Dataset, DatasetManifest, Split, Triplet};
pub use vocab::{detokenize, tokenize, Vocab, BOS, EOS, PAD, UNK};
