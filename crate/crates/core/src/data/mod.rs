//! Feature files, caption manifests, vocabulary and batching.

mod batch;
mod features;
mod manifest;
mod vocab;

pub use batch::{batch_iter, epoch_order, Batch};
pub use features::{read_feature_file, write_feature_file, FeatureFile, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{load_dataset, read_manifest, write_manifest, Dataset, Example, ManifestRecord, Split};
pub use vocab::{build_vocab, decode_tokens, encode_caption, tokenize, CaptionSequence, Vocabulary};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Reserved token strings, indexed by their ids.
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
