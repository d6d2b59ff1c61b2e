//! Annotations, clip features, vocabularies and word vectors, batching, and
//! the synthetic planted-span benchmark.

mod annotations;
mod batch;
mod dataset;
mod features;
mod synthetic;
mod vocab;

pub use annotations::{load_annotations, parse_annotations, write_annotations, Annotation};
pub use batch::{make_batch, Batch};
pub use dataset::{Dataset, Sample};
pub use features::{load_features, read_features, write_features, ClipFeatureSequence, FEATURE_MAGIC};
pub use synthetic::{gen_synthetic, SyntheticDataset, SyntheticSpec};
pub use vocab::{
    load_word_vectors, seeded_table, tokenize, write_word_vectors, TokenSequence, Vocab, PAD_ID, UNK_ID, WORD_DIM,
};
