//! Datasets, vocabulary, pretrained vectors, subsampling, and the synthetic
//! benchmark generator.

mod dataset;
mod embeddings;
mod synth;
mod vocab;

pub use dataset::{
    check_known_split_sizes, load_dataset, load_dataset_as, subsample, tokenize, Bounds, Dataset,
    DatasetTriple, EncodedDataset, McqaExample, RawExample, Split,
};
pub use embeddings::{load_embeddings, read_vectors, write_vectors, EmbeddingMatrix};
pub use synth::{gen_synthetic, SynthConfig, SynthCorpus};
pub use vocab::{build_vocab, Vocab, PAD, UNK};
