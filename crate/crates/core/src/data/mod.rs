//! Corpus input: MIND TSV files, vocabulary, word vectors and synthetic data.

pub mod embeddings;
pub mod mind;
pub mod synth;
pub mod vocab;

pub use embeddings::{load_embeddings, load_embeddings_from, EmbeddingStats};
pub use mind::{
    behaviors_to_tsv, news_to_tsv, parse_behaviors_str, parse_behaviors_tsv, parse_news_str, parse_news_tsv,
    write_behaviors_tsv, write_news_tsv, BehaviorRecord, MalformedLine, NewsRecord, ParseReport,
};
pub use synth::{gen_synthetic, Signal, SynthConfig, SyntheticCorpus};
pub use vocab::{tokenize, Vocab, OOV, PAD};
