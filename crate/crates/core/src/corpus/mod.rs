//! Corpus ingestion, label normalisation, binarisation and synthesis.

mod norm;
mod pair;
mod synth;
mod threshold;
mod tsv;
mod vocab;

pub use norm::{z_normalize, LangStats, NormStats};
pub use pair::{SentencePair, Splits};
pub use synth::{concat_multilingual, da_from_corruption, synthesize_corpus, SynthSpec};
pub use threshold::{binarize, Acceptability, QualityThreshold};
pub use tsv::{load_mlqepe_tsv, parse_tsv, write_tsv, Column, ColumnMap};
pub use vocab::{build_vocab, tokenize, Vocab, CLS, PAD, SEP, UNK};
