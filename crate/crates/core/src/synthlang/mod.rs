//! Synthetic languages with controllable relatedness, rendered as text and
//! as frame sequences standing in for speech.

mod corpus;
mod io;
mod language;

pub use corpus::{generate_corpus, Corpus, CorpusConfig, Split, TextPair, Utterance};
pub use io::{read_corpus, read_language, read_manifest, write_corpus, Manifest, SplitCounts};
pub use language::{
    alphabet, derive_language, phoneme_char, render_utterance, LanguageParams, LanguageSpec, Phoneme,
};
