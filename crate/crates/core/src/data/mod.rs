//! Corpus and embedding file formats and text preprocessing.

mod corpus;
mod embeddings;
mod preprocess;

pub use corpus::{read_corpus, write_corpus, CorpusReader, CorpusRecord};
pub use embeddings::{
    read_embeddings, write_embeddings, EmbeddingFile, EmbeddingMatrix, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use preprocess::{preprocess, PreprocessMode, Preprocessor, NLG_LENGTH, NLU_LENGTH};
