//! Multilingual neural machine translation toolkit: corpus filtering,
//! related-language transliteration, BPE subwords with target-language tags,
//! a small transformer trained on pooled language pairs, domain adaptation,
//! iterative back-translation and BLEU scoring.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod lang;
pub mod model;
pub mod pipeline;
pub mod tokenizer;
pub mod translit;

pub use lang::{LangCode, Script};
