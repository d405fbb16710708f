//! Detector-vs-humanizer benchmark harness.
//!
//! Trains classifiers to tell human text from GPT text over three embedding
//! backends, fine-tunes Seq2Seq models that rewrite GPT text to evade those
//! classifiers, and retrains the classifiers on the rewritten text to measure
//! the defense — with analysis and reporting for the resulting accuracy
//! tables.

pub mod corpus;
pub mod nn;
pub mod provenance;
