#![no_std]
//! Core algorithms for multi-label labeling of radiology-style reports.
//!
//! Everything here is allocation-only (`alloc`, no OS services): corpus
//! handling and K-shot sampling, synthetic report generation, cloze-style
//! scoring of category answer words with a small trainable attention model,
//! rule and chat-style baselines, and the evaluation metrics used to compare
//! them. File formats and the command-line front end live in the companion
//! `radlabel` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod corpus;
pub mod date;
pub mod defaults;
pub mod eval;
pub mod labeler;
pub mod scorer;
pub mod synth;
pub mod template;
pub mod verbalizer;
pub mod vocab;
