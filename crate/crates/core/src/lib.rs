//! Benchmark construction and experiment orchestration for coreference-heavy
//! aspect-level sentiment classification (ALSC).
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`]: parse Rest16 / MAMS XML and auxiliary corpora, clean them;
//! 2. [`labeler`]: find definite pronouns, queue Pronoun cases for manual CR
//!    review and fold the verdicts back;
//! 3. [`dataset`]: assemble the ALSC-CR and ALSC-Regular bundles;
//! 4. [`prompt`]: render text-to-text training pairs;
//! 5. [`backend`]: talk to a model trainer over a line protocol;
//! 6. [`orchestrator`]: run baseline, auxiliary sweeps and the DPR probe
//!    into a resumable run store;
//! 7. [`metrics`] and [`report`]: macro-F1, Yuen-Welch tests, tables and
//!    plot data.

pub mod backend;
pub mod corpus;
pub mod dataset;
pub mod digest;
pub mod labeler;
pub mod metrics;
pub mod orchestrator;
pub mod prompt;
pub mod report;
