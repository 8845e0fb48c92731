//! Robustness toolkit for clinical-trial NLI corpora.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`corpus`] ingests NLI4CT-layout data, resolves premises, truncates to a
//!   token budget and renders instruction prompts.
//! * [`perturb`] derives acronym-expansion and numerical perturbations.
//! * [`trainer`] trains a hashed linear learner against an auxiliary
//!   weighting network under a min-max objective and logs training dynamics.
//! * [`cartography`] turns those dynamics into confidence/variability maps and
//!   easy/hard splits.
//! * [`eval`] scores predictions with macro F1, consistency and faithfulness.

pub mod cartography;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod perturb;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
