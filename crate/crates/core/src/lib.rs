//! Transfer learning for multi-choice question answering.
//!
//! Two QA models ([`memn2n`] and [`qacnn`]) built on a small reverse-mode
//! autodiff core ([`tensor`]), supervised pre-train/fine-tune with parameter
//! freezing ([`transfer`]), unsupervised self-labeling ([`selflabel`]), dataset
//! plumbing plus a synthetic benchmark ([`corpus`]), and report emitters
//! ([`report`]).

pub mod corpus;
pub mod error;
pub mod memn2n;
pub mod model;
pub mod qacnn;
pub mod report;
pub mod rng;
pub mod selflabel;
pub mod tensor;
pub mod transfer;

pub use error::{Error, ErrorKind, Result};
