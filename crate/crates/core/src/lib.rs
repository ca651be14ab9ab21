//! Conditional relation networks (CRN) and hierarchical CRN models for video
//! question answering.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`] – dense tensors with a reverse-mode tape, LSTM blocks,
//!   losses and Adam.
//! * [`crn`] – the relation unit: subset sampling, set aggregation,
//!   conditioning and pooling.
//! * [`hcrn`] – visual and textual streams built from stacked units, the
//!   attention readout and the answer decoders.
//! * [`data`] – clip and subtitle segmentation, feature bundles on disk and
//!   synthetic tasks with planted answers.
//! * [`bench`] – the analytic cost model and an instrumented runner.
//! * [`train`] – minibatch Adam training and evaluation.
//! * [`cli`] – the `crnkit` command line.

pub mod bench;
pub mod cli;
pub mod crn;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod gradcheck;
pub mod hcrn;
pub mod train;

pub use error::{Error, Result};
