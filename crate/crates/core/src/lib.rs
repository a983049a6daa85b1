//! Hallucination-node probing, activation-injection attacks and adaptive
//! noise-cancellation defenses over transformer hidden states.
//!
//! The pipeline runs in three phases on one [`ActivationSet`]:
//!
//! 1. train linear probes per layer on disjoint defender and attacker
//!    splits and pick the most predictive dimensions ([`probe`], [`hnode`]);
//! 2. cancel excess activation above a grounded baseline, statically or
//!    scaled by probe confidence ([`defense`]);
//! 3. inject an attack with the attacker's nodes ([`attack`]) and measure
//!    how much of it single-pass and iterative defenses neutralize.
//!
//! [`pipeline::run_pipeline`] chains the phases and returns a
//! [`report::PipelineReport`].

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod hnode;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod synth;

pub use data::{ActivationSet, Label, Pooling};
pub use error::{Error, Result};
