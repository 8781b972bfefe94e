//! Toolkit for event-level, time-sensitive video-language benchmarks.
//!
//! The crate turns timestamped annotations into instruction-following samples
//! ([`repurpose`], [`templates`]), collects model responses ([`runner`]),
//! extracts structured answers from free text ([`parse`]), scores them
//! ([`metrics`], [`simscore`], [`scoring`]) and aggregates the results into
//! benchmark tables ([`report`]). [`matchcore`] is a standalone numerical
//! implementation of timestamp prediction by embedding matching.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod io;
pub mod matchcore;
pub mod metrics;
pub mod par;
pub mod parse;
pub mod report;
pub mod repurpose;
pub mod runner;
pub mod scoring;
pub mod simscore;
pub mod templates;

pub use domain::{
    clamp_interval, validate_sample, Capability, CaptionedSegment, DomainError, FailureReason,
    GroundTruth, OptionLetter, ParsedPrediction, Sample, ScoreRecord, TaskKind, TimeInterval,
};
pub use par::Execution;
