//! Core algorithms for the HumAIne adaptive dialogue engine.
//!
//! Everything in this crate is `no_std` + `alloc`: interaction metrics,
//! synthetic personas, the two-phase user profiler (supervised warm start plus
//! online PPO), prompt parameterisation, a deterministic mock responder with
//! lexical retrieval, the A/B statistics pipeline and the experiment harness.
//! File formats, HTTP and the command line live in the `humaine` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod error;
pub use error::{Error, Result};

pub mod conversation;
pub mod experiment;
pub mod gateway;
pub mod live;
pub mod math;
pub mod metrics;
pub mod persona;
pub mod profiler;
pub mod prompt;
pub mod rng;
pub mod stats;
pub mod text;

pub use conversation::{
    Arm, Author, EventKind, EventLog, FeedbackEvent, Liked, SessionEvent, SessionLog,
    SessionRecord, SurveyResponse, Timestamp, TurnRecord, Utterance,
};
pub use metrics::{FeatureVector, MetricsConfig, FEATURE_LEN};
pub use persona::{Domain, Persona};
pub use profiler::{AdaptationAction, PpoConfig, UserProfile};
pub use prompt::PromptParameters;
