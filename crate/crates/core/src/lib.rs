//! Prompt-based augmentation of dialogue classification data with an
//! iterative, entropy-filtered weak labeler.
//!
//! The crate is organised the way a run flows:
//!
//! * [`corpus`] loads gold data and draws few-shot samples,
//! * [`prompt`] renders dialogue contexts into prefix prompts,
//! * [`genbackend`] talks to a text generator (seeded mock or HTTP),
//! * [`augment`] turns gold conversations into silver candidates,
//! * [`weaklabel`] trains the weak labeler and filters candidates by entropy,
//! * [`pipeline`] iterates augment, filter, train and evaluate until convergence,
//! * [`baselines`] provides EDA, AEDA and random in-context prompting,
//! * [`eval`] computes the task metrics.

pub mod augment;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod genbackend;
pub mod pipeline;
pub mod prompt;
pub mod seed;
pub mod weaklabel;

pub use augment::{AugmentPlan, Candidate, Payload, Strategy, Verdict};
pub use corpus::{
    Conversation, DialogueLabels, LabelId, LabelSpace, LabeledUtterance, Partition, Provenance,
    Speaker, Task, Turn,
};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, MetricReport};
pub use genbackend::{Completion, GenParams, Generator, HttpBackend, MockGenConfig, MockGenerator};
pub use pipeline::{LoopConfig, LoopState, Metric, Regen};
pub use prompt::{LabelMode, PromptSpec, RenderedPrompt};
pub use weaklabel::{FilterConfig, ProbVector, TrainConfig, WeakLabeler};
