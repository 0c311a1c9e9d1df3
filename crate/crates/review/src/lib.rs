//! Interactive review of suspected label errors.
//!
//! A single [`Session`] holds one dataset, a model and a queue of samples
//! flagged by the margin detector. A reviewer keeps or relabels queue items
//! through the JSON API in [`api`] and triggers retraining by hand.

pub mod api;
pub mod session;

pub use api::{router, serve, AppState, RetrainGuard};
pub use session::{Action, Decision, DecisionOutcome, QueueItem, QueuePage, Session, SessionConfig, SessionError, Stats};
