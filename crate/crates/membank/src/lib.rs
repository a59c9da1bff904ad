//! Closed-loop agent memory with test-time scaling.
//!
//! The pipeline: an agent runs episodes against an environment, a judge labels
//! each finished trajectory Success or Failure without ground truth, an
//! extractor distills the trajectory into at most three strategy items, and the
//! items are appended to a persistent memory bank. Before each new task the
//! bank is queried by embedding similarity and the retrieved items are injected
//! into the agent's system instruction. Scaling modes spend extra rollouts
//! (parallel, with best-of-N selection and self-contrast extraction) or extra
//! refinement rounds (sequential, with note capture) on a single task and feed
//! the richer signal back into the same bank.
//!
//! Modules map one-to-one onto the moving parts:
//!
//! - [`memory`] — item schema, append-only bank, on-disk formats
//! - [`retrieval`] — embedding providers and top-k cosine search
//! - [`gateway`] — backend contract, scripted/HTTP backends, prompt templates
//! - [`agent`] — episode runner, action parsing, scripted worlds
//! - [`judgment`] — success/failure judging and memory extraction
//! - [`scaling`] — parallel and sequential test-time scaling
//! - [`harness`] — streaming task driver, metrics, reports, checkpoints
//! - [`config`] — run configuration and validation

pub mod agent;
pub mod config;
pub mod gateway;
pub mod harness;
pub mod judgment;
pub mod memory;
pub mod retrieval;
pub mod scaling;
pub mod testing;
