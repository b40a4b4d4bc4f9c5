//! Multi-turn tool-calling benchmark harness.
//!
//! An agent strategy talks to a simulated user and calls deterministic
//! domain tools; a trial is rewarded by comparing the final database with
//! a gold digest. [`runner`] drives trials, [`metrics`] turns reward
//! matrices into pass^k scores.

pub mod cli;
pub mod domain;
pub mod env;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod runner;
pub mod strategies;
pub mod usersim;
