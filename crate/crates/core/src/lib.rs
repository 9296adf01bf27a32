//! Vulnerable agent identification for mean-field multi-agent RL.
//!
//! The crate is organized bottom-up: [`mf`] holds the mean-field value
//! types, [`envs`] the simulators, [`learn`] the cooperative victim,
//! [`robust`] the budget-conditioned value, [`select`] the upper-level
//! selectors, [`adversary`] the lower-level attacker and [`harness`] the
//! config-driven pipeline.

pub mod adversary;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learn;
pub mod mf;
pub mod robust;
pub mod select;

pub use error::{Result, VaiError};
