//! Deterministic human-in-the-loop simulator of a wrist-controlled,
//! tendon-driven grasping orthosis.
//!
//! The crate covers the signal path from a pair of IMU orientations to a
//! wrist angle ([`kinematics`]), the throttle, binary and proportional
//! wrist-angle controllers ([`control`]), the hand/object force model
//! ([`plant`]), a virtual participant ([`participant`]), the experiment
//! protocols ([`trials`]) and configuration/logging ([`session`]).

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod kinematics;
pub mod parallel;
pub mod participant;
pub mod plant;
pub mod session;
pub mod sim;
pub mod trials;

pub use error::{Error, Result};
