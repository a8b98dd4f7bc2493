//! Real-time gateway to the orthosis simulator.
//!
//! [`engine::BridgeEngine`] advances the simulation one tick at a time and
//! applies client commands between ticks. [`server`] runs it against the
//! wall clock and talks to clients over newline-delimited JSON on raw TCP
//! or WebSocket.

pub mod codec;
pub mod engine;
pub mod server;

pub use codec::{Command, ServerMessage, StateFrame};
pub use engine::BridgeEngine;
pub use server::{serve, BridgeHandle, ServerOptions, DEFAULT_PORT};
