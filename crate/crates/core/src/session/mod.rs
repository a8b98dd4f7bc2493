//! Configuration, per-trial logs, replay and session output.

pub mod config;
pub mod log;
pub mod protocol;
pub mod summary;

pub use config::{load_config, parse_config, SessionConfig, OUT_DIR_ENV};
pub use log::{read_log, replay, write_log};
pub use protocol::{ModeReport, Session};
pub use summary::SessionDir;
