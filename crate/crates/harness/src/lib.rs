//! Configuration, reports, wire protocol and session orchestration for the
//! COW plug-and-play simulator.
//!
//! The classical channel implemented here carries the simulated optical
//! frames in plaintext and has no authentication. It is a simulation
//! harness, not a cryptographic product.

pub mod config;
pub mod report;
pub mod session;
pub mod wire;

pub use config::{parse_config, parse_config_with, Config, ConfigError, Mode, Preset};
pub use report::{emit_report, Format, SessionReport};
pub use session::{connect, run_single, serve, serve_one, Phase, SessionError, SessionOutcome};
pub use wire::{decode_message, encode_message, DecodeError, Message, MsgType};

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const PROTOCOL: i32 = 3;
    pub const ABORT: i32 = 4;
}
