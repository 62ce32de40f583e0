//! Bounded-autonomy multi-agent room engine.
//!
//! Agents in a shared room act on player whispers, direct triggers, replies to
//! each other and periodic heartbeats. Reply chains are bounded by a
//! source-indexed decay, a per-chain depth cap and a per-room event ceiling.

pub mod catalog;
pub mod converge;
pub mod embed;
pub mod ground;
pub mod model;
pub mod policy;
pub mod rng;
pub mod runtime;
pub mod whisper;
pub mod harness;
