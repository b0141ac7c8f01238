//! Self-stabilizing group communication: bounded epoch labels, practically
//! unbounded counters, a token-passing data link, a heartbeat failure
//! detector and virtual synchrony, plus a deterministic simulator with
//! arbitrary initial states and trace checkers.

pub mod automaton;
pub mod counter;
pub mod error;
pub mod fd;
pub mod label;
pub mod labeling;
pub mod link;
pub mod queue;
pub mod sim;
pub mod vs;
