//! Deterministic multi-agent collaborative-perception simulator.
//!
//! Agents sense a synthetic 2.5D world through proxy LiDAR and camera
//! encoders, share a compressed voxel prior, fuse modalities, and then
//! exchange sparse instance vectors selected from heatmap discrepancies.
//! Every message crosses a byte-exact wire format and is charged to a
//! ledger under an optional budget.

pub mod collab;
pub mod comms;
pub mod config;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod grid;
pub mod par;
pub mod scene;
pub mod selftest;

pub use error::{Error, Result};
