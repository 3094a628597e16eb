//! Head detection and tracking toolkit for dense crowd footage.
//!
//! Covers MOT-style annotation I/O and dataset statistics, per-frame motion
//! and auxiliary maps, a small differentiable multi-source fusion network,
//! SORT/ByteTrack style tracking, CLEAR/identity/AP metrics and a synthetic
//! crowd simulator for end-to-end checks.

pub mod cli;
pub mod fusion;
pub mod geometry;
pub mod metrics;
pub mod mot_io;
pub mod motion_maps;
pub mod scenario_sim;
pub mod tracker;
