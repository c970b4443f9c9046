//! Hybrid hand pose estimation from single depth frames.
//!
//! A regression forest turns a depth image into a handful of weighted 3D
//! proposals per hand joint; a particle swarm then fits an anatomically
//! constrained kinematic hand model to those proposals.

pub mod cli;
pub mod depth_synth;
pub mod eval;
pub mod hand_model;
pub mod kv;
pub mod forest;
pub mod optimizer;
pub mod seeding;
