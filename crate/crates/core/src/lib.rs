//! Turning-movement-count (TMC) toolkit for four-leg signalized junctions.
//!
//! The crate covers the whole loop: synthetic bimodal demand
//! ([`trafficgen`]), TMC extraction from tracked trajectories
//! ([`trajectory`]), static/dynamic/hybrid signal programs ([`signals`]), a
//! small DQN green-split learner ([`rl`]), a point-queue simulator that
//! scores programs by normalized waiting time ([`sim`]), SUMO interchange
//! files ([`sumo`]) and a grid experiment runner ([`experiment`]).

pub mod apportion;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rl;
pub mod signals;
pub mod sim;
pub mod sumo;
pub mod trafficgen;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{IntersectionGeometry, Movement, MovementSet, TmcTable, Turn, Zone};
