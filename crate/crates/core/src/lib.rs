//! Occupancy-grid indoor exploration engine.
//!
//! A building is a [`grid::GroundTruthMap`]; an episode accumulates sensor
//! readings into an [`grid::ObservationGrid`], optionally augmented by a map
//! predictor, while a planner or remote agent picks one of eight compass moves
//! per step.

pub mod environment;
pub mod evaluation;
pub mod floorplan;
pub mod grid;
pub mod planner;
pub mod predictor;
pub mod seed;
pub mod sensor;
pub mod server;
