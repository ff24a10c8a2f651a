//! Macroscopic crowd modeling, forecasting, and socially aware planning.
//!
//! The pipeline converts pedestrian trajectories into grid fields of density,
//! mean velocity, and velocity variance ([`grid`]), learns a lightweight
//! convolutional-LSTM forecaster over those fields ([`forecast`] on top of the
//! [`nn`] autodiff engine), and plans robot trajectories that minimize social
//! invasiveness through the predicted crowd ([`invasive`], [`plan`]).
//! Synthetic scenarios ([`sim`]), dataset ingestion ([`ingest`]), evaluation
//! ([`eval`]), and field rendering ([`render`]) round out the toolkit.
//!
//! With the `parallel` feature (on by default) the data-parallel inner loops
//! run on rayon; results are bitwise identical to the sequential fallback
//! because every parallel loop writes disjoint outputs in a fixed order.

pub mod cfld;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod grid;
pub mod ingest;
pub mod invasive;
pub mod nn;
pub mod par;
pub mod plan;
pub mod render;
pub mod sim;

pub use error::{Error, Result};
