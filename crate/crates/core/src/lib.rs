//! Generalised Network GARCH (GNGARCH) volatility modelling.
//!
//! GARCH dynamics embedded in a network: each node's conditional variance
//! reacts to its own history and to stage-weighted neighbour history, with
//! dynamic conditional covariance updates, a threshold (GTN) extension for
//! leverage effects, quasi-maximum-likelihood estimation against the
//! squared-return proxy, VARMA-form verification, stylised-fact diagnostics,
//! and correlation-threshold network construction from return panels.

pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod io;
pub mod market;
pub mod model;
pub mod panel;
pub mod params;
pub mod varma;

pub use error::{GngarchError, Result};
pub use graph::{
    connection_weights, masked_weights, stage_adjacency, stage_neighborhoods, ConnectionWeights,
    NetworkMasks, NetworkTopology, StageAdjacency, StageNeighborhoods,
};
pub use model::{
    assemble_sigma, covariance_update, forecast, gtn_coefficient_matrices, gtn_covariance_update,
    gtn_variance_update, make_pd, model_trace, simulate, stationarity_check, variance_update,
    CovState, ModelTrace, SimulationConfig, SimulationOutput,
};
pub use panel::ReturnPanel;
pub use params::{GlobalParams, OrderSpec, ParamSet, ThresholdParams};
