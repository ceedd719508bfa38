//! Dynamic matrix factorization with social trust regularization.
//!
//! User factors evolve through a constant-velocity state-space prior and are
//! pulled toward trusted neighbours by a graph Laplacian penalty. The whole
//! trajectory is estimated by one large, sparse least-squares problem that is
//! never assembled: every operator is applied matrix-free and the problem is
//! minimized with L-BFGS.
//!
//! Pipeline: [`ingest`] → [`static_factorizer`] → [`smoother_ops`] +
//! [`optimizer`] → [`experiment`].

pub mod domain;
pub mod error;
pub mod experiment;
pub mod graph_laplacian;
pub mod ingest;
pub mod matio;
pub mod optimizer;
pub mod smoother_ops;
pub mod static_factorizer;

pub use domain::{
    FactorPair, FactorTimeline, ProcessNoiseBlock, RatingObservation, RatingsTimeline,
    SmootherConfig, SmootherState, TrustGraph, TrustTimeline,
};
pub use error::{Error, Result};
