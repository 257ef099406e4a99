//! Event-driven limit order book simulation and the stochastic toolkit
//! around it: homogeneous / doubly stochastic (Cox) order flows, the
//! order-flow-imbalance process built on top of them, generalized inverse
//! Gaussian / generalized hyperbolic numerics, a harness that measures
//! empirical convergence of rescaled OFI processes to their limit laws,
//! and an estimation pipeline for event logs.

pub mod book;
pub mod config;
pub mod dist;
pub mod estimate;
pub mod flows;
pub mod limits;
pub mod ofi;
pub mod rng;
pub mod stats;

pub use book::{BookEvent, BookState, EventKind, Side};
pub use estimate::{EventLog, GigFit};
pub use flows::{RateConfig, SubordinatorFamily, SubordinatorSpec};
pub use limits::{ConvergenceReport, LimitScalingSchedule};
pub use ofi::{JumpLaw, OfiPath, SizeDist};
