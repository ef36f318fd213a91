//! Separated-latent trajectory transformers for offline RL in stochastic
//! environments.
//!
//! Two discrete-latent sequence VAEs, one for the ego policy and one for the
//! world, are trained on logged trajectories. At decision time every pair of
//! latent codes is rolled out and the action is picked by maximizing, over
//! policy codes, the worst return over world codes.

pub mod checkpoint;
pub mod container;
pub mod data;
pub mod env;
pub mod harness;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod graph;
pub mod optim;
pub mod params;
pub mod planner;
pub mod rng;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use graph::{Gradients, Tape, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
