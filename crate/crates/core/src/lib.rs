//! A laboratory for trading a single asset whose returns are driven by
//! mean-reverting predictive factors.
//!
//! The crate simulates such markets (Gaussian, Student-T and AR-GARCH
//! variants), computes the closed-form optimal trading rule with quadratic
//! transaction costs, and trains three model-free agents against it: a
//! tabular Q-learner, a double DQN and a PPO actor-critic. Everything needed
//! for the networks lives in [`nn`]; no external ML framework is used.

pub mod agent_dqn;
pub mod agent_ppo;
pub mod agent_q;
pub mod benchmark;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod stats;

pub use benchmark::{ActionRange, EstimatedModel, GpSolution};
pub use env::{EnvConfig, State, StepOutcome};
pub use error::{Error, Result};
pub use eval::{PerfSeries, Summary};
pub use sim::{FactorModelParams, GarchParams, MarketParams, MarketPath, NoiseKind};
pub use experiment::{run_experiment, run_sweep, ExperimentConfig, RunArtifacts};
