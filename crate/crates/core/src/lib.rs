//! Reinforcement-learning driven sensor placement and frequency selection for
//! nonlinear inverse wave scattering.
//!
//! The crate is organised bottom-up:
//!
//! * [`special`], [`forward`]: Green's functions and the truncated Born-series
//!   measurement map with its adjoint.
//! * [`domain`], [`dataset`]: imaging geometries and calibrated scatterer sets.
//! * [`recon`]: ℓ1-regularised least-squares reconstruction with L-BFGS.
//! * [`env`]: the sequential sensing task (state, actions, PSNR rewards).
//! * [`nn`], [`agent`]: a small reverse-mode toolkit and the recurrent policy
//!   and value networks.
//! * [`ppo`]: the clipped-surrogate trainer; [`eval`]: comparison strategies
//!   and report export; [`config`]: the flat `key = value` run configuration.

pub mod agent;
pub mod config;
pub mod container;
pub mod dataset;
pub mod domain;
pub mod env;
pub mod error;
pub mod eval;
pub mod forward;
pub mod nn;
pub mod ppo;
pub mod recon;
pub mod special;

pub use agent::{NetConfig, PolicyNet, ValueNet};
pub use config::RunConfig;
pub use container::{Container, NamedTensor};
pub use dataset::{
    build_dataset, calibrate_intensity, load_dataset, save_dataset, DatasetSpec, GeneratorTag,
    ScattererDataset,
};
pub use domain::{make_domain, DomainSpec, Geometry, ScattererField};
pub use env::{EnvConfig, EpisodeState, SensingAction, SensingEnv};
pub use error::{Error, Result};
pub use eval::{EvalReport, Strategy, StrategyKind};
pub use forward::{ForwardOptions, FrequencyBank, GreensKernel, MeasurementRecord, ProbeSet};
pub use ppo::{TrainConfig, TrainMode, Trainer};
pub use recon::{LbfgsOptions, PsnrPeak, ReconstructionProblem};
