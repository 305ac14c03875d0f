//! Task-oriented MIMO precoding for cooperative edge classification.
//!
//! Devices observe slices of a Gaussian-mixture feature vector and transmit
//! them through linear precoders over a MIMO channel; a server classifies the
//! received signal by MAP. Precoders are chosen to maximize the coding rate
//! reduction of the received signal, either by block coordinate ascent or by
//! unfolded networks trained on that objective.

pub mod artifact;
pub mod bca;
pub mod error;
pub mod inference;
pub mod mcr2;
pub mod mm;
pub mod model;
pub mod numerics;
pub mod seed;
pub mod unfolded;

#[cfg(test)]
mod testutil;

pub use bca::PrecodingProblem;
pub use error::{Error, Result};
pub use inference::{AccuracyStats, MonteCarlo, Precoding};
pub use model::{ChannelState, DeviceConfig, FeatureBatch, GmModel, HermitianPsd, PrecoderSet, RicianParams, Scenario, SystemConfig};
pub use numerics::{CMatrix, C64};
pub use unfolded::{UnfoldedNet, Variant};
