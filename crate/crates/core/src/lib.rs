//! Desk-scale model of a metropolitan quantum key distribution network.
//!
//! The crate simulates a four-node trusted-node QKD ring built from dual-fibre
//! segments, passive optical distribution frames and circulators, as deployed
//! in a city-scale testbed (Nicosia). It covers the full stack from photon
//! statistics to key delivery:
//!
//! * [`linkmodel`]: analytic per-link physics (transmittance, detection and
//!   error probabilities, dead-time saturation, expected block statistics).
//! * [`keyrate`]: one-decoy finite-key analysis for three-state time-bin
//!   BB84 with key rate and QBER sweeps versus channel loss.
//! * [`topology`]: typed network description, loss resolution along fibre
//!   paths, and validation of the ring/wavelength/KMS wiring rules.
//! * [`simnet`]: seeded, reproducible discrete-event simulation of all links
//!   producing per-block key yields and time series.
//! * [`kms`]: key stores, hop-by-hop XOR relay across trusted nodes, consumer
//!   demand modelling, and a line-oriented JSON key delivery service.

pub mod keyrate;
pub mod kms;
pub mod linkmodel;
pub mod simnet;
pub mod topology;

pub use keyrate::{BlockCounts, KeyLengthResult, KeyRateError, SweepPoint};
pub use linkmodel::{ChannelState, ExpectedBlockStats, LinkError, ProtocolParams};
pub use kms::{ConsumerProfile, KeyStore, KmsError, KmsNetwork, RelayTicket};
pub use simnet::{DeviceNoise, KeyDeposit, LinkTimeSeries, NetworkRun, SimError};
pub use topology::{Diagnostic, NetworkTopology, QuantumLink, TopologyError};
