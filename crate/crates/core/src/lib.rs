//! Clustered pinching-antenna ISAC simulator and optimizer.
//!
//! A pinching-antenna (PA) base station activates one antenna cluster per
//! time slot along a dielectric waveguide, serving downlink users while
//! probing a radar target whose cross-section is an angle-correlated complex
//! Gaussian. This crate models the guided + free-space channels, evaluates
//! the sensing outage probability (Monte Carlo and Chernoff bound), and
//! jointly optimizes cluster selection, slot durations, intra-cluster
//! antenna positions, and user scheduling by alternating convex subproblems
//! inside a majorization-minimization loop.
//!
//! Module map:
//! - [`scenario`]: configuration, geometry, steering vectors, JSON loader
//! - [`channel`]: channel coefficients, SNRs, per-cluster sensing weights
//! - [`rcs`]: angular RCS covariance and correlated Gaussian sampling
//! - [`outage`]: accumulated SNR, Monte Carlo outage, Chernoff bound
//! - [`conic`]: backend-neutral conic programs (LP/SOC/power/exp/PSD)
//! - [`sp1`]: cluster selection + slot durations (big-M LP with DC penalty)
//! - [`sp2a`]: antenna positioning + beam matrices (penalized MM SDP)
//! - [`sp2b`]: user scheduling (big-M with exponential-cone rates)
//! - [`driver`]: the outer Chernoff-parameter search and alternating loop
//! - [`baselines`]: fixed-ULA, static-cluster, equal-slot, single-antenna,
//!   target-aligned and uniform placement reference schemes
//! - [`oracle`]: brute-force enumeration for tiny instances
//! - [`sweep`]: parameter sweeps and radiated power-field maps (CSV)

pub mod baselines;
pub mod channel;
pub mod conic;
pub mod driver;
pub mod oracle;
pub mod outage;
pub mod rcs;
pub mod scenario;
pub mod sp1;
pub mod sp2a;
pub mod sp2b;
pub mod sweep;

pub use scenario::{Point, ScenarioConfig, ScenarioError};
