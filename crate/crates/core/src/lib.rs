//! Frequency-domain modeling of continuous-variable entanglement distribution.
//!
//! The toolkit models a pair of below-threshold optical parametric amplifiers
//! whose squeezed outputs interfere on a beam splitter, propagate through a
//! lossy detection chain, and are scored against two-mode entanglement
//! criteria. All quadrature variances are vacuum-normalized: the vacuum state
//! has unit variance in every quadrature.
//!
//! Module layout mirrors the signal path:
//!
//! * [`quadrature`] — shared frequency-grid and covariance types
//! * [`cavity`] — linear cavity figures (free spectral range, finesse, buildup)
//! * [`opa`] — squeezing spectra, focusing integral, parametric threshold
//! * [`channel`] — beam-splitter entangler, loss maps, detector gains and dark noise
//! * [`criteria`] — Duan and Reid entanglement witnesses
//! * [`analyzer`] — swept-spectrum synthesis mimicking a spectrum analyzer
//! * [`montecarlo`] — time-series oracle with Welch spectral estimation
//! * [`fitkit`] — bounded Levenberg–Marquardt parameter extraction
//! * [`config`] — serde-backed experiment description and resolution

pub mod analyzer;
pub mod cavity;
pub mod channel;
pub mod config;
pub mod criteria;
pub mod error;
pub mod fitkit;
pub mod montecarlo;
pub mod opa;
pub mod quadrature;

pub use error::{Error, Result};
