//! Detection and characterization of coherent errors in quantum channels,
//! gates, measurements, and state preparation.
//!
//! The toolkit simulates GHZ-based parity protocols exactly (transfer
//! product and brute-force density matrices), models noisy circuits with
//! mid-circuit measure/reset and randomized compiling, and recovers the
//! coherent part (rotation angle and axis) of a near-identity error from
//! the quadratic growth of error rates with the number of qubits.
//!
//! Start from the `examples/` directory: each file is a runnable
//! demonstration of one capability (channel protocol, gate protocol,
//! measurement protocol, state-preparation test, qudit sweep, twirling,
//! accumulation orders). The `coherence-scope` binary drives the same
//! machinery from JSON configs.

pub mod accumulation;
pub mod channel;
pub mod circuit;
pub mod coherence;
pub mod config;
pub mod error;
pub mod estimator;
pub mod ghz;
pub mod linalg;
pub mod qudit;
pub mod rng;
pub mod runner;

pub use channel::{ChoiMatrix, KrausChannel};
pub use coherence::{CoherenceParams, QubitCoherence, QuditCoherence};
pub use error::{Error, Result};
pub use estimator::{CoherenceEstimate, FitReport, Verdict};
pub use ghz::{GhzBasis, GhzExperiment, GhzResultRow};
