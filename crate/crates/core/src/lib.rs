//! Path-integral Monte Carlo for transverse-field Ising models that have been
//! minor-embedded into a larger physical graph, with exact small-system
//! oracles and finite-size-scaling analysis.
//!
//! ```
//! use embedqmc::{EmbeddedProblem, ModelParams, NativeProblem};
//! use embedqmc::qmc::{run, Mode, QmcRunConfig};
//!
//! let native = NativeProblem::square_lattice_afm(2).unwrap();
//! let embedded = EmbeddedProblem::random_realization(&native, 2.0, -2.0, 7).unwrap();
//! let params = ModelParams::new(1.0, 1.0).unwrap();
//! let mut cfg = QmcRunConfig::new(Mode::Lc, 200, 16, 1);
//! cfg.thermalization_sweeps = 50;
//! let out = run(&embedded, params, cfg).unwrap();
//! assert_eq!(out.records.len(), 200);
//! ```

pub mod analysis;
pub mod embedding;
pub mod error;
pub mod model;
pub mod observables;
pub mod oracle;
pub mod qmc;
pub mod seeding;

pub use embedding::{EmbeddedProblem, Embedding, DEFAULT_J_F};
pub use error::{Error, Result};
pub use model::{Bond, ModelParams, NativeProblem, SpinConfig};
pub use observables::{BinningOptions, Estimate};

/// Generator used for every stochastic component.
pub type SimRng = rand_chacha::ChaCha8Rng;
