//! Stationary Gaussian Markov random fields on a square torus.
//!
//! The field X lives on the p×p torus Λ and has precision matrix
//! (I − C(θ))/σ², where C(θ) is the symmetric block circulant operator
//! generated by a parameter grid θ with θ[0,0] = 0 and θ[i,j] = θ[−i,−j].
//! Everything in this crate exploits the exact diagonalization of C(θ) by
//! the 2D discrete Fourier transform.
//!
//! Module map:
//!
//! * [`torus`] — lattice geometry, symmetry orbits, nested neighborhood
//!   models, and their dimension combinatorics.
//! * [`circulant`] — θ ↔ C(θ) algebra, the Ψ orbit-indicator basis, exact
//!   spectra, and dense validation oracles for small p.
//! * [`field`] — the GMRF distribution: exact spectral sampling, lag
//!   covariances, Kullback–Leibler divergences, variance bounds, and the
//!   closed-form asymptotic examples.
//! * [`contrast`] — periodograms, the conditional least-squares contrast,
//!   ℓ1-constrained projection estimators, loss, and penalized model
//!   selection.
//! * [`chaos`] — suprema of order-2 Rademacher/Gaussian chaos: the deviation
//!   functionals D and E, tail experiments, and model-pair statistics.
//! * [`minimax`] — hypercube constructions, Varshamov–Gilbert codes, Birgé's
//!   lemma, and the resulting risk lower bounds.
//! * [`cli`] — the `gmrf` command-line front end (reproducible experiments,
//!   CSV/JSON/SVG outputs, run manifests).

pub mod chaos;
pub mod circulant;
pub mod cli;
pub mod contrast;
mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod minimax;
pub mod torus;

pub use error::{Error, Result};
