//! Representational similarity through row-stochastic (Markov) matrices.
//!
//! RSM-based measures that act on centered RSMs and ignore positive
//! rescalings can be evaluated on the affine Markov embedding
//! `P(S) = 1q^T + alpha(S) C_q(S)` instead of the RSM itself. That opens two
//! families of variants implemented here:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | representation matrices, linear / RBF / distance RSMs |
//! | [`centering`] | uniform and q-weighted double centering |
//! | [`markov`] | embedding, `alpha`, matrix powers, alternating-diffusion fusion |
//! | [`measures`] | CKA, DistCorr, their Markov, multi-scale and AD variants |
//! | [`eval`] | ReSi tests 1/2 and GRS benchmark 4 protocols, rank correlations |
//! | [`io`] | binary matrix files, CSV, manifests and reports |
//!
//! ```
//! use markov_rsm::kernels::{linear_rsm, RepMatrix};
//! use markov_rsm::measures::{cka, cka_via_markov};
//! use ndarray::array;
//!
//! let a = linear_rsm(&RepMatrix::new(array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]]).unwrap());
//! let b = linear_rsm(&RepMatrix::new(array![[0.5], [2.0], [-1.0]]).unwrap());
//! let direct = cka(&a, &b).unwrap().value;
//! let markov = cka_via_markov(&a, &b).unwrap().value;
//! assert!((direct - markov).abs() < 1e-12);
//! ```

pub mod centering;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod markov;
pub mod measures;
pub mod selftest;

pub use error::{Error, Result};
