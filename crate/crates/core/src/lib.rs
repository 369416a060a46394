//! Numerical laboratory for the complex Φ⁴₂ model on the two-torus 𝕋² = (ℝ/2πℤ)².
//!
//! Fields are stored as Fourier coefficients on the lattice ball ⟨n⟩ ≤ N_cut with
//! ⟨n⟩ = (1+|n|²)^{1/2}. Every spatial average is the normalized mode sum
//! (2π)⁻²∫, so S₂(u) = Σ|û(n)|² and S₄(u) = avg_x |u(x)|⁴.

pub mod counting_tensors;
pub mod error;
pub mod experiments_cli;
pub mod gibbs_measures;
pub mod noise_and_flows;
pub mod nonlinearity;
pub mod spectral_core;
pub mod stochastic_objects;
pub mod util;
pub mod wiener_chaos;
pub mod xsb_analysis;

pub use error::{PhiError, Result};
pub use spectral_core::{FourierField, ModeLattice};
