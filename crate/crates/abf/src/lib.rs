//! Numerical laboratory for the bi-channel adaptive biasing force (ABF) model.
//!
//! Two channels on `𝕋 × ℝ` are described by potentials `V_0`, `V_1` that agree
//! outside an exclusion region `ℰ ⊂ 𝕋`; a walker `(X_t, I_t)` diffuses on the
//! current channel under the adaptively biased drift `−∇(V_{I_t} − A_t∘ξ)` and
//! switches channel at rate `λ(x) = λ·1_{𝕋\ℰ}(x)`, with `ξ(x, y) = x`. The same
//! model is solved as a nonlinear Fokker-Planck system on a grid, and both paths
//! feed entropy diagnostics and a spectral-gap rate prediction for the long-time
//! decay of the microscopic entropy.
//!
//! The crate is organised around five building blocks:
//!
//! * [`model`] — potential systems, hypothesis checks, reference free energy;
//! * [`fokker_planck`] — stationary-preserving finite-volume solver;
//! * [`sde`] — ensemble Euler-Maruyama sampler with thinned channel jumps;
//! * [`diagnostics`] — entropies, Fisher information, Wasserstein, rate fits;
//! * [`spectral`] — the channel-coupled operator, its gap, LSI estimates and
//!   the predicted decay rate.
//!
//! A narrative guide with runnable snippets lives in the `book/` directory of
//! the repository; the snippets are compiled as doc-tests.

pub mod diagnostics;
pub mod error;
pub mod fokker_planck;
pub mod grid;
pub mod model;
mod numerics;
pub mod sde;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::Grid;
pub use model::{BiChannelSystem, Exclusion, FreeEnergyProfile, HypothesisReport, PotentialSpec};
pub use fokker_planck::{BiasProfile, DensityField, InitialCondition};
