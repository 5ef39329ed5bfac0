//! Simulation and parameter estimation for strain-tuned quadrupolar nuclear
//! spins of ionized donors in silicon.
//!
//! The crate is organised along the forward chain
//! strain → electric field gradient → spin Hamiltonian → spectra / decay,
//! plus the inverse problems that recover `g_n`, `f_Q`, the gradient-elastic
//! constants and coherence scaling exponents from data.
//!
//! * [`spin`] – spin operators, Hamiltonian, exact diagonalization and the
//!   perturbative quadrupole shifts.
//! * [`strain`] – thermal-mismatch elasticity and the strain → EFG map.
//! * [`dynamics`] – pulses on the density matrix, square-pulse excitation
//!   profiles and filter-function coherence decay.
//! * [`endor`] – population model of the ED ENDOR protocol and spectrum
//!   synthesis.
//! * [`estimator`] – damped least squares and the model-specific fits.
//! * [`seqlang`] – the `.qsx` experiment description language.

pub mod constants;
pub mod dynamics;
pub mod endor;
pub mod error;
pub mod estimator;
pub mod quadrature;
pub mod seqlang;
pub mod spin;
pub mod strain;

pub use constants::PhysicalConstants;
pub use dynamics::{DecayCurve, DensityState, NoiseModel, Pulse, PulseSequence, SequenceEvent};
pub use endor::{BroadeningModel, EndorConfig, PopulationVector, Spectrum};
pub use error::{Error, Result};
pub use estimator::{FitProblem, FitResult};
pub use spin::{
    FieldConfig, NuclearHamiltonian, Projection, Spin, SpinSystem, Transition, TransitionKind,
    TransitionTable,
};
pub use strain::{EfgTensor, GradientElasticTensor, StiffnessConstants, StrainTensor};
