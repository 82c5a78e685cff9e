//! Pseudo-spectral solver for finite-strain Kelvin-Voigt viscoelasticity in
//! Eulerian velocity/deformation-gradient form, with a second-grade
//! (gradient-of-strain-rate) viscosity and stabilized transport.
//!
//! On a rectangle with impermeable walls the unknowns are the velocity `v`
//! and the deformation gradient `F`, governed by
//!
//! ```text
//!   rho Dv/Dt = div(T + D) - (rho/2)(div v) v + f,
//!          T  = phi'(F) F^T + phi(F) I,
//!          D  = DE(v) - div( nu |grad E(v)|^(p-2) grad E(v) ),
//!   DF/Dt     = (grad v) F + eps Lap F,
//! ```
//!
//! where `D/Dt = d/dt + (v.grad)` is the material derivative, `E(v)` the
//! symmetrized velocity gradient, `DE(v)` its linear viscous stress, `phi`
//! the stored energy density, and `eps >= 0` a transport regularization
//! closed by the natural boundary conditions of the deformation families.
//! The `(rho/2)(div v) v` term
//! makes convection energy-neutral without relying on mass conservation, so
//! the semi-discrete system inherits an exact energy balance: kinetic plus
//! stored energy changes only through viscous dissipation, the `eps` penalty,
//! and the power of external loads.
//!
//! Boundary conditions: `v.n = 0` holds identically through the choice of
//! velocity basis and tangential traction enters as a boundary load. The
//! deformation-gradient components inherit the parity the velocity families
//! force: the diagonal ones live in the cosine (Neumann) family, while the
//! shear ones live in the double-sine family and vanish on the walls, which
//! is exactly how wall-compatible data behaves (particles pinned to a wall
//! shear only along it).
//!
//! Module map:
//! - [`basis`]: mixed sine/cosine spectral basis, transforms, quadrature
//! - [`field`]: tensor fields with dual grid/coefficient representation
//! - [`constitutive`]: stored energy, conservative and viscous stresses
//! - [`imex`]: additive Runge-Kutta tableau (stiff part implicit)
//! - [`dynamics`]: semi-discrete right-hand sides and the time stepper
//! - [`energy`]: energy ledger and a-priori monitors
//! - [`kinematics`]: characteristics, particle paths, transport checks
//! - [`parallel`]: deterministic data-parallel kernels

pub mod basis;
pub mod constitutive;
pub mod dynamics;
pub mod energy;
pub mod field;
pub mod imex;
pub mod kinematics;
pub mod parallel;

pub use basis::{Domain, Edge, Family, GalerkinBasis, Parity};
pub use constitutive::{MaterialParams, StoredEnergy, StoredEnergyKind};
pub use dynamics::{
    InitialDeformation, InitialVelocity, Observation, Scenario, SimState, Solver, StepDiagnostics,
    F_FAMILIES,
};
pub use energy::{AprioriMonitors, EnergyLedger, LedgerSample};
pub use field::TensorField;
pub use kinematics::{
    characteristics_oracle, det_transport_check, return_map_defect, return_map_defects,
    HermiteVelocity, ParticlePath, SpectralVelocity, VelocityProvider, VelocitySample,
};
