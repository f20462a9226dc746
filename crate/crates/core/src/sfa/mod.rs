//! Single-atom response in the strong-field approximation (atomic units).

mod atom;
mod cutoff;
mod dipole;
mod drive;

pub use atom::{AtomModel, Species};
pub use cutoff::{cutoff_energy, intensity_for_cutoff};
pub use dipole::{
    bound_free_dipole, diffusion_prefactor, dipole_moment, dipole_series, harmonic_components,
    harmonic_components_unchecked, ionization_rate, quasiclassical_action, stationary_momentum, DipoleSeries,
    HarmonicComponents, SfaNumerics,
};
pub use drive::{DriveWaveform, Envelope};
