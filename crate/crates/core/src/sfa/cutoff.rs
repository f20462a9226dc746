use super::atom::AtomModel;
use crate::error::{Error, Result};
use crate::units::{photon_energy_ev, ponderomotive_ev};

/// Photon energy Ip + c·Up (eV) of the cutoff for a given law coefficient.
pub fn cutoff_energy(atom: &AtomModel, intensity: f64, wavelength_nm: f64, coefficient: f64) -> Result<f64> {
    if !(2.0..=3.5).contains(&coefficient) {
        return Err(Error::Domain {
            what: "cutoff coefficient",
            value: coefficient,
        });
    }
    Ok(atom.ip_ev() + coefficient * ponderomotive_ev(intensity, wavelength_nm))
}

/// Intensity at which harmonic `order` sits exactly at the cutoff
/// Ip + c·Up. Returns `None` when the order lies below Ip.
pub fn intensity_for_cutoff(atom: &AtomModel, order: usize, wavelength_nm: f64, coefficient: f64) -> Option<f64> {
    let excess = order as f64 * photon_energy_ev(wavelength_nm) - atom.ip_ev();
    (excess > 0.0).then(|| excess / (coefficient * ponderomotive_ev(1.0, wavelength_nm)))
}
