//! Physical constants and the conversions between laboratory units and
//! atomic units. The single-atom code works entirely in atomic units; every
//! other module works in laboratory units (nm, fs, µm, mm, W/cm², Torr).

use std::f64::consts::PI;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Electron mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// One Torr in Pa.
pub const TORR: f64 = 101_325.0 / 760.0;

/// Hartree energy in eV.
pub const HARTREE_EV: f64 = 27.211_386_245_988;
/// Atomic unit of time in fs.
pub const AU_TIME_FS: f64 = 2.418_884_326_585_7e-2;
/// Bohr radius in nm.
pub const BOHR_NM: f64 = 5.291_772_109_03e-2;
/// Speed of light in atomic units.
pub const C_AU: f64 = 137.035_999_084;
/// Peak intensity (W/cm²) of a linearly polarized field of 1 a.u. amplitude,
/// using I = ½ c ε₀ E².
pub const AU_INTENSITY_WCM2: f64 = 3.509_445_e16;
/// Atomic unit of dipole moment (e a₀) in C m.
pub const AU_DIPOLE_CM: f64 = 8.478_353_625_5e-30;

/// Angular frequency in a.u. of light of the given vacuum wavelength.
pub fn omega_au(wavelength_nm: f64) -> f64 {
    2.0 * PI * C_AU * BOHR_NM / wavelength_nm
}

/// Angular frequency in rad/s.
pub fn omega_si(wavelength_nm: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

/// Photon energy in eV.
pub fn photon_energy_ev(wavelength_nm: f64) -> f64 {
    omega_au(wavelength_nm) * HARTREE_EV
}

/// Peak field (a.u.) for a peak intensity in W/cm².
pub fn field_au_from_intensity(intensity_wcm2: f64) -> f64 {
    (intensity_wcm2.max(0.0) / AU_INTENSITY_WCM2).sqrt()
}

pub fn intensity_from_field_au(field_au: f64) -> f64 {
    field_au * field_au * AU_INTENSITY_WCM2
}

pub fn fs_to_au(t_fs: f64) -> f64 {
    t_fs / AU_TIME_FS
}

pub fn au_to_fs(t_au: f64) -> f64 {
    t_au * AU_TIME_FS
}

pub fn ev_to_au(e_ev: f64) -> f64 {
    e_ev / HARTREE_EV
}

/// Ponderomotive energy e²E²/4mω² in eV, evaluated in SI.
pub fn ponderomotive_ev(intensity_wcm2: f64, wavelength_nm: f64) -> f64 {
    let field = (2.0 * intensity_wcm2 * 1e4 / (SPEED_OF_LIGHT * EPSILON_0)).sqrt();
    let omega = omega_si(wavelength_nm);
    let joules = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE * field * field / (4.0 * ELECTRON_MASS * omega * omega);
    joules / ELEMENTARY_CHARGE
}

/// Wavenumber in rad/µm.
pub fn wavenumber_per_um(wavelength_nm: f64) -> f64 {
    2.0 * PI / (wavelength_nm * 1e-3)
}

/// Ideal-gas number density in cm⁻³.
pub fn number_density_cm3(pressure_torr: f64, temperature_k: f64) -> f64 {
    pressure_torr * TORR / (BOLTZMANN * temperature_k) * 1e-6
}

/// Converts a frequency offset (rad/fs) about a carrier of wavelength
/// `wavelength_nm` into a wavelength offset in Å (positive = red).
pub fn angular_offset_to_angstrom(d_omega_per_fs: f64, wavelength_nm: f64) -> f64 {
    let lambda_m = wavelength_nm * 1e-9;
    -lambda_m * lambda_m / (2.0 * PI * SPEED_OF_LIGHT) * d_omega_per_fs * 1e15 * 1e10
}

/// Converts a frequency offset (rad/fs) into a photon-energy offset in eV.
pub fn angular_offset_to_ev(d_omega_per_fs: f64) -> f64 {
    HBAR * d_omega_per_fs * 1e15 / ELEMENTARY_CHARGE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ponderomotive_reference_value() {
        let up = ponderomotive_ev(6e14, 825.0);
        assert!((up - 38.1).abs() < 0.2, "{up}");
    }

    #[test]
    fn au_and_si_intensity_agree() {
        let e_au = field_au_from_intensity(1e14);
        let up_au = e_au * e_au / (4.0 * omega_au(800.0).powi(2));
        let up = ponderomotive_ev(1e14, 800.0);
        assert!((up_au * HARTREE_EV - up).abs() / up < 1e-5);
    }

    #[test]
    fn photon_energy_at_825() {
        assert!((photon_energy_ev(825.0) - 1.503).abs() < 1e-3);
    }

    #[test]
    fn gas_density() {
        let n = number_density_cm3(15.0, 293.0);
        assert!((n / 4.95e17 - 1.0).abs() < 0.01, "{n}");
    }
}
