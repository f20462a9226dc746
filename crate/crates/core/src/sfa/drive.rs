use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::units::{self, AU_TIME_FS};

/// Temporal envelope of the drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Envelope {
    /// Constant amplitude (monochromatic field). The width only matters to
    /// pipelines that integrate over the pulse.
    Square { width_fs: f64 },
    /// Gaussian in intensity with the given FWHM.
    Gaussian { fwhm_fs: f64 },
}

/// Linearly polarized drive field.
///
/// The vector potential is A(t) = −(E₀/ω) g(t) sin θ(t) with
/// θ(t) = ωt + φ_c + b t², so a zero carrier phase gives a cosine field
/// E(t) = −∂A/∂t with E(0) = E₀.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveWaveform {
    pub wavelength_nm: f64,
    pub peak_intensity: f64,
    pub envelope: Envelope,
    /// Quadratic temporal phase coefficient b in rad/fs².
    pub chirp_coeff: f64,
    /// Carrier phase φ_c (0 = cosine, −π/2 = sine).
    pub carrier_phase: f64,
    /// When set the envelope is frozen at its peak value.
    pub adiabatic: bool,
}

impl DriveWaveform {
    /// Monochromatic cosine drive at fixed intensity.
    pub fn monochromatic(wavelength_nm: f64, intensity: f64) -> Result<Self> {
        Self::new(
            wavelength_nm,
            intensity,
            Envelope::Square { width_fs: 150.0 },
            0.0,
            0.0,
            true,
        )
    }

    pub fn gaussian(wavelength_nm: f64, peak_intensity: f64, fwhm_fs: f64) -> Result<Self> {
        Self::new(
            wavelength_nm,
            peak_intensity,
            Envelope::Gaussian { fwhm_fs },
            0.0,
            0.0,
            false,
        )
    }

    pub fn new(
        wavelength_nm: f64,
        peak_intensity: f64,
        envelope: Envelope,
        chirp_coeff: f64,
        carrier_phase: f64,
        adiabatic: bool,
    ) -> Result<Self> {
        if !(wavelength_nm > 0.0) {
            return Err(Error::Domain {
                what: "wavelength",
                value: wavelength_nm,
            });
        }
        if !(peak_intensity >= 0.0) {
            return Err(Error::Domain {
                what: "peak intensity",
                value: peak_intensity,
            });
        }
        match envelope {
            Envelope::Gaussian { fwhm_fs } if !(fwhm_fs > 0.0) => {
                return Err(Error::Domain {
                    what: "envelope fwhm",
                    value: fwhm_fs,
                })
            }
            Envelope::Square { width_fs } if !(width_fs > 0.0) => {
                return Err(Error::Domain {
                    what: "envelope width",
                    value: width_fs,
                })
            }
            _ => {}
        }
        Ok(Self {
            wavelength_nm,
            peak_intensity,
            envelope,
            chirp_coeff,
            carrier_phase,
            adiabatic,
        })
    }

    pub fn with_carrier_phase(mut self, phase: f64) -> Self {
        self.carrier_phase = phase;
        self
    }

    pub fn with_chirp(mut self, chirp_coeff: f64) -> Self {
        self.chirp_coeff = chirp_coeff;
        self
    }

    pub fn with_adiabatic(mut self, adiabatic: bool) -> Self {
        self.adiabatic = adiabatic;
        self
    }

    /// Carrier frequency in a.u.
    pub fn omega(&self) -> f64 {
        units::omega_au(self.wavelength_nm)
    }

    /// Optical period in a.u.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega()
    }

    /// Peak field amplitude in a.u.
    pub fn peak_field(&self) -> f64 {
        units::field_au_from_intensity(self.peak_intensity)
    }

    /// Normalized field envelope g(t) and dg/dt (t in a.u.).
    fn shape(&self, t: f64) -> (f64, f64) {
        if self.adiabatic {
            return (1.0, 0.0);
        }
        match self.envelope {
            Envelope::Square { .. } => (1.0, 0.0),
            Envelope::Gaussian { fwhm_fs } => {
                let tau = units::fs_to_au(fwhm_fs);
                let a = 2.0 * LN_2 / (tau * tau);
                let g = (-a * t * t).exp();
                (g, -2.0 * a * t * g)
            }
        }
    }

    /// Envelope of the field amplitude in a.u. (t in a.u.).
    pub fn envelope_amplitude(&self, t: f64) -> f64 {
        self.peak_field() * self.shape(t).0
    }

    /// Instantaneous intensity of the envelope (W/cm²) at t in fs.
    pub fn envelope_intensity_at_fs(&self, t_fs: f64) -> f64 {
        let g = self.shape(units::fs_to_au(t_fs)).0;
        self.peak_intensity * g * g
    }

    /// Chirp coefficient in rad/a.u.².
    fn chirp_au(&self) -> f64 {
        self.chirp_coeff * AU_TIME_FS * AU_TIME_FS
    }

    /// Drive envelope phase (rad) at t in fs, in the e^{−iωt} carrier
    /// convention: a temporal phase +b t² on the carrier appears as −b t².
    pub fn envelope_phase_at_fs(&self, t_fs: f64) -> f64 {
        -self.chirp_coeff * t_fs * t_fs
    }

    /// Electric field E(t) and vector potential A(t), both in a.u.
    pub fn field_and_potential(&self, t: f64) -> (f64, f64) {
        let e0 = self.peak_field();
        if e0 == 0.0 {
            return (0.0, 0.0);
        }
        let w = self.omega();
        let b = self.chirp_au();
        let (g, dg) = self.shape(t);
        let theta = w * t + self.carrier_phase + b * t * t;
        let (s, c) = theta.sin_cos();
        let a = -(e0 / w) * g * s;
        let e = e0 * (g * (1.0 + 2.0 * b * t / w) * c + dg / w * s);
        (e, a)
    }

    pub fn vector_potential(&self, t: f64) -> f64 {
        self.field_and_potential(t).1
    }

    pub fn field(&self, t: f64) -> f64 {
        self.field_and_potential(t).0
    }

    /// Monochromatic copy frozen at the envelope value at time `t_fs`.
    pub fn frozen_at_fs(&self, t_fs: f64) -> Self {
        Self {
            peak_intensity: self.envelope_intensity_at_fs(t_fs),
            envelope: Envelope::Square {
                width_fs: match self.envelope {
                    Envelope::Square { width_fs } => width_fs,
                    Envelope::Gaussian { fwhm_fs } => fwhm_fs,
                },
            },
            chirp_coeff: 0.0,
            adiabatic: true,
            ..*self
        }
    }

    /// Chirp coefficient (rad/fs²) that broadens a Gaussian pulse of
    /// intensity FWHM `fwhm_fs` to a spectral FWHM of `bandwidth_nm`
    /// (in wavelength) without changing its duration. Returns `None` when
    /// the requested bandwidth is below the transform limit.
    pub fn chirp_for_bandwidth(wavelength_nm: f64, fwhm_fs: f64, bandwidth_nm: f64) -> Option<f64> {
        // Field ∝ exp(−a t²) with complex a = a_r − i b; spectral intensity
        // ∝ exp(−ω² a_r / (2|a|²)) whose FWHM is Δω = 2 sqrt(2 ln2 |a|²/a_r).
        let lambda = wavelength_nm * 1e-9;
        let d_omega = 2.0 * PI * units::SPEED_OF_LIGHT * bandwidth_nm * 1e-9 / (lambda * lambda) * 1e-15;
        let a_r = 2.0 * LN_2 / (fwhm_fs * fwhm_fs);
        let mod2 = (d_omega / 2.0).powi(2) * a_r / (2.0 * LN_2);
        let b2 = mod2 - a_r * a_r;
        (b2 > 0.0).then(|| b2.sqrt())
    }
}
