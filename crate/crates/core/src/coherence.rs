//! Observables of exit fields: free-space transport by Hankel transform,
//! far field, virtual focus, temporal and spectral profiles, spatial
//! coherence, chirp compression and the single-atom short-pulse study.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use puruspe::Jn;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::propagation::{radial_weights, run_pulse, FocusGeometry, HarmonicSetup, PulseRun, RadialField};
use crate::sfa::{dipole_series, AtomModel, DriveWaveform, Envelope, SfaNumerics};
use crate::tables::DipoleTable;
use crate::units::{self, AU_TIME_FS, SPEED_OF_LIGHT};

fn j0(x: f64) -> f64 {
    Jn(0, x)
}

fn j1(x: f64) -> f64 {
    Jn(1, x)
}

/// First `n` positive zeros of J₀ (McMahon start, Newton polish).
pub fn bessel_j0_zeros(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let b = (k as f64 - 0.25) * PI;
            let mut x = b + 1.0 / (8.0 * b) - 124.0 / (3.0 * (8.0 * b).powi(3));
            for _ in 0..8 {
                let step = j0(x) / -j1(x);
                x -= step;
                if step.abs() < 1e-15 * x {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Quasi-discrete Hankel transform of order zero on an aperture of radius R.
#[derive(Debug, Clone)]
pub struct Hankel {
    /// Sample radii (µm).
    pub r: Vec<f64>,
    /// Spatial frequencies (1/µm).
    pub nu: Vec<f64>,
    aperture: f64,
    band: f64,
    j1_abs: Vec<f64>,
    s: f64,
    matrix: Vec<f64>,
}

impl Hankel {
    pub fn new(n: usize, aperture_um: f64) -> Self {
        let zeros = bessel_j0_zeros(n + 1);
        let s = zeros[n];
        let band = s / (2.0 * PI * aperture_um);
        let j1_abs: Vec<f64> = zeros[..n].iter().map(|&z| j1(z).abs()).collect();
        let mut matrix = vec![0.0; n * n];
        for m in 0..n {
            for k in m..n {
                let v = 2.0 * j0(zeros[m] * zeros[k] / s) / (j1_abs[m] * j1_abs[k] * s);
                matrix[m * n + k] = v;
                matrix[k * n + m] = v;
            }
        }
        Self {
            r: zeros[..n].iter().map(|z| z * aperture_um / s).collect(),
            nu: zeros[..n].iter().map(|z| z / (2.0 * PI * aperture_um)).collect(),
            aperture: aperture_um,
            band,
            j1_abs,
            s,
            matrix,
        }
    }

    fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = v.len();
        (0..n)
            .map(|m| {
                let row = &self.matrix[m * n..(m + 1) * n];
                row.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// F(ν_m) = 2π∫f(r) J₀(2πνr) r dr from samples f(r_k).
    pub fn forward(&self, f: &[Complex64]) -> Vec<Complex64> {
        let scaled: Vec<Complex64> = f
            .iter()
            .zip(&self.j1_abs)
            .map(|(v, j)| v * (self.aperture / j))
            .collect();
        self.apply(&scaled)
            .iter()
            .zip(&self.j1_abs)
            .map(|(v, j)| v * (j / self.band))
            .collect()
    }

    /// f(r_k) from spectrum samples F(ν_m).
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<Complex64> {
        let scaled: Vec<Complex64> = spectrum
            .iter()
            .zip(&self.j1_abs)
            .map(|(v, j)| v * (self.band / j))
            .collect();
        self.apply(&scaled)
            .iter()
            .zip(&self.j1_abs)
            .map(|(v, j)| v * (j / self.aperture))
            .collect()
    }

    /// F at an arbitrary spatial frequency from field samples f(r_k).
    pub fn spectrum_at(&self, f: &[Complex64], nu: f64) -> Complex64 {
        let c = 2.0 * self.aperture / (self.band * self.s);
        f.iter()
            .zip(&self.r)
            .zip(&self.j1_abs)
            .map(|((v, &r), j)| v * (c * j0(2.0 * PI * nu * r) / (j * j)))
            .sum()
    }

    /// f at an arbitrary radius from spectrum samples.
    pub fn evaluate(&self, spectrum: &[Complex64], r_um: f64) -> Complex64 {
        let c = 2.0 * self.band / (self.s * self.aperture);
        spectrum
            .iter()
            .zip(&self.nu)
            .zip(&self.j1_abs)
            .map(|((f, &nu), j)| f * (c * j0(2.0 * PI * nu * r_um) / (j * j)))
            .sum()
    }
}

/// Interpolation of complex samples at `x` (clamped to zero outside):
/// linear in modulus and in the wrapped phase step. Harmonic fields carry
/// radial phases of order a radian per sample, where a straight chord
/// between the samples would lose power.
fn interpolate(xs: &[f64], ys: &[Complex64], x: f64) -> Complex64 {
    if x <= xs[0] {
        return ys[0];
    }
    let j = xs.partition_point(|&v| v <= x);
    if j >= xs.len() {
        return Complex64::default();
    }
    let s = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    let (a, b) = (ys[j - 1], ys[j]);
    let modulus = a.norm() * (1.0 - s) + b.norm() * s;
    let step = (b * a.conj()).arg();
    Complex64::from_polar(modulus, a.arg() + s * step)
}

/// Free-space transport of a radial field through the Hankel spectrum.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    hankel: Hankel,
    spectrum: Vec<Complex64>,
    wavelength_um: f64,
    z_mm: f64,
    template: RadialField,
}

impl FreeSpace {
    /// Prepares transport of `field`; the aperture is its outer radius.
    pub fn new(field: &RadialField) -> Self {
        let r_max = *field.r_um.last().unwrap();
        let hankel = Hankel::new(field.r_um.len(), r_max);
        let samples: Vec<Complex64> = hankel
            .r
            .iter()
            .map(|&r| interpolate(&field.r_um, &field.values, r))
            .collect();
        let spectrum = hankel.forward(&samples);
        Self {
            hankel,
            spectrum,
            wavelength_um: field.wavelength_nm * 1e-3,
            z_mm: field.z_mm,
            template: field.clone(),
        }
    }

    pub fn hankel(&self) -> &Hankel {
        &self.hankel
    }

    /// Spectrum after a paraxial step of `dz_mm` (envelope frame).
    fn spectrum_at(&self, dz_mm: f64) -> Vec<Complex64> {
        let dz = dz_mm * 1e3;
        self.spectrum
            .iter()
            .zip(&self.hankel.nu)
            .map(|(f, &nu)| f * Complex64::from_polar(1.0, -PI * self.wavelength_um * dz * nu * nu))
            .collect()
    }

    /// Field on the original radial grid after `dz_mm`.
    pub fn propagate(&self, dz_mm: f64) -> RadialField {
        let samples = self.hankel.inverse(&self.spectrum_at(dz_mm));
        let values = self
            .template
            .r_um
            .iter()
            .map(|&r| interpolate(&self.hankel.r, &samples, r))
            .collect();
        RadialField {
            values,
            z_mm: self.z_mm + dz_mm,
            ..self.template.clone()
        }
    }

    /// Field at arbitrary radii after `dz_mm`.
    pub fn sample(&self, dz_mm: f64, radii: &[f64]) -> Vec<Complex64> {
        let spec = self.spectrum_at(dz_mm);
        radii.iter().map(|&r| self.hankel.evaluate(&spec, r)).collect()
    }

    /// On-axis field after `dz_mm`.
    pub fn on_axis(&self, dz_mm: f64) -> Complex64 {
        self.hankel.evaluate(&self.spectrum_at(dz_mm), 0.0)
    }

    /// Angular spectrum |F|² against half-angle θ = λν (mrad), sampled
    /// finely up to 1.5× the largest angle carrying 1e−4 of the peak.
    pub fn angular_spectrum(&self) -> (Vec<f64>, Vec<f64>) {
        let coarse: Vec<f64> = self.spectrum.iter().map(|f| f.norm_sqr()).collect();
        let peak = coarse.iter().fold(0.0f64, |m, &v| m.max(v));
        let last = coarse.iter().rposition(|&v| v >= 1e-4 * peak).unwrap_or(0);
        let nu_max = (1.5 * self.hankel.nu[(last + 1).min(coarse.len() - 1)]).min(*self.hankel.nu.last().unwrap());
        let samples = self.hankel.inverse(&self.spectrum);
        let n = 2000;
        (0..=n)
            .into_par_iter()
            .map(|k| {
                let nu = nu_max * k as f64 / n as f64;
                (
                    self.wavelength_um * nu * 1e3,
                    self.hankel.spectrum_at(&samples, nu).norm_sqr(),
                )
            })
            .unzip()
    }
}

/// Paraxial free-space propagation by `dz_mm` (negative values propagate
/// backward, which equals conjugate–propagate–conjugate). Logs a warning
/// when more than 5 % of the power sits in the outer 5 % of the grid.
pub fn fresnel_propagate(field: &RadialField, dz_mm: f64) -> RadialField {
    let out = FreeSpace::new(field).propagate(dz_mm);
    if edge_fraction(&out) > 0.05 {
        log::warn!("field reaches the grid edge after {dz_mm} mm; result may alias");
    }
    out
}

/// Fraction of power in the outer 5 % of the radial grid.
pub fn edge_fraction(field: &RadialField) -> f64 {
    let w = radial_weights(field.r_um.len(), field.dr());
    let cut = 0.95 * field.r_um.last().unwrap();
    let total: f64 = w.iter().zip(&field.values).map(|(w, v)| w * v.norm_sqr()).sum();
    let edge: f64 = w
        .iter()
        .zip(&field.values)
        .zip(&field.r_um)
        .filter(|(_, &r)| r >= cut)
        .map(|((w, v), _)| w * v.norm_sqr())
        .sum();
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Far-field intensity against half-angle.
#[derive(Debug, Clone, PartialEq)]
pub struct FarField {
    pub half_angle_mrad: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Radius (µm) that each angle maps to at `distance_mm`.
    pub radius_um: Vec<f64>,
}

impl FarField {
    /// Largest angle where the intensity still reaches e⁻² of its maximum.
    pub fn half_angle_1e2(&self) -> f64 {
        outer_crossing(&self.half_angle_mrad, &self.intensity, (-2.0f64).exp())
    }
}

/// Outermost abscissa where `ys` falls through `level`·max.
fn outer_crossing(xs: &[f64], ys: &[f64], level: f64) -> f64 {
    let peak = ys.iter().fold(0.0f64, |m, &v| m.max(v));
    let l = level * peak;
    match ys.iter().rposition(|&v| v >= l) {
        Some(j) if j + 1 < ys.len() => xs[j] + (ys[j] - l) / (ys[j] - ys[j + 1]) * (xs[j + 1] - xs[j]),
        Some(j) => xs[j],
        None => 0.0,
    }
}

/// Fraunhofer far field; `distance_mm` only sets the radius scale r = θ·d.
pub fn far_field(field: &RadialField, distance_mm: f64) -> FarField {
    let fs = FreeSpace::new(field);
    let (theta, intensity) = fs.angular_spectrum();
    FarField {
        radius_um: theta.iter().map(|t| t * distance_mm).collect(),
        half_angle_mrad: theta,
        intensity,
    }
}

/// Backward scan result.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualFocus {
    /// Plane of maximal on-axis intensity (mm).
    pub z_mm: f64,
    /// 1/e² radius of the intensity there (µm).
    pub waist_um: f64,
    /// Intensity-weighted RMS phase over the central lobe (rad).
    pub phase_rms: f64,
    /// Fine profile at the focus.
    pub profile: RadialField,
    /// True when the maximum sits on the scan boundary.
    pub at_boundary: bool,
}

/// 1/e² radius of the lobe around the axis (first crossing outward).
fn central_radius(field: &RadialField) -> f64 {
    let i = field.intensity();
    let level = i[0] * (-2.0f64).exp();
    match i.iter().position(|&v| v < level) {
        Some(j) if j > 0 => field.r_um[j - 1] + (i[j - 1] - level) / (i[j - 1] - i[j]) * field.dr(),
        _ => field.dr(),
    }
}

/// Scans planes from the field's plane back by `span_mm` in steps of
/// `step_mm` for the maximum on-axis intensity.
pub fn virtual_focus(field: &RadialField, span_mm: f64, step_mm: f64) -> Result<VirtualFocus> {
    if !(span_mm > 0.0 && step_mm > 0.0) {
        return Err(Error::config("virtual_focus.span", "span and step must be positive"));
    }
    let fs = FreeSpace::new(field);
    let n = (span_mm / step_mm).round() as usize;
    let on_axis: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|k| fs.on_axis(-(k as f64) * step_mm).norm_sqr())
        .collect();
    let best = on_axis
        .iter()
        .enumerate()
        .fold((0, -1.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0;
    let at_boundary = best == 0 || best == n;
    if at_boundary {
        log::warn!("virtual focus at the scan boundary");
    }
    let dz = -(best as f64) * step_mm;
    // A coarse pass sizes the fine grid that resolves sub-micron foci.
    let coarse = RadialField {
        values: fs.sample(dz, &field.r_um),
        ..field.clone()
    };
    let extent = (4.0 * central_radius(&coarse)).max(5.0 * field.dr());
    let fine_dr = extent / 800.0;
    let radii: Vec<f64> = (0..=800).map(|j| j as f64 * fine_dr).collect();
    let values = fs.sample(dz, &radii);
    let profile = RadialField {
        r_um: radii,
        values,
        z_mm: field.z_mm + dz,
        wavelength_nm: field.wavelength_nm,
        slice_time_fs: field.slice_time_fs,
    };
    let intensity = profile.intensity();
    let peak = intensity[0];
    let first_min = (1..intensity.len() - 1)
        .find(|&j| intensity[j] < 0.5 * peak && intensity[j] <= intensity[j - 1] && intensity[j] <= intensity[j + 1])
        .unwrap_or(intensity.len() - 1);
    let level = peak * (-2.0f64).exp();
    let waist = match intensity[..=first_min].iter().position(|&v| v < level) {
        Some(j) if j > 0 => {
            let (a, b) = (intensity[j - 1], intensity[j]);
            profile.r_um[j - 1] + (a - level) / (a - b) * fine_dr
        }
        _ => profile.r_um[first_min],
    };
    let phase = profile.unwrapped_phase();
    let lobe = 0..=first_min;
    let (mut sw, mut mean) = (0.0, 0.0);
    for j in lobe.clone() {
        let w = intensity[j] * profile.r_um[j].max(fine_dr / 4.0);
        sw += w;
        mean += w * phase[j];
    }
    mean /= sw;
    let var = lobe
        .map(|j| intensity[j] * profile.r_um[j].max(fine_dr / 4.0) * (phase[j] - mean).powi(2))
        .sum::<f64>()
        / sw;
    Ok(VirtualFocus {
        z_mm: profile.z_mm,
        waist_um: waist,
        phase_rms: var.sqrt(),
        profile,
        at_boundary,
    })
}

/// Exit fields of one harmonic over the drive envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseAssembly {
    pub times_fs: Vec<f64>,
    pub slices: Vec<RadialField>,
    pub order: usize,
    /// Drive wavelength (nm).
    pub wavelength_nm: f64,
    pub z_mm: f64,
}

impl PulseAssembly {
    pub fn new(times_fs: Vec<f64>, slices: Vec<RadialField>, order: usize, wavelength_nm: f64) -> Result<Self> {
        if times_fs.len() != slices.len() || slices.is_empty() {
            return Err(Error::config("slices", "one field per slice time"));
        }
        if times_fs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("slices", "slice times must increase strictly"));
        }
        let r = &slices[0].r_um;
        if slices
            .iter()
            .any(|s| &s.r_um != r || s.wavelength_nm != slices[0].wavelength_nm)
        {
            return Err(Error::config(
                "slices",
                "slices must share one radial grid and wavelength",
            ));
        }
        Ok(Self {
            z_mm: slices[0].z_mm,
            times_fs,
            slices,
            order,
            wavelength_nm,
        })
    }

    pub fn from_run(run: &PulseRun) -> Result<Self> {
        Self::new(
            run.slice_times_fs.clone(),
            run.harmonic.clone(),
            run.order,
            run.wavelength_nm,
        )
    }

    pub fn radii(&self) -> &[f64] {
        &self.slices[0].r_um
    }

    fn weights(&self) -> Vec<f64> {
        radial_weights(self.radii().len(), self.slices[0].dr())
    }

    /// Harmonic wavelength (nm).
    pub fn harmonic_wavelength_nm(&self) -> f64 {
        self.wavelength_nm / self.order as f64
    }

    /// Time trace at radial node `j`.
    pub fn trace(&self, j: usize) -> Vec<Complex64> {
        self.slices.iter().map(|s| s.values[j]).collect()
    }

    fn uniform_step(&self) -> Result<f64> {
        if self.times_fs.len() < 2 {
            return Err(Error::config("slices", "need at least two slices"));
        }
        let dt = self.times_fs[1] - self.times_fs[0];
        let uniform = self
            .times_fs
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.abs().max(1.0));
        if uniform {
            Ok(dt)
        } else {
            Err(Error::config("slices", "slice times must be uniformly spaced"))
        }
    }

    /// Time-integrated radial profile ∫|E(r, t)|² dt.
    pub fn integrated_profile(&self) -> Vec<f64> {
        let n = self.radii().len();
        (0..n)
            .map(|j| self.slices.iter().map(|s| s.values[j].norm_sqr()).sum::<f64>())
            .collect()
    }

    /// Nearest radial node to `r_um`.
    pub fn node(&self, r_um: f64) -> usize {
        let r = self.radii();
        (0..r.len())
            .min_by(|&a, &b| (r[a] - r_um).abs().total_cmp(&(r[b] - r_um).abs()))
            .unwrap()
    }
}

/// FWHM by linear interpolation over the contiguous region around the
/// global maximum.
pub fn fwhm(xs: &[f64], ys: &[f64]) -> f64 {
    let (imax, peak) = ys
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    if !(peak > 0.0) {
        return 0.0;
    }
    let half = 0.5 * peak;
    let mut lo = imax;
    while lo > 0 && ys[lo - 1] >= half {
        lo -= 1;
    }
    let left = if lo == 0 {
        xs[0]
    } else {
        xs[lo - 1] + (half - ys[lo - 1]) / (ys[lo] - ys[lo - 1]) * (xs[lo] - xs[lo - 1])
    };
    let mut hi = imax;
    while hi + 1 < ys.len() && ys[hi + 1] >= half {
        hi += 1;
    }
    let right = if hi + 1 == ys.len() {
        xs[hi]
    } else {
        xs[hi] + (ys[hi] - half) / (ys[hi] - ys[hi + 1]) * (xs[hi + 1] - xs[hi])
    };
    right - left
}

/// Midpoint of the half-maximum crossings around the global maximum.
pub fn half_max_center(xs: &[f64], ys: &[f64]) -> f64 {
    let (imax, peak) = ys
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    let half = 0.5 * peak;
    let mut lo = imax;
    while lo > 0 && ys[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < ys.len() && ys[hi + 1] >= half {
        hi += 1;
    }
    let left = if lo == 0 {
        xs[0]
    } else {
        xs[lo - 1] + (half - ys[lo - 1]) / (ys[lo] - ys[lo - 1]) * (xs[lo] - xs[lo - 1])
    };
    let right = if hi + 1 == ys.len() {
        xs[hi]
    } else {
        xs[hi] + (ys[hi] - half) / (ys[hi] - ys[hi + 1]) * (xs[hi + 1] - xs[hi])
    };
    0.5 * (left + right)
}

/// Radially integrated power against slice time.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalProfile {
    pub times_fs: Vec<f64>,
    pub power: Vec<f64>,
    pub fwhm_fs: f64,
}

pub const MIN_SLICES: usize = 16;

pub fn temporal_profile(assembly: &PulseAssembly) -> Result<TemporalProfile> {
    if assembly.slices.len() < MIN_SLICES {
        return Err(Error::config(
            "numerics.slices",
            format!("temporal profiles need at least {MIN_SLICES} slices"),
        ));
    }
    let power: Vec<f64> = assembly.slices.iter().map(|s| s.power()).collect();
    Ok(TemporalProfile {
        fwhm_fs: fwhm(&assembly.times_fs, &power),
        times_fs: assembly.times_fs.clone(),
        power,
    })
}

/// Spectrum of a uniformly sampled envelope, Ê(Δω) = ∫E(t) e^{iΔωt} dt,
/// zero-padded for resolution and ordered by ascending Δω (rad/fs).
#[derive(Debug, Clone)]
struct EnvelopeSpectrum {
    d_omega: Vec<f64>,
    values: Vec<Complex64>,
    dt: f64,
}

const PAD: usize = 4;

fn fft_len(n: usize) -> usize {
    (PAD * n).next_power_of_two()
}

fn envelope_spectrum(
    t0: f64,
    dt: f64,
    samples: &[Complex64],
    len: usize,
    planner: &mut FftPlanner<f64>,
) -> EnvelopeSpectrum {
    let mut buf = vec![Complex64::default(); len];
    buf[..samples.len()].copy_from_slice(samples);
    planner.plan_fft_inverse(len).process(&mut buf);
    let dw = 2.0 * PI / (len as f64 * dt);
    let mut pairs: Vec<(f64, Complex64)> = buf
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let kk = if k < len / 2 { k as f64 } else { k as f64 - len as f64 };
            let w = kk * dw;
            (w, v * dt * Complex64::from_polar(1.0, w * t0))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (d_omega, values) = pairs.into_iter().unzip();
    EnvelopeSpectrum { d_omega, values, dt }
}

impl EnvelopeSpectrum {
    /// E(t) on `len` points spaced dt starting at `start` (fs).
    fn to_time(&self, start: f64, planner: &mut FftPlanner<f64>) -> (Vec<f64>, Vec<Complex64>) {
        let len = self.values.len();
        let dw = 2.0 * PI / (len as f64 * self.dt);
        // Back to FFT ordering.
        let mut buf = vec![Complex64::default(); len];
        for (w, v) in self.d_omega.iter().zip(&self.values) {
            let k = (w / dw).round() as i64;
            let idx = k.rem_euclid(len as i64) as usize;
            buf[idx] = v * Complex64::from_polar(1.0, -w * start);
        }
        planner.plan_fft_forward(len).process(&mut buf);
        let times = (0..len).map(|j| start + j as f64 * self.dt).collect();
        (times, buf.into_iter().map(|v| v * dw / (2.0 * PI)).collect())
    }

    fn energy(&self) -> f64 {
        let dw = self.d_omega[1] - self.d_omega[0];
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dw / (2.0 * PI)
    }

    /// Spectral phase unwrapped outward from the strongest bin.
    fn unwrapped_phase(&self) -> Vec<f64> {
        let p = self.values.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>();
        let k0 = p
            .iter()
            .enumerate()
            .fold((0, -1.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        let mut out = vec![0.0; p.len()];
        out[k0] = self.values[k0].arg();
        for k in k0 + 1..p.len() {
            let mut d = self.values[k].arg() - self.values[k - 1].arg();
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            out[k] = out[k - 1] + d;
        }
        for k in (0..k0).rev() {
            let mut d = self.values[k].arg() - self.values[k + 1].arg();
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            out[k] = out[k + 1] + d;
        }
        out
    }

    /// Intensity-weighted quadratic fit of the phase over bins above 5 % of
    /// the peak; returns (c₀, c₁, c₂) and the number of bins used.
    fn quadratic_phase(&self) -> (Option<[f64; 3]>, usize) {
        let p: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        let peak = p.iter().fold(0.0f64, |m, &v| m.max(v));
        let phase = self.unwrapped_phase();
        let bins: Vec<usize> = (0..p.len()).filter(|&k| p[k] >= 0.05 * peak && peak > 0.0).collect();
        if bins.len() < 3 {
            return (None, bins.len());
        }
        let pts: Vec<(f64, f64, f64)> = bins.iter().map(|&k| (self.d_omega[k], phase[k], p[k])).collect();
        (weighted_quadratic(&pts), bins.len())
    }
}

/// Weighted least squares y ≈ c₀ + c₁x + c₂x².
fn weighted_quadratic(pts: &[(f64, f64, f64)]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    let scale = pts.iter().map(|p| p.0.abs()).fold(0.0f64, f64::max).max(1e-300);
    for &(x, y, w) in pts {
        let u = x / scale;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            b[i] += w * basis[i] * y;
            for j in 0..3 {
                a[i][j] += w * basis[i] * basis[j];
            }
        }
    }
    let c = solve3(a, b)?;
    Some([c[0], c[1] / scale, c[2] / (scale * scale)])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

/// Harmonic spectrum around the line centre.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// Δω about qω (rad/fs).
    pub d_omega: Vec<f64>,
    /// Wavelength offset (Å, positive = red).
    pub wavelength_offset_angstrom: Vec<f64>,
    /// Photon-energy offset (eV).
    pub energy_offset_ev: Vec<f64>,
    pub intensity: Vec<f64>,
    /// Unwrapped spectral phase at `phase_radius_um`.
    pub phase: Vec<f64>,
    pub phase_radius_um: f64,
    pub fwhm_angstrom: f64,
    pub fwhm_ev: f64,
}

impl SpectralProfile {
    /// Intensity-weighted mean frequency offset (rad/fs).
    pub fn centroid(&self) -> f64 {
        let s: f64 = self.intensity.iter().sum();
        self.d_omega
            .iter()
            .zip(&self.intensity)
            .map(|(w, i)| w * i)
            .sum::<f64>()
            / s
    }

    fn from_parts(d_omega: Vec<f64>, intensity: Vec<f64>, phase: Vec<f64>, radius: f64, harmonic_nm: f64) -> Self {
        let fw = fwhm(&d_omega, &intensity);
        Self {
            wavelength_offset_angstrom: d_omega
                .iter()
                .map(|&w| units::angular_offset_to_angstrom(w, harmonic_nm))
                .collect(),
            energy_offset_ev: d_omega.iter().map(|&w| units::angular_offset_to_ev(w)).collect(),
            fwhm_angstrom: units::angular_offset_to_angstrom(fw, harmonic_nm).abs(),
            fwhm_ev: units::angular_offset_to_ev(fw),
            d_omega,
            intensity,
            phase,
            phase_radius_um: radius,
        }
    }
}

/// Options of [`spectral_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpectrumOptions {
    /// Single radius (µm) instead of the radial integral.
    pub radius_um: Option<f64>,
    /// Drop the temporal phase before transforming (transform-limit control).
    pub discard_phase: bool,
}

fn radial_spectra(assembly: &PulseAssembly, discard_phase: bool) -> Result<(Vec<EnvelopeSpectrum>, f64)> {
    let dt = assembly.uniform_step()?;
    let len = fft_len(assembly.times_fs.len());
    let t0 = assembly.times_fs[0];
    let n = assembly.radii().len();
    let spectra = (0..n)
        .into_par_iter()
        .map_init(FftPlanner::new, |planner, j| {
            let mut trace = assembly.trace(j);
            if discard_phase {
                trace.iter_mut().for_each(|v| *v = Complex64::new(v.norm(), 0.0));
            }
            envelope_spectrum(t0, dt, &trace, len, planner)
        })
        .collect();
    Ok((spectra, dt))
}

/// Spectrum by FFT over slice time per radius, radially integrated in
/// intensity (or at one radius).
pub fn spectral_profile(assembly: &PulseAssembly, options: SpectrumOptions) -> Result<SpectralProfile> {
    let (spectra, _) = radial_spectra(assembly, options.discard_phase)?;
    let weights = assembly.weights();
    let d_omega = spectra[0].d_omega.clone();
    let (intensity, phase_node) = match options.radius_um {
        Some(r) => {
            let j = assembly.node(r);
            (spectra[j].values.iter().map(|v| v.norm_sqr()).collect(), j)
        }
        None => {
            let mut total = vec![0.0; d_omega.len()];
            for (s, w) in spectra.iter().zip(&weights) {
                for (t, v) in total.iter_mut().zip(&s.values) {
                    *t += w * v.norm_sqr();
                }
            }
            let dominant = spectra
                .iter()
                .zip(&weights)
                .map(|(s, w)| w * s.energy())
                .enumerate()
                .fold((0, -1.0), |b, (i, v)| if v > b.1 { (i, v) } else { b })
                .0;
            (total, dominant)
        }
    };
    Ok(SpectralProfile::from_parts(
        d_omega,
        intensity,
        spectra[phase_node].unwrapped_phase(),
        assembly.radii()[phase_node],
        assembly.harmonic_wavelength_nm(),
    ))
}

/// Time-domain and spectral energy at every radius (for Parseval checks).
pub fn energy_balance(assembly: &PulseAssembly) -> Result<Vec<(f64, f64)>> {
    let (spectra, dt) = radial_spectra(assembly, false)?;
    Ok(spectra
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let time: f64 = assembly.trace(j).iter().map(|v| v.norm_sqr()).sum::<f64>() * dt;
            (time, s.energy())
        })
        .collect())
}

/// |γ₁₂(0)| between a reference radius and every radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    /// Reference radius snapped to the grid (µm).
    pub r_ref_um: f64,
    pub r_um: Vec<f64>,
    pub degree: Vec<f64>,
    /// Time-integrated profile, for judging the beam extent.
    pub profile: Vec<f64>,
}

impl CoherenceCurve {
    /// Minimum of the degree over radii whose integrated intensity exceeds
    /// `floor` of the profile maximum.
    pub fn min_within(&self, floor: f64) -> f64 {
        let peak = self.profile.iter().fold(0.0f64, |m, &v| m.max(v));
        self.degree
            .iter()
            .zip(&self.profile)
            .filter(|(_, &p)| p >= floor * peak)
            .map(|(d, _)| *d)
            .fold(1.0, f64::min)
    }
}

pub fn coherence_degree(assembly: &PulseAssembly, r_ref_um: f64) -> Result<CoherenceCurve> {
    let jr = assembly.node(r_ref_um);
    let r_ref = assembly.radii()[jr];
    let reference = assembly.trace(jr);
    let e_ref: f64 = reference.iter().map(|v| v.norm_sqr()).sum();
    if !(e_ref > 0.0) {
        return Err(Error::UndefinedReference { r_um: r_ref });
    }
    let n = assembly.radii().len();
    let degree = (0..n)
        .map(|j| {
            if j == jr {
                return 1.0;
            }
            let trace = assembly.trace(j);
            let e: f64 = trace.iter().map(|v| v.norm_sqr()).sum();
            if e == 0.0 {
                return 0.0;
            }
            let cross: Complex64 = reference.iter().zip(&trace).map(|(a, b)| a * b.conj()).sum();
            (cross.norm() / (e_ref * e).sqrt()).clamp(0.0, 1.0)
        })
        .collect();
    Ok(CoherenceCurve {
        r_ref_um: r_ref,
        r_um: assembly.radii().to_vec(),
        degree,
        profile: assembly.integrated_profile(),
    })
}

/// Compressed (or transform-limited) temporal profile.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedProfile {
    pub times_fs: Vec<f64>,
    pub power: Vec<f64>,
    pub fwhm_fs: f64,
    /// Removed quadratic spectral phase coefficient (fs²).
    pub quadratic_fs2: f64,
}

fn reassemble(
    spectra: &[EnvelopeSpectrum],
    weights: &[f64],
    start: f64,
    transform: impl Fn(&EnvelopeSpectrum) -> EnvelopeSpectrum + Sync,
) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(Vec<f64>, Vec<f64>)> = spectra
        .par_iter()
        .zip(weights)
        .map_init(FftPlanner::new, |planner, (s, w)| {
            let (t, e) = transform(s).to_time(start, planner);
            (t, e.iter().map(|v| w * v.norm_sqr()).collect())
        })
        .collect();
    let times = parts[0].0.clone();
    let mut power = vec![0.0; times.len()];
    for (_, p) in &parts {
        for (a, b) in power.iter_mut().zip(p) {
            *a += b;
        }
    }
    (times, power)
}

/// Removes one intensity-weighted mean quadratic spectral phase at every
/// radius and returns the radially integrated temporal profile.
pub fn compress_pulse(assembly: &PulseAssembly) -> Result<CompressedProfile> {
    let (spectra, _) = radial_spectra(assembly, false)?;
    let weights = assembly.weights();
    let energies: Vec<f64> = spectra.iter().zip(&weights).map(|(s, w)| w * s.energy()).collect();
    let emax = energies.iter().fold(0.0f64, |m, &v| m.max(v));
    let (mut sum_w, mut sum_c) = (0.0, 0.0);
    for (s, &e) in spectra.iter().zip(&energies) {
        if e < 1e-3 * emax || e == 0.0 {
            continue;
        }
        if let (Some(c), _) = s.quadratic_phase() {
            sum_w += e;
            sum_c += e * c[2];
        }
    }
    if sum_w == 0.0 {
        return Err(Error::Fit("spectrum narrower than 3 bins at every radius".into()));
    }
    let c2 = sum_c / sum_w;
    let start = centered_start(assembly, spectra[0].values.len(), spectra[0].dt);
    let (times, power) = reassemble(&spectra, &weights, start, |s| {
        let mut out = s.clone();
        for (v, w) in out.values.iter_mut().zip(&s.d_omega) {
            *v *= Complex64::from_polar(1.0, -c2 * w * w);
        }
        out
    });
    Ok(CompressedProfile {
        fwhm_fs: fwhm(&times, &power),
        times_fs: times,
        power,
        quadratic_fs2: c2,
    })
}

/// Profile with every radius's spectral phase removed.
pub fn transform_limited_profile(assembly: &PulseAssembly) -> Result<CompressedProfile> {
    let (spectra, dt) = radial_spectra(assembly, false)?;
    let weights = assembly.weights();
    let len = spectra[0].values.len();
    let start = -0.5 * len as f64 * dt;
    let (times, power) = reassemble(&spectra, &weights, start, |s| {
        let mut out = s.clone();
        out.values.iter_mut().for_each(|v| *v = Complex64::new(v.norm(), 0.0));
        out
    });
    Ok(CompressedProfile {
        fwhm_fs: fwhm(&times, &power),
        times_fs: times,
        power,
        quadratic_fs2: 0.0,
    })
}

fn centered_start(assembly: &PulseAssembly, len: usize, dt: f64) -> f64 {
    let t = &assembly.times_fs;
    0.5 * (t[0] + t[t.len() - 1]) - 0.5 * len as f64 * dt
}

/// Dipole phase −η I(t) of a Gaussian envelope and the chirp it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseModulationModel {
    /// rad per W/cm².
    pub eta: f64,
    /// W/cm².
    pub i0: f64,
    pub tau_fwhm_fs: f64,
    /// Harmonic wavelength (nm).
    pub wavelength_nm: f64,
}

impl PhaseModulationModel {
    fn intensity(&self, t_fs: f64) -> f64 {
        self.i0 * (-4.0 * LN_2 * (t_fs / self.tau_fwhm_fs).powi(2)).exp()
    }

    /// ΔΦ(t) = −η I(t) (rad).
    pub fn phase(&self, t_fs: f64) -> f64 {
        -self.eta * self.intensity(t_fs)
    }

    /// Δω(t) = η dI/dt (rad/fs).
    pub fn frequency(&self, t_fs: f64) -> f64 {
        self.eta * self.intensity(t_fs) * (-8.0 * LN_2 * t_fs / (self.tau_fwhm_fs * self.tau_fwhm_fs))
    }

    /// Inflection points ±τ/√(8 ln 2) of the envelope (fs).
    pub fn inflection_times(&self) -> (f64, f64) {
        let t = self.tau_fwhm_fs / (8.0 * LN_2).sqrt();
        (-t, t)
    }

    /// Δλ_ext per rad of η I₀ (Å/rad).
    pub fn extremal_coefficient(&self) -> f64 {
        let lambda = self.wavelength_nm * 1e-9;
        let tau = self.tau_fwhm_fs * 1e-15;
        lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT) * (8.0 * LN_2).sqrt() / tau * (-0.5f64).exp() * 1e10
    }

    /// Magnitude of the extremal wavelength excursion (Å).
    pub fn extremal_shift_angstrom(&self) -> f64 {
        self.extremal_coefficient() * self.eta * self.i0
    }
}

/// Closed-form ΔΦ(t), Δω(t) on `times_fs` and the extremal shift (Å).
pub fn analytic_phase_model(model: &PhaseModulationModel, times_fs: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    (
        times_fs.iter().map(|&t| model.phase(t)).collect(),
        times_fs.iter().map(|&t| model.frequency(t)).collect(),
        model.extremal_shift_angstrom(),
    )
}

/// Polarization phase and its two components on a (z, r) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub z_mm: Vec<f64>,
    pub r_um: Vec<f64>,
    /// q × (Gouy + curvature) phase of the fundamental, [z][r].
    pub propagation: Vec<Vec<f64>>,
    /// Dipole phase relative to its weak-field value, [z][r].
    pub dipole: Vec<Vec<f64>>,
}

impl PhaseMap {
    pub fn total(&self, iz: usize, ir: usize) -> f64 {
        self.propagation[iz][ir] + self.dipole[iz][ir]
    }

    /// On-axis derivative dΦ/dz (rad/mm) by central differences.
    pub fn axial_gradient(&self) -> Vec<f64> {
        let n = self.z_mm.len();
        (0..n)
            .map(|i| {
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                (self.total(b, 0) - self.total(a, 0)) / (self.z_mm[b] - self.z_mm[a])
            })
            .collect()
    }

    /// Position z > 0 with the flattest on-axis phase.
    pub fn compensation_point(&self) -> Option<f64> {
        let g = self.axial_gradient();
        (0..self.z_mm.len())
            .filter(|&i| self.z_mm[i] > 0.0)
            .min_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()))
            .map(|i| self.z_mm[i])
    }

    /// Radius at each z where the total phase equals `target` (first
    /// crossing outward), tracing a constant-phase contour.
    pub fn contour(&self, target: f64) -> Vec<Option<f64>> {
        (0..self.z_mm.len())
            .map(|iz| {
                (1..self.r_um.len()).find_map(|ir| {
                    let (a, b) = (self.total(iz, ir - 1) - target, self.total(iz, ir) - target);
                    (a * b <= 0.0 && a != b)
                        .then(|| self.r_um[ir - 1] + a / (a - b) * (self.r_um[ir] - self.r_um[ir - 1]))
                })
            })
            .collect()
    }
}

pub fn polarization_phase_map(
    geometry: &FocusGeometry,
    table: &DipoleTable,
    i0: f64,
    z_mm: &[f64],
    r_um: &[f64],
) -> Result<PhaseMap> {
    let q = table.order;
    let reference = table.phase[0];
    let mut propagation = Vec::with_capacity(z_mm.len());
    let mut dipole = Vec::with_capacity(z_mm.len());
    for &z in z_mm {
        propagation.push(
            r_um.iter()
                .map(|&r| q as f64 * geometry.gouy_phase(z) + geometry.curvature_coefficient(z, q) * r * r)
                .collect(),
        );
        dipole.push(
            r_um.iter()
                .map(|&r| table_phase(table, geometry.intensity(i0, z, r)).map(|p| p - reference))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(PhaseMap {
        z_mm: z_mm.to_vec(),
        r_um: r_um.to_vec(),
        propagation,
        dipole,
    })
}

/// Unwrapped table phase at `intensity` (linear interpolation).
pub fn table_phase(table: &DipoleTable, intensity: f64) -> Result<f64> {
    table.query(intensity)?;
    let j = table
        .intensities
        .partition_point(|&x| x <= intensity)
        .min(table.len() - 1)
        .max(1);
    let (a, b) = (table.intensities[j - 1], table.intensities[j]);
    let s = ((intensity - a) / (b - a)).clamp(0.0, 1.0);
    Ok(table.phase[j - 1] + s * (table.phase[j] - table.phase[j - 1]))
}

/// Radial phase coefficient k/(2d) (rad/µm²) of a spherical wave of
/// wavelength `wavelength_nm` at distance `distance_mm` from its centre.
pub fn spherical_wave_coefficient(wavelength_nm: f64, distance_mm: f64) -> f64 {
    units::wavenumber_per_um(wavelength_nm) / (2.0 * distance_mm * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChirpSign {
    Positive,
    Negative,
}

/// Spectral width (nm) of the chirped drive.
pub const CHIRPED_BANDWIDTH_NM: f64 = 32.0;

/// Runs `setup` with a quadratic temporal phase on the drive that broadens
/// its spectrum to 32 nm at fixed duration.
pub fn chirped_drive_scenario(
    setup: &HarmonicSetup,
    table: &DipoleTable,
    sign: ChirpSign,
) -> Result<(PulseRun, SpectralProfile)> {
    let fwhm_fs = match setup.drive.envelope {
        Envelope::Gaussian { fwhm_fs } => fwhm_fs,
        Envelope::Square { .. } => {
            return Err(Error::config(
                "drive.envelope",
                "chirped drive needs a Gaussian envelope",
            ))
        }
    };
    let b = DriveWaveform::chirp_for_bandwidth(setup.drive.wavelength_nm, fwhm_fs, CHIRPED_BANDWIDTH_NM)
        .ok_or_else(|| Error::config("drive.chirp", "bandwidth below the transform limit"))?;
    let mut s = *setup;
    s.drive = s.drive.with_chirp(match sign {
        ChirpSign::Positive => b,
        ChirpSign::Negative => -b,
    });
    let run = run_pulse(&s, table)?;
    let spec = spectral_profile(&PulseAssembly::from_run(&run)?, SpectrumOptions::default())?;
    Ok((run, spec))
}

/// Spectral window isolating one harmonic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    /// Full width at half maximum in units of ω.
    pub full_width: f64,
    /// Super-Gaussian order.
    pub order: u32,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            full_width: 2.0,
            order: 4,
        }
    }
}

impl WindowSpec {
    /// Weight at a detuning of `x` harmonic-frequency units.
    fn weight(&self, x: f64) -> f64 {
        (-LN_2 * (2.0 * x / self.full_width).abs().powi(2 * self.order as i32)).exp()
    }
}

/// Envelope, spectrum and compression of one harmonic pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicPulse {
    pub times_fs: Vec<f64>,
    /// Complex envelope in the e^{−iqωt} convention.
    pub envelope: Vec<Complex64>,
    pub fwhm_fs: f64,
    /// Midpoint of the half-maximum crossings (fs).
    pub center_fs: f64,
    pub spectrum: SpectralProfile,
    pub compressed: CompressedProfile,
}

/// Adiabatic and carrier-resolved responses of one harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct NonadiabaticStudy {
    pub adiabatic: HarmonicPulse,
    pub nonadiabatic: HarmonicPulse,
    /// Nonadiabatic minus adiabatic envelope centre (fs).
    pub delay_fs: f64,
    /// Adiabatic minus nonadiabatic spectral centroid (eV); positive = red.
    pub red_shift_ev: f64,
}

/// Single-atom harmonic `order` for a short carrier-resolved pulse,
/// alongside the adiabatic envelope built from `table`.
pub fn nonadiabatic_pulse(
    atom: &AtomModel,
    waveform: &DriveWaveform,
    order: usize,
    window: WindowSpec,
    numerics: &SfaNumerics,
    table: &DipoleTable,
) -> Result<NonadiabaticStudy> {
    let fwhm_fs = match waveform.envelope {
        Envelope::Gaussian { fwhm_fs } if !waveform.adiabatic => fwhm_fs,
        _ => {
            return Err(Error::config(
                "drive.envelope",
                "nonadiabatic study needs a carrier-resolved Gaussian pulse",
            ))
        }
    };
    if order.is_multiple_of(2) {
        return Err(Error::Windowing(format!("order {order} is not an odd harmonic")));
    }
    if window.weight(2.0) > 1e-3 || !(window.full_width > 0.0) {
        return Err(Error::Windowing(format!(
            "window of full width {}ω reaches the neighbouring harmonics",
            window.full_width
        )));
    }
    if table.order != order {
        return Err(Error::config("order", "table order differs"));
    }
    let omega_fs = units::omega_au(waveform.wavelength_nm) / AU_TIME_FS;
    let span_fs = 2.5 * fwhm_fs;
    let period_au = waveform.period();
    let periods = (2.0 * span_fs / (period_au * AU_TIME_FS)).ceil() as usize;
    let n = periods * numerics.t_samples;
    let t0_au = units::fs_to_au(-span_fs);
    let series = dipole_series(waveform, atom, numerics, t0_au, n)?;
    if series.tail_estimate > numerics.tail_limit {
        return Err(Error::Accuracy {
            tail_estimate: series.tail_estimate,
            limit: numerics.tail_limit,
            context: " (nonadiabatic dipole)".into(),
        });
    }
    let dt_fs = series.dt * AU_TIME_FS;
    let t0_fs = -span_fs;
    let times: Vec<f64> = (0..n).map(|k| t0_fs + k as f64 * dt_fs).collect();

    // Window x(t) around +qω in the e^{+iΩt} transform, then demodulate.
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = series.dipole().into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_inverse(n).process(&mut buf);
    let d_omega = 2.0 * PI / (n as f64 * dt_fs);
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        let detuning = (kk * d_omega - order as f64 * omega_fs) / omega_fs;
        *v *= window.weight(detuning);
    }
    planner.plan_fft_forward(n).process(&mut buf);
    let nonad: Vec<Complex64> = buf
        .iter()
        .zip(&times)
        .map(|(v, &t)| v / n as f64 * Complex64::from_polar(1.0, order as f64 * omega_fs * t))
        .collect();

    let adiab: Vec<Complex64> = times
        .iter()
        .map(|&t| {
            let i = waveform.envelope_intensity_at_fs(t);
            let x = table.dipole(i)?;
            Ok(x * Complex64::from_polar(1.0, order as f64 * waveform.envelope_phase_at_fs(t)))
        })
        .collect::<Result<_>>()?;

    let harmonic_nm = waveform.wavelength_nm / order as f64;
    let adiabatic = analyse_pulse(&times, adiab, harmonic_nm, &mut planner)?;
    let nonadiabatic = analyse_pulse(&times, nonad, harmonic_nm, &mut planner)?;
    Ok(NonadiabaticStudy {
        delay_fs: nonadiabatic.center_fs - adiabatic.center_fs,
        red_shift_ev: units::angular_offset_to_ev(adiabatic.spectrum.centroid() - nonadiabatic.spectrum.centroid()),
        adiabatic,
        nonadiabatic,
    })
}

fn analyse_pulse(
    times: &[f64],
    envelope: Vec<Complex64>,
    harmonic_nm: f64,
    planner: &mut FftPlanner<f64>,
) -> Result<HarmonicPulse> {
    let dt = times[1] - times[0];
    let intensity: Vec<f64> = envelope.iter().map(|v| v.norm_sqr()).collect();
    let spec = envelope_spectrum(times[0], dt, &envelope, fft_len(envelope.len()), planner);
    let power: Vec<f64> = spec.values.iter().map(|v| v.norm_sqr()).collect();
    let (fit, bins) = spec.quadratic_phase();
    let c = fit.ok_or_else(|| Error::Fit(format!("spectrum spans {bins} bins above 5 %")))?;
    let mut flat = spec.clone();
    for (v, w) in flat.values.iter_mut().zip(&spec.d_omega) {
        *v *= Complex64::from_polar(1.0, -c[2] * w * w);
    }
    let len = spec.values.len();
    let start = 0.5 * (times[0] + times[times.len() - 1]) - 0.5 * len as f64 * dt;
    let (ct, ce) = flat.to_time(start, planner);
    let cp: Vec<f64> = ce.iter().map(|v| v.norm_sqr()).collect();
    Ok(HarmonicPulse {
        fwhm_fs: fwhm(times, &intensity),
        center_fs: half_max_center(times, &intensity),
        spectrum: SpectralProfile::from_parts(spec.d_omega.clone(), power, spec.unwrapped_phase(), 0.0, harmonic_nm),
        compressed: CompressedProfile {
            fwhm_fs: fwhm(&ct, &cp),
            times_fs: ct,
            power: cp,
            quadratic_fs2: c[2],
        },
        times_fs: times.to_vec(),
        envelope,
    })
}
