//! Paraxial envelope propagation of the fundamental and one harmonic through
//! a cylindrically symmetric gas jet, one envelope time slice at a time.
//!
//! Lengths: radii in µm, axial positions in mm. The fundamental envelope is
//! normalized so that |E₁|² is the local intensity in W/cm²; harmonic
//! envelopes are in V/m with real fields written as E e^{i(kz−ωt)} + c.c.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sfa::{intensity_for_cutoff, AtomModel, DriveWaveform, Envelope, Species};
use crate::tables::{loglog_transition, DipoleTable};
use crate::units::{self, AU_DIPOLE_CM, ELECTRON_MASS, ELEMENTARY_CHARGE, EPSILON_0, HBAR, SPEED_OF_LIGHT};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Focused Gaussian drive geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusGeometry {
    pub confocal_b_mm: f64,
    pub wavelength_nm: f64,
    pub focus_z_mm: f64,
}

impl FocusGeometry {
    pub fn new(confocal_b_mm: f64, wavelength_nm: f64) -> Result<Self> {
        if !(confocal_b_mm > 0.0) {
            return Err(Error::Domain {
                what: "confocal parameter",
                value: confocal_b_mm,
            });
        }
        if !(wavelength_nm > 0.0) {
            return Err(Error::Domain {
                what: "wavelength",
                value: wavelength_nm,
            });
        }
        Ok(Self {
            confocal_b_mm,
            wavelength_nm,
            focus_z_mm: 0.0,
        })
    }

    /// w₀ = √(bλ/2π) in µm.
    pub fn waist_um(&self) -> f64 {
        (self.confocal_b_mm * 1e3 * self.wavelength_nm * 1e-3 / (2.0 * PI)).sqrt()
    }

    /// Normalized axial coordinate 2(z − z_f)/b.
    pub fn reduced_z(&self, z_mm: f64) -> f64 {
        2.0 * (z_mm - self.focus_z_mm) / self.confocal_b_mm
    }

    /// 1/e² intensity radius w(z) in µm.
    pub fn radius_um(&self, z_mm: f64) -> f64 {
        self.waist_um() * (1.0 + self.reduced_z(z_mm).powi(2)).sqrt()
    }

    pub fn on_axis_intensity(&self, peak: f64, z_mm: f64) -> f64 {
        peak / (1.0 + self.reduced_z(z_mm).powi(2))
    }

    pub fn intensity(&self, peak: f64, z_mm: f64, r_um: f64) -> f64 {
        let w = self.radius_um(z_mm);
        self.on_axis_intensity(peak, z_mm) * (-2.0 * r_um * r_um / (w * w)).exp()
    }

    /// Gouy phase −arctan(2z/b) of the fundamental.
    pub fn gouy_phase(&self, z_mm: f64) -> f64 {
        -self.reduced_z(z_mm).atan()
    }

    /// Coefficient c of the radial phase c·r² (rad/µm²) of the fundamental
    /// multiplied by `order`.
    pub fn curvature_coefficient(&self, z_mm: f64, order: usize) -> f64 {
        let w = self.radius_um(z_mm);
        order as f64 * self.reduced_z(z_mm) / (w * w)
    }

    /// Wavenumber of harmonic `order` in rad/µm.
    pub fn wavenumber(&self, order: usize) -> f64 {
        order as f64 * units::wavenumber_per_um(self.wavelength_nm)
    }
}

/// Analytic lowest-order Gaussian envelope, |E|² in W/cm².
pub fn gaussian_reference(geometry: &FocusGeometry, peak_intensity: f64, z_mm: f64, r_um: f64) -> Complex64 {
    let u = geometry.reduced_z(z_mm);
    let w = geometry.radius_um(z_mm);
    let s = (r_um / w).powi(2);
    let amp = (peak_intensity / (1.0 + u * u)).sqrt() * (-s).exp();
    Complex64::from_polar(amp, -u.atan() + u * s)
}

/// Truncated Lorentzian atomic density profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetProfile {
    pub center_z_mm: f64,
    pub fwhm_mm: f64,
    pub truncation_halfwidth_mm: f64,
    pub peak_pressure_torr: f64,
    pub temperature_k: f64,
    pub species: Species,
}

impl JetProfile {
    /// 0.8 mm FWHM neon jet truncated at ±0.8 mm, 293 K.
    pub fn neon(center_z_mm: f64, peak_pressure_torr: f64) -> Self {
        Self {
            center_z_mm,
            fwhm_mm: 0.8,
            truncation_halfwidth_mm: 0.8,
            peak_pressure_torr,
            temperature_k: 293.0,
            species: Species::Neon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("jet.fwhm_mm", self.fwhm_mm),
            ("jet.truncation_mm", self.truncation_halfwidth_mm),
            ("jet.temperature_k", self.temperature_k),
        ];
        for (key, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(self.peak_pressure_torr >= 0.0 && self.peak_pressure_torr.is_finite()) {
            return Err(Error::config(
                "jet.pressure_torr",
                format!("must be non-negative, got {}", self.peak_pressure_torr),
            ));
        }
        Ok(())
    }

    pub fn peak_density_cm3(&self) -> f64 {
        units::number_density_cm3(self.peak_pressure_torr, self.temperature_k)
    }

    /// Upstream and downstream edges (mm).
    pub fn edges(&self) -> (f64, f64) {
        (
            self.center_z_mm - self.truncation_halfwidth_mm,
            self.center_z_mm + self.truncation_halfwidth_mm,
        )
    }
}

/// Atomic density (cm⁻³) at `z_mm`.
pub fn jet_density(jet: &JetProfile, z_mm: f64) -> f64 {
    let d = z_mm - jet.center_z_mm;
    if d.abs() > jet.truncation_halfwidth_mm {
        return 0.0;
    }
    jet.peak_density_cm3() / (1.0 + (2.0 * d / jet.fwhm_mm).powi(2))
}

/// Envelope on a radial grid at one plane and one slice time.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub r_um: Vec<f64>,
    pub values: Vec<Complex64>,
    pub z_mm: f64,
    pub wavelength_nm: f64,
    pub slice_time_fs: f64,
}

impl RadialField {
    pub fn dr(&self) -> f64 {
        self.r_um[1] - self.r_um[0]
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// ∫|E|² 2πr dr (µm² × field units²), with finite-volume weights.
    pub fn power(&self) -> f64 {
        radial_weights(self.r_um.len(), self.dr())
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.norm_sqr())
            .sum()
    }

    /// Radius (µm) beyond which |E|² stays below e⁻² of its maximum.
    pub fn radius_1e2(&self) -> f64 {
        let i = self.intensity();
        let peak = i.iter().fold(0.0f64, |m, &v| m.max(v));
        let level = peak * (-2.0f64).exp();
        match i.iter().rposition(|&v| v >= level) {
            Some(j) if j + 1 < i.len() => {
                let (a, b) = (i[j], i[j + 1]);
                self.r_um[j] + (a - level) / (a - b) * self.dr()
            }
            Some(j) => self.r_um[j],
            None => 0.0,
        }
    }

    /// Phase unwrapped outward from the axis.
    pub fn unwrapped_phase(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut prev = self.values[0].arg();
        out.push(prev);
        for v in &self.values[1..] {
            let mut d = v.arg() - prev;
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            let next = out.last().unwrap() + d;
            prev = v.arg();
            out.push(next);
        }
        out
    }

    /// Intensity-weighted least-squares fit phase ≈ a + c·r² over radii where
    /// |E|² exceeds `floor` of its maximum; returns c in rad/µm².
    pub fn quadratic_phase_coefficient(&self, floor: f64) -> Result<f64> {
        let i = self.intensity();
        let peak = i.iter().fold(0.0f64, |m, &v| m.max(v));
        let phase = self.unwrapped_phase();
        let pts: Vec<(f64, f64, f64)> = (0..i.len())
            .filter(|&j| i[j] >= floor * peak)
            .map(|j| (self.r_um[j].powi(2), phase[j], i[j]))
            .collect();
        if pts.len() < 3 || peak == 0.0 {
            return Err(Error::Fit("too few radii above the intensity floor".into()));
        }
        Ok(weighted_slope(&pts))
    }
}

/// Weighted least-squares slope of (x, y, w) points.
pub(crate) fn weighted_slope(pts: &[(f64, f64, f64)]) -> f64 {
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Finite-volume annulus areas of a uniform radial grid starting at r = 0.
pub fn radial_weights(n: usize, dr: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            if j == 0 {
                PI * dr * dr / 4.0
            } else {
                2.0 * PI * j as f64 * dr * dr
            }
        })
        .collect()
}

/// Discretization of the (r, z) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationNumerics {
    /// Radial nodes covering `r_max_waists`·w₀; more are added at the same
    /// spacing when the beam is wider somewhere in the domain.
    pub r_points: usize,
    pub r_max_waists: f64,
    pub dz_jet_um: f64,
    pub dz_outside_um: f64,
    /// Outer fraction of the radial grid carrying the absorbing ramp.
    pub absorb_fraction: f64,
    /// Peak absorption coefficient of the ramp (1/µm).
    pub absorb_strength: f64,
    /// Envelope time slices for Gaussian drives.
    pub slices: usize,
    /// Slices span ±`slice_span_fwhm`·FWHM.
    pub slice_span_fwhm: f64,
}

impl Default for PropagationNumerics {
    fn default() -> Self {
        Self {
            r_points: 512,
            r_max_waists: 4.0,
            dz_jet_um: 10.0,
            dz_outside_um: 25.0,
            absorb_fraction: 0.1,
            absorb_strength: 0.02,
            slices: 512,
            slice_span_fwhm: 1.5,
        }
    }
}

impl PropagationNumerics {
    /// Halved Δr and Δz.
    pub fn refined(&self) -> Self {
        Self {
            r_points: 2 * self.r_points,
            dz_jet_um: 0.5 * self.dz_jet_um,
            dz_outside_um: 0.5 * self.dz_outside_um,
            ..*self
        }
    }

    /// Checks step ratios against the beam scales of `geometry`.
    pub fn validate(&self, geometry: &FocusGeometry) -> Result<()> {
        let w0 = geometry.waist_um();
        if self.r_points < 16 || !(self.r_max_waists >= 2.0) {
            return Err(Error::config(
                "numerics.r_points",
                "radial grid must cover ≥ 2 w₀ with ≥ 16 nodes",
            ));
        }
        let dr = self.r_max_waists * w0 / (self.r_points - 1) as f64;
        if dr > w0 / 8.0 {
            return Err(Error::config(
                "numerics.r_points",
                format!("Δr = {dr:.3} µm exceeds w₀/8"),
            ));
        }
        let zr_um = 0.5 * geometry.confocal_b_mm * 1e3;
        for (key, dz) in [
            ("numerics.dz_jet_um", self.dz_jet_um),
            ("numerics.dz_outside_um", self.dz_outside_um),
        ] {
            if !(dz > 0.0) || dz > zr_um / 10.0 {
                return Err(Error::config(key, format!("Δz = {dz} µm must be in (0, b/20]")));
            }
        }
        if !(self.absorb_fraction > 0.0 && self.absorb_fraction < 0.5) || !(self.absorb_strength >= 0.0) {
            return Err(Error::config("numerics.absorb_fraction", "must lie in (0, 0.5)"));
        }
        if self.slices < 1 || !(self.slice_span_fwhm > 0.0) {
            return Err(Error::config("numerics.slices", "need at least one slice"));
        }
        Ok(())
    }

    /// Radial grid wide enough for 3 w(z) at every plane of `z_range`.
    pub fn radial_grid(&self, geometry: &FocusGeometry, z_range: (f64, f64)) -> RadialGrid {
        let dr = self.r_max_waists * geometry.waist_um() / (self.r_points - 1) as f64;
        let w_max = geometry.radius_um(z_range.0).max(geometry.radius_um(z_range.1));
        let needed = (3.0 * w_max / dr).ceil() as usize + 1;
        RadialGrid {
            dr_um: dr,
            n: self.r_points.max(needed),
        }
    }

    /// Axial planes from `start` to `end` (mm), with the fine step inside
    /// the jet and every jet edge landing on a plane.
    pub fn z_planes(&self, start: f64, end: f64, jet: &JetProfile) -> Vec<f64> {
        let (lo, hi) = jet.edges();
        let mut cuts = vec![start];
        for c in [lo, hi] {
            if c > start && c < end {
                cuts.push(c);
            }
        }
        cuts.push(end);
        let mut planes = vec![start];
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let inside = 0.5 * (a + b) >= lo && 0.5 * (a + b) <= hi;
            let dz = 1e-3 * if inside { self.dz_jet_um } else { self.dz_outside_um };
            let n = ((b - a) / dz).ceil().max(1.0) as usize;
            planes.extend((1..=n).map(|k| a + (b - a) * k as f64 / n as f64));
        }
        planes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGrid {
    pub dr_um: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn radii(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.dr_um).collect()
    }

    pub fn r_max(&self) -> f64 {
        (self.n - 1) as f64 * self.dr_um
    }
}

/// Crank–Nicolson stepper for ∂E/∂z = (i/2k)∇⊥²E + (iδk − σ)E + S.
struct Stepper {
    dr: f64,
    n: usize,
    sigma: Vec<f64>,
}

impl Stepper {
    fn new(grid: &RadialGrid, numerics: &PropagationNumerics) -> Self {
        let r_max = grid.r_max();
        let ramp_start = (1.0 - numerics.absorb_fraction) * r_max;
        let sigma = grid
            .radii()
            .iter()
            .map(|&r| {
                if r <= ramp_start {
                    0.0
                } else {
                    numerics.absorb_strength * ((r - ramp_start) / (r_max - ramp_start)).powi(2)
                }
            })
            .collect();
        Self {
            dr: grid.dr_um,
            n: grid.n,
            sigma,
        }
    }

    /// Laplacian stencil (sub, diag, super) at node j; the outer boundary is
    /// Dirichlet and the axis uses the symmetric limit 4(E₁ − E₀)/Δr².
    fn stencil(&self, j: usize) -> (f64, f64, f64) {
        let h2 = self.dr * self.dr;
        if j == 0 {
            (0.0, -4.0 / h2, 4.0 / h2)
        } else {
            let x = 0.5 / j as f64;
            ((1.0 - x) / h2, -2.0 / h2, (1.0 + x) / h2)
        }
    }

    /// One step of length `dz` (µm). `dk_*` are the index corrections (1/µm)
    /// at the start and end planes; `src` is S at both planes.
    fn step(
        &self,
        e: &mut [Complex64],
        k: f64,
        dz: f64,
        dk_now: Option<&[f64]>,
        dk_next: Option<&[f64]>,
        src: Option<(&[Complex64], &[Complex64])>,
    ) {
        let n = self.n;
        let h = 0.5 * dz;
        let c = I * (h / (2.0 * k));
        let mut rhs = vec![Complex64::default(); n];
        let mut sub = vec![Complex64::default(); n];
        let mut diag = vec![Complex64::default(); n];
        let mut sup = vec![Complex64::default(); n];
        for j in 0..n {
            let (a, b, cc) = self.stencil(j);
            let dk0 = dk_now.map_or(0.0, |d| d[j]);
            let dk1 = dk_next.map_or(0.0, |d| d[j]);
            let lap = b * e[j]
                + if j > 0 { a * e[j - 1] } else { Complex64::default() }
                + if j + 1 < n { cc * e[j + 1] } else { Complex64::default() };
            rhs[j] = e[j] + c * lap + h * (I * dk0 - self.sigma[j]) * e[j];
            if let Some((s0, s1)) = src {
                rhs[j] += h * (s0[j] + s1[j]);
            }
            sub[j] = -c * a;
            diag[j] = 1.0 - c * b - h * (I * dk1 - self.sigma[j]);
            sup[j] = -c * cc;
        }
        thomas(&sub, &diag, &sup, &mut rhs);
        e.copy_from_slice(&rhs);
    }
}

/// Solves a tridiagonal system in place (`x` holds the right-hand side).
fn thomas(sub: &[Complex64], diag: &[Complex64], sup: &[Complex64], x: &mut [Complex64]) {
    let n = x.len();
    let mut c = vec![Complex64::default(); n];
    let mut beta = diag[0];
    c[0] = sup[0] / beta;
    x[0] /= beta;
    for j in 1..n {
        beta = diag[j] - sub[j] * c[j - 1];
        c[j] = sup[j] / beta;
        x[j] = (x[j] - sub[j] * x[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        let next = x[j + 1];
        x[j] -= c[j] * next;
    }
}

fn check_finite(values: &[Complex64], plane: usize, z_mm: f64) -> Result<()> {
    if values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { plane, z_mm })
    }
}

/// Index correction δk_q = −e²N_e/(2ε₀ m q c ω) in 1/mm, with ω the
/// fundamental angular frequency and N_e in cm⁻³.
pub fn plasma_dephasing(electrons_cm3: f64, order: usize, wavelength_nm: f64) -> f64 {
    let n = electrons_cm3 * 1e6;
    let omega = units::omega_si(wavelength_nm);
    -ELEMENTARY_CHARGE * ELEMENTARY_CHARGE * n
        / (2.0 * EPSILON_0 * ELECTRON_MASS * order as f64 * SPEED_OF_LIGHT * omega)
        * 1e-3
}

/// Phase mismatch |q δk₁ − δk_q| (1/mm) imposed by free electrons.
pub fn plasma_mismatch(electrons_cm3: f64, order: usize, wavelength_nm: f64) -> f64 {
    (order as f64 * plasma_dephasing(electrons_cm3, 1, wavelength_nm)
        - plasma_dephasing(electrons_cm3, order, wavelength_nm))
    .abs()
}

/// Atomic and electron densities on the (z, r) grid, with the running time
/// integral of the ionization rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumState {
    pub z_mm: Vec<f64>,
    pub atoms_cm3: Vec<f64>,
    /// ∫Γ dt′ up to the last processed slice, per plane and radius.
    pub rate_integral: Vec<Vec<f64>>,
    /// Γ (s⁻¹) at the last processed slice.
    last_rate: Vec<Vec<f64>>,
    last_time_fs: Option<f64>,
}

impl MediumState {
    pub fn new(jet: &JetProfile, z_mm: &[f64], n_r: usize) -> Self {
        Self {
            atoms_cm3: z_mm.iter().map(|&z| jet_density(jet, z)).collect(),
            z_mm: z_mm.to_vec(),
            rate_integral: vec![vec![0.0; n_r]; z_mm.len()],
            last_rate: vec![vec![0.0; n_r]; z_mm.len()],
            last_time_fs: None,
        }
    }

    pub fn ionized_fraction(&self, plane: usize, j: usize) -> f64 {
        1.0 - (-self.rate_integral[plane][j]).exp()
    }

    pub fn electrons_cm3(&self, plane: usize, j: usize) -> f64 {
        self.atoms_cm3[plane] * self.ionized_fraction(plane, j)
    }

    /// Plane `plane` at slice time `t_fs` sees ionization rates `rates`;
    /// returns the updated ∫Γ without committing it.
    fn integral_with(&self, plane: usize, t_fs: f64, rates: &[f64]) -> Vec<f64> {
        match self.last_time_fs {
            None => vec![0.0; rates.len()],
            Some(t0) => {
                let dt = (t_fs - t0) * 1e-15;
                self.rate_integral[plane]
                    .iter()
                    .zip(&self.last_rate[plane])
                    .zip(rates)
                    .map(|((s, g0), g1)| s + 0.5 * (g0 + g1) * dt)
                    .collect()
            }
        }
    }

    fn commit(&mut self, plane: usize, integral: Vec<f64>, rates: Vec<f64>) {
        self.rate_integral[plane] = integral;
        self.last_rate[plane] = rates;
    }

    fn finish_slice(&mut self, t_fs: f64) {
        self.last_time_fs = Some(t_fs);
    }
}

/// Builds the medium state after a history of fundamental intensities.
///
/// `history` holds, per slice in increasing time, the slice time (fs) and
/// the intensity (W/cm²) on every plane and radius of `medium`. Rates come
/// from the Γ column of `table`.
pub fn accumulate_electrons(
    mut medium: MediumState,
    history: &[(f64, Vec<Vec<f64>>)],
    table: &DipoleTable,
) -> Result<MediumState> {
    if history.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::config("slices", "slice times must increase"));
    }
    for (t, planes) in history {
        for (p, intensity) in planes.iter().enumerate() {
            let rates = intensity
                .iter()
                .map(|&i| table.query(i).map(|q| q.1))
                .collect::<Result<Vec<_>>>()?;
            let integral = medium.integral_with(p, *t, &rates);
            medium.commit(p, integral, rates);
        }
        medium.finish_slice(*t);
    }
    Ok(medium)
}

/// Nonlinear polarization P_q (C/m²) on one plane:
/// 2 N_a x_q(|E₁|²) e^{iqφ₁} e^{−∫Γ} e^{iφ_extra}.
pub fn polarization_source(
    table: &DipoleTable,
    fundamental: &RadialField,
    atoms_cm3: f64,
    rate_integral: Option<&[f64]>,
    extra_phase: f64,
) -> Result<Vec<Complex64>> {
    let q = table.order as f64;
    let scale = 2.0 * atoms_cm3 * 1e6 * AU_DIPOLE_CM;
    fundamental
        .values
        .iter()
        .enumerate()
        .map(|(j, e1)| {
            if atoms_cm3 == 0.0 {
                return Ok(Complex64::default());
            }
            let x = table.dipole(e1.norm_sqr()).map_err(|e| {
                e.with_context(format!(
                    "z = {:.4} mm, r = {:.2} µm",
                    fundamental.z_mm, fundamental.r_um[j]
                ))
            })?;
            let depletion = rate_integral.map_or(1.0, |s| (-s[j]).exp());
            Ok(scale * depletion * x * Complex64::from_polar(1.0, q * e1.arg() + extra_phase))
        })
        .collect()
}

/// Source term (V/m per µm) of the harmonic equation for a polarization P.
fn harmonic_drive(geometry: &FocusGeometry, order: usize, p: &[Complex64]) -> Vec<Complex64> {
    let k_si = geometry.wavenumber(order) * 1e6;
    let c = I * (k_si / (2.0 * EPSILON_0) * 1e-6);
    p.iter().map(|v| c * v).collect()
}

/// Marches the fundamental from the analytic Gaussian at `z_planes[0]`.
///
/// `electrons_cm3`, when given, is the free-electron density on every plane
/// and radius. Returns the field on every plane.
pub fn propagate_fundamental(
    geometry: &FocusGeometry,
    numerics: &PropagationNumerics,
    peak_intensity: f64,
    z_planes: &[f64],
    electrons_cm3: Option<&[Vec<f64>]>,
    slice_time_fs: f64,
) -> Result<Vec<RadialField>> {
    numerics.validate(geometry)?;
    let grid = numerics.radial_grid(geometry, (z_planes[0], *z_planes.last().unwrap()));
    let r = grid.radii();
    let stepper = Stepper::new(&grid, numerics);
    let k = geometry.wavenumber(1);
    let dk: Option<Vec<Vec<f64>>> = electrons_cm3.map(|ne| {
        ne.iter()
            .map(|row| {
                row.iter()
                    .map(|&n| plasma_dephasing(n, 1, geometry.wavelength_nm) * 1e-3)
                    .collect()
            })
            .collect()
    });
    let mut e: Vec<Complex64> = r
        .iter()
        .map(|&x| gaussian_reference(geometry, peak_intensity, z_planes[0], x))
        .collect();
    let field = |e: &[Complex64], z: f64| RadialField {
        r_um: r.clone(),
        values: e.to_vec(),
        z_mm: z,
        wavelength_nm: geometry.wavelength_nm,
        slice_time_fs,
    };
    let mut out = vec![field(&e, z_planes[0])];
    for p in 1..z_planes.len() {
        let dz = (z_planes[p] - z_planes[p - 1]) * 1e3;
        let (a, b) = match &dk {
            Some(d) => (Some(d[p - 1].as_slice()), Some(d[p].as_slice())),
            None => (None, None),
        };
        stepper.step(&mut e, k, dz, a, b, None);
        check_finite(&e, p, z_planes[p])?;
        out.push(field(&e, z_planes[p]));
    }
    Ok(out)
}

/// Marches harmonic `order` from zero field through `sources` (P_q in C/m²
/// on every plane) with plasma corrections δk_q (1/mm) and returns the exit
/// field.
pub fn propagate_harmonic(
    geometry: &FocusGeometry,
    numerics: &PropagationNumerics,
    order: usize,
    z_planes: &[f64],
    sources: &[Vec<Complex64>],
    dk_per_mm: Option<&[Vec<f64>]>,
    slice_time_fs: f64,
) -> Result<RadialField> {
    numerics.validate(geometry)?;
    let grid = numerics.radial_grid(geometry, (z_planes[0], *z_planes.last().unwrap()));
    if sources.len() != z_planes.len() || sources.iter().any(|s| s.len() != grid.n) {
        return Err(Error::config("sources", "source must be sampled on the (r, z) grid"));
    }
    let stepper = Stepper::new(&grid, numerics);
    let k = geometry.wavenumber(order);
    let drive: Vec<Vec<Complex64>> = sources.iter().map(|p| harmonic_drive(geometry, order, p)).collect();
    let dk: Option<Vec<Vec<f64>>> =
        dk_per_mm.map(|d| d.iter().map(|row| row.iter().map(|v| v * 1e-3).collect()).collect());
    let mut e = vec![Complex64::default(); grid.n];
    for p in 1..z_planes.len() {
        let dz = (z_planes[p] - z_planes[p - 1]) * 1e3;
        let (a, b) = match &dk {
            Some(d) => (Some(d[p - 1].as_slice()), Some(d[p].as_slice())),
            None => (None, None),
        };
        stepper.step(&mut e, k, dz, a, b, Some((&drive[p - 1], &drive[p])));
        check_finite(&e, p, z_planes[p])?;
    }
    Ok(RadialField {
        r_um: grid.radii(),
        values: e,
        z_mm: *z_planes.last().unwrap(),
        wavelength_nm: geometry.wavelength_nm / order as f64,
        slice_time_fs,
    })
}

/// Which ionization effects are coupled into a pulse run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IonizationFlags {
    /// Free-electron dispersion acting on the harmonic.
    pub ionization: bool,
    /// Free-electron dispersion acting on the fundamental.
    pub defocusing: bool,
    /// Ground-state depletion factor e^{−∫Γ} on the polarization.
    pub depletion: bool,
}

impl IonizationFlags {
    pub fn any(&self) -> bool {
        self.ionization || self.defocusing || self.depletion
    }
}

/// Everything needed to generate one harmonic in one jet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicSetup {
    pub geometry: FocusGeometry,
    pub jet: JetProfile,
    /// Drive; its envelope sets the slices and its chirp the drive phase.
    pub drive: DriveWaveform,
    pub order: usize,
    pub flags: IonizationFlags,
    pub numerics: PropagationNumerics,
}

impl HarmonicSetup {
    pub fn validate(&self) -> Result<()> {
        self.jet.validate()?;
        self.numerics.validate(&self.geometry)?;
        if self.order.is_multiple_of(2) || self.order == 0 {
            return Err(Error::config("order", "harmonic order must be odd"));
        }
        let (lo, hi) = self.jet.edges();
        if lo < self.geometry.focus_z_mm - 8.0 || hi > self.geometry.focus_z_mm + 8.0 {
            return Err(Error::config("jet.center_mm", "jet must lie within ±8 mm of the focus"));
        }
        Ok(())
    }

    /// Envelope slice times (fs).
    pub fn slice_times(&self) -> Vec<f64> {
        let n = self.numerics.slices;
        let half = match self.drive.envelope {
            Envelope::Gaussian { fwhm_fs } => self.numerics.slice_span_fwhm * fwhm_fs,
            Envelope::Square { width_fs } => 0.5 * width_fs,
        };
        if n == 1 {
            return vec![0.0];
        }
        (0..n).map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64).collect()
    }

    /// The same setup driven by a square pulse, solved as one slice.
    pub fn static_slice(&self) -> Self {
        let mut s = *self;
        s.drive = self.drive.frozen_at_fs(0.0);
        s.numerics.slices = 1;
        s.flags = IonizationFlags::default();
        s
    }

    fn planes(&self) -> Vec<f64> {
        let (lo, hi) = self.jet.edges();
        self.numerics.z_planes(lo, hi, &self.jet)
    }
}

/// Exit fields of every slice plus ionization diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseRun {
    pub order: usize,
    pub wavelength_nm: f64,
    pub slice_times_fs: Vec<f64>,
    /// Harmonic envelope at the jet exit, one per slice.
    pub harmonic: Vec<RadialField>,
    /// Fundamental at the jet exit, one per slice.
    pub fundamental: Vec<RadialField>,
    /// On-axis ionized fraction at the plane nearest the jet center, after
    /// the last slice.
    pub center_ionization: f64,
    /// Plasma mismatch (1/mm) on axis at the jet center for the slice
    /// nearest the pulse peak.
    pub peak_mismatch_per_mm: f64,
    /// Relative drop of the exit peak intensity against the vacuum Gaussian
    /// at the slice nearest the pulse peak.
    pub exit_intensity_reduction: f64,
}

impl PulseRun {
    /// Harmonic photon number per slice time unit (photons/fs) of each slice.
    pub fn photon_rate(&self) -> Vec<f64> {
        let photon = HBAR * units::omega_si(self.wavelength_nm) * self.order as f64;
        self.harmonic
            .iter()
            .map(|f| harmonic_power_w(f) * 1e-15 / photon)
            .collect()
    }

    /// Time-integrated photon number (trapezoid over slices); for a single
    /// slice, the exit power in W.
    pub fn yield_metric(&self) -> f64 {
        if self.harmonic.len() == 1 {
            return harmonic_power_w(&self.harmonic[0]);
        }
        let rate = self.photon_rate();
        self.slice_times_fs
            .windows(2)
            .zip(rate.windows(2))
            .map(|(t, r)| 0.5 * (r[0] + r[1]) * (t[1] - t[0]))
            .sum()
    }
}

/// Radially integrated harmonic power (W) for a field in V/m.
pub fn harmonic_power_w(field: &RadialField) -> f64 {
    2.0 * SPEED_OF_LIGHT * EPSILON_0 * field.power() * 1e-12
}

struct SliceOutput {
    harmonic: RadialField,
    fundamental: RadialField,
    center_mismatch: f64,
}

/// Runs every slice of the drive envelope through the jet.
pub fn run_pulse(setup: &HarmonicSetup, table: &DipoleTable) -> Result<PulseRun> {
    setup.validate()?;
    if table.order != setup.order {
        return Err(Error::config("order", "table order differs from the setup"));
    }
    let planes = setup.planes();
    let grid = setup
        .numerics
        .radial_grid(&setup.geometry, (planes[0], *planes.last().unwrap()));
    let times = setup.slice_times();
    let center = planes
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - setup.jet.center_z_mm)
                .abs()
                .total_cmp(&(b.1 - setup.jet.center_z_mm).abs())
        })
        .map(|(i, _)| i)
        .unwrap();
    let peak_slice = times
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();

    let mut medium = MediumState::new(&setup.jet, &planes, grid.n);
    let outputs: Vec<SliceOutput> = if setup.flags.any() && times.len() > 1 {
        let mut v = Vec::with_capacity(times.len());
        for &t in &times {
            v.push(solve_slice(setup, table, &planes, &grid, t, Some(&mut medium))?);
            medium.finish_slice(t);
        }
        v
    } else {
        times
            .par_iter()
            .map(|&t| solve_slice(setup, table, &planes, &grid, t, None))
            .collect::<Result<_>>()?
    };

    let exit_z = *planes.last().unwrap();
    let peak_t = times[peak_slice];
    let vacuum = setup
        .geometry
        .on_axis_intensity(setup.drive.envelope_intensity_at_fs(peak_t), exit_z);
    let exit_peak = outputs[peak_slice]
        .fundamental
        .intensity()
        .into_iter()
        .fold(0.0f64, f64::max);
    let peak_mismatch = outputs[peak_slice].center_mismatch;
    let (harmonic, fundamental) = outputs.into_iter().map(|o| (o.harmonic, o.fundamental)).unzip();
    Ok(PulseRun {
        order: setup.order,
        wavelength_nm: setup.geometry.wavelength_nm,
        slice_times_fs: times,
        harmonic,
        fundamental,
        center_ionization: medium.ionized_fraction(center, 0),
        peak_mismatch_per_mm: peak_mismatch,
        exit_intensity_reduction: if vacuum > 0.0 { 1.0 - exit_peak / vacuum } else { 0.0 },
    })
}

/// One slice: fundamental and harmonic marched together plane by plane.
fn solve_slice(
    setup: &HarmonicSetup,
    table: &DipoleTable,
    planes: &[f64],
    grid: &RadialGrid,
    t_fs: f64,
    mut medium: Option<&mut MediumState>,
) -> Result<SliceOutput> {
    let geom = &setup.geometry;
    let flags = setup.flags;
    let lambda = geom.wavelength_nm;
    let q = setup.order;
    let r = grid.radii();
    let stepper = Stepper::new(grid, &setup.numerics);
    let (k1, kq) = (geom.wavenumber(1), geom.wavenumber(q));
    let peak = setup.drive.envelope_intensity_at_fs(t_fs);
    let extra_phase = q as f64 * setup.drive.envelope_phase_at_fs(t_fs);
    let atoms: Vec<f64> = planes.iter().map(|&z| jet_density(&setup.jet, z)).collect();
    let center_plane = atoms
        .iter()
        .enumerate()
        .fold((0, -1.0), |b, (i, &a)| if a > b.1 { (i, a) } else { b })
        .0;

    let as_field = |e: &[Complex64], z: f64, wl: f64| RadialField {
        r_um: r.clone(),
        values: e.to_vec(),
        z_mm: z,
        wavelength_nm: wl,
        slice_time_fs: t_fs,
    };

    // Evaluates ionization state and source at plane p for field e1; `lag`
    // is the plasma phase the fundamental has gathered without being
    // propagated through the plasma (defocusing disabled).
    // Returns (∫Γ, Γ, δk₁ in 1/µm, δk_q in 1/µm, P_q).
    type PlaneState = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<Complex64>);
    let evaluate = |p: usize, e1: &[Complex64], lag: &[f64], medium: &Option<&mut MediumState>| -> Result<PlaneState> {
        let n = e1.len();
        let (integral, rates) = match medium {
            Some(m) => {
                let rates = e1
                    .iter()
                    .map(|v| table.query(v.norm_sqr()).map(|x| x.1))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.with_context(format!("z = {:.4} mm", planes[p])))?;
                (m.integral_with(p, t_fs, &rates), rates)
            }
            None => (vec![0.0; n], vec![0.0; n]),
        };
        let ne: Vec<f64> = integral.iter().map(|s| atoms[p] * (1.0 - (-s).exp())).collect();
        let dk1 = if flags.ionization || flags.defocusing {
            ne.iter().map(|&x| plasma_dephasing(x, 1, lambda) * 1e-3).collect()
        } else {
            vec![0.0; n]
        };
        let dkq = if flags.ionization {
            ne.iter().map(|&x| plasma_dephasing(x, q, lambda) * 1e-3).collect()
        } else {
            vec![0.0; n]
        };
        let shifted: Vec<Complex64> = e1
            .iter()
            .zip(lag)
            .map(|(v, &l)| v * Complex64::from_polar(1.0, l))
            .collect();
        let field = as_field(&shifted, planes[p], lambda);
        let depletion = (flags.depletion && medium.is_some()).then_some(integral.as_slice());
        let p_q = polarization_source(table, &field, atoms[p], depletion, extra_phase)?;
        Ok((integral, rates, dk1, dkq, p_q))
    };
    let local_phase = !flags.defocusing;

    let mut e1: Vec<Complex64> = r
        .iter()
        .map(|&x| gaussian_reference(geom, peak, planes[0], x))
        .collect();
    let mut eq = vec![Complex64::default(); grid.n];
    let mut lag = vec![0.0; grid.n];
    let (mut integral, mut rates, mut dk1, mut dkq, mut pq) = evaluate(0, &e1, &lag, &medium)?;
    let mut center_mismatch = 0.0;
    for p in 0..planes.len() {
        if p == center_plane {
            let ne = atoms[p] * (1.0 - (-integral[0]).exp());
            center_mismatch = if flags.ionization || flags.defocusing {
                plasma_mismatch(ne, q, lambda)
            } else {
                0.0
            };
        }
        if let Some(m) = medium.as_deref_mut() {
            m.commit(p, std::mem::take(&mut integral), std::mem::take(&mut rates));
        }
        if p + 1 == planes.len() {
            break;
        }
        let dz = (planes[p + 1] - planes[p]) * 1e3;
        let mut next = e1.clone();
        let mut state;
        if local_phase {
            stepper.step(&mut next, k1, dz, None, None, None);
            // δk₁ at p+1 depends only on |E₁|, so the lag can be advanced
            // after a first evaluation.
            state = evaluate(p + 1, &next, &lag, &medium)?;
            if state.2.iter().any(|&d| d != 0.0) {
                let advanced: Vec<f64> = lag
                    .iter()
                    .zip(dk1.iter().zip(&state.2))
                    .map(|(l, (a, b))| l + 0.5 * (a + b) * dz)
                    .collect();
                state = evaluate(p + 1, &next, &advanced, &medium)?;
                lag = advanced;
            }
        } else {
            // Predictor with the current index, corrector with the index
            // implied by the predicted field.
            stepper.step(&mut next, k1, dz, Some(&dk1), Some(&dk1), None);
            state = evaluate(p + 1, &next, &lag, &medium)?;
            next.copy_from_slice(&e1);
            stepper.step(&mut next, k1, dz, Some(&dk1), Some(&state.2), None);
            state = evaluate(p + 1, &next, &lag, &medium)?;
        }
        check_finite(&next, p + 1, planes[p + 1])?;
        let s0 = harmonic_drive(geom, q, &pq);
        let s1 = harmonic_drive(geom, q, &state.4);
        stepper.step(&mut eq, kq, dz, Some(&dkq), Some(&state.3), Some((&s0, &s1)));
        check_finite(&eq, p + 1, planes[p + 1])?;
        e1 = next;
        (integral, rates, dk1, dkq, pq) = state;
    }
    let exit = *planes.last().unwrap();
    Ok(SliceOutput {
        harmonic: as_field(&eq, exit, lambda / q as f64),
        fundamental: as_field(&e1, exit, lambda),
        center_mismatch,
    })
}

/// One point of a conversion scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub jet_center_mm: f64,
    pub peak_intensity: f64,
    /// Exit power (W) for square envelopes; photon number for pulses.
    pub efficiency: f64,
}

/// Conversion efficiency over jet positions and peak intensities.
///
/// With `dynamic` unset every point is a single static slice (square
/// envelope, no ionization); otherwise the full pulse of `setup` is run.
pub fn conversion_scan(
    setup: &HarmonicSetup,
    table: &DipoleTable,
    positions_mm: &[f64],
    intensities: &[f64],
    dynamic: bool,
) -> Result<Vec<ScanPoint>> {
    if let Some(z) = positions_mm.iter().find(|z| z.abs() > 5.0) {
        return Err(Error::config("scan.positions_mm", format!("{z} mm is beyond ±5 mm")));
    }
    let points: Vec<(f64, f64)> = intensities
        .iter()
        .flat_map(|&i| positions_mm.iter().map(move |&z| (z, i)))
        .collect();
    points
        .par_iter()
        .map(|&(z, i)| {
            let mut s = *setup;
            s.jet.center_z_mm = z;
            s.drive.peak_intensity = i;
            if !dynamic {
                s = s.static_slice();
            }
            let run = run_pulse(&s, table)?;
            Ok(ScanPoint {
                jet_center_mm: z,
                peak_intensity: i,
                efficiency: run.yield_metric(),
            })
        })
        .collect()
}

/// Effective cutoff law coefficient c in Ip + c·Up implied by the change of
/// slope of `values` (efficiency or dipole strength) against peak intensity.
pub fn modified_cutoff_check(
    atom: &AtomModel,
    order: usize,
    wavelength_nm: f64,
    intensities: &[f64],
    values: &[f64],
) -> Result<(f64, f64)> {
    let it = loglog_transition(intensities, values)
        .map_err(|_| Error::NotFound("efficiency curve does not bracket a plateau-cutoff transition".into()))?;
    let excess = order as f64 * units::photon_energy_ev(wavelength_nm) - atom.ip_ev();
    Ok((excess / units::ponderomotive_ev(it, wavelength_nm), it))
}

/// Intensity at which `order` reaches the cutoff for coefficient c.
pub fn cutoff_intensity(atom: &AtomModel, order: usize, wavelength_nm: f64, coefficient: f64) -> Option<f64> {
    intensity_for_cutoff(atom, order, wavelength_nm, coefficient)
}

const PLANE_MAGIC: &[u8; 8] = b"HHGFPLN\0";
const PLANE_VERSION: u64 = 1;

/// Stack of field planes sharing one radial grid and slice time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPlanes {
    pub r_count: usize,
    pub wavelength_nm: f64,
    pub slice_time_fs: f64,
    /// Row-major: plane index, then radius.
    pub values: Vec<Complex64>,
}

impl FieldPlanes {
    pub fn from_fields(fields: &[RadialField]) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Format("no planes".into()))?;
        if fields.iter().any(|f| f.values.len() != first.values.len()) {
            return Err(Error::Format("planes have different radial grids".into()));
        }
        Ok(Self {
            r_count: first.values.len(),
            wavelength_nm: first.wavelength_nm,
            slice_time_fs: first.slice_time_fs,
            values: fields.iter().flat_map(|f| f.values.iter().copied()).collect(),
        })
    }

    pub fn z_count(&self) -> usize {
        self.values.len() / self.r_count.max(1)
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(PLANE_MAGIC)?;
        for v in [PLANE_VERSION, self.r_count as u64, self.z_count() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.wavelength_nm.to_le_bytes())?;
        w.write_all(&self.slice_time_fs.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PLANE_MAGIC {
            return Err(Error::Format("not a field-plane file".into()));
        }
        let mut word = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let version = u64::from_le_bytes(word()?);
        if version != PLANE_VERSION {
            return Err(Error::Format(format!("unsupported field-plane version {version}")));
        }
        let r_count = u64::from_le_bytes(word()?) as usize;
        let z_count = u64::from_le_bytes(word()?) as usize;
        let wavelength_nm = f64::from_le_bytes(word()?);
        let slice_time_fs = f64::from_le_bytes(word()?);
        let mut values = Vec::with_capacity(r_count * z_count);
        for _ in 0..r_count * z_count {
            let re = f64::from_le_bytes(word()?);
            let im = f64::from_le_bytes(word()?);
            values.push(Complex64::new(re, im));
        }
        Ok(Self {
            r_count,
            wavelength_nm,
            slice_time_fs,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
