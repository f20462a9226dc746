//! Adiabatic single-atom response tabulated against intensity for one
//! harmonic order, with interpolation and phase-slope extraction.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sfa::{harmonic_components, intensity_for_cutoff, AtomModel, DriveWaveform, SfaNumerics, Species};
use crate::units::AU_TIME_FS;

const MAGIC: &[u8; 8] = b"HHGDTAB\0";
const VERSION: u64 = 1;

/// Smallest node count accepted by [`build_table`].
pub const MIN_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Uniform from zero.
    Uniform,
    /// Zero anchor followed by geometric spacing from `min`.
    Log,
}

/// Intensity nodes of a table (W/cm²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub kind: GridKind,
    /// Lowest non-zero node for log grids; ignored for uniform grids.
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
}

impl GridSpec {
    /// 250 uniform nodes from 0 to 1.2× the peak intensity of a scan.
    pub fn for_peak(peak: f64) -> Self {
        Self {
            kind: GridKind::Uniform,
            min: 0.1 * peak,
            max: 1.2 * peak,
            nodes: 250,
        }
    }

    pub fn log_for_peak(peak: f64) -> Self {
        Self {
            kind: GridKind::Log,
            ..Self::for_peak(peak)
        }
    }

    pub fn with_nodes(self, nodes: usize) -> Self {
        Self { nodes, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < MIN_NODES {
            return Err(Error::config("table.nodes", format!("need at least {MIN_NODES} nodes")));
        }
        if !(self.max > 0.0) || !self.max.is_finite() {
            return Err(Error::config("table.max", "must be positive"));
        }
        if self.kind == GridKind::Log && !(self.min > 0.0 && self.min < self.max) {
            return Err(Error::config("table.min", "log grid needs 0 < min < max"));
        }
        Ok(())
    }

    pub fn intensities(&self) -> Vec<f64> {
        let n = self.nodes;
        match self.kind {
            GridKind::Uniform => (0..n).map(|i| self.max * i as f64 / (n - 1) as f64).collect(),
            GridKind::Log => {
                let ratio = (self.max / self.min).ln() / (n - 2) as f64;
                std::iter::once(0.0)
                    .chain((0..n - 1).map(|i| self.min * (ratio * i as f64).exp()))
                    .collect()
            }
        }
    }
}

/// Single-atom response of harmonic `order` on an intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleTable {
    pub order: usize,
    pub atom: AtomModel,
    pub wavelength_nm: f64,
    pub intensities: Vec<f64>,
    /// |x_q| (a.u.).
    pub amplitude: Vec<f64>,
    /// Phase of x_q, unwrapped upward from the lowest node (rad).
    pub phase: Vec<f64>,
    /// Ionization rate (s⁻¹).
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Cutoff,
    Plateau,
}

/// Least-squares slope −η of the unwrapped phase over an intensity window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSlope {
    /// rad per W/cm².
    pub eta: f64,
    pub window: (f64, f64),
    pub region: Region,
    /// RMS deviation from the fitted line (rad).
    pub fit_residual: f64,
}

impl PhaseSlope {
    /// η in rad per 10¹⁴ W/cm².
    pub fn eta_per_1e14(&self) -> f64 {
        self.eta * 1e14
    }
}

/// Fills every node with the harmonic component from the SFA model.
pub fn build_table(
    atom: &AtomModel,
    wavelength_nm: f64,
    order: usize,
    grid: &GridSpec,
    numerics: &SfaNumerics,
) -> Result<DipoleTable> {
    grid.validate()?;
    numerics.validate()?;
    let intensities = grid.intensities();
    let nodes: Vec<(Complex64, f64)> = intensities
        .par_iter()
        .map(|&i| node(atom, wavelength_nm, order, i, numerics))
        .collect::<Result<_>>()?;

    let amplitude: Vec<f64> = nodes.iter().map(|(x, _)| x.norm()).collect();
    // Γ is physically monotonic; a running maximum removes residual
    // quadrature noise just above the resolution floor.
    let gamma = nodes
        .iter()
        .scan(0.0f64, |m, (_, g)| {
            *m = m.max(*g);
            Some(*m)
        })
        .collect();
    let raw: Vec<f64> = nodes.iter().map(|(x, _)| x.arg()).collect();
    Ok(DipoleTable {
        order,
        atom: *atom,
        wavelength_nm,
        phase: unwrap_from_first(&raw, &amplitude),
        amplitude,
        gamma,
        intensities,
    })
}

/// Harmonic component and ionization rate (s⁻¹) at one intensity.
pub fn node(
    atom: &AtomModel,
    wavelength_nm: f64,
    order: usize,
    intensity: f64,
    numerics: &SfaNumerics,
) -> Result<(Complex64, f64)> {
    let drive = DriveWaveform::monochromatic(wavelength_nm, intensity)?;
    let h = harmonic_components(&drive, atom, numerics, order)
        .map_err(|e| e.with_context(format!("table node at {intensity:e} W/cm²")))?;
    Ok((h.order(order), h.ionization_rate / (AU_TIME_FS * 1e-15)))
}

/// Continuation unwrapping; nodes with zero amplitude inherit the phase of
/// the next node that carries one.
fn unwrap_from_first(raw: &[f64], amplitude: &[f64]) -> Vec<f64> {
    let first = amplitude.iter().position(|&a| a > 0.0).unwrap_or(0);
    let mut out = vec![raw.get(first).copied().unwrap_or(0.0); raw.len()];
    for i in first + 1..raw.len() {
        let mut step = raw[i] - raw[i - 1];
        step -= 2.0 * PI * (step / (2.0 * PI)).round();
        out[i] = out[i - 1] + step;
    }
    out
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

impl DipoleTable {
    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.intensities[0], *self.intensities.last().unwrap())
    }

    /// Complex x_q and Γ (s⁻¹) at `intensity`, interpolating amplitude and
    /// unwrapped phase separately.
    pub fn query(&self, intensity: f64) -> Result<(Complex64, f64)> {
        let (lo, hi) = self.range();
        if !(intensity >= lo && intensity <= hi) {
            return Err(Error::Range {
                what: "intensity",
                value: intensity,
                min: lo,
                max: hi,
                context: format!(" (table for harmonic {})", self.order),
            });
        }
        let j = self.intensities.partition_point(|&x| x <= intensity);
        let (k, s) = if j >= self.len() {
            (self.len() - 2, 1.0)
        } else {
            let k = j - 1;
            let (a, b) = (self.intensities[k], self.intensities[k + 1]);
            (k, (intensity - a) / (b - a))
        };
        let amp = lerp(self.amplitude[k], self.amplitude[k + 1], s);
        let phase = lerp(self.phase[k], self.phase[k + 1], s);
        let gamma = lerp(self.gamma[k], self.gamma[k + 1], s);
        Ok((Complex64::from_polar(amp, phase), gamma))
    }

    /// Harmonic component only.
    pub fn dipole(&self, intensity: f64) -> Result<Complex64> {
        Ok(self.query(intensity)?.0)
    }

    /// Linear fit of the unwrapped phase over `window` (W/cm²).
    pub fn phase_slope(&self, window: (f64, f64)) -> Result<PhaseSlope> {
        let (lo, hi) = self.range();
        let (a, b) = window;
        if !(a >= lo && b <= hi && a < b) {
            return Err(Error::Range {
                what: "phase-slope window",
                value: if a < lo { a } else { b },
                min: lo,
                max: hi,
                context: String::new(),
            });
        }
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.intensities[i] >= a && self.intensities[i] <= b)
            .collect();
        if idx.len() < 10 {
            return Err(Error::Fit(format!(
                "window [{a:e}, {b:e}] holds {} nodes, need 10",
                idx.len()
            )));
        }
        let xs: Vec<f64> = idx.iter().map(|&i| self.intensities[i] / 1e14).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| self.phase[i]).collect();
        let (slope, intercept) = linear_fit(&xs, &ys);
        let rms = (xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - slope * x - intercept).powi(2))
            .sum::<f64>()
            / xs.len() as f64)
            .sqrt();
        let boundary = self.cutoff_law_intensity();
        let region = if 0.5 * (a + b) < boundary {
            Region::Cutoff
        } else {
            Region::Plateau
        };
        Ok(PhaseSlope {
            eta: -slope / 1e14,
            window,
            region,
            fit_residual: rms,
        })
    }

    /// Intensity at which the order reaches the Ip + 3.2 Up cutoff.
    pub fn cutoff_law_intensity(&self) -> f64 {
        intensity_for_cutoff(&self.atom, self.order, self.wavelength_nm, 3.2).unwrap_or(0.0)
    }

    /// Intensity where the log–log slope d ln|x_q| / d ln I first drops
    /// below half of its low-intensity value (see [`loglog_transition`]).
    pub fn transition_intensity(&self) -> Result<f64> {
        loglog_transition(&self.intensities, &self.amplitude).map_err(|e| match e {
            Error::NotFound(_) => Error::NotFound(format!(
                "no plateau-cutoff transition for harmonic {} below {:e} W/cm²",
                self.order,
                self.range().1
            )),
            other => other,
        })
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.order as u64, self.atom.code()] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.wavelength_nm.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            for v in [self.intensities[i], self.amplitude[i], self.phase[i], self.gamma[i]] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 32 * self.len());
        self.write_binary(&mut out).expect("writing to memory");
        out
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dipole table".into()));
        }
        let mut word = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let version = u64::from_le_bytes(word()?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let order = u64::from_le_bytes(word()?) as usize;
        let code = u64::from_le_bytes(word()?);
        let species = Species::from_code(code).ok_or_else(|| Error::Format(format!("unknown atom id {code}")))?;
        let wavelength_nm = f64::from_le_bytes(word()?);
        let n = u64::from_le_bytes(word()?) as usize;
        let mut cols = [
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        ];
        for _ in 0..n {
            for col in cols.iter_mut() {
                col.push(f64::from_le_bytes(word()?));
            }
        }
        let [intensities, amplitude, phase, gamma] = cols;
        let table = DipoleTable {
            order,
            atom: AtomModel::preset(species),
            wavelength_nm,
            intensities,
            amplitude,
            phase,
            gamma,
        };
        table.check_invariants()?;
        Ok(table)
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

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "intensity_wcm2,amplitude_au,phase_rad,gamma_per_s")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:e},{:e},{},{:e}",
                self.intensities[i], self.amplitude[i], self.phase[i], self.gamma[i]
            )?;
        }
        Ok(())
    }

    /// Checks ordering, phase continuity and sign constraints.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if n < 2
            || [self.amplitude.len(), self.phase.len(), self.gamma.len()]
                .iter()
                .any(|&m| m != n)
        {
            return Err(Error::Format("inconsistent table columns".into()));
        }
        if self.intensities.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("intensities not strictly ascending".into()));
        }
        if self.phase.windows(2).any(|w| (w[1] - w[0]).abs() > PI) {
            return Err(Error::Format("phase jumps by more than π".into()));
        }
        if self.amplitude.iter().any(|&a| !(a >= 0.0)) || self.gamma.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Format("negative amplitude or rate".into()));
        }
        Ok(())
    }
}

/// Abscissa where the log–log slope d ln y / d ln x first drops below half
/// of its maximum.
///
/// Slopes are least-squares fits over ±10 % in x around each node; the
/// reference is the largest such slope (the steep rise). Nodes whose value is
/// below 1e−12 of the maximum are treated as numerical noise. Sparse
/// curves widen each window to the neighbouring nodes. The first
/// qualifying node after the steepest one wins, so ties resolve low.
pub fn loglog_transition(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let slopes = loglog_slopes(xs, ys);
    let (peak_at, peak) = slopes
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|v| (i, v)))
        .fold((usize::MAX, 0.0), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    if peak_at == usize::MAX || peak <= 0.0 {
        return Err(Error::NotFound("curve never rises".into()));
    }
    slopes[peak_at..]
        .iter()
        .position(|s| matches!(s, Some(v) if *v < 0.5 * peak))
        .map(|off| xs[peak_at + off])
        .ok_or_else(|| Error::NotFound("slope never halves".into()))
}

fn loglog_slopes(xs: &[f64], ys: &[f64]) -> Vec<Option<f64>> {
    const HALF_WIDTH: f64 = 0.1;
    let floor = 1e-12 * ys.iter().fold(0.0f64, |m, &a| m.max(a));
    let usable = |j: usize| xs[j] > 0.0 && ys[j] > floor;
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    (0..xs.len())
        .map(|i| {
            let c = xs[i];
            let truncated = c * (1.0 - HALF_WIDTH) < lo || c * (1.0 + HALF_WIDTH) > hi;
            if !usable(i) || i == 0 || i + 1 == xs.len() || (truncated && xs.len() > 40) {
                return None;
            }
            // Sparse scans fall back to the nearest neighbours.
            let mut lx = Vec::new();
            let mut ly = Vec::new();
            for j in 0..xs.len() {
                let d = (xs[j] / c).ln();
                if d.abs() <= HALF_WIDTH || j.abs_diff(i) <= 1 {
                    if !usable(j) {
                        return None;
                    }
                    lx.push(d);
                    ly.push(ys[j].ln());
                }
            }
            (lx.len() >= 3).then(|| linear_fit(&lx, &ly).0)
        })
        .collect()
}

/// Ordinary least squares y ≈ slope·x + intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
