//! Strong-field single-atom response: the return-time integral for the
//! induced dipole, the complex decay rate and the harmonic components.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use super::atom::AtomModel;
use super::drive::DriveWaveform;
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, CompositeRule};

/// Discretization of the return-time integral and of the time grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfaNumerics {
    /// Regularization ν of the diffusion prefactor (a.u. time).
    pub nu: f64,
    /// Upper limit of the return-time integral, in optical periods.
    pub tau_max_periods: f64,
    /// Quadrature nodes per optical period in τ.
    pub tau_samples: usize,
    /// Time samples per optical period for the FFT.
    pub t_samples: usize,
    /// Apply the ground-state depletion factor exp(−Γt).
    pub depletion: bool,
    /// Largest acceptable relative tail estimate.
    pub tail_limit: f64,
}

impl Default for SfaNumerics {
    fn default() -> Self {
        Self {
            nu: 1e-3,
            tau_max_periods: 4.0,
            tau_samples: 512,
            t_samples: 512,
            depletion: false,
            tail_limit: 0.1,
        }
    }
}

impl SfaNumerics {
    pub fn validate(&self) -> Result<()> {
        let pow2 = |n: usize| n >= 128 && n.is_power_of_two();
        if !(self.nu > 0.0) {
            return Err(Error::config("numerics.nu", "must be positive"));
        }
        if !(self.tau_max_periods >= 2.0) {
            return Err(Error::config("numerics.tau_max_periods", "must be at least 2"));
        }
        if !pow2(self.tau_samples) {
            return Err(Error::config("numerics.tau_samples", "must be a power of two >= 128"));
        }
        if !pow2(self.t_samples) {
            return Err(Error::config("numerics.t_samples", "must be a power of two >= 128"));
        }
        Ok(())
    }

    /// The finer τ grid used for Γ, whose cycle average is a small residue
    /// of a much larger oscillatory integral.
    pub fn for_rate(&self) -> Self {
        Self {
            tau_samples: self.tau_samples.max(RATE_TAU_SAMPLES),
            t_samples: 128,
            ..*self
        }
    }

    /// Numerics with both sample counts doubled.
    pub fn refined(&self) -> Self {
        Self {
            tau_samples: self.tau_samples * 2,
            t_samples: self.t_samples * 2,
            ..*self
        }
    }
}

const RATE_TAU_SAMPLES: usize = 1024;

/// The quantum-diffusion prefactor (π / (ν + iτ/2))^{3/2}.
pub fn diffusion_prefactor(nu: f64, tau: f64) -> Complex64 {
    (Complex64::new(PI, 0.0) / Complex64::new(nu, 0.5 * tau)).powf(1.5)
}

/// Field-free transition element between the s ground state and a plane
/// wave of momentum `p` along the polarization axis.
pub fn bound_free_dipole(p: f64, alpha: f64) -> Complex64 {
    Complex64::new(0.0, dipole_prefactor(alpha) * shape(p, alpha))
}

fn dipole_prefactor(alpha: f64) -> f64 {
    2f64.powf(3.5) * alpha.powf(1.25) / PI
}

#[inline]
fn shape(p: f64, alpha: f64) -> f64 {
    let d = p * p + alpha;
    p / (d * d * d)
}

/// Quadrature weights W_k such that Σ_k W_k f(kΔτ) approximates
/// ∫_{mΔτ}^{nΔτ} (π/(ν + iτ/2))^{3/2} f(τ) dτ, with m = `from`.
///
/// The prefactor is integrated exactly against piecewise-quadratic
/// interpolants of f on pairs of intervals. `n − from` must be even.
pub fn prefactor_weights(nu: f64, dtau: f64, from: usize, n: usize) -> Vec<Complex64> {
    assert!(
        (n - from).is_multiple_of(2),
        "product rule needs an even number of intervals"
    );
    let i = Complex64::new(0.0, 1.0);
    let scale = PI.powf(1.5);
    // Antiderivatives of τ^j (ν + iτ/2)^{−3/2} for j = 0, 1, 2, written in
    // u = ν + iτ/2.
    let moments = |tau: f64| -> [Complex64; 3] {
        let u = Complex64::new(nu, 0.5 * tau);
        let su = u.sqrt();
        let isu = 1.0 / su;
        [
            4.0 * i * isu,
            -8.0 * (su + nu * isu),
            8.0 * i * (2.0 / 3.0 * u * su - 4.0 * nu * su - 2.0 * nu * nu * isu),
        ]
    };
    let mut w = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut lower = moments(from as f64 * dtau);
    for m in 0..(n - from) / 2 {
        let (k0, k1, k2) = (from + 2 * m, from + 2 * m + 1, from + 2 * m + 2);
        let upper = moments(k2 as f64 * dtau);
        let t = [upper[0] - lower[0], upper[1] - lower[1], upper[2] - lower[2]];
        let c = k1 as f64 * dtau;
        // Moments of s = τ − τ_mid.
        let s0 = t[0];
        let s1 = t[1] - c * t[0];
        let s2 = t[2] - 2.0 * c * t[1] + c * c * t[0];
        let h = dtau;
        w[k0] += (s2 - h * s1) / (2.0 * h * h);
        w[k1] += (h * h * s0 - s2) / (h * h);
        w[k2] += (s2 + h * s1) / (2.0 * h * h);
        lower = upper;
    }
    w.iter().map(|z| z * scale).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "return time",
            value: tau,
        })
    }
}

fn panels_for(waveform: &DriveWaveform, tau: f64) -> usize {
    ((tau / (waveform.period() / 16.0)).ceil() as usize).max(2)
}

/// Saddle-point canonical momentum: the mean of A over [t − τ, t].
pub fn stationary_momentum(waveform: &DriveWaveform, t: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let rule = CompositeRule::new(12);
    let integral = rule.integrate(|s| waveform.vector_potential(s), t - tau, t, panels_for(waveform, tau));
    Ok(integral / tau)
}

/// Quasi-classical action ∫ [(p − A)²/2 + Ip] over [t − τ, t].
pub fn quasiclassical_action(waveform: &DriveWaveform, atom: &AtomModel, p: f64, t: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let rule = CompositeRule::new(12);
    let ip = atom.ip();
    Ok(rule.integrate(
        |s| {
            let v = p - waveform.vector_potential(s);
            0.5 * v * v + ip
        },
        t - tau,
        t,
        panels_for(waveform, tau),
    ))
}

/// Dipole and decay rate sampled on a uniform time grid.
#[derive(Debug, Clone)]
pub struct DipoleSeries {
    pub t0: f64,
    pub dt: f64,
    /// The return-time integral x₊(t) (the dipole is x₊ + c.c.).
    pub forward: Vec<Complex64>,
    /// Complex decay rate γ(t) (all active electrons).
    pub decay: Vec<Complex64>,
    /// ‖contribution of the last optical period of τ‖ / ‖x₊‖.
    pub tail_estimate: f64,
}

impl DipoleSeries {
    /// The real dipole x(t) = x₊ + c.c.
    pub fn dipole(&self) -> Vec<f64> {
        self.forward.iter().map(|z| 2.0 * z.re).collect()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.forward.len()).map(move |i| self.t0 + i as f64 * self.dt)
    }
}

/// Evaluates the return-time integral for `n` times t0 + i·T/t_samples.
///
/// The integrals of A and A² entering the saddle momentum and the action
/// are taken from cumulative Simpson sums on a grid of step
/// T / max(tau_samples, t_samples), so every (t, τ) pair lands on nodes.
pub fn dipole_series(
    waveform: &DriveWaveform,
    atom: &AtomModel,
    numerics: &SfaNumerics,
    t0: f64,
    n: usize,
) -> Result<DipoleSeries> {
    numerics.validate()?;
    let period = waveform.period();
    let base = numerics.tau_samples.max(numerics.t_samples);
    let h = period / base as f64;
    let tau_stride = base / numerics.tau_samples;
    let t_stride = base / numerics.t_samples;
    let n_tau = 2 * ((numerics.tau_max_periods * numerics.tau_samples as f64 / 2.0).round() as usize);
    let tail_from = n_tau.saturating_sub(numerics.tau_samples);
    let lead = n_tau * tau_stride;
    let n_grid = lead + (n.max(1) - 1) * t_stride + 1;
    let start = t0 - lead as f64 * h;

    let mut a = Vec::with_capacity(n_grid);
    let mut e = Vec::with_capacity(n_grid);
    let mut c1 = vec![0.0; n_grid];
    let mut c2 = vec![0.0; n_grid];
    for j in 0..n_grid {
        let (ej, aj) = waveform.field_and_potential(start + j as f64 * h);
        e.push(ej);
        a.push(aj);
    }
    for j in 1..n_grid {
        let am = waveform.vector_potential(start + (j as f64 - 0.5) * h);
        c1[j] = c1[j - 1] + h / 6.0 * (a[j - 1] + 4.0 * am + a[j]);
        c2[j] = c2[j - 1] + h / 6.0 * (a[j - 1] * a[j - 1] + 4.0 * am * am + a[j] * a[j]);
    }

    let dtau = h * tau_stride as f64;
    let mut prefactors = prefactor_weights(numerics.nu, dtau, HEAD, n_tau);
    // Smooth cos² roll-off over the final period instead of a hard cut, so
    // the neglected tail does not leak into the exponentially small Re γ.
    for (k, w) in prefactors.iter_mut().enumerate().skip(tail_from) {
        let x = (k - tail_from) as f64 / (n_tau - tail_from) as f64;
        *w *= (0.5 * PI * x).cos().powi(2);
    }

    let alpha = atom.alpha();
    let ip = atom.ip();
    let head = HeadRule::new(numerics.nu, HEAD as f64 * dtau);
    let c = dipole_prefactor(alpha);
    let scale = c * c * atom.n_el();

    let mut forward = Vec::with_capacity(n);
    let mut decay = Vec::with_capacity(n);
    let mut tails = Vec::with_capacity(n);
    for i in 0..n {
        let gi = lead + i * t_stride;
        let (c1i, c2i, ai) = (c1[gi], c2[gi], a[gi]);
        let ti = start + gi as f64 * h;
        let mut acc = head.integrate(waveform, ti, ai, alpha, ip);
        let mut tail = Complex64::new(0.0, 0.0);
        for k in HEAD..=n_tau {
            let j = gi - k * tau_stride;
            let tau = k as f64 * dtau;
            let ia = c1i - c1[j];
            let p = ia / tau;
            let action = ip * tau + 0.5 * (c2i - c2[j]) - 0.5 * ia * p;
            let weight = shape(p - ai, alpha) * shape(p - a[j], alpha) * e[j];
            let (s, co) = action.sin_cos();
            let term = prefactors[k] * Complex64::new(weight * co, -weight * s);
            acc += term;
            if k > tail_from {
                tail += term;
            }
        }
        let x = Complex64::new(0.0, scale) * acc;
        tails.push(Complex64::new(0.0, scale) * tail);
        forward.push(x);
        decay.push(acc * (scale * e[gi]));
    }
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let total = norm(&forward);
    let tail_estimate = if total > 0.0 {
        (norm(&tails) / total).sqrt()
    } else {
        0.0
    };
    Ok(DipoleSeries {
        t0,
        dt: h * t_stride as f64,
        forward,
        decay,
        tail_estimate,
    })
}

/// Number of leading τ intervals integrated by [`HeadRule`].
const HEAD: usize = 2;

/// Integral over the first few τ steps, where the integrand behaves like
/// τ^{1/2} and piecewise polynomials lose an order. Gauss–Legendre in
/// s = √τ makes the integrand smooth; A is integrated directly at each node.
struct HeadRule {
    tau: Vec<f64>,
    weight: Vec<Complex64>,
    inner: (Vec<f64>, Vec<f64>),
}

impl HeadRule {
    fn new(nu: f64, length: f64) -> Self {
        let (x, w) = gauss_legendre(16);
        let smax = length.sqrt();
        let mut tau = Vec::with_capacity(x.len());
        let mut weight = Vec::with_capacity(x.len());
        for (xi, wi) in x.iter().zip(&w) {
            let s = 0.5 * smax * (xi + 1.0);
            tau.push(s * s);
            weight.push(diffusion_prefactor(nu, s * s) * (0.5 * smax * wi * 2.0 * s));
        }
        Self {
            tau,
            weight,
            inner: gauss_legendre(10),
        }
    }

    fn integrate(&self, waveform: &DriveWaveform, t: f64, a_t: f64, alpha: f64, ip: f64) -> Complex64 {
        let (x, w) = &self.inner;
        let mut acc = Complex64::new(0.0, 0.0);
        for (&tau, &wt) in self.tau.iter().zip(&self.weight) {
            let (mut ia, mut ia2) = (0.0, 0.0);
            for (xi, wi) in x.iter().zip(w) {
                let a = waveform.vector_potential(t - 0.5 * tau * (1.0 - xi));
                ia += wi * a;
                ia2 += wi * a * a;
            }
            ia *= 0.5 * tau;
            ia2 *= 0.5 * tau;
            let p = ia / tau;
            let action = ip * tau + 0.5 * ia2 - 0.5 * ia * p;
            let (e0, a0) = waveform.field_and_potential(t - tau);
            let f = shape(p - a_t, alpha) * shape(p - a0, alpha) * e0;
            acc += wt * Complex64::from_polar(f, -action);
        }
        acc
    }
}

fn check_tail(series: &DipoleSeries, numerics: &SfaNumerics) -> Result<()> {
    if series.tail_estimate > numerics.tail_limit {
        Err(Error::Accuracy {
            tail_estimate: series.tail_estimate,
            limit: numerics.tail_limit,
            context: String::new(),
        })
    } else {
        Ok(())
    }
}

/// Ionization rate Γ = 2 Re⟨γ⟩ over one period of the field frozen at its
/// peak envelope value (a.u.⁻¹).
pub fn ionization_rate(waveform: &DriveWaveform, atom: &AtomModel, numerics: &SfaNumerics) -> Result<f64> {
    let (rate, tail) = rate_and_tail(waveform, atom, numerics)?;
    if tail > numerics.tail_limit {
        return Err(Error::Accuracy {
            tail_estimate: tail,
            limit: numerics.tail_limit,
            context: "ionization rate".into(),
        });
    }
    Ok(rate)
}

fn ionization_rate_unchecked(waveform: &DriveWaveform, atom: &AtomModel, numerics: &SfaNumerics) -> Result<f64> {
    Ok(rate_and_tail(waveform, atom, numerics)?.0)
}

fn rate_and_tail(waveform: &DriveWaveform, atom: &AtomModel, numerics: &SfaNumerics) -> Result<(f64, f64)> {
    let frozen = waveform.frozen_at_fs(0.0);
    if frozen.peak_intensity == 0.0 {
        return Ok((0.0, 0.0));
    }
    let fine = numerics.for_rate();
    let series = dipole_series(&frozen, atom, &fine, 0.0, fine.t_samples)?;
    Ok((rate_from_series(&series), series.tail_estimate))
}

/// Relative resolution of Re⟨γ⟩ against |Im⟨γ⟩| on the rate grid, found by
/// varying the τ grid and window; smaller rates are indistinguishable from 0.
const RATE_RESOLUTION: f64 = 2e-5;

fn rate_from_series(series: &DipoleSeries) -> f64 {
    let mean: Complex64 = series.decay.iter().sum::<Complex64>() / series.decay.len() as f64;
    if mean.re <= RATE_RESOLUTION * mean.im.abs() {
        0.0
    } else {
        2.0 * mean.re
    }
}

/// The dipole x(t) = x₊(t) + c.c. (a.u.) at a single time.
pub fn dipole_moment(waveform: &DriveWaveform, atom: &AtomModel, numerics: &SfaNumerics, t: f64) -> Result<Complex64> {
    if waveform.peak_intensity == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let series = dipole_series(waveform, atom, numerics, t, 1)?;
    check_tail(&series, numerics)?;
    let x = series.forward[0];
    let mut total = x + x.conj();
    if numerics.depletion {
        let gamma = ionization_rate(waveform, atom, numerics)?;
        total *= (-gamma * t).exp();
    }
    Ok(total)
}

/// Fourier components x_q of the periodic dipole, x(t) = Σ x_q e^{−iqωt} + c.c.
#[derive(Debug, Clone)]
pub struct HarmonicComponents {
    /// Indexed by harmonic order, 0..=q_max.
    pub components: Vec<Complex64>,
    pub intensity: f64,
    pub wavelength_nm: f64,
    pub atom: AtomModel,
    /// Γ for the same field (a.u.⁻¹).
    pub ionization_rate: f64,
    pub tail_estimate: f64,
}

impl HarmonicComponents {
    pub fn order(&self, q: usize) -> Complex64 {
        self.components[q]
    }

    pub fn q_max(&self) -> usize {
        self.components.len() - 1
    }
}

/// Harmonic components of a monochromatic drive from an FFT of one period
/// of the dipole.
pub fn harmonic_components(
    waveform: &DriveWaveform,
    atom: &AtomModel,
    numerics: &SfaNumerics,
    q_max: usize,
) -> Result<HarmonicComponents> {
    let series = single_period(waveform, atom, numerics, q_max)?;
    check_tail(&series, numerics)?;
    let rate = ionization_rate(waveform, atom, numerics)?;
    Ok(components_from_series(&series, waveform, atom, q_max, rate))
}

/// Like [`harmonic_components`] but reports the tail estimate instead of
/// failing on it.
pub fn harmonic_components_unchecked(
    waveform: &DriveWaveform,
    atom: &AtomModel,
    numerics: &SfaNumerics,
    q_max: usize,
) -> Result<HarmonicComponents> {
    let series = single_period(waveform, atom, numerics, q_max)?;
    let rate = ionization_rate_unchecked(waveform, atom, numerics)?;
    Ok(components_from_series(&series, waveform, atom, q_max, rate))
}

fn single_period(
    waveform: &DriveWaveform,
    atom: &AtomModel,
    numerics: &SfaNumerics,
    q_max: usize,
) -> Result<DipoleSeries> {
    if q_max.is_multiple_of(2) {
        return Err(Error::Domain {
            what: "q_max (must be odd)",
            value: q_max as f64,
        });
    }
    if 2 * q_max >= numerics.t_samples {
        return Err(Error::config(
            "numerics.t_samples",
            format!("{} samples cannot resolve order {q_max}", numerics.t_samples),
        ));
    }
    let frozen = waveform.frozen_at_fs(0.0);
    dipole_series(&frozen, atom, numerics, 0.0, numerics.t_samples)
}

fn components_from_series(
    series: &DipoleSeries,
    waveform: &DriveWaveform,
    atom: &AtomModel,
    q_max: usize,
    ionization_rate: f64,
) -> HarmonicComponents {
    let n = series.forward.len();
    let mut buf: Vec<Complex64> = series.dipole().into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let components = buf[..=q_max].iter().map(|z| z / n as f64).collect();
    HarmonicComponents {
        components,
        intensity: waveform.frozen_at_fs(0.0).peak_intensity,
        wavelength_nm: waveform.wavelength_nm,
        atom: *atom,
        ionization_rate,
        tail_estimate: series.tail_estimate,
    }
}
