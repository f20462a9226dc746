//! Declarative scenario documents (TOML with sections) and the preset
//! catalogue.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coherence::WindowSpec;
use crate::error::{Error, Result};
use crate::propagation::{FocusGeometry, HarmonicSetup, IonizationFlags, JetProfile, PropagationNumerics};
use crate::sfa::{AtomModel, DriveWaveform, Envelope, SfaNumerics, Species};
use crate::tables::{GridKind, GridSpec};

/// What a scenario computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Single-atom table with transition and phase slopes.
    Table,
    /// Polarization phase along z and r.
    PhaseMap,
    /// Conversion efficiency over jet positions and intensities.
    Scan,
    /// Near field, far field and virtual focus at the jet exit.
    #[default]
    Propagate,
    Coherence,
    /// Temporal and spectral profiles.
    Spectrum,
    Compress,
    Nonadiabatic,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Table => "table",
            Pipeline::PhaseMap => "phase-map",
            Pipeline::Scan => "scan",
            Pipeline::Propagate => "propagate",
            Pipeline::Coherence => "coherence",
            Pipeline::Spectrum => "spectrum",
            Pipeline::Compress => "compress",
            Pipeline::Nonadiabatic => "nonadiabatic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    #[default]
    Gaussian,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chirp {
    #[default]
    None,
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Carrier {
    #[default]
    Cosine,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomSection {
    pub species: Species,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_electrons: Option<f64>,
}

impl Default for AtomSection {
    fn default() -> Self {
        Self {
            species: Species::Neon,
            active_electrons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    pub wavelength_nm: f64,
    /// W/cm².
    pub peak_intensity: f64,
    pub envelope: EnvelopeKind,
    /// Intensity FWHM for Gaussian envelopes, full width for square ones.
    pub fwhm_fs: f64,
    /// Sign of the quadratic phase that broadens the drive to 32 nm.
    pub chirp: Chirp,
    pub carrier: Carrier,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            wavelength_nm: 825.0,
            peak_intensity: 6e14,
            envelope: EnvelopeKind::Gaussian,
            fwhm_fs: 150.0,
            chirp: Chirp::None,
            carrier: Carrier::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub confocal_mm: f64,
    pub focus_mm: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            confocal_mm: 5.0,
            focus_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JetSection {
    pub center_mm: f64,
    pub fwhm_mm: f64,
    pub truncation_mm: f64,
    pub pressure_torr: f64,
    pub temperature_k: f64,
}

impl Default for JetSection {
    fn default() -> Self {
        Self {
            center_mm: 3.0,
            fwhm_mm: 0.8,
            truncation_mm: 0.8,
            pressure_torr: 3.0,
            temperature_k: 293.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarmonicSection {
    pub order: usize,
}

impl Default for HarmonicSection {
    fn default() -> Self {
        Self { order: 45 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagSection {
    pub ionization: bool,
    pub depletion: bool,
    pub defocusing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub grid: GridKind,
    /// Defaults to 1.2× the largest intensity the scenario needs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Lowest non-zero node of log grids; defaults to max/12.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    pub nodes: usize,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            grid: GridKind::Uniform,
            max: None,
            min: None,
            nodes: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfaSection {
    pub nu: f64,
    pub tau_max_periods: f64,
    pub tau_samples: usize,
    pub t_samples: usize,
    pub tail_limit: f64,
}

impl Default for SfaSection {
    fn default() -> Self {
        let d = SfaNumerics::default();
        Self {
            nu: d.nu,
            tau_max_periods: d.tau_max_periods,
            tau_samples: d.tau_samples,
            t_samples: d.t_samples,
            tail_limit: d.tail_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationSection {
    pub r_points: usize,
    pub r_max_waists: f64,
    pub dz_jet_um: f64,
    pub dz_outside_um: f64,
    pub absorb_fraction: f64,
    pub absorb_strength: f64,
    pub slices: usize,
    pub slice_span_fwhm: f64,
}

impl Default for PropagationSection {
    fn default() -> Self {
        let d = PropagationNumerics::default();
        Self {
            r_points: d.r_points,
            r_max_waists: d.r_max_waists,
            dz_jet_um: d.dz_jet_um,
            dz_outside_um: d.dz_outside_um,
            absorb_fraction: d.absorb_fraction,
            absorb_strength: d.absorb_strength,
            slices: d.slices,
            slice_span_fwhm: d.slice_span_fwhm,
        }
    }
}

/// Grid of a conversion scan. Both lists are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub positions_mm: Vec<f64>,
    pub intensities: Vec<f64>,
    /// Full Gaussian pulses instead of static square-pulse slices.
    #[serde(default)]
    pub dynamic: bool,
    /// Fit the effective cutoff law at every position, and for the single atom.
    #[serde(default)]
    pub cutoff_law: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Reference point of the coherence curve (µm).
    pub reference_radius_um: f64,
    /// Spectrum of a single radius instead of the incoherent radial sum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_radius_um: Option<f64>,
    /// Spectral intensities only, every harmonic phase removed.
    pub discard_phase: bool,
    /// Radius at which the temporal phase and chirp are traced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_radius_um: Option<f64>,
    /// Detector distance used to label far-field radii (mm).
    pub far_field_mm: f64,
    /// Virtual-focus search extends this far upstream of the exit (mm).
    pub focus_span_mm: f64,
    pub focus_step_mm: f64,
    /// Plane (mm) to which the exit field is additionally backpropagated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backpropagate_to_mm: Option<f64>,
    /// Axial range and step of phase maps (mm).
    pub z_min_mm: f64,
    pub z_max_mm: f64,
    pub z_step_mm: f64,
    pub radii_um: Vec<f64>,
    /// Spectral window around the harmonic, in units of ω.
    pub window_full_width: f64,
    pub window_order: u32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let w = WindowSpec::default();
        Self {
            reference_radius_um: 0.0,
            spectrum_radius_um: None,
            discard_phase: false,
            phase_radius_um: None,
            far_field_mm: 1000.0,
            focus_span_mm: 6.0,
            focus_step_mm: 0.05,
            backpropagate_to_mm: None,
            z_min_mm: -4.0,
            z_max_mm: 4.0,
            z_step_mm: 0.02,
            radii_um: vec![0.0],
            window_full_width: w.full_width,
            window_order: w.order,
        }
    }
}

/// Overrides of the base scenario; each variant is one independent run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_intensity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_torr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chirp: Option<Chirp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ionization: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depletion: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defocusing: Option<bool>,
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub pipeline: Pipeline,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub atom: AtomSection,
    pub drive: DriveSection,
    pub geometry: GeometrySection,
    pub jet: JetSection,
    pub harmonic: HarmonicSection,
    pub flags: FlagSection,
    pub table: TableSection,
    pub sfa: SfaSection,
    pub propagation: PropagationSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    pub analysis: AnalysisSection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "reference".into(),
            description: String::new(),
            pipeline: Pipeline::default(),
            output_dir: None,
            atom: AtomSection::default(),
            drive: DriveSection::default(),
            geometry: GeometrySection::default(),
            jet: JetSection::default(),
            harmonic: HarmonicSection::default(),
            flags: FlagSection::default(),
            table: TableSection::default(),
            sfa: SfaSection::default(),
            propagation: PropagationSection::default(),
            scan: None,
            analysis: AnalysisSection::default(),
            variants: Vec::new(),
        }
    }
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<Scenario> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string().trim_end()))?;
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let reason = e.into_inner().message().to_string();
        Error::config(if key == "." { "<document>".into() } else { key }, reason)
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be non-negative, got {v}")))
    }
}

impl Scenario {
    /// TOML form that [`parse_config`] reads back to an identical value.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical document.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        positive("drive.wavelength_nm", self.drive.wavelength_nm)?;
        positive("drive.peak_intensity", self.drive.peak_intensity)?;
        positive("drive.fwhm_fs", self.drive.fwhm_fs)?;
        positive("geometry.confocal_mm", self.geometry.confocal_mm)?;
        if !self.geometry.focus_mm.is_finite() {
            return Err(Error::config("geometry.focus_mm", "must be finite"));
        }
        positive("jet.fwhm_mm", self.jet.fwhm_mm)?;
        positive("jet.truncation_mm", self.jet.truncation_mm)?;
        positive("jet.temperature_k", self.jet.temperature_k)?;
        non_negative("jet.pressure_torr", self.jet.pressure_torr)?;
        if self.harmonic.order.is_multiple_of(2) {
            return Err(Error::config("harmonic.order", "must be an odd order"));
        }
        if let Some(n) = self.atom.active_electrons {
            positive("atom.active_electrons", n)?;
        }
        if let Some(m) = self.table.max {
            positive("table.max", m)?;
        }
        if let Some(m) = self.table.min {
            positive("table.min", m)?;
        }
        self.grid_spec().validate().map_err(|e| prefix(e, "table"))?;
        self.sfa_numerics().validate().map_err(|e| prefix(e, "sfa"))?;
        self.setup().map_err(|e| prefix(e, ""))?;
        positive("analysis.far_field_mm", self.analysis.far_field_mm)?;
        positive("analysis.focus_span_mm", self.analysis.focus_span_mm)?;
        positive("analysis.focus_step_mm", self.analysis.focus_step_mm)?;
        positive("analysis.z_step_mm", self.analysis.z_step_mm)?;
        non_negative("analysis.reference_radius_um", self.analysis.reference_radius_um)?;
        if !(self.analysis.z_max_mm > self.analysis.z_min_mm) {
            return Err(Error::config("analysis.z_max_mm", "must exceed analysis.z_min_mm"));
        }
        if self.analysis.radii_um.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::config("analysis.radii_um", "radii must be non-negative"));
        }
        positive("analysis.window_full_width", self.analysis.window_full_width)?;

        match (&self.scan, self.pipeline) {
            (None, Pipeline::Scan) => {
                return Err(Error::config("scan", "missing section required by the scan pipeline"))
            }
            (Some(scan), _) => {
                if scan.positions_mm.is_empty() {
                    return Err(Error::config("scan.positions_mm", "needs at least one position"));
                }
                if scan.intensities.is_empty() {
                    return Err(Error::config("scan.intensities", "needs at least one intensity"));
                }
                for &i in &scan.intensities {
                    positive("scan.intensities", i)?;
                }
                if let Some(z) = scan.positions_mm.iter().find(|z| !(z.abs() <= 5.0)) {
                    return Err(Error::config("scan.positions_mm", format!("{z} mm is beyond ±5 mm")));
                }
                if scan.cutoff_law && scan.intensities.len() < 5 {
                    return Err(Error::config(
                        "scan.intensities",
                        "the cutoff-law fit needs at least 5 intensities",
                    ));
                }
            }
            _ => {}
        }

        let mut labels = HashSet::new();
        for (i, v) in self.variants.iter().enumerate() {
            let key = |f: &str| format!("variants[{i}].{f}");
            let ok = !v.label.is_empty() && v.label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.+".contains(c));
            if !ok {
                return Err(Error::config(key("label"), "labels use [A-Za-z0-9-_.+] only"));
            }
            if !labels.insert(v.label.as_str()) {
                return Err(Error::config(key("label"), format!("duplicate label `{}`", v.label)));
            }
            if let Some(x) = v.peak_intensity {
                positive(&key("peak_intensity"), x)?;
            }
            if let Some(x) = v.pressure_torr {
                non_negative(&key("pressure_torr"), x)?;
            }
            self.variant(v)
                .setup()
                .map_err(|e| prefix(e, &format!("variants[{i}]")))?;
        }
        Ok(())
    }

    /// The base scenario with the overrides of `v` applied.
    pub fn variant(&self, v: &Variant) -> Scenario {
        let mut s = self.clone();
        s.variants.clear();
        if let Some(x) = v.peak_intensity {
            s.drive.peak_intensity = x;
        }
        if let Some(x) = v.center_mm {
            s.jet.center_mm = x;
        }
        if let Some(x) = v.pressure_torr {
            s.jet.pressure_torr = x;
        }
        if let Some(x) = v.chirp {
            s.drive.chirp = x;
        }
        if let Some(x) = v.ionization {
            s.flags.ionization = x;
        }
        if let Some(x) = v.depletion {
            s.flags.depletion = x;
        }
        if let Some(x) = v.defocusing {
            s.flags.defocusing = x;
        }
        s
    }

    /// (label, scenario) of every run; a scenario without variants is one
    /// run labelled `base`.
    pub fn runs(&self) -> Vec<(String, Scenario)> {
        if self.variants.is_empty() {
            return vec![("base".into(), self.clone())];
        }
        self.variants
            .iter()
            .map(|v| (v.label.clone(), self.variant(v)))
            .collect()
    }

    pub fn atom_model(&self) -> Result<AtomModel> {
        let atom = AtomModel::preset(self.atom.species);
        match self.atom.active_electrons {
            Some(n) => atom.with_active_electrons(n),
            None => Ok(atom),
        }
    }

    pub fn sfa_numerics(&self) -> SfaNumerics {
        SfaNumerics {
            nu: self.sfa.nu,
            tau_max_periods: self.sfa.tau_max_periods,
            tau_samples: self.sfa.tau_samples,
            t_samples: self.sfa.t_samples,
            tail_limit: self.sfa.tail_limit,
            ..SfaNumerics::default()
        }
    }

    pub fn propagation_numerics(&self) -> PropagationNumerics {
        let p = &self.propagation;
        PropagationNumerics {
            r_points: p.r_points,
            r_max_waists: p.r_max_waists,
            dz_jet_um: p.dz_jet_um,
            dz_outside_um: p.dz_outside_um,
            absorb_fraction: p.absorb_fraction,
            absorb_strength: p.absorb_strength,
            slices: p.slices,
            slice_span_fwhm: p.slice_span_fwhm,
        }
    }

    /// Largest peak intensity any run or scan point of the scenario uses.
    pub fn max_intensity(&self) -> f64 {
        let variants = self.variants.iter().filter_map(|v| v.peak_intensity);
        let scan = self.scan.iter().flat_map(|s| s.intensities.iter().copied());
        std::iter::once(self.drive.peak_intensity)
            .chain(variants)
            .chain(scan)
            .fold(0.0, f64::max)
    }

    pub fn grid_spec(&self) -> GridSpec {
        let max = self.table.max.unwrap_or(1.2 * self.max_intensity());
        GridSpec {
            kind: self.table.grid,
            min: self.table.min.unwrap_or(max / 12.0),
            max,
            nodes: self.table.nodes,
        }
    }

    pub fn waveform(&self) -> Result<DriveWaveform> {
        let d = &self.drive;
        let envelope = match d.envelope {
            EnvelopeKind::Gaussian => Envelope::Gaussian { fwhm_fs: d.fwhm_fs },
            EnvelopeKind::Square => Envelope::Square { width_fs: d.fwhm_fs },
        };
        let carrier = match d.carrier {
            Carrier::Cosine => 0.0,
            Carrier::Sine => -std::f64::consts::FRAC_PI_2,
        };
        DriveWaveform::new(d.wavelength_nm, d.peak_intensity, envelope, 0.0, carrier, true)
    }

    pub fn setup(&self) -> Result<HarmonicSetup> {
        let mut geometry = FocusGeometry::new(self.geometry.confocal_mm, self.drive.wavelength_nm)?;
        geometry.focus_z_mm = self.geometry.focus_mm;
        let jet = JetProfile {
            center_z_mm: self.jet.center_mm,
            fwhm_mm: self.jet.fwhm_mm,
            truncation_halfwidth_mm: self.jet.truncation_mm,
            peak_pressure_torr: self.jet.pressure_torr,
            temperature_k: self.jet.temperature_k,
            species: self.atom.species,
        };
        let setup = HarmonicSetup {
            geometry,
            jet,
            drive: self.waveform()?,
            order: self.harmonic.order,
            flags: IonizationFlags {
                ionization: self.flags.ionization,
                defocusing: self.flags.defocusing,
                depletion: self.flags.depletion,
            },
            numerics: self.propagation_numerics(),
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            full_width: self.analysis.window_full_width,
            order: self.analysis.window_order,
        }
    }
}

/// Qualifies the key of a configuration error with its section.
fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { key, reason } if section.is_empty() => {
            let key = match key.split_once('.') {
                Some(("numerics", rest)) => format!("propagation.{rest}"),
                None if key == "order" => "harmonic.order".into(),
                _ => key,
            };
            Error::config(key, reason)
        }
        Error::Config { key, reason } if !section.is_empty() && !key.starts_with(section) => {
            let key = key.rsplit('.').next().unwrap_or(&key).to_string();
            Error::config(format!("{section}.{key}"), reason)
        }
        Error::Domain { what, value } => Error::config(
            if section.is_empty() {
                "<scenario>".into()
            } else {
                section.to_string()
            },
            format!("{what} = {value} is not physical"),
        ),
        other => other,
    }
}

/// One catalogue entry.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub id: &'static str,
    pub document: &'static str,
}

impl Preset {
    pub fn scenario(&self) -> Result<Scenario> {
        parse_config(self.document).map_err(|e| match e {
            Error::Config { key, reason } => Error::config(format!("preset {}: {key}", self.id), reason),
            other => other,
        })
    }

    /// First line of the preset's description.
    pub fn summary(&self) -> String {
        self.scenario().map(|s| s.description).unwrap_or_default()
    }
}

macro_rules! presets {
    ($($id:literal),* $(,)?) => {
        &[$(Preset { id: $id, document: include_str!(concat!("../presets/", $id, ".toml")) }),*]
    };
}

static PRESETS: &[Preset] = presets!(
    "fig-dipole",
    "fig-phaspol",
    "fig-phaspoloff",
    "fig-phaspolint",
    "fig-convstat",
    "fig-convdyn",
    "fig-intdep",
    "fig-nfprof3",
    "fig-nfphase3",
    "fig-focus3",
    "fig-cohdeg3",
    "fig-cohdeg3-150torr",
    "fig-nfprof1",
    "fig-nfphase1",
    "fig-focus1",
    "fig-cohdeg1",
    "fig-temp",
    "fig-spec",
    "fig-mod3",
    "fig-mod1",
    "fig-ioni",
    "fig-compress",
    "fig-chirp",
    "fig-chirpion",
    "fig-tempadia",
    "fig-specadia",
);

/// The preset catalogue.
pub fn list_presets() -> &'static [Preset] {
    PRESETS
}

/// Looks a preset up by id, with or without the `fig-` prefix.
pub fn preset(id: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.id == id || p.id.strip_prefix("fig-") == Some(id))
        .ok_or_else(|| Error::NotFound(format!("preset `{id}`")))
}
