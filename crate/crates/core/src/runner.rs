//! Orchestration: turns a [`Scenario`] into module calls, writes CSV and
//! binary outputs, and records everything in a checksummed manifest.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::coherence::{
    analytic_phase_model, coherence_degree, compress_pulse, far_field, fresnel_propagate, nonadiabatic_pulse,
    polarization_phase_map, spectral_profile, table_phase, temporal_profile, transform_limited_profile, virtual_focus,
    ChirpSign, PhaseModulationModel, PulseAssembly, SpectrumOptions,
};
use crate::error::{Error, Result};
use crate::propagation::{conversion_scan, modified_cutoff_check, run_pulse, FieldPlanes, PulseRun, RadialField};
use crate::scenario::{Chirp, Pipeline, Scenario};
use crate::sfa::{AtomModel, DriveWaveform, Envelope, SfaNumerics};
use crate::tables::{build_table, DipoleTable, GridSpec};

pub const MANIFEST_NAME: &str = "manifest.txt";
/// Environment variable holding the default output root.
pub const OUT_DIR_ENV: &str = "HHGCOH_OUT_DIR";

/// Where a run writes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Outputs go to `out_root/<scenario name>`.
    pub out_root: PathBuf,
    /// Table cache; defaults to `out_root/table-cache`.
    pub cache_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        Self {
            out_root: out_root.into(),
            cache_dir: None,
        }
    }

    pub fn run_dir(&self, scenario: &Scenario) -> PathBuf {
        self.out_root.join(&scenario.name)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.out_root.join("table-cache"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Ok,
    Failed(String),
    /// Not attempted because an upstream stage failed.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    /// `stage` or `stage[label]` for per-variant stages.
    pub name: String,
    pub status: StageStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRecord {
    pub key: String,
    pub cache_hit: bool,
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub scenario: String,
    pub scenario_hash: String,
    pub pipeline: String,
    pub code_version: String,
    pub wall_time_s: f64,
    pub table: Option<TableRecord>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Ok)
    }

    pub fn failures(&self) -> Vec<&StageRecord> {
        self.stages.iter().filter(|s| s.status != StageStatus::Ok).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &str| writeln!(out, "{k} = {v}").unwrap();
        kv("scenario", &self.scenario);
        kv("scenario_hash", &self.scenario_hash);
        kv("pipeline", &self.pipeline);
        kv("code_version", &self.code_version);
        kv("wall_time_s", &format!("{:.3}", self.wall_time_s));
        if let Some(t) = &self.table {
            kv("table.key", &t.key);
            kv("table.cache", if t.cache_hit { "hit" } else { "miss" });
            kv("table.path", &t.path.display().to_string());
            kv("table.sha256", &t.sha256);
        }
        for s in &self.stages {
            let v = match &s.status {
                StageStatus::Ok => "ok".to_string(),
                StageStatus::Skipped => "skipped".to_string(),
                StageStatus::Failed(msg) => format!("failed: {}", msg.replace('\n', " ")),
            };
            kv(&format!("stage.{}", s.name), &v);
        }
        for f in &self.files {
            kv(&format!("file.{}", f.path), &f.sha256);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = RunManifest {
            scenario: String::new(),
            scenario_hash: String::new(),
            pipeline: String::new(),
            code_version: String::new(),
            wall_time_s: 0.0,
            table: None,
            stages: Vec::new(),
            files: Vec::new(),
        };
        let mut table = BTreeMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected `key = value`", n + 1)))?;
            match k {
                "scenario" => m.scenario = v.into(),
                "scenario_hash" => m.scenario_hash = v.into(),
                "pipeline" => m.pipeline = v.into(),
                "code_version" => m.code_version = v.into(),
                "wall_time_s" => {
                    m.wall_time_s = v.parse().map_err(|_| Error::Format(format!("bad wall time `{v}`")))?
                }
                _ if k.starts_with("table.") => {
                    table.insert(&k[6..], v);
                }
                _ if k.starts_with("stage.") => m.stages.push(StageRecord {
                    name: k[6..].into(),
                    status: match v {
                        "ok" => StageStatus::Ok,
                        "skipped" => StageStatus::Skipped,
                        _ => StageStatus::Failed(v.strip_prefix("failed: ").unwrap_or(v).into()),
                    },
                }),
                _ if k.starts_with("file.") => m.files.push(FileRecord {
                    path: k[5..].into(),
                    sha256: v.into(),
                }),
                _ => return Err(Error::Format(format!("unknown manifest key `{k}`"))),
            }
        }
        if !table.is_empty() {
            let get = |k: &str| {
                table
                    .get(k)
                    .map(|v| v.to_string())
                    .ok_or_else(|| Error::Format(format!("manifest lacks table.{k}")))
            };
            m.table = Some(TableRecord {
                key: get("key")?,
                cache_hit: get("cache")? == "hit",
                path: PathBuf::from(get("path")?),
                sha256: get("sha256")?,
            });
        }
        Ok(m)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(run_dir.join(MANIFEST_NAME))?)
    }

    /// Checks that every listed file exists with the recorded digest.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for f in &self.files {
            let bytes = fs::read(run_dir.join(&f.path)).map_err(|e| Error::Format(format!("{}: {e}", f.path)))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(Error::Format(format!("{}: checksum mismatch", f.path)));
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache key of a table: digest of everything that determines its values.
pub fn table_key(
    atom: &AtomModel,
    wavelength_nm: f64,
    order: usize,
    grid: &GridSpec,
    numerics: &SfaNumerics,
) -> String {
    let text = format!(
        "atom {:016x} {:016x} {:016x}\nwavelength {:016x}\norder {order}\ngrid {:?} {:016x} {:016x} {}\n\
         sfa {:016x} {:016x} {} {} {} {:016x}\n",
        atom.ip().to_bits(),
        atom.n_el().to_bits(),
        atom.alpha().to_bits(),
        wavelength_nm.to_bits(),
        grid.kind,
        grid.min.to_bits(),
        grid.max.to_bits(),
        grid.nodes,
        numerics.nu.to_bits(),
        numerics.tau_max_periods.to_bits(),
        numerics.tau_samples,
        numerics.t_samples,
        numerics.depletion,
        numerics.tail_limit.to_bits(),
    );
    sha256_hex(text.as_bytes())
}

/// Loads the table for `scenario` from the cache or builds and stores it.
pub fn cached_table(scenario: &Scenario, cache_dir: &Path) -> Result<(DipoleTable, TableRecord)> {
    let atom = scenario.atom_model()?;
    let grid = scenario.grid_spec();
    let numerics = scenario.sfa_numerics();
    let (wl, q) = (scenario.drive.wavelength_nm, scenario.harmonic.order);
    let key = table_key(&atom, wl, q, &grid, &numerics);
    let path = cache_dir.join(format!("{key}.bin"));
    if let Ok(bytes) = fs::read(&path) {
        match DipoleTable::read_binary(bytes.as_slice()) {
            Ok(t) if t.order == q && t.wavelength_nm == wl && t.len() == grid.nodes => {
                let record = TableRecord {
                    key,
                    cache_hit: true,
                    path,
                    sha256: sha256_hex(&bytes),
                };
                return Ok((t, record));
            }
            _ => log::warn!("discarding unreadable cached table {}", path.display()),
        }
    }
    log::info!(
        "building {}-node table for order {q} ({})",
        grid.nodes,
        atom.species().map_or("custom", |s| s.name())
    );
    let table = build_table(&atom, wl, q, &grid, &numerics)?;
    let bytes = table.to_bytes();
    fs::create_dir_all(cache_dir)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, &path)?;
    Ok((
        table,
        TableRecord {
            key,
            cache_hit: false,
            path,
            sha256: sha256_hex(&bytes),
        },
    ))
}

/// Outputs of one variant, gathered before anything is written.
struct RunOutput {
    label: String,
    /// Suffix appended to file stems; empty for single-run scenarios.
    suffix: String,
    stages: Vec<StageRecord>,
    files: Vec<(String, Vec<u8>)>,
    summary: Vec<(String, f64)>,
}

impl RunOutput {
    fn new(label: &str, multi: bool) -> Self {
        Self {
            label: label.into(),
            suffix: if multi { format!("_{label}") } else { String::new() },
            stages: Vec::new(),
            files: Vec::new(),
            summary: Vec::new(),
        }
    }

    fn stage_name(&self, name: &str) -> String {
        if self.suffix.is_empty() {
            name.into()
        } else {
            format!("{name}[{}]", self.label)
        }
    }

    /// Runs `f` as stage `name`, recording its outcome.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Option<T> {
        let name = self.stage_name(name);
        let status;
        let out = match f(self) {
            Ok(v) => {
                status = StageStatus::Ok;
                Some(v)
            }
            Err(e) => {
                log::error!("stage {name} failed: {e}");
                status = StageStatus::Failed(e.to_string());
                None
            }
        };
        self.stages.push(StageRecord { name, status });
        out
    }

    fn skip(&mut self, names: &[&str]) {
        for n in names {
            let name = self.stage_name(n);
            self.stages.push(StageRecord {
                name,
                status: StageStatus::Skipped,
            });
        }
    }

    fn file(&mut self, stem: &str, ext: &str, bytes: Vec<u8>) {
        self.files.push((format!("{stem}{}.{ext}", self.suffix), bytes));
    }

    fn csv(&mut self, stem: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) {
        self.file(stem, "csv", csv(header, rows));
    }

    fn value(&mut self, quantity: &str, v: f64) {
        self.summary.push((quantity.into(), v));
    }
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = phase.to_vec();
    for i in 1..out.len() {
        let mut d = phase[i] - phase[i - 1];
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        out[i] = out[i - 1] + d;
    }
    out
}

fn derivative(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if a == b {
                0.0
            } else {
                (ys[b] - ys[a]) / (xs[b] - xs[a])
            }
        })
        .collect()
}

fn field_rows(f: &RadialField) -> Vec<Vec<f64>> {
    let phase = f.unwrapped_phase();
    f.r_um
        .iter()
        .zip(f.intensity())
        .zip(phase)
        .map(|((&r, i), p)| vec![r, i, p])
        .collect()
}

/// Runs `scenario`, writing into `options.run_dir(scenario)`.
///
/// Stage errors do not abort the run: they are recorded in the manifest
/// and every output produced so far is kept.
pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<RunManifest> {
    scenario.validate()?;
    let start = Instant::now();
    let dir = options.run_dir(scenario);
    fs::create_dir_all(&dir)?;
    // Outputs of an earlier run in the same directory would otherwise
    // linger next to the new manifest.
    if let Ok(previous) = RunManifest::load(&dir) {
        for f in &previous.files {
            let _ = fs::remove_file(dir.join(&f.path));
        }
        fs::remove_file(dir.join(MANIFEST_NAME))?;
    }
    fs::write(dir.join("scenario.toml"), scenario.to_toml())?;

    let mut manifest = RunManifest {
        scenario: scenario.name.clone(),
        scenario_hash: scenario.hash(),
        pipeline: scenario.pipeline.name().into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: 0.0,
        table: None,
        stages: Vec::new(),
        files: Vec::new(),
    };

    let mut head = RunOutput::new("base", false);
    let table = head.stage("table", |_| cached_table(scenario, &options.cache_dir()));
    let outputs = match table {
        Some((table, record)) => {
            manifest.table = Some(record);
            let mut outs = vec![head];
            outs.extend(dispatch(scenario, &table));
            outs
        }
        None => {
            head.skip(&[scenario.pipeline.name()]);
            vec![head]
        }
    };

    // Single serialized writer: everything computed above lands on disk here.
    let mut written = vec![FileRecord {
        path: "scenario.toml".into(),
        sha256: sha256_hex(scenario.to_toml().as_bytes()),
    }];
    let mut summary = Vec::new();
    for out in outputs {
        manifest.stages.extend(out.stages);
        for (name, bytes) in out.files {
            fs::write(dir.join(&name), &bytes)?;
            written.push(FileRecord {
                path: name,
                sha256: sha256_hex(&bytes),
            });
        }
        summary.extend(out.summary.into_iter().map(|(q, v)| (out.label.clone(), q, v)));
    }
    if !summary.is_empty() {
        let mut text = String::from("run,quantity,value\n");
        for (label, q, v) in &summary {
            writeln!(text, "{label},{q},{v}").unwrap();
        }
        fs::write(dir.join("summary.csv"), &text)?;
        written.push(FileRecord {
            path: "summary.csv".into(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    manifest.files = written;
    manifest.wall_time_s = (start.elapsed().as_secs_f64() * 1e3).round() / 1e3;
    fs::write(dir.join(MANIFEST_NAME), manifest.to_text())?;
    Ok(manifest)
}

fn dispatch(scenario: &Scenario, table: &DipoleTable) -> Vec<RunOutput> {
    match scenario.pipeline {
        Pipeline::Table => vec![table_outputs(scenario, table)],
        Pipeline::Nonadiabatic => {
            let runs = scenario.runs();
            let multi = runs.len() > 1;
            runs.par_iter()
                .map(|(label, s)| nonadiabatic_outputs(s, table, RunOutput::new(label, multi)))
                .collect()
        }
        _ => {
            let runs = scenario.runs();
            let multi = runs.len() > 1;
            runs.par_iter()
                .map(|(label, s)| {
                    let out = RunOutput::new(label, multi);
                    match s.pipeline {
                        Pipeline::PhaseMap => phase_map_outputs(s, table, out),
                        Pipeline::Scan => scan_outputs(s, table, out),
                        _ => field_outputs(s, table, out),
                    }
                })
                .collect()
        }
    }
}

fn table_outputs(s: &Scenario, table: &DipoleTable) -> RunOutput {
    let mut out = RunOutput::new("base", false);
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes).expect("writing to memory");
    out.file("table", "csv", bytes);
    out.file("table", "bin", table.to_bytes());
    out.stage("invariants", |_| table.check_invariants());
    let it = out.stage("transition", |o| {
        let it = table.transition_intensity()?;
        o.value("transition_intensity", it);
        o.value("cutoff_law_intensity", table.cutoff_law_intensity());
        Ok(it)
    });
    match it {
        Some(it) => {
            out.stage("phase-slopes", |o| {
                let cutoff = table.phase_slope((0.5 * it, it))?;
                let plateau = table.phase_slope((it, s.drive.peak_intensity))?;
                o.value("eta_cutoff_per_1e14", cutoff.eta_per_1e14());
                o.value("eta_plateau_per_1e14", plateau.eta_per_1e14());
                o.value("eta_ratio", plateau.eta / cutoff.eta);
                let model = PhaseModulationModel {
                    eta: plateau.eta,
                    i0: s.drive.peak_intensity,
                    tau_fwhm_fs: s.drive.fwhm_fs,
                    wavelength_nm: s.drive.wavelength_nm / s.harmonic.order as f64,
                };
                o.value("extremal_shift_angstrom", model.extremal_shift_angstrom());
                Ok(())
            });
        }
        None => out.skip(&["phase-slopes"]),
    }
    out
}

fn phase_map_outputs(s: &Scenario, table: &DipoleTable, mut out: RunOutput) -> RunOutput {
    out.stage("phase-map", |o| {
        let setup = s.setup()?;
        let a = &s.analysis;
        let n = ((a.z_max_mm - a.z_min_mm) / a.z_step_mm).round() as usize;
        let z: Vec<f64> = (0..=n)
            .map(|k| a.z_min_mm + (a.z_max_mm - a.z_min_mm) * k as f64 / n as f64)
            .collect();
        let i0 = s.drive.peak_intensity;
        let map = polarization_phase_map(&setup.geometry, table, i0, &z, &a.radii_um)?;
        let gradient = map.axial_gradient();
        let mut rows = Vec::new();
        for (iz, &zz) in z.iter().enumerate() {
            for (ir, &r) in a.radii_um.iter().enumerate() {
                rows.push(vec![
                    zz,
                    r,
                    map.propagation[iz][ir],
                    map.dipole[iz][ir],
                    map.total(iz, ir),
                ]);
            }
        }
        o.csv(
            "phase_map",
            &["z_mm", "r_um", "propagation_rad", "dipole_rad", "total_rad"],
            rows,
        );
        if a.radii_um.first() == Some(&0.0) {
            o.csv(
                "phase_gradient",
                &["z_mm", "gradient_rad_per_mm"],
                z.iter().zip(&gradient).map(|(&zz, &g)| vec![zz, g]),
            );
            if let Some(zc) = map.compensation_point() {
                o.value("compensation_z_mm", zc);
            }
        }

        // Constant-phase trajectory through the jet entrance on axis.
        let fine_r: Vec<f64> = (0..=120).map(|k| 0.25 * k as f64).collect();
        let fine = polarization_phase_map(&setup.geometry, table, i0, &z, &fine_r)?;
        let entrance = setup.jet.edges().0;
        let iz = z
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - entrance).abs().total_cmp(&(b.1 - entrance).abs()))
            .map(|(i, _)| i)
            .unwrap();
        let contour = fine.contour(fine.total(iz, 0));
        o.csv(
            "phase_contour",
            &["z_mm", "r_um"],
            z.iter().zip(contour).filter_map(|(&zz, r)| r.map(|r| vec![zz, r])),
        );
        Ok(())
    });
    out
}

fn scan_outputs(s: &Scenario, table: &DipoleTable, mut out: RunOutput) -> RunOutput {
    let scan = s.scan.as_ref().expect("validated scan section");
    let points = out.stage("scan", |o| {
        let setup = s.setup()?;
        let mut intensities = scan.intensities.clone();
        intensities.sort_by(f64::total_cmp);
        let pts = conversion_scan(&setup, table, &scan.positions_mm, &intensities, scan.dynamic)?;
        o.csv(
            "scan",
            &["jet_center_mm", "peak_intensity", "efficiency"],
            pts.iter()
                .map(|p| vec![p.jet_center_mm, p.peak_intensity, p.efficiency]),
        );
        Ok((intensities, pts))
    });
    if !scan.cutoff_law {
        return out;
    }
    let Some((intensities, pts)) = points else {
        out.skip(&["cutoff-law"]);
        return out;
    };
    out.stage("cutoff-law", |o| {
        let atom = s.atom_model()?;
        let (q, wl) = (s.harmonic.order, s.drive.wavelength_nm);
        let strength: Vec<f64> = intensities
            .iter()
            .map(|&i| table.dipole(i).map(|x| x.norm_sqr()))
            .collect::<Result<_>>()?;
        o.csv(
            "dipole_strength",
            &["peak_intensity", "strength"],
            intensities.iter().zip(&strength).map(|(&i, &v)| vec![i, v]),
        );
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for &z in &scan.positions_mm {
            let eff: Vec<f64> = intensities
                .iter()
                .map(|&i| {
                    pts.iter()
                        .find(|p| p.jet_center_mm == z && p.peak_intensity == i)
                        .map_or(0.0, |p| p.efficiency)
                })
                .collect();
            match modified_cutoff_check(&atom, q, wl, &intensities, &eff) {
                Ok((c, it)) => {
                    o.value(&format!("cutoff_coefficient_z{z}"), c);
                    rows.push(vec![0.0, z, c, it]);
                }
                Err(e) => failures.push(format!("z = {z} mm: {e}")),
            }
        }
        match modified_cutoff_check(&atom, q, wl, &intensities, &strength) {
            Ok((c, it)) => {
                o.value("cutoff_coefficient_single_atom", c);
                rows.push(vec![1.0, f64::NAN, c, it]);
            }
            Err(e) => failures.push(format!("single atom: {e}")),
        }
        o.csv(
            "cutoff_law",
            &["single_atom", "jet_center_mm", "coefficient", "transition_intensity"],
            rows,
        );
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::NotFound(failures.join("; ")))
        }
    });
    out
}

fn pulse_run(s: &Scenario, table: &DipoleTable) -> Result<PulseRun> {
    let setup = s.setup()?;
    match s.drive.chirp {
        Chirp::None => run_pulse(&setup, table),
        Chirp::Positive => crate::coherence::chirped_drive_scenario(&setup, table, ChirpSign::Positive).map(|r| r.0),
        Chirp::Negative => crate::coherence::chirped_drive_scenario(&setup, table, ChirpSign::Negative).map(|r| r.0),
    }
}

fn peak_slice(run: &PulseRun) -> usize {
    run.slice_times_fs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Pipelines built on one pulse run: propagate, coherence, spectrum, compress.
fn field_outputs(s: &Scenario, table: &DipoleTable, mut out: RunOutput) -> RunOutput {
    let downstream: &[&str] = match s.pipeline {
        Pipeline::Propagate => &["near-field", "far-field", "virtual-focus"],
        Pipeline::Coherence => &["near-field", "coherence"],
        Pipeline::Spectrum => &["temporal", "spectrum"],
        _ => &["temporal", "compress"],
    };
    let Some(run) = out.stage("propagate", |o| {
        let run = pulse_run(s, table)?;
        o.value("yield", run.yield_metric());
        o.value("center_ionization", run.center_ionization);
        o.value("peak_mismatch_per_mm", run.peak_mismatch_per_mm);
        o.value("exit_intensity_reduction", run.exit_intensity_reduction);
        Ok(run)
    }) else {
        out.skip(downstream);
        return out;
    };
    let exit = run.harmonic[peak_slice(&run)].clone();
    let assembly = || PulseAssembly::from_run(&run);

    match s.pipeline {
        Pipeline::Propagate => {
            near_field(&mut out, s, table, &run, &exit);
            out.stage("far-field", |o| {
                let ff = far_field(&exit, s.analysis.far_field_mm);
                o.csv(
                    "far_field",
                    &["half_angle_mrad", "intensity", "radius_um"],
                    (0..ff.intensity.len()).map(|k| vec![ff.half_angle_mrad[k], ff.intensity[k], ff.radius_um[k]]),
                );
                o.value("far_field_half_angle_mrad", ff.half_angle_1e2());
                let fundamental = &run.fundamental[peak_slice(&run)];
                o.value(
                    "fundamental_far_field_half_angle_mrad",
                    far_field(fundamental, s.analysis.far_field_mm).half_angle_1e2(),
                );
                Ok(())
            });
            out.stage("virtual-focus", |o| {
                let vf = virtual_focus(&exit, s.analysis.focus_span_mm, s.analysis.focus_step_mm)?;
                o.csv(
                    "virtual_focus",
                    &["r_um", "intensity", "phase_rad"],
                    field_rows(&vf.profile),
                );
                o.value("focus_z_mm", vf.z_mm);
                o.value("focus_waist_um", vf.waist_um);
                o.value("focus_phase_rms_rad", vf.phase_rms);
                o.value("focus_at_boundary", if vf.at_boundary { 1.0 } else { 0.0 });
                if let Some(target) = s.analysis.backpropagate_to_mm {
                    let back = fresnel_propagate(&exit, target - exit.z_mm);
                    o.csv("backpropagated", &["r_um", "intensity", "phase_rad"], field_rows(&back));
                    o.value("backpropagated_radius_um", back.radius_1e2());
                }
                Ok(())
            });
        }
        Pipeline::Coherence => {
            near_field(&mut out, s, table, &run, &exit);
            out.stage("coherence", |o| {
                let c = coherence_degree(&assembly()?, s.analysis.reference_radius_um)?;
                o.csv(
                    "coherence",
                    &["r_um", "degree", "integrated_profile"],
                    (0..c.r_um.len()).map(|k| vec![c.r_um[k], c.degree[k], c.profile[k]]),
                );
                o.value("reference_radius_um", c.r_ref_um);
                o.value("min_degree", c.min_within(1e-2));
                Ok(())
            });
        }
        Pipeline::Spectrum => {
            let assembly = match out.stage("temporal", |o| {
                let a = assembly()?;
                temporal(o, s, &a)?;
                Ok(a)
            }) {
                Some(a) => a,
                None => {
                    out.skip(&["spectrum"]);
                    return out;
                }
            };
            out.stage("spectrum", |o| {
                let options = SpectrumOptions {
                    radius_um: s.analysis.spectrum_radius_um,
                    discard_phase: s.analysis.discard_phase,
                };
                let sp = spectral_profile(&assembly, options)?;
                o.csv(
                    "spectrum",
                    &[
                        "d_omega_per_fs",
                        "wavelength_offset_angstrom",
                        "energy_offset_ev",
                        "intensity",
                        "phase_rad",
                    ],
                    (0..sp.intensity.len()).map(|k| {
                        vec![
                            sp.d_omega[k],
                            sp.wavelength_offset_angstrom[k],
                            sp.energy_offset_ev[k],
                            sp.intensity[k],
                            sp.phase[k],
                        ]
                    }),
                );
                o.value("spectral_fwhm_angstrom", sp.fwhm_angstrom);
                o.value("spectral_fwhm_ev", sp.fwhm_ev);
                o.value("spectral_centroid_per_fs", sp.centroid());
                let limit = spectral_profile(
                    &assembly,
                    SpectrumOptions {
                        discard_phase: true,
                        ..options
                    },
                )?;
                o.value("transform_limit_fwhm_angstrom", limit.fwhm_angstrom);
                Ok(())
            });
            if let Some(r) = s.analysis.phase_radius_um {
                out.stage("phase-trace", |o| phase_trace(o, s, table, &run, &assembly, r));
            }
        }
        _ => {
            let Some(assembly) = out.stage("temporal", |o| {
                let a = assembly()?;
                temporal(o, s, &a)?;
                Ok(a)
            }) else {
                out.skip(&["compress"]);
                return out;
            };
            out.stage("compress", |o| {
                let c = compress_pulse(&assembly)?;
                o.csv(
                    "compressed",
                    &["t_fs", "power"],
                    c.times_fs.iter().zip(&c.power).map(|(&t, &p)| vec![t, p]),
                );
                o.value("compressed_fwhm_fs", c.fwhm_fs);
                o.value("quadratic_phase_fs2", c.quadratic_fs2);
                let tl = transform_limited_profile(&assembly)?;
                o.csv(
                    "transform_limited",
                    &["t_fs", "power"],
                    tl.times_fs.iter().zip(&tl.power).map(|(&t, &p)| vec![t, p]),
                );
                o.value("transform_limited_fwhm_fs", tl.fwhm_fs);
                Ok(())
            });
        }
    }
    out
}

fn near_field(out: &mut RunOutput, s: &Scenario, table: &DipoleTable, run: &PulseRun, exit: &RadialField) {
    out.stage("near-field", |o| {
        o.csv("near_field", &["r_um", "intensity", "phase_rad"], field_rows(exit));
        let mut bin = Vec::new();
        FieldPlanes::from_fields(std::slice::from_ref(exit))?.write_binary(&mut bin)?;
        o.file("near_field", "bin", bin);
        let fundamental = &run.fundamental[peak_slice(run)];
        o.csv(
            "fundamental",
            &["r_um", "intensity", "phase_rad"],
            field_rows(fundamental),
        );

        let i = exit.intensity();
        let peak = i.iter().fold(0.0f64, |m, &v| m.max(v));
        o.value("exit_radius_um", exit.radius_1e2());
        o.value("exit_axis_to_peak", if peak > 0.0 { i[0] / peak } else { 0.0 });
        o.value("exit_phase_curvature", exit.quadratic_phase_coefficient(0.05)?);

        // Polarization phase across the exit plane, for comparison with the field.
        let setup = s.setup()?;
        let r: Vec<f64> = exit
            .r_um
            .iter()
            .copied()
            .take_while(|&r| r <= 3.0 * setup.geometry.radius_um(exit.z_mm))
            .collect();
        let map = polarization_phase_map(&setup.geometry, table, s.drive.peak_intensity, &[exit.z_mm], &r)?;
        o.csv(
            "exit_polarization_phase",
            &["r_um", "phase_rad"],
            r.iter().enumerate().map(|(k, &rr)| vec![rr, map.total(0, k)]),
        );
        Ok(())
    });
}

fn temporal(o: &mut RunOutput, s: &Scenario, assembly: &PulseAssembly) -> Result<()> {
    let tp = temporal_profile(assembly)?;
    let drive = s.waveform()?;
    o.csv(
        "temporal",
        &["t_fs", "power", "drive_intensity"],
        tp.times_fs
            .iter()
            .zip(&tp.power)
            .map(|(&t, &p)| vec![t, p, drive.envelope_intensity_at_fs(t)]),
    );
    o.value("temporal_fwhm_fs", tp.fwhm_fs);
    Ok(())
}

/// Field and polarization phase at one radius through the pulse.
fn phase_trace(
    o: &mut RunOutput,
    s: &Scenario,
    table: &DipoleTable,
    run: &PulseRun,
    assembly: &PulseAssembly,
    r_um: f64,
) -> Result<()> {
    let j = assembly.node(r_um);
    let t = &assembly.times_fs;
    let trace = assembly.trace(j);
    let q = s.harmonic.order as f64;
    let field_phase = unwrap(&trace.iter().map(|v| v.arg()).collect::<Vec<_>>());
    let local: Vec<f64> = run.fundamental.iter().map(|f| f.values[j].norm_sqr()).collect();
    let pol = run
        .fundamental
        .iter()
        .zip(&local)
        .map(|(f, &i)| Ok(table_phase(table, i.min(table.range().1))? + q * f.values[j].arg()))
        .collect::<Result<Vec<_>>>()?;
    let pol = unwrap(&pol);
    let (fw, pw) = (derivative(t, &field_phase), derivative(t, &pol));
    o.csv(
        "phase_trace",
        &[
            "t_fs",
            "intensity",
            "field_phase_rad",
            "polarization_phase_rad",
            "field_chirp_per_fs",
            "polarization_chirp_per_fs",
        ],
        (0..t.len()).map(|k| vec![t[k], trace[k].norm_sqr(), field_phase[k], pol[k], fw[k], pw[k]]),
    );

    let tau = match s.waveform()?.envelope {
        Envelope::Gaussian { fwhm_fs } => fwhm_fs,
        Envelope::Square { width_fs } => width_fs,
    };
    let i0 = local.iter().fold(0.0f64, |m, &v| m.max(v));
    let it = table.transition_intensity()?;
    let eta = if i0 > it {
        table.phase_slope((it, i0))?.eta
    } else {
        table.phase_slope((0.5 * i0, i0))?.eta
    };
    let model = PhaseModulationModel {
        eta,
        i0,
        tau_fwhm_fs: tau,
        wavelength_nm: s.drive.wavelength_nm / q,
    };
    let (phase, freq, shift) = analytic_phase_model(&model, t);
    o.csv(
        "phase_model",
        &["t_fs", "phase_rad", "chirp_per_fs"],
        (0..t.len()).map(|k| vec![t[k], phase[k], freq[k]]),
    );
    o.value("trace_radius_um", assembly.radii()[j]);
    o.value("trace_local_peak_intensity", i0);
    o.value("model_extremal_shift_angstrom", shift);
    Ok(())
}

fn nonadiabatic_outputs(s: &Scenario, table: &DipoleTable, mut out: RunOutput) -> RunOutput {
    out.stage("nonadiabatic", |o| {
        let atom = s.atom_model()?;
        let d = &s.drive;
        let waveform = DriveWaveform::gaussian(d.wavelength_nm, d.peak_intensity, d.fwhm_fs)?
            .with_carrier_phase(s.waveform()?.carrier_phase)
            .with_adiabatic(false);
        let study = nonadiabatic_pulse(&atom, &waveform, s.harmonic.order, s.window(), &s.sfa_numerics(), table)?;
        let (a, n) = (&study.adiabatic, &study.nonadiabatic);
        let pa = unwrap(&a.envelope.iter().map(|v| v.arg()).collect::<Vec<_>>());
        let pn = unwrap(&n.envelope.iter().map(|v| v.arg()).collect::<Vec<_>>());
        o.csv(
            "nonadiabatic_temporal",
            &[
                "t_fs",
                "adiabatic_intensity",
                "adiabatic_phase_rad",
                "nonadiabatic_intensity",
                "nonadiabatic_phase_rad",
            ],
            (0..a.times_fs.len()).map(|k| {
                vec![
                    a.times_fs[k],
                    a.envelope[k].norm_sqr(),
                    pa[k],
                    n.envelope[k].norm_sqr(),
                    pn[k],
                ]
            }),
        );
        let (sa, sn) = (&a.spectrum, &n.spectrum);
        let c2 = a.compressed.quadratic_fs2;
        o.csv(
            "nonadiabatic_spectrum",
            &[
                "energy_offset_ev",
                "adiabatic_intensity",
                "adiabatic_phase_rad",
                "adiabatic_phase_minus_quadratic_rad",
                "nonadiabatic_intensity",
                "nonadiabatic_phase_rad",
            ],
            (0..sa.intensity.len().min(sn.intensity.len())).map(|k| {
                let w = sa.d_omega[k];
                vec![
                    sa.energy_offset_ev[k],
                    sa.intensity[k],
                    sa.phase[k],
                    sa.phase[k] - c2 * w * w,
                    sn.intensity[k],
                    sn.phase[k],
                ]
            }),
        );
        let (ca, cn) = (&a.compressed, &n.compressed);
        o.csv(
            "nonadiabatic_compressed",
            &["t_fs", "adiabatic_power", "nonadiabatic_power"],
            (0..ca.times_fs.len().min(cn.times_fs.len())).map(|k| vec![ca.times_fs[k], ca.power[k], cn.power[k]]),
        );
        o.value("adiabatic_fwhm_fs", a.fwhm_fs);
        o.value("nonadiabatic_fwhm_fs", n.fwhm_fs);
        o.value("adiabatic_compressed_fwhm_fs", ca.fwhm_fs);
        o.value("nonadiabatic_compressed_fwhm_fs", cn.fwhm_fs);
        o.value("adiabatic_spectral_fwhm_ev", sa.fwhm_ev);
        o.value("nonadiabatic_spectral_fwhm_ev", sn.fwhm_ev);
        o.value("delay_fs", study.delay_fs);
        o.value("red_shift_ev", study.red_shift_ev);
        Ok(())
    });
    out
}
