use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

const COARSE: &str = r#"
name = "py-table"
pipeline = "table"

[table]
max = 7.2e14
nodes = 200

[sfa]
tau_samples = 128
t_samples = 128
"#;

/// Runs `code` with the module bound to `m` and `out` to a scratch directory.
fn python(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(hhgcoh_py::hhgcoh_py)(py);
        let dir = tempfile::tempdir().unwrap();
        let locals = PyDict::new(py);
        locals.set_item("m", module).unwrap();
        locals.set_item("out", dir.path()).unwrap();
        locals.set_item("COARSE", COARSE).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, Some(&locals)) {
            panic!("{}", e);
        }
    });
}

#[test]
fn presets_and_configs() {
    python(
        r#"
ids = [p[0] for p in m.presets()]
assert len(ids) == 26 and "fig-dipole" in ids, ids
assert 'pipeline = "table"' in m.preset_document("dipole")
try:
    m.preset_document("fig-nothing")
    raise AssertionError("expected KeyError")
except KeyError:
    pass
assert 'name = "reference"' in m.normalize_config("")
try:
    m.normalize_config("[jet]\npressure_torr = -1.0\n")
    raise AssertionError("expected ValueError")
except ValueError as e:
    assert "jet.pressure_torr" in str(e), e
"#,
    );
}

#[test]
fn physics_helpers() {
    python(
        r#"
b = m.gaussian_beam(3.8)
assert abs(b["waist_um"] - 25.6) < 0.1 and abs(b["radius_um"] - 46.6) < 0.1, b
x45 = m.harmonic_dipole(4e14)
x44 = m.harmonic_dipole(4e14, order=44)
assert isinstance(x45, complex) and abs(x44) < 1e-6 * abs(x45), (x44, x45)
try:
    m.harmonic_dipole(4e14, atom="xenon")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#,
    );
}

#[test]
fn runs_a_scenario() {
    python(
        r#"
import os
r = m.run(COARSE, out)
assert r["succeeded"] and r["pipeline"] == "table", r
assert r["table_cache_hit"] is False
assert all(v == "ok" for v in r["stages"].values()), r["stages"]
assert "table.csv" in r["files"]
assert os.path.exists(os.path.join(r["run_dir"], "manifest.txt"))
again = m.run(COARSE, out)
assert again["table_cache_hit"] is True
"#,
    );
}
