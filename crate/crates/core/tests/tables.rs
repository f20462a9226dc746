use std::sync::OnceLock;

use hhgcoh::sfa::{AtomModel, SfaNumerics};
use hhgcoh::tables::*;
use hhgcoh::Error;

fn neon45() -> &'static DipoleTable {
    static TABLE: OnceLock<DipoleTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        build_table(
            &AtomModel::neon(),
            825.0,
            45,
            &GridSpec::for_peak(6e14),
            &SfaNumerics::default(),
        )
        .unwrap()
    })
}

/// Cheap numerics for tests that only exercise plumbing.
fn coarse() -> SfaNumerics {
    SfaNumerics {
        tau_samples: 128,
        t_samples: 128,
        ..SfaNumerics::default()
    }
}

#[test]
fn grid_specs() {
    let g = GridSpec::for_peak(6e14);
    let nodes = g.intensities();
    assert_eq!(nodes.len(), 250);
    assert_eq!(nodes[0], 0.0);
    assert!((nodes[249] - 7.2e14).abs() < 1.0);
    let log = GridSpec::log_for_peak(6e14).intensities();
    assert_eq!(log[0], 0.0);
    assert!((log[1] - 6e13).abs() < 1.0 && (log[249] - 7.2e14).abs() < 1e3);
    assert!(log.windows(2).all(|w| w[1] > w[0]));
    assert!(build_table(&AtomModel::neon(), 825.0, 45, &g.with_nodes(50), &coarse()).is_err());
}

#[test]
fn table_satisfies_invariants() {
    let t = neon45();
    t.check_invariants().unwrap();
    assert_eq!(t.len(), 250);
    assert!(t.gamma.windows(2).all(|w| w[1] >= w[0]));
    assert!(t.phase.windows(2).all(|w| (w[1] - w[0]).abs() <= std::f64::consts::PI));
}

#[test]
fn node_queries_are_exact() {
    let t = neon45();
    for i in [1, 17, 100, 249] {
        let (x, g) = t.query(t.intensities[i]).unwrap();
        assert!((x.norm() - t.amplitude[i]).abs() <= 1e-15 * t.amplitude[i]);
        let d = x.arg() - t.phase[i];
        let wrapped = d - 2.0 * std::f64::consts::PI * (d / (2.0 * std::f64::consts::PI)).round();
        assert!(wrapped.abs() < 1e-12);
        assert_eq!(g, t.gamma[i]);
    }
    assert_eq!(t.query(0.0).unwrap().0.norm(), 0.0);
}

#[test]
fn out_of_range_queries_fail() {
    let t = neon45();
    assert!(matches!(t.query(-1.0), Err(Error::Range { .. })));
    assert!(matches!(t.query(8e14), Err(Error::Range { .. })));
    assert!(matches!(t.query(f64::NAN), Err(Error::Range { .. })));
}

#[test]
fn midpoints_match_direct_evaluation_in_cutoff() {
    let t = neon45();
    let n = SfaNumerics::default();
    for k in 0..8 {
        let i = 35 + 4 * k; // ~1.0–1.9e14
        let mid = 0.5 * (t.intensities[i] + t.intensities[i + 1]);
        let (direct, _) = node(&t.atom, 825.0, 45, mid, &n).unwrap();
        let (interp, _) = t.query(mid).unwrap();
        let d = (interp / direct).arg();
        assert!(d.abs() < 0.2, "{mid:e}: {d}");
    }
}

#[test]
fn stored_node_is_reproducible() {
    let t = neon45();
    let i = 120;
    let (x, _) = node(&t.atom, 825.0, 45, t.intensities[i], &SfaNumerics::default()).unwrap();
    assert_eq!(x.norm().to_bits(), t.amplitude[i].to_bits());
}

#[test]
fn builds_are_byte_identical() {
    let g = GridSpec::for_peak(3e14).with_nodes(MIN_NODES);
    let a = build_table(&AtomModel::neon(), 825.0, 21, &g, &coarse()).unwrap();
    let b = build_table(&AtomModel::neon(), 825.0, 21, &g, &coarse()).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn cutoff_phase_decreases_in_every_window() {
    let t = neon45();
    let it = t.transition_intensity().unwrap();
    let last = t.intensities.iter().rposition(|&i| i <= it).unwrap();
    let first = t.amplitude.iter().position(|&a| a > 1e-9 * t.amplitude[last]).unwrap();
    for start in first..=last - 19 {
        let s = t
            .phase_slope((t.intensities[start], t.intensities[start + 19]))
            .unwrap();
        assert!(s.eta > 0.0, "window at {:e}", t.intensities[start]);
    }
}

#[test]
fn phase_slopes_by_region() {
    let t = neon45();
    let it = t.transition_intensity().unwrap();
    let cutoff = t.phase_slope((0.5 * it, it)).unwrap();
    let plateau = t.phase_slope((it, 6e14)).unwrap();
    assert_eq!(cutoff.region, Region::Cutoff);
    assert_eq!(plateau.region, Region::Plateau);
    assert!(cutoff.eta > 0.0 && plateau.eta > cutoff.eta);
    assert!(cutoff.fit_residual < 0.2);
}

#[test]
fn phase_slope_window_errors() {
    let t = neon45();
    assert!(matches!(t.phase_slope((1e14, 1.1e14)), Err(Error::Fit(_))));
    assert!(matches!(t.phase_slope((-1.0, 2e14)), Err(Error::Range { .. })));
    assert!(matches!(t.phase_slope((5e14, 9e14)), Err(Error::Range { .. })));
}

#[test]
fn no_transition_is_not_found() {
    // Harmonic 45 stays in the cutoff below 1.2e14 W/cm².
    let g = GridSpec::for_peak(1e14).with_nodes(MIN_NODES);
    let t = build_table(&AtomModel::neon(), 825.0, 45, &g, &coarse()).unwrap();
    assert!(matches!(t.transition_intensity(), Err(Error::NotFound(_))));
}

#[test]
fn binary_round_trip() {
    let t = neon45();
    let bytes = t.to_bytes();
    assert_eq!(&bytes[..8], b"HHGDTAB\0");
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 45);
    assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 10);
    assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 825.0);
    assert_eq!(u64::from_le_bytes(bytes[40..48].try_into().unwrap()), 250);
    assert_eq!(bytes.len(), 48 + 250 * 32);
    let back = DipoleTable::read_binary(&bytes[..]).unwrap();
    assert_eq!(&back, t);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    t.save(&path).unwrap();
    assert_eq!(&DipoleTable::load(&path).unwrap(), t);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(DipoleTable::read_binary(&bad[..]), Err(Error::Format(_))));
    assert!(DipoleTable::read_binary(&bytes[..100]).is_err());
}

#[test]
fn csv_export() {
    let t = neon45();
    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "intensity_wcm2,amplitude_au,phase_rad,gamma_per_s"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 250);
    assert_eq!(rows[100][0], t.intensities[100]);
    assert_eq!(rows[100][2], t.phase[100]);
}
