//! The bundled JSON case files stay in lockstep with the library's
//! builders.

use std::path::{Path, PathBuf};

use mdhem_cli::case_io::load_case;
use mdhem_core::NetworkCase;

fn case_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases").join(format!("{name}.json"))
}

fn assert_cases_match(loaded: &NetworkCase, built: &NetworkCase) {
    assert_eq!(loaded.base_mva, built.base_mva);
    assert_eq!(loaded.areas, built.areas);
    assert_eq!(loaded.buses.len(), built.buses.len());
    for (a, b) in loaded.buses.iter().zip(&built.buses) {
        assert_eq!(a, b, "bus {}", b.id);
    }
    assert_eq!(loaded.branches.len(), built.branches.len());
    for (a, b) in loaded.branches.iter().zip(&built.branches) {
        assert_eq!((a.from, a.to), (b.from, b.to));
        // The file stores impedances; reconstructing the admittance may
        // wobble in the last bit.
        let dy = (a.series_admittance - b.series_admittance).norm();
        assert!(dy <= 1e-12 * b.series_admittance.norm(), "branch {}-{}", b.from, b.to);
        assert_eq!(a.total_shunt, b.total_shunt);
        assert_eq!(a.tap, b.tap);
    }
}

#[test]
fn bundled_files_match_builders() {
    for (name, built) in [
        ("case3", mdhem_core::cases::case3()),
        ("case4", mdhem_core::cases::case4()),
        ("case4_qlim", mdhem_core::cases::case4_qlim()),
        ("ieee14", mdhem_core::cases::ieee14()),
    ] {
        let loaded = load_case(&case_path(name)).unwrap();
        assert_cases_match(&loaded, &built);
    }
}

#[test]
fn ieee14_tags_four_areas() {
    let case = load_case(&case_path("ieee14")).unwrap();
    assert_eq!(case.n_buses(), 14);
    assert_eq!(case.areas.len(), 4);
}
