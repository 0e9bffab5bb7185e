//! Shipped mesh-file ladders for the concave and multiply connected
//! domains, plus their polygon files. `regenerate` rebuilds them from
//! the cloud generators; the other tests keep the shipped files honest.

use std::fmt::Write as _;
use std::path::PathBuf;

use gofd::cloud::{cloud_from_mesh_file, cloud_grid_interior};
use gofd::transfer::build_cdt;
use gofd::DomainSpec;

const LADDER: [usize; 3] = [400, 800, 1600];

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn domains() -> [(&'static str, DomainSpec); 2] {
    [
        ("lshape", DomainSpec::lshape()),
        ("wavy", DomainSpec::wavy_with_holes()),
    ]
}

/// Rebuilds every fixture file. Run with
/// `cargo test -p gofd --test fixtures -- --ignored regenerate`.
#[test]
#[ignore]
fn regenerate() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(&dir).unwrap();
    for (name, domain) in domains() {
        domain.save(&dir.join(format!("{name}.domain"))).unwrap();
        for n_target in LADDER {
            let h = (domain.area() / n_target as f64).sqrt();
            let cloud = cloud_grid_interior(&domain, h).unwrap();
            let tri = build_cdt(&cloud, &domain).unwrap();
            let mut text = String::new();
            writeln!(text, "mesh {} {}", cloud.n_total(), tri.triangles().len()).unwrap();
            for p in cloud.points() {
                writeln!(text, "{:.17e} {:.17e}", p.x, p.y).unwrap();
            }
            for t in tri.triangles() {
                writeln!(text, "{} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
            }
            std::fs::write(dir.join(format!("{name}_{n_target}.mesh")), text).unwrap();
        }
    }
}

#[test]
fn shipped_ladders_load_and_grow() {
    for (name, domain) in domains() {
        let mut last = 0;
        for n_target in LADDER {
            let path = fixtures_dir().join(format!("{name}_{n_target}.mesh"));
            let cloud = cloud_from_mesh_file(&path, &domain).unwrap();
            assert!(cloud.n_interior() > 0, "{name}_{n_target} has no interior");
            assert!(cloud.n_boundary() > 0, "{name}_{n_target} has no boundary");
            assert!(
                cloud.n_total() > last,
                "{name} ladder does not grow at {n_target}"
            );
            last = cloud.n_total();
        }
    }
}

#[test]
fn shipped_domain_files_match_presets() {
    let lshape = DomainSpec::load(&fixtures_dir().join("lshape.domain")).unwrap();
    assert!((lshape.area() - DomainSpec::lshape().area()).abs() < 1e-12);
    let wavy = DomainSpec::load(&fixtures_dir().join("wavy.domain")).unwrap();
    assert!((wavy.area() - DomainSpec::wavy_with_holes().area()).abs() < 1e-12);
    // spot-check the tagging geometry agrees with the presets
    for (loaded, preset) in [
        (&lshape, DomainSpec::lshape()),
        (&wavy, DomainSpec::wavy_with_holes()),
    ] {
        for k in 0..64 {
            let t = k as f64 / 64.0;
            let p = gofd::Point::new(
                preset.half_width() * (2.0 * t - 1.0),
                preset.half_width() * (2.0 * (0.5 - (t * 7.0).fract()).abs() - 0.5),
            );
            assert_eq!(loaded.contains(p), preset.contains(p));
        }
    }
}

/// Loading a fixture against the wrong domain must fail tagging, not
/// silently mislabel points.
#[test]
fn wrong_domain_is_rejected() {
    let path = fixtures_dir().join("lshape_400.mesh");
    let err = cloud_from_mesh_file(&path, &DomainSpec::unit_disk()).unwrap_err();
    assert_eq!(err.kind(), "TagError");
}
