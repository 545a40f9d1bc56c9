//! Shipped fixture files must equal generator output byte for byte.
//! Regenerate with `PWS_BLESS=1 cargo test -p pws-core --test fixtures`.

use std::fs;
use std::path::{Path, PathBuf};

use pws_core::fixtures::{self, spam_synth, Benchmark, Family};
use pws_core::prompt::LabelerSuite;

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn assert_same_tree(expected: &Path, actual: &Path) {
    let mut names: Vec<_> = fs::read_dir(expected)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let e = expected.join(&name);
        if e.is_dir() {
            continue;
        }
        let a = actual.join(&name);
        assert!(a.exists(), "{} is not shipped", a.display());
        assert!(
            fs::read(&e).unwrap() == fs::read(&a).unwrap(),
            "{} differs from the generator; rerun with PWS_BLESS=1",
            a.display()
        );
    }
}

#[test]
fn shipped_fixtures_match_generators() {
    if std::env::var_os("PWS_BLESS").is_some() {
        fixtures::write_suites(shipped().join("suites")).unwrap();
        spam_synth::write(shipped().join("spam_synth")).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_suites(tmp.path().join("suites")).unwrap();
    spam_synth::write(tmp.path().join("spam_synth")).unwrap();
    assert_same_tree(&tmp.path().join("suites"), &shipped().join("suites"));
    assert_same_tree(
        &tmp.path().join("spam_synth"),
        &shipped().join("spam_synth"),
    );
}

#[test]
fn shipped_suites_load() {
    for b in Benchmark::ALL {
        for f in Family::ALL {
            for zs in [false, true] {
                let path = shipped()
                    .join("suites")
                    .join(fixtures::suite_file_name(b, f, zs));
                let suite = LabelerSuite::load(&path, &b.classes()).unwrap();
                assert!(suite.lfs.iter().all(|lf| lf.backend == f.backend()));
            }
        }
    }
}
