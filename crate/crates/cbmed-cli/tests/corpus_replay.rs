//! Replays the checked-in fuzz corpus through the same entry points the
//! fuzz targets use, so the seeds stay exercised on stable toolchains.

use std::fs;
use std::path::PathBuf;

use cbmed::data::{parse_grid_spec, ColumnMapping, Dataset, TreatmentKind};
use cbmed_cli::ConfigFile;

fn corpus_dir(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target)
}

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = corpus_dir(target);
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).unwrap_or_else(|_| panic!("missing corpus {dir:?}")) {
        let entry = entry.unwrap();
        out.push((
            entry.file_name().to_string_lossy().to_string(),
            fs::read(entry.path()).unwrap(),
        ));
    }
    assert!(!out.is_empty(), "empty corpus for {target}");
    out.sort();
    out
}

#[test]
fn csv_ingest_corpus_never_panics() {
    let mapping = ColumnMapping {
        y: "y".into(),
        t: "t".into(),
        m: vec!["m".into()],
        x: vec!["x".into()],
    };
    for (name, bytes) in seeds("csv_ingest") {
        let _ = Dataset::from_csv_reader(bytes.as_slice(), &mapping, TreatmentKind::Continuous);
        let _ = Dataset::from_csv_reader(
            bytes.as_slice(),
            &mapping,
            TreatmentKind::Discrete { levels: vec![] },
        );
        let _ = name;
    }
}

#[test]
fn grid_spec_corpus_invariants() {
    for (name, bytes) in seeds("grid_spec") {
        if let Ok(s) = std::str::from_utf8(&bytes) {
            if let Ok(grid) = parse_grid_spec(s) {
                assert!(grid.iter().all(|v| v.is_finite()), "seed {name}");
                assert!(grid.windows(2).all(|w| w[0] < w[1]), "seed {name}");
            }
        }
    }
}

#[test]
fn config_corpus_merge_is_total() {
    for (name, bytes) in seeds("config_file") {
        if let Ok(s) = std::str::from_utf8(&bytes) {
            if let Ok(cfg) = serde_json::from_str::<ConfigFile>(s) {
                let merged = ConfigFile::default().merged_over(cfg);
                serde_json::to_string(&merged).unwrap_or_else(|_| panic!("seed {name}"));
            }
        }
    }
}
