//! Committed MFCC reference matrices.

use std::fs;
use std::path::{Path, PathBuf};

use sonicnav::audio::{compute_mfcc, decode_wav, MfccConfig};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mfcc")
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// Max absolute deviation between a committed reference matrix and recomputation.
pub fn fixture_deviation(name: &str) -> (f64, usize, usize) {
    let dir = fixture_dir();
    let w = decode_wav(&fs::read(dir.join(format!("{name}.wav"))).unwrap()).unwrap();
    let reference = read_matrix(&dir.join(format!("{name}.txt")));
    let f = compute_mfcc(&w, &MfccConfig::default()).unwrap();
    let mut worst = 0.0f64;
    for (i, row) in reference.iter().take(f.max_frames()).enumerate() {
        assert_eq!(row.len(), 40);
        for (a, b) in row.iter().zip(f.row(i)) {
            worst = worst.max((a - *b as f64).abs());
        }
    }
    (worst, reference.len(), f.valid_frames())
}
