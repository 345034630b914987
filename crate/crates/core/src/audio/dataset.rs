use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{
    compute_mfcc, decode_wav, synth_note, AudioError, InstrumentProfile, MfccConfig, Note,
    SoundFeature,
};
use crate::seeding;

/// File that marks a dataset root as synthetic notes generated on load.
pub const SYNTH_MANIFEST: &str = "synthetic.manifest";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.test
    }
}

/// Labeled MFCC features of one split. Features are shared so environments
/// can hold them without copying.
#[derive(Clone, Debug)]
pub struct SoundDataset {
    pub items: Vec<(Arc<SoundFeature>, usize)>,
    pub split: Split,
    pub labels: Vec<String>,
}

impl SoundDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count_label(&self, label: usize) -> usize {
        self.items.iter().filter(|(_, l)| *l == label).count()
    }

    /// Features grouped by label index.
    pub fn by_label(&self) -> Vec<Vec<Arc<SoundFeature>>> {
        let mut out = vec![Vec::new(); self.labels.len()];
        for (f, l) in &self.items {
            out[*l].push(Arc::clone(f));
        }
        out
    }

    /// Synthetic note dataset generated in memory; train and test use disjoint seeds.
    pub fn synthetic(
        notes: &[Note],
        counts: SplitCounts,
        seed: u64,
        duration_s: f64,
    ) -> Result<(SoundDataset, SoundDataset), AudioError> {
        let cfg = MfccConfig::default();
        let labels: Vec<String> = notes.iter().map(|n| n.name().to_string()).collect();
        let presets = InstrumentProfile::presets();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (k, &note) in notes.iter().enumerate() {
            for i in 0..counts.total() {
                let profile = &presets[i % presets.len()];
                let w = synth_note(
                    note,
                    profile,
                    duration_s,
                    seeding::derive(seed, &[k as u64, i as u64]),
                )?;
                let item = (Arc::new(compute_mfcc(&w, &cfg)?), k);
                if i < counts.train {
                    train.push(item);
                } else {
                    test.push(item);
                }
            }
        }
        Ok(finish(train, test, labels, seed))
    }
}

fn finish(
    mut train: Vec<(Arc<SoundFeature>, usize)>,
    mut test: Vec<(Arc<SoundFeature>, usize)>,
    labels: Vec<String>,
    seed: u64,
) -> (SoundDataset, SoundDataset) {
    train.shuffle(&mut seeding::rng(seed, &[0x7261_696e]));
    test.shuffle(&mut seeding::rng(seed, &[0x7465_7374]));
    (
        SoundDataset {
            items: train,
            split: Split::Train,
            labels: labels.clone(),
        },
        SoundDataset {
            items: test,
            split: Split::Test,
            labels,
        },
    )
}

struct Manifest {
    seed: u64,
    duration_s: f64,
}

fn read_manifest(path: &Path) -> Result<Manifest, AudioError> {
    let text = fs::read_to_string(path)?;
    let mut seed = None;
    let mut duration_s = 1.0;
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AudioError::Manifest(format!("expected key = value, got {line:?}")))?;
        let v = v.trim();
        match k.trim() {
            "kind" if v == "notes" => {}
            "kind" => return Err(AudioError::Manifest(format!("unknown kind {v:?}"))),
            "seed" => {
                seed = Some(v.parse().map_err(|_| AudioError::Manifest(format!("bad seed {v:?}")))?)
            }
            "duration_s" => {
                duration_s = v
                    .parse()
                    .map_err(|_| AudioError::Manifest(format!("bad duration {v:?}")))?
            }
            other => return Err(AudioError::Manifest(format!("unknown key {other:?}"))),
        }
    }
    Ok(Manifest {
        seed: seed.ok_or_else(|| AudioError::Manifest("missing seed".into()))?,
        duration_s,
    })
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, AudioError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `<root>/<label>/*.wav` into shuffled train/test splits with
/// `counts` items per label. A root holding a synthetic manifest generates
/// notes instead (labels must then be note names).
pub fn load_dataset(
    root: &Path,
    labels: &[String],
    counts: SplitCounts,
    seed: u64,
) -> Result<(SoundDataset, SoundDataset), AudioError> {
    let manifest = root.join(SYNTH_MANIFEST);
    if manifest.is_file() {
        let m = read_manifest(&manifest)?;
        let notes: Vec<Note> = labels.iter().map(|l| l.parse()).collect::<Result<_, _>>()?;
        return SoundDataset::synthetic(&notes, counts, m.seed ^ seed, m.duration_s);
    }
    let cfg = MfccConfig::default();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let dir = root.join(label);
        if !dir.is_dir() {
            return Err(AudioError::MissingLabel(dir));
        }
        let mut files = wav_files(&dir)?;
        if files.len() < counts.total() {
            return Err(AudioError::InsufficientSamples {
                label: label.clone(),
                have: files.len(),
                need: counts.total(),
            });
        }
        files.shuffle(&mut seeding::rng(seed, &[k as u64]));
        for (i, path) in files.iter().take(counts.total()).enumerate() {
            let w = decode_wav(&fs::read(path)?)?;
            let item = (Arc::new(compute_mfcc(&w, &cfg)?), k);
            if i < counts.train {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    Ok(finish(train, test, labels.to_vec(), seed))
}
