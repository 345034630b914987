//! Audio front end: WAV decoding, MFCC features, the synthetic note
//! generator and labeled sound datasets.

mod dataset;
mod mfcc;
mod synth;
mod wav;

pub use dataset::{load_dataset, SoundDataset, Split, SplitCounts, SYNTH_MANIFEST};
pub use mfcc::{compute_mfcc, frame_count, mel_filterbank, MfccConfig, SoundFeature};
pub use synth::{synth_note, InstrumentProfile, Note, SYNTH_SAMPLE_RATE};
pub use wav::{decode_wav, encode_wav};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("unsupported channel count {0}")]
    UnsupportedChannelCount(u16),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid MFCC config: {0}")]
    InvalidConfig(String),
    #[error("waveform of {samples} samples is shorter than one {frame}-sample frame")]
    TooShort { samples: usize, frame: usize },
    #[error("non-positive duration {0}")]
    NonPositiveDuration(f64),
    #[error("unknown note {0:?}")]
    UnknownNote(String),
    #[error("missing label directory {0}")]
    MissingLabel(PathBuf),
    #[error("insufficient samples for label {label}: have {have}, need {need}")]
    InsufficientSamples {
        label: String,
        have: usize,
        need: usize,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio with amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate is zero".into()));
        }
        if samples.is_empty() {
            return Err(AudioError::InvalidWaveform("no samples".into()));
        }
        if let Some(x) = samples.iter().find(|x| !(-1.0..=1.0).contains(*x)) {
            return Err(AudioError::InvalidWaveform(format!(
                "sample {x} outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
