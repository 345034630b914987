use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioError, Waveform};

#[derive(Clone, Debug, PartialEq)]
pub struct MfccConfig {
    pub n_filters: usize,
    pub n_coeffs: usize,
    pub frame_len_s: f64,
    pub frame_step_s: f64,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub lifter: f64,
    pub max_frames: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            n_filters: 40,
            n_coeffs: 40,
            frame_len_s: 0.025,
            frame_step_s: 0.010,
            fft_size: 512,
            preemphasis: 0.97,
            lifter: 22.0,
            max_frames: 100,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::InvalidConfig(m.to_string()));
        if self.n_coeffs == 0 || self.n_coeffs > self.n_filters {
            return bad("need 0 < n_coeffs <= n_filters");
        }
        if self.max_frames == 0 {
            return bad("max_frames must be at least 1");
        }
        if !(self.frame_step_s > 0.0 && self.frame_step_s <= self.frame_len_s) {
            return bad("need 0 < frame_step_s <= frame_len_s");
        }
        if self.fft_size < 2 {
            return bad("fft_size too small");
        }
        Ok(())
    }

    /// Frame length and step in samples, rounded half up.
    pub fn frame_samples(&self, sample_rate: u32) -> (usize, usize) {
        let round = |x: f64| (x + 0.5).floor() as usize;
        (
            round(self.frame_len_s * sample_rate as f64),
            round(self.frame_step_s * sample_rate as f64).max(1),
        )
    }
}

/// `floor((len - win) / step) + 1`, or 0 when the signal is shorter than a frame.
pub fn frame_count(len: usize, win: usize, step: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / step + 1
    }
}

/// `max_frames x n_coeffs` MFCC matrix; rows at or past `valid_frames` are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SoundFeature {
    frames: Vec<f32>,
    max_frames: usize,
    n_coeffs: usize,
    valid_frames: usize,
}

impl SoundFeature {
    /// Pads (or truncates) computed rows into a fixed-size matrix.
    pub fn from_rows(rows: &[Vec<f64>], max_frames: usize, n_coeffs: usize) -> Self {
        let valid = rows.len().min(max_frames);
        let mut frames = vec![0f32; max_frames * n_coeffs];
        for (i, row) in rows.iter().take(valid).enumerate() {
            for (j, &v) in row.iter().take(n_coeffs).enumerate() {
                frames[i * n_coeffs + j] = v as f32;
            }
        }
        Self {
            frames,
            max_frames,
            n_coeffs,
            valid_frames: valid,
        }
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.frames[i * self.n_coeffs..(i + 1) * self.n_coeffs]
    }

    pub fn max_frames(&self) -> usize {
        self.max_frames
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn valid_frames(&self) -> usize {
        self.valid_frames
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.max_frames, self.n_coeffs)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over `fft_size/2 + 1` bins, with edges snapped to
/// `floor((fft_size + 1) * hz / rate)` and spanning 0 Hz to Nyquist.
pub fn mel_filterbank(n_filters: usize, fft_size: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(sample_rate as f64 / 2.0));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| {
            let mel = lo + (hi - lo) * i as f64 / (n_filters + 1) as f64;
            ((fft_size + 1) as f64 * mel_to_hz(mel) / sample_rate as f64).floor()
        })
        .collect();
    (0..n_filters)
        .map(|j| {
            let mut f = vec![0.0; n_bins];
            let (a, b, c) = (edges[j], edges[j + 1], edges[j + 2]);
            for i in a as usize..b as usize {
                f[i] = (i as f64 - a) / (b - a);
            }
            for i in b as usize..c as usize {
                if i < n_bins {
                    f[i] = (c - i as f64) / (c - b);
                }
            }
            f
        })
        .collect()
}

/// Unpadded MFCC rows (at most `max_frames`), computed in double precision.
pub(crate) fn mfcc_rows(w: &Waveform, cfg: &MfccConfig) -> Result<Vec<Vec<f64>>, AudioError> {
    cfg.validate()?;
    let x = w.samples();
    let (win, step) = cfg.frame_samples(w.sample_rate());
    let count = frame_count(x.len(), win, step);
    if count == 0 {
        return Err(AudioError::TooShort {
            samples: x.len(),
            frame: win,
        });
    }
    let count = count.min(cfg.max_frames);

    let mut emph = Vec::with_capacity(x.len());
    emph.push(x[0]);
    emph.extend(x.windows(2).map(|p| p[1] - cfg.preemphasis * p[0]));

    let window: Vec<f64> = if win == 1 {
        vec![1.0]
    } else {
        (0..win)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
            .collect()
    };
    let nfft = cfg.fft_size;
    let n_bins = nfft / 2 + 1;
    let bank = mel_filterbank(cfg.n_filters, nfft, w.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let nf = cfg.n_filters as f64;
    let dct: Vec<Vec<f64>> = (0..cfg.n_coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            (0..cfg.n_filters)
                .map(|n| scale * (PI * k as f64 * (2 * n + 1) as f64 / (2.0 * nf)).cos())
                .collect()
        })
        .collect();
    let lift: Vec<f64> = (0..cfg.n_coeffs)
        .map(|n| {
            if cfg.lifter > 0.0 {
                1.0 + cfg.lifter / 2.0 * (PI * n as f64 / cfg.lifter).sin()
            } else {
                1.0
            }
        })
        .collect();

    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut rows = Vec::with_capacity(count);
    for f in 0..count {
        let frame = &emph[f * step..f * step + win];
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins]
            .iter()
            .map(|c| c.norm_sqr() / nfft as f64)
            .collect();
        let logmel: Vec<f64> = bank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                if e == 0.0 { f64::EPSILON } else { e }.ln()
            })
            .collect();
        rows.push(
            dct.iter()
                .zip(&lift)
                .map(|(basis, l)| l * basis.iter().zip(&logmel).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        );
    }
    Ok(rows)
}

/// Pre-emphasis, Hamming-windowed framing, power spectrum, log mel energies,
/// orthonormal DCT-II and sinusoidal liftering; zero-padded to `max_frames` rows.
pub fn compute_mfcc(w: &Waveform, cfg: &MfccConfig) -> Result<SoundFeature, AudioError> {
    let rows = mfcc_rows(w, cfg)?;
    Ok(SoundFeature::from_rows(&rows, cfg.max_frames, cfg.n_coeffs))
}
