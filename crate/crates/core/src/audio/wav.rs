use super::{AudioError, Waveform};

const PCM: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE container holding mono 16-bit PCM. Samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    let bad = |m: &str| AudioError::MalformedHeader(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("chunk runs past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short"));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    if format != PCM {
        return Err(AudioError::UnsupportedEncoding(format!(
            "format tag {format} (only PCM)"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{bits}-bit samples (only 16-bit)"
        )));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedChannelCount(channels));
    }
    if rate == 0 {
        return Err(bad("zero sample rate"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, rate)
}

/// Writes mono 16-bit PCM. Amplitudes are scaled by 32767 and rounded.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.samples().len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in w.samples() {
        let q = (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(channels: u16, rate: u32, bits: u16, format: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * bits as u32 / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn one_second_mono_16k() {
        let bytes = header(1, 16000, 16, 1, &vec![0u8; 32000]);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples().len(), 16000);
        assert_eq!(w.sample_rate(), 16000);
    }

    #[test]
    fn max_sample_normalizes_below_one() {
        let bytes = header(1, 8000, 16, 1, &32767i16.to_le_bytes());
        let w = decode_wav(&bytes).unwrap();
        assert!((w.samples()[0] - 0.999_969_48).abs() < 1e-7);
        let bytes = header(1, 8000, 16, 1, &(-32768i16).to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples()[0], -1.0);
    }

    #[test]
    fn rejects_stereo_and_other_encodings() {
        let stereo = header(2, 16000, 16, 1, &[0u8; 8]);
        let err = decode_wav(&stereo).unwrap_err();
        assert!(matches!(err, AudioError::UnsupportedChannelCount(2)));
        assert!(err.to_string().contains("unsupported channel count"));

        let float = header(1, 16000, 32, 3, &[0u8; 8]);
        assert!(matches!(
            decode_wav(&float),
            Err(AudioError::UnsupportedEncoding(_))
        ));
        let eight_bit = header(1, 16000, 8, 1, &[0u8; 8]);
        assert!(matches!(
            decode_wav(&eight_bit),
            Err(AudioError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_wav(b"RIFX0000WAVE"),
            Err(AudioError::MalformedHeader(_))
        ));
        let mut truncated = header(1, 16000, 16, 1, &[0u8; 8]);
        truncated.truncate(truncated.len() - 4);
        assert!(matches!(
            decode_wav(&truncated),
            Err(AudioError::MalformedHeader(_))
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = header(1, 16000, 16, 1, &[1, 0, 2, 0]);
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[9, 9, 9, 0]].concat();
        bytes.splice(12..12, list);
        let w = decode_wav(&bytes).unwrap();
        assert_eq!(w.samples().len(), 2);
    }

    #[test]
    fn encode_decode_round_trip_is_within_quantization() {
        let src: Vec<f64> = (0..500).map(|i| (i as f64 * 0.05).sin() * 0.8).collect();
        let w = Waveform::new(src.clone(), 16000).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        for (a, b) in src.iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }
}
