use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

/// Parses a mono 16-bit PCM RIFF/WAVE file. Samples map as `raw / 32767`.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(Error::parse(pos, "chunk length exceeds file"));
        }
        let chunk = &bytes[body..body + len];
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(Error::parse(pos, "fmt chunk too short"));
                }
                let le16 = |o: usize| u16::from_le_bytes([chunk[o], chunk[o + 1]]);
                let rate = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
                fmt = Some((le16(0), le16(2), rate, le16(14)));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::parse(pos, "data chunk before fmt chunk"))?;
                if format != 1 {
                    return Err(Error::UnsupportedFormat(format!("audio format tag {format} is not PCM")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("{bits}-bit samples, expected 16")));
                }
                let samples = chunk
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0)
                    .collect();
                return Ok(AudioClip::new(samples, rate));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(Error::UnsupportedFormat("no data chunk".into()))
}

fn to_pcm(x: f64) -> i16 {
    (x * 32767.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(a: &AudioClip) -> Vec<u8> {
    let data_len = (a.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&a.sample_rate.to_le_bytes());
    out.extend_from_slice(&(a.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &a.samples {
        out.extend_from_slice(&to_pcm(s).to_le_bytes());
    }
    out
}

pub fn read_wav_file(path: impl AsRef<Path>) -> Result<AudioClip> {
    read_wav(&std::fs::read(path)?)
}

pub fn write_wav_file(path: impl AsRef<Path>, a: &AudioClip) -> Result<()> {
    std::fs::write(path, write_wav(a))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_scale_maps_to_32767() {
        let bytes = write_wav(&AudioClip::new(vec![1.0, -1.0], 16000));
        assert_eq!(&bytes[44..46], &32767i16.to_le_bytes());
        assert_eq!(&bytes[46..48], &(-32767i16).to_le_bytes());
        let back = read_wav(&bytes).unwrap();
        assert_eq!(back.samples, vec![1.0, -1.0]);
    }

    #[test]
    fn empty_data_chunk() {
        let clip = read_wav(&write_wav(&AudioClip::new(vec![], 16000))).unwrap();
        assert!(clip.samples.is_empty());
        assert_eq!(clip.sample_rate, 16000);
    }

    #[test]
    fn byte_round_trip_of_random_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let raw: Vec<i16> = (0..1000).map(|_| rng.random()).collect();
        let mut bytes = write_wav(&AudioClip::new(vec![0.0; 1000], 16000));
        for (i, r) in raw.iter().enumerate() {
            bytes[44 + 2 * i..46 + 2 * i].copy_from_slice(&r.to_le_bytes());
        }
        let again = write_wav(&read_wav(&bytes).unwrap());
        assert_eq!(again, bytes);
    }

    #[test]
    fn rejects_stereo_and_float() {
        let mut bytes = write_wav(&AudioClip::new(vec![0.1; 4], 16000));
        bytes[22] = 2;
        assert!(matches!(read_wav(&bytes), Err(Error::UnsupportedFormat(_))));
        bytes[22] = 1;
        bytes[20] = 3;
        assert!(matches!(read_wav(&bytes), Err(Error::UnsupportedFormat(_))));
    }
}
