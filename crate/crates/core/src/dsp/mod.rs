//! Audio I/O, mel spectrograms and Griffin-Lim phase reconstruction.

mod griffin_lim;
mod mel;
mod stft;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roll_codec::FrameGrid;

pub use griffin_lim::{nnls_magnitude, GriffinLim};
pub use mel::{hz_to_mel, mel_center_frequencies, mel_filterbank, mel_to_hz};
pub use stft::Stft;
pub use wav::{read_wav, read_wav_file, write_wav, write_wav_file};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize) -> Self {
        AudioClip::new(vec![0.0; len], SAMPLE_RATE)
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Log-magnitude mel energies, `n_mels × n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub values: Array2<f64>,
    pub grid: FrameGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Added before the log: `ln(x + log_floor)`.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: SAMPLE_RATE,
            n_fft: 1024,
            win_length: 640,
            hop: 320,
            n_mels: 128,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.win_length == 0 || self.n_mels == 0 {
            return Err(Error::Config("hop, win_length and n_mels must be positive".into()));
        }
        if self.win_length > self.n_fft {
            return Err(Error::Config("win_length exceeds n_fft".into()));
        }
        if !(self.fmin >= 0.0 && self.fmax > self.fmin && self.fmax <= self.sample_rate as f64 / 2.0) {
            return Err(Error::Config("mel band edges must satisfy 0 <= fmin < fmax <= sr/2".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self, n_frames: usize) -> FrameGrid {
        FrameGrid::new(self.sample_rate, self.hop, n_frames)
    }
}

/// STFT + mel filterbank with fixed configuration.
pub struct MelProcessor {
    pub cfg: MelConfig,
    pub stft: Stft,
    /// `n_mels × (n_fft/2 + 1)`, slaney area-normalized.
    pub filterbank: Array2<f64>,
}

impl MelProcessor {
    pub fn new(cfg: MelConfig) -> Self {
        MelProcessor {
            stft: Stft::new(cfg.n_fft, cfg.win_length, cfg.hop),
            filterbank: mel_filterbank(&cfg),
            cfg,
        }
    }

    /// Linear-domain mel energies, `n_mels × ceil(len / hop)`.
    pub fn mel_linear(&self, a: &AudioClip) -> Result<Array2<f64>> {
        if a.samples.is_empty() {
            return Err(Error::InvalidInput("empty audio".into()));
        }
        if a.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidInput(format!(
                "expected {} Hz audio, got {}",
                self.cfg.sample_rate, a.sample_rate
            )));
        }
        let n_frames = a.samples.len().div_ceil(self.cfg.hop);
        let mag = self.stft.magnitude(&a.samples, n_frames);
        Ok(self.filterbank.dot(&mag))
    }

    pub fn mel_spectrogram(&self, a: &AudioClip) -> Result<MelSpec> {
        let lin = self.mel_linear(a)?;
        let floor = self.cfg.log_floor;
        let grid = self.cfg.grid(lin.ncols());
        Ok(MelSpec {
            values: lin.mapv(|x| (x + floor).ln()),
            grid,
        })
    }

    pub fn griffin_lim(&self, m: &MelSpec, iters: usize, seed: u64) -> AudioClip {
        GriffinLim::new(self).run(m, iters, seed).0
    }
}

/// Mel spectrogram with the default 16 kHz / 1024 / 640 / 320 / 128 setup.
pub fn mel_spectrogram(a: &AudioClip) -> Result<MelSpec> {
    MelProcessor::new(MelConfig::default()).mel_spectrogram(a)
}

/// Griffin-Lim inversion with the default configuration.
pub fn griffin_lim(m: &MelSpec, iters: usize, seed: u64) -> AudioClip {
    MelProcessor::new(MelConfig::default()).griffin_lim(m, iters, seed)
}

/// Affine map of log-mel values onto [-1, 1] using corpus-wide extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelNorm {
    pub min: f64,
    pub max: f64,
}

impl MelNorm {
    pub fn fit<'a>(specs: impl IntoIterator<Item = &'a MelSpec>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in specs {
            for &v in s.values.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() || hi <= lo {
            return MelNorm { min: lo.min(0.0), max: lo.min(0.0) + 1.0 };
        }
        MelNorm { min: lo, max: hi }
    }

    pub fn normalize(&self, v: &Array2<f64>) -> Array2<f64> {
        let scale = 2.0 / (self.max - self.min);
        v.mapv(|x| ((x - self.min) * scale - 1.0).clamp(-1.0, 1.0))
    }

    pub fn denormalize(&self, v: &Array2<f64>) -> Array2<f64> {
        let scale = (self.max - self.min) / 2.0;
        v.mapv(|x| (x.clamp(-1.0, 1.0) + 1.0) * scale + self.min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, secs: f64, amp: f64) -> AudioClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn frame_count_for_5_12_seconds() {
        let m = mel_spectrogram(&AudioClip::silence(81_920)).unwrap();
        assert_eq!(m.values.dim(), (128, 256));
        assert_eq!(m.grid.n_frames, 256);
    }

    #[test]
    fn silence_is_constant_floor() {
        let m = mel_spectrogram(&AudioClip::silence(4000)).unwrap();
        let floor = 1e-5f64.ln();
        assert!(m.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn empty_audio_errors() {
        assert!(mel_spectrogram(&AudioClip::silence(0)).is_err());
    }

    #[test]
    fn sine_peaks_in_band_nearest_its_frequency() {
        let cfg = MelConfig::default();
        let centers = mel_center_frequencies(&cfg);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        let m = mel_spectrogram(&sine(440.0, 1.0, 0.5)).unwrap();
        let t = m.values.ncols();
        for k in 2..t - 2 {
            let col = m.values.column(k);
            let arg = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(arg, expected, "frame {k}");
        }
    }

    #[test]
    fn linear_mel_scales_with_amplitude() {
        let p = MelProcessor::new(MelConfig::default());
        let a = sine(523.0, 0.5, 0.2);
        let b = AudioClip::new(a.samples.iter().map(|x| 3.0 * x).collect(), SAMPLE_RATE);
        let la = p.mel_linear(&a).unwrap();
        let lb = p.mel_linear(&b).unwrap();
        for (x, y) in la.iter().zip(lb.iter()) {
            assert!((3.0 * x - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn mel_norm_round_trip() {
        let m = mel_spectrogram(&sine(300.0, 0.3, 0.5)).unwrap();
        let norm = MelNorm::fit([&m]);
        let n = norm.normalize(&m.values);
        assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = norm.denormalize(&n);
        for (x, y) in back.iter().zip(m.values.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
