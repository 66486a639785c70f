use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::roll_codec::FrameGrid;

/// Lowest and highest voiced F0 accepted by the tracker.
pub const F0_MIN_HZ: f64 = 180.0;
pub const F0_MAX_HZ: f64 = 4200.0;

/// Per-frame F0 in Hz; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub f0_hz: Vec<f64>,
    #[serde(skip, default = "default_grid")]
    pub grid: FrameGrid,
}

fn default_grid() -> FrameGrid {
    FrameGrid::new(16_000, 320, 0)
}

impl F0Track {
    /// Frames `range` of the track.
    pub fn segment(&self, range: std::ops::Range<usize>) -> &[f64] {
        let end = range.end.min(self.f0_hz.len());
        &self.f0_hz[range.start.min(end)..end]
    }
}

/// YIN-style tracker: cumulative-mean-normalized difference function with an
/// absolute threshold, parabolic refinement, one estimate per grid frame taken
/// at the frame centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct YinConfig {
    pub hop: usize,
    /// Integration window in samples.
    pub window: usize,
    pub threshold: f64,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        YinConfig {
            hop: 320,
            window: 400,
            threshold: 0.15,
            f0_min: F0_MIN_HZ,
            f0_max: F0_MAX_HZ,
        }
    }
}

pub fn extract_f0(a: &AudioClip) -> F0Track {
    extract_f0_with(a, &YinConfig::default())
}

pub fn extract_f0_with(a: &AudioClip, cfg: &YinConfig) -> F0Track {
    let sr = a.sample_rate as f64;
    let grid = FrameGrid::new(a.sample_rate, cfg.hop, a.samples.len().div_ceil(cfg.hop));
    let tau_min = ((sr / cfg.f0_max).floor() as usize).max(2);
    let tau_max = (sr / cfg.f0_min).ceil() as usize + 1;
    let span = cfg.window + tau_max;
    let x = &a.samples;
    let sample = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };
    let mut buf = vec![0.0; span];
    let mut d = vec![0.0; tau_max + 1];
    let f0_hz = (0..grid.n_frames)
        .map(|k| {
            let centre = (k * cfg.hop + cfg.hop / 2) as isize;
            let start = centre - (span / 2) as isize;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = sample(start + j as isize);
            }
            let energy: f64 = buf[..cfg.window].iter().map(|v| v * v).sum();
            if energy < 1e-10 * cfg.window as f64 {
                return 0.0;
            }
            for (tau, dt) in d.iter_mut().enumerate().skip(1) {
                *dt = (0..cfg.window).map(|j| (buf[j] - buf[j + tau]).powi(2)).sum();
            }
            let mut cmnd = vec![1.0; tau_max + 1];
            let mut running = 0.0;
            for tau in 1..=tau_max {
                running += d[tau];
                cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
            }
            let Some(mut tau) = (tau_min..tau_max).find(|&t| cmnd[t] < cfg.threshold) else {
                return 0.0;
            };
            while tau + 1 < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let (a0, b0, c0) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = a0 - 2.0 * b0 + c0;
            let shift = if denom.abs() > 1e-12 { 0.5 * (a0 - c0) / denom } else { 0.0 };
            let f0 = sr / (tau as f64 + shift.clamp(-1.0, 1.0));
            if (cfg.f0_min..=cfg.f0_max).contains(&f0) {
                f0
            } else {
                0.0
            }
        })
        .collect();
    F0Track { f0_hz, grid }
}
