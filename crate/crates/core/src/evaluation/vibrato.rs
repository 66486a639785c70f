use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VibratoConfig {
    /// Minimum half-extent in cents for a vibrato to count as present.
    pub theta_cents: f64,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    /// The peak must be the global maximum over this search band.
    pub search_min_hz: f64,
    pub search_max_hz: f64,
    pub min_duration_s: f64,
    pub min_voiced_fraction: f64,
    /// Frequency spacing of the zero-padded DFT.
    pub resolution_hz: f64,
    pub hann: bool,
}

impl Default for VibratoConfig {
    fn default() -> Self {
        VibratoConfig {
            theta_cents: 10.0,
            rate_min_hz: 3.0,
            rate_max_hz: 9.0,
            search_min_hz: 1.0,
            search_max_hz: 15.0,
            min_duration_s: 0.2,
            min_voiced_fraction: 0.5,
            resolution_hz: 0.05,
            hann: false,
        }
    }
}

/// Vibrato decision for one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VibratoLabel {
    pub note: usize,
    pub rate_hz: f64,
    /// Peak-to-peak extent in cents.
    pub extent_cents: f64,
    pub present: bool,
}

/// DFT vibrato analysis of one note's F0 (Hz per frame, 0 = unvoiced).
///
/// Returns `None` for notes that are too short or mostly unvoiced. Unvoiced
/// frames inside the note are filled by linear interpolation before the
/// contour is converted to cents about its median and mean-removed.
pub fn vibrato_value(f0_hz: &[f64], frame_rate: f64, note: usize, cfg: &VibratoConfig) -> Option<VibratoLabel> {
    let n = f0_hz.len();
    if (n as f64) / frame_rate + 1e-9 < cfg.min_duration_s {
        return None;
    }
    let voiced: Vec<usize> = (0..n).filter(|&i| f0_hz[i] > 0.0 && f0_hz[i].is_finite()).collect();
    if voiced.len() < 2 || (voiced.len() as f64) < cfg.min_voiced_fraction * n as f64 {
        return None;
    }
    let mut sorted: Vec<f64> = voiced.iter().map(|&i| f0_hz[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let cents_at = |i: usize| 1200.0 * (f0_hz[i] / median).log2();
    let mut cents = vec![0.0; n];
    for (i, c) in cents.iter_mut().enumerate() {
        let next = voiced.partition_point(|&v| v < i);
        *c = if next < voiced.len() && voiced[next] == i {
            cents_at(i)
        } else if next == 0 {
            cents_at(voiced[0])
        } else if next == voiced.len() {
            cents_at(voiced[voiced.len() - 1])
        } else {
            let (a, b) = (voiced[next - 1], voiced[next]);
            let w = (i - a) as f64 / (b - a) as f64;
            (1.0 - w) * cents_at(a) + w * cents_at(b)
        };
    }
    let mean = cents.iter().sum::<f64>() / n as f64;
    for c in &mut cents {
        *c -= mean;
    }

    let window: Vec<f64> = if cfg.hann {
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos()).collect()
    } else {
        vec![1.0; n]
    };
    let wsum: f64 = window.iter().sum();
    let steps = ((cfg.search_max_hz - cfg.search_min_hz) / cfg.resolution_hz).round() as usize;
    let (mut best_f, mut best_a) = (cfg.search_min_hz, -1.0);
    for k in 0..=steps {
        let f = cfg.search_min_hz + k as f64 * cfg.resolution_hz;
        let w = 2.0 * PI * f / frame_rate;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (&c, &h)) in cents.iter().zip(&window).enumerate() {
            re += h * c * (w * i as f64).cos();
            im -= h * c * (w * i as f64).sin();
        }
        let amp = 2.0 * (re * re + im * im).sqrt() / wsum;
        if amp > best_a {
            best_a = amp;
            best_f = f;
        }
    }
    let in_band = (cfg.rate_min_hz..=cfg.rate_max_hz).contains(&best_f);
    Some(VibratoLabel {
        note,
        rate_hz: best_f,
        extent_cents: 2.0 * best_a,
        present: in_band && best_a >= cfg.theta_cents,
    })
}

fn f1(pairs: &[(bool, bool)]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(g, p) in pairs {
        match (g, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            _ => {}
        }
    }
    if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

/// One note's decision in ground truth and in the model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPair {
    pub piece: String,
    pub gt: bool,
    pub pred: bool,
}

/// Macro F1 over pieces with vibrato presence as the positive class.
pub fn vibrato_f1(pairs: &[LabelPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("vibrato F1 needs at least one note".into()));
    }
    let mut by_piece: BTreeMap<&str, Vec<(bool, bool)>> = BTreeMap::new();
    for p in pairs {
        by_piece.entry(&p.piece).or_default().push((p.gt, p.pred));
    }
    Ok(by_piece.values().map(|v| f1(v)).sum::<f64>() / by_piece.len() as f64)
}

/// Decisions of every performer on one shared score note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedNote {
    pub gt: Vec<bool>,
    pub pred: Vec<bool>,
}

/// Mean absolute difference of the fraction of performers playing vibrato.
pub fn perf_mae(notes: &[SharedNote]) -> Result<f64> {
    if notes.is_empty() {
        return Err(Error::InvalidInput("Perf-MAE needs at least one shared note".into()));
    }
    let mut total = 0.0;
    for n in notes {
        if n.gt.len() < 2 || n.gt.len() != n.pred.len() {
            return Err(Error::InvalidInput(format!(
                "Perf-MAE needs at least 2 aligned performers, got {} and {}",
                n.gt.len(),
                n.pred.len()
            )));
        }
        let ratio = |v: &[bool]| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
        total += (ratio(&n.gt) - ratio(&n.pred)).abs();
    }
    Ok(total / notes.len() as f64)
}
