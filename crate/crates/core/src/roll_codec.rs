//! Frame-aligned piano-roll encodings of a [`Performance`], including the
//! duration-weighted bend roll, and the inverse mapping from a bend roll back
//! to per-note F0 contours.

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::midi_io::{BendEvent, NoteEvent, Performance};

pub const LOWEST_PITCH: u8 = 55;
pub const HIGHEST_PITCH: u8 = 108;
pub const N_PITCHES: usize = (HIGHEST_PITCH - LOWEST_PITCH + 1) as usize;

// guards floor/ceil against representation error, e.g. 0.1 / 0.02
const TIME_EPS: f64 = 1e-9;
const BEND_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub sample_rate: u32,
    pub hop: usize,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn new(sample_rate: u32, hop: usize, n_frames: usize) -> Self {
        assert!(hop > 0, "hop must be positive");
        FrameGrid {
            sample_rate,
            hop,
            n_frames,
        }
    }

    /// Grid at 16 kHz / hop 320 covering `duration_s`, `ceil(samples / hop)` frames.
    pub fn for_duration(duration_s: f64, sample_rate: u32, hop: usize) -> Self {
        let samples = (duration_s * sample_rate as f64).round() as usize;
        FrameGrid::new(sample_rate, hop, samples.div_ceil(hop))
    }

    pub fn frame_len(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn frame_span(&self, k: usize) -> (f64, f64) {
        let fl = self.frame_len();
        (k as f64 * fl, (k + 1) as f64 * fl)
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 * self.frame_len()
    }

    /// Index of the frame containing `t` (may lie past the grid).
    pub fn frame_of(&self, t: f64) -> usize {
        ((t / self.frame_len()) + TIME_EPS).floor().max(0.0) as usize
    }

    /// Half-open frame range overlapping `[onset, offset)`, clipped to the grid.
    /// Never empty for a note starting inside the grid.
    pub fn frames_overlapping(&self, onset: f64, offset: f64) -> std::ops::Range<usize> {
        let start = self.frame_of(onset);
        let end = ((offset / self.frame_len()) - TIME_EPS).ceil().max(0.0) as usize;
        let end = end.max(start + 1).min(self.n_frames);
        start.min(self.n_frames)..end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollSet {
    pub frame: Array2<f64>,
    pub onset: Array2<f64>,
    pub offset: Array2<f64>,
    pub bend: Array2<f64>,
    pub grid: FrameGrid,
}

impl RollSet {
    pub fn zeros(grid: FrameGrid) -> Self {
        let z = Array2::zeros((N_PITCHES, grid.n_frames));
        RollSet {
            frame: z.clone(),
            onset: z.clone(),
            offset: z.clone(),
            bend: z,
            grid,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.grid.n_frames
    }

    /// Copy of frames `[start, start + len)`, zero-padded past the end.
    pub fn crop(&self, start: usize, len: usize) -> RollSet {
        let mut out = RollSet::zeros(FrameGrid { n_frames: len, ..self.grid });
        let avail = self.n_frames().saturating_sub(start).min(len);
        if avail == 0 {
            return out;
        }
        for (dst, src) in [
            (&mut out.frame, &self.frame),
            (&mut out.onset, &self.onset),
            (&mut out.offset, &self.offset),
            (&mut out.bend, &self.bend),
        ] {
            dst.slice_mut(ndarray::s![.., ..avail])
                .assign(&src.slice(ndarray::s![.., start..start + avail]));
        }
        out
    }
}

/// Row of `pitch` in a roll, or `None` outside the 55..=108 range.
pub fn pitch_row(pitch: u8) -> Option<usize> {
    (LOWEST_PITCH..=HIGHEST_PITCH)
        .contains(&pitch)
        .then(|| (pitch - LOWEST_PITCH) as usize)
}

/// Duration-weighted mean of a bend step function over `frame ∩ note`.
///
/// Each event's value holds until the next event; before the first event the
/// bend is zero. Returns 0 when the intersection is empty.
pub fn frame_bend(events: &[BendEvent], note: (f64, f64), frame: (f64, f64)) -> f64 {
    let lo = note.0.max(frame.0);
    let hi = note.1.min(frame.1);
    if hi <= lo {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut value = 0.0;
    let mut t = lo;
    for ev in events {
        if ev.time_s <= lo {
            value = ev.value;
            continue;
        }
        if ev.time_s >= hi {
            break;
        }
        acc += value * (ev.time_s - t);
        t = ev.time_s;
        value = ev.value;
    }
    acc += value * (hi - t);
    acc / (hi - lo)
}

/// Encodes frame/onset/offset/bend rolls. Out-of-range or out-of-grid notes are
/// dropped with a warning.
pub fn encode_rolls(p: &Performance, grid: FrameGrid) -> RollSet {
    let mut rolls = RollSet::zeros(grid);
    let mut notes: Vec<&NoteEvent> = p.notes.iter().collect();
    // later onsets overwrite shared frames of equal-pitch overlaps
    notes.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for n in notes {
        let Some(row) = pitch_row(n.pitch) else {
            warn!("dropping note with pitch {} outside {LOWEST_PITCH}..={HIGHEST_PITCH}", n.pitch);
            continue;
        };
        if n.offset_s <= 0.0 || n.onset_s >= grid.duration() {
            warn!("dropping note at {:.3}s outside the frame grid", n.onset_s);
            continue;
        }
        let frames = grid.frames_overlapping(n.onset_s.max(0.0), n.offset_s);
        if frames.is_empty() {
            continue;
        }
        rolls.onset[[row, frames.start]] = 1.0;
        let off = grid.frame_of(n.offset_s);
        if off < grid.n_frames {
            rolls.offset[[row, off]] = 1.0;
        }
        for k in frames {
            rolls.frame[[row, k]] = 1.0;
            let b = frame_bend(&n.bends, (n.onset_s, n.offset_s), grid.frame_span(k));
            rolls.bend[[row, k]] = b.clamp(-BEND_LIMIT, BEND_LIMIT);
        }
    }
    rolls
}

/// F0 in Hz of `pitch` deflected by `bend` (in [-1, 1]) over a ±`range` semitone bend range.
pub fn bend_to_hz(pitch: f64, bend: f64, bend_range_semitones: f64) -> f64 {
    440.0 * 2f64.powf((pitch + bend * bend_range_semitones - 69.0) / 12.0)
}

/// One decoded note of a frame-roll row.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedNote {
    pub pitch: u8,
    pub start_frame: usize,
    pub f0_hz: Vec<f64>,
}

/// Decodes the frame roll into notes: contiguous active runs, split where the
/// onset roll marks a new note inside a run.
pub fn decode_f0(rolls: &RollSet, bend_range_semitones: f64) -> Vec<DecodedNote> {
    let mut out = Vec::new();
    for row in 0..N_PITCHES {
        let pitch = LOWEST_PITCH + row as u8;
        let mut t = 0;
        while t < rolls.n_frames() {
            if rolls.frame[[row, t]] < 0.5 {
                t += 1;
                continue;
            }
            let start = t;
            let mut f0 = Vec::new();
            while t < rolls.n_frames() && rolls.frame[[row, t]] >= 0.5 && (t == start || rolls.onset[[row, t]] < 0.5) {
                f0.push(bend_to_hz(pitch as f64, rolls.bend[[row, t]], bend_range_semitones));
                t += 1;
            }
            out.push(DecodedNote {
                pitch,
                start_frame: start,
                f0_hz: f0,
            });
        }
    }
    out.sort_by_key(|d| (d.start_frame, d.pitch));
    out
}

/// F0 contour of one known note read off the bend roll over its frame span.
pub fn note_f0(rolls: &RollSet, note: &NoteEvent, bend_range_semitones: f64) -> Vec<f64> {
    let Some(row) = pitch_row(note.pitch) else {
        return Vec::new();
    };
    rolls
        .grid
        .frames_overlapping(note.onset_s, note.offset_s)
        .map(|k| bend_to_hz(note.pitch as f64, rolls.bend[[row, k]], bend_range_semitones))
        .collect()
}
