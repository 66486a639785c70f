//! Synthetic violin-like corpus with exact per-note ground truth.
//!
//! Every piece is a random monophonic line with occasional double stops. Each
//! performer renders every piece with their own vibrato habits, portamento,
//! tuning, tempo and timbre. Pitch deviations are written as pitch-bend events
//! every 5 ms, and audio comes from additive synthesis of the same contour.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::{read_wav_file, write_wav_file, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::midi_io::{parse_smf, write_smf, BendEvent, NoteEvent, Performance};

/// Bend range assumed by the generator, in semitones.
pub const BEND_RANGE_SEMITONES: f64 = 2.0;
/// Spacing of generated bend events.
pub const BEND_INTERVAL_S: f64 = 0.005;
/// Silence appended after the last note offset.
pub const RELEASE_TAIL_S: f64 = 0.1;
const RAMP_S: f64 = 0.01;
const N_HARMONICS: usize = 12;
const PEAK: f64 = 0.9;
/// Notes shorter than this never get vibrato.
const MIN_VIBRATO_NOTE_S: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformerProfile {
    pub id: String,
    pub vibrato_prob: f64,
    pub vibrato_rate_hz: (f64, f64),
    /// Peak-to-peak extent, mean and standard deviation.
    pub vibrato_extent_cents: (f64, f64),
    pub portamento_prob: f64,
    pub tuning_offset_cents: f64,
    pub harmonic_rolloff: f64,
    pub room_noise_db: f64,
    pub tempo_scale: f64,
}

impl PerformerProfile {
    /// Bounds applied to sampled vibrato parameters.
    pub const RATE_RANGE: (f64, f64) = (3.5, 8.5);
    pub const EXTENT_RANGE: (f64, f64) = (30.0, 120.0);

    pub fn random<R: Rng>(id: impl Into<String>, rng: &mut R) -> Self {
        PerformerProfile {
            id: id.into(),
            vibrato_prob: rng.random_range(0.2..0.9),
            vibrato_rate_hz: (rng.random_range(4.5..7.5), rng.random_range(0.2..0.6)),
            vibrato_extent_cents: (rng.random_range(40.0..90.0), rng.random_range(5.0..15.0)),
            portamento_prob: rng.random_range(0.0..0.4),
            tuning_offset_cents: rng.random_range(-8.0..8.0),
            harmonic_rolloff: rng.random_range(0.8..1.8),
            room_noise_db: rng.random_range(-70.0..-55.0),
            tempo_scale: rng.random_range(0.95..1.05),
        }
    }
}

fn truncated<R: Rng>(rng: &mut R, (mean, std): (f64, f64), (lo, hi): (f64, f64)) -> f64 {
    let n = Normal::new(mean, std.max(1e-12)).expect("finite");
    for _ in 0..64 {
        let v = n.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

/// Generator-side vibrato of one note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VibratoTruth {
    pub present: bool,
    pub rate_hz: f64,
    /// Peak-to-peak extent in cents (0 when absent).
    pub extent_cents: f64,
    pub phase: f64,
}

/// Ground truth of one note in one rendition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteAnnotation {
    /// Position in the piece's score, shared by all performers.
    pub score_index: usize,
    pub pitch: u8,
    pub onset_s: f64,
    pub offset_s: f64,
    /// Part of a double stop.
    pub polyphonic: bool,
    pub vibrato: VibratoTruth,
    pub tuning_cents: f64,
    /// Initial glide offset in cents, decaying linearly to 0.
    pub glide_cents: f64,
    pub glide_s: f64,
}

impl NoteAnnotation {
    /// Continuous pitch deviation from the nominal pitch, in cents.
    pub fn cents_at(&self, t: f64) -> f64 {
        let dt = t - self.onset_s;
        let mut c = self.tuning_cents;
        if self.glide_s > 0.0 && dt < self.glide_s {
            c += self.glide_cents * (1.0 - dt / self.glide_s);
        }
        if self.vibrato.present {
            c += 0.5 * self.vibrato.extent_cents * (2.0 * PI * self.vibrato.rate_hz * dt + self.vibrato.phase).sin();
        }
        c
    }

    pub fn f0_at(&self, t: f64) -> f64 {
        440.0 * 2f64.powf((self.pitch as f64 - 69.0 + self.cents_at(t) / 100.0) / 12.0)
    }
}

/// A score note before performer interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNote {
    pub pitch: u8,
    pub onset_s: f64,
    pub offset_s: f64,
    pub polyphonic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub id: String,
    pub notes: Vec<ScoreNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_pieces: usize,
    pub n_performers: usize,
    pub piece_duration_s: f64,
    pub double_stop_rate: f64,
    pub min_pitch: u8,
    pub max_pitch: u8,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_pieces: 6,
            n_performers: 4,
            piece_duration_s: 6.0,
            double_stop_rate: 0.1,
            min_pitch: 55,
            max_pitch: 108,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pieces == 0 || self.n_performers == 0 {
            return Err(Error::Config("corpus needs at least one piece and one performer".into()));
        }
        if !(self.piece_duration_s > 0.0) || !(0.0..=1.0).contains(&self.double_stop_rate) {
            return Err(Error::Config("invalid piece duration or double-stop rate".into()));
        }
        if !(55..=108).contains(&self.min_pitch) || self.max_pitch > 108 || self.min_pitch + 12 > self.max_pitch {
            return Err(Error::Config("pitch range must lie in 55..=108 and span an octave".into()));
        }
        Ok(())
    }
}

/// Random monophonic line with occasional double stops.
pub fn gen_piece<R: Rng>(id: impl Into<String>, cfg: &CorpusConfig, rng: &mut R) -> Piece {
    let mut notes = Vec::new();
    let mut t = 0.05;
    let mut pitch = rng.random_range(cfg.min_pitch + 5..=cfg.max_pitch - 7) as i32;
    while t < cfg.piece_duration_s {
        let dur = rng.random_range(0.1..1.5);
        let on = t;
        let off = t + dur;
        let double = rng.random_bool(cfg.double_stop_rate);
        notes.push(ScoreNote {
            pitch: pitch as u8,
            onset_s: on,
            offset_s: off,
            polyphonic: double,
        });
        if double {
            let upper = (pitch + rng.random_range(3..=9)).min(cfg.max_pitch as i32);
            if upper != pitch {
                notes.push(ScoreNote {
                    pitch: upper as u8,
                    onset_s: on,
                    offset_s: off,
                    polyphonic: true,
                });
            } else {
                notes.last_mut().expect("just pushed").polyphonic = false;
            }
        }
        t = off + rng.random_range(0.02..0.08);
        pitch = (pitch + rng.random_range(-5..=5)).clamp(cfg.min_pitch as i32, cfg.max_pitch as i32 - 9);
    }
    notes.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.pitch.cmp(&b.pitch)));
    Piece { id: id.into(), notes }
}

/// Performance and ground truth for one (piece, performer) pair.
pub fn perform<R: Rng>(piece: &Piece, profile: &PerformerProfile, rng: &mut R) -> (Performance, Vec<NoteAnnotation>) {
    let mut perf = Performance::new(profile.id.clone(), piece.id.clone());
    let mut anns = Vec::with_capacity(piece.notes.len());
    let mut prev_pitch: Option<u8> = None;
    for (i, sn) in piece.notes.iter().enumerate() {
        let onset = sn.onset_s * profile.tempo_scale;
        let offset = sn.offset_s * profile.tempo_scale;
        let long = offset - onset >= MIN_VIBRATO_NOTE_S;
        let vib_on = rng.random_bool(profile.vibrato_prob);
        let rate = truncated(rng, profile.vibrato_rate_hz, PerformerProfile::RATE_RANGE);
        let extent = truncated(rng, profile.vibrato_extent_cents, PerformerProfile::EXTENT_RANGE);
        let phase = rng.random_range(0.0..2.0 * PI);
        let vibrato = VibratoTruth {
            present: long && vib_on,
            rate_hz: if long && vib_on { rate } else { 0.0 },
            extent_cents: if long && vib_on { extent } else { 0.0 },
            phase,
        };
        let glide = rng.random_bool(profile.portamento_prob);
        let glide_cents = match prev_pitch {
            Some(p) if glide && !sn.polyphonic => ((p as f64 - sn.pitch as f64) * 100.0).clamp(-40.0, 40.0),
            _ => 0.0,
        };
        let ann = NoteAnnotation {
            score_index: i,
            pitch: sn.pitch,
            onset_s: onset,
            offset_s: offset,
            polyphonic: sn.polyphonic,
            vibrato,
            tuning_cents: profile.tuning_offset_cents,
            glide_cents,
            glide_s: if glide_cents != 0.0 { 0.04 } else { 0.0 },
        };
        let mut note = NoteEvent::new(sn.pitch, onset, offset);
        note.velocity = rng.random_range(60..=100);
        let n_bends = ((offset - onset) / BEND_INTERVAL_S).ceil() as usize;
        note.bends = (0..n_bends.max(1))
            .map(|k| {
                let t = onset + k as f64 * BEND_INTERVAL_S;
                BendEvent {
                    time_s: t,
                    value: (ann.cents_at(t) / (100.0 * BEND_RANGE_SEMITONES)).clamp(-1.0, 1.0),
                }
            })
            .collect();
        if !sn.polyphonic {
            prev_pitch = Some(sn.pitch);
        }
        perf.notes.push(note);
        anns.push(ann);
    }
    (perf, anns)
}

/// Additive rendering: 12 harmonics with amplitude `h^-rolloff`, 10 ms
/// ramps, a bow-noise floor, and peak normalization to 0.9. The instantaneous
/// frequency follows each note's bend events.
pub fn render_audio<R: Rng>(p: &Performance, profile: &PerformerProfile, rng: &mut R) -> AudioClip {
    let sr = SAMPLE_RATE as f64;
    let len = ((p.end_time() + RELEASE_TAIL_S) * sr).ceil() as usize;
    let mut out = vec![0.0; len];
    if p.notes.is_empty() {
        return AudioClip::new(out, SAMPLE_RATE);
    }
    let amps: Vec<f64> = (1..=N_HARMONICS)
        .map(|h| (h as f64).powf(-profile.harmonic_rolloff))
        .collect();
    for note in &p.notes {
        let start = (note.onset_s * sr).round() as usize;
        let stop = (((note.offset_s + RAMP_S) * sr).round() as usize).min(len);
        let gain = note.velocity as f64 / 127.0;
        let mut phase = 0.0;
        let mut bend_idx = 0;
        for (i, o) in out.iter_mut().enumerate().take(stop).skip(start) {
            let t = i as f64 / sr;
            while bend_idx + 1 < note.bends.len() && note.bends[bend_idx + 1].time_s <= t {
                bend_idx += 1;
            }
            let bend = note.bends.get(bend_idx).map_or(0.0, |b| b.value);
            let f0 = 440.0 * 2f64.powf((note.pitch as f64 + bend * BEND_RANGE_SEMITONES - 69.0) / 12.0);
            phase += 2.0 * PI * f0 / sr;
            if phase > 2.0 * PI * 1e6 {
                phase %= 2.0 * PI;
            }
            let env = ((t - note.onset_s) / RAMP_S).clamp(0.0, 1.0) * ((note.offset_s + RAMP_S - t) / RAMP_S).clamp(0.0, 1.0);
            let mut v = 0.0;
            for (h, a) in amps.iter().enumerate() {
                let fh = f0 * (h + 1) as f64;
                if fh >= sr / 2.0 {
                    break;
                }
                v += a * ((h + 1) as f64 * phase).sin();
            }
            *o += gain * env * v;
        }
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let floor = 10f64.powf(profile.room_noise_db / 20.0);
    for v in &mut out {
        *v = *v / peak * PEAK + floor * noise.sample(rng);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for v in &mut out {
        *v *= PEAK / peak;
    }
    AudioClip::new(out, SAMPLE_RATE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub piece_id: String,
    pub performer_index: usize,
    pub performance: Performance,
    pub audio: AudioClip,
    pub notes: Vec<NoteAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub profiles: Vec<PerformerProfile>,
    pub pieces: Vec<Piece>,
    pub items: Vec<CorpusItem>,
}

pub fn performer_id(i: usize) -> String {
    format!("performer{i:02}")
}

pub fn piece_id(i: usize) -> String {
    format!("piece{i:02}")
}

/// Every piece rendered by every performer, deterministic in `cfg.seed`.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles: Vec<PerformerProfile> = (0..cfg.n_performers)
        .map(|i| PerformerProfile::random(performer_id(i), &mut rng))
        .collect();
    let pieces: Vec<Piece> = (0..cfg.n_pieces).map(|i| gen_piece(piece_id(i), cfg, &mut rng)).collect();
    let mut items = Vec::with_capacity(cfg.n_pieces * cfg.n_performers);
    for (pi, piece) in pieces.iter().enumerate() {
        for (k, profile) in profiles.iter().enumerate() {
            let mut item_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((pi as u64) << 32 | k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (performance, notes) = perform(piece, profile, &mut item_rng);
            let audio = render_audio(&performance, profile, &mut item_rng);
            items.push(CorpusItem {
                piece_id: piece.id.clone(),
                performer_index: k,
                performance,
                audio,
                notes,
            });
        }
    }
    Ok(Corpus { profiles, pieces, items })
}

/// Manifest entry for one rendition on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub piece: String,
    pub performer: String,
    pub performer_index: usize,
    pub midi: String,
    pub wav: String,
    pub notes: Vec<NoteAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: u32,
    pub bend_range_semitones: f64,
    pub performers: Vec<PerformerProfile>,
    pub items: Vec<ManifestItem>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn performer_ids(&self) -> Vec<String> {
        self.performers.iter().map(|p| p.id.clone()).collect()
    }
}

/// Writes `<piece>_<performer>.mid` / `.wav` per item plus `manifest.json`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut items = Vec::with_capacity(corpus.items.len());
    for it in &corpus.items {
        let performer = corpus.profiles[it.performer_index].id.clone();
        let stem = format!("{}_{}", it.piece_id, performer);
        let midi = format!("{stem}.mid");
        let wav = format!("{stem}.wav");
        fs::write(dir.join(&midi), write_smf(&it.performance)?)?;
        write_wav_file(&dir.join(&wav), &it.audio)?;
        items.push(ManifestItem {
            piece: it.piece_id.clone(),
            performer,
            performer_index: it.performer_index,
            midi,
            wav,
            notes: it.notes.clone(),
        });
    }
    let manifest = Manifest {
        sample_rate: SAMPLE_RATE,
        bend_range_semitones: BEND_RANGE_SEMITONES,
        performers: corpus.profiles.clone(),
        items,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// A rendition loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub meta: ManifestItem,
    pub performance: Performance,
    pub audio: AudioClip,
}

pub fn load_item(dir: &Path, meta: &ManifestItem) -> Result<LoadedItem> {
    let performance = parse_smf(&fs::read(dir.join(&meta.midi))?)?;
    let audio = read_wav_file(&dir.join(&meta.wav))?;
    Ok(LoadedItem {
        meta: meta.clone(),
        performance,
        audio,
    })
}

pub fn item_path(dir: &Path, file: &str) -> PathBuf {
    dir.join(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{vibrato_value, VibratoConfig};
    use crate::roll_codec::{encode_rolls, note_f0, FrameGrid};

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_pieces: 2,
            n_performers: 2,
            piece_duration_s: 3.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(gen_corpus(&small()).unwrap(), gen_corpus(&small()).unwrap());
        let other = CorpusConfig { seed: 1, ..small() };
        assert_ne!(gen_corpus(&small()).unwrap(), gen_corpus(&other).unwrap());
    }

    #[test]
    fn audio_length_matches_last_offset() {
        for it in gen_corpus(&small()).unwrap().items {
            let expect = it.performance.end_time() + RELEASE_TAIL_S;
            assert!((it.audio.duration() - expect).abs() <= 0.02);
            let peak = it.audio.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_performance_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prof = PerformerProfile::random("x", &mut rng);
        let a = render_audio(&Performance::default(), &prof, &mut rng);
        assert!(a.samples.iter().all(|&v| v == 0.0));
    }

    fn spectrum_peak_near(a: &AudioClip, hz: f64) -> f64 {
        // single-bin DFT magnitude relative to neighbours
        let n = a.samples.len();
        let mag = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in a.samples.iter().enumerate() {
                let w = 2.0 * PI * f * i as f64 / 16_000.0;
                re += x * w.cos();
                im += x * w.sin();
            }
            (re * re + im * im).sqrt() / n as f64
        };
        mag(hz) / (mag(hz * 1.06) + 1e-12)
    }

    #[test]
    fn flat_note_and_double_stop_fundamentals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut prof = PerformerProfile::random("x", &mut rng);
        prof.tuning_offset_cents = 0.0;
        let mut p = Performance::new("x", "y");
        let mut a4 = NoteEvent::new(69, 0.0, 0.5);
        a4.bends = vec![BendEvent { time_s: 0.0, value: 0.0 }];
        p.notes.push(a4);
        let audio = render_audio(&p, &prof, &mut rng);
        assert!(spectrum_peak_near(&audio, 440.0) > 20.0);

        let mut e5 = NoteEvent::new(76, 0.0, 0.5);
        e5.channel = 1;
        p.notes.push(e5);
        let audio = render_audio(&p, &prof, &mut rng);
        assert!(spectrum_peak_near(&audio, 440.0) > 10.0);
        assert!(spectrum_peak_near(&audio, 659.26) > 10.0);
    }

    #[test]
    fn generated_vibrato_labels_are_recoverable() {
        let corpus = gen_corpus(&CorpusConfig {
            n_pieces: 4,
            n_performers: 3,
            ..CorpusConfig::default()
        })
        .unwrap();
        let cfg = VibratoConfig::default();
        let (mut agree, mut total) = (0, 0);
        for it in &corpus.items {
            let grid = FrameGrid::for_duration(it.audio.duration(), 16_000, 320);
            let rolls = encode_rolls(&it.performance, grid);
            for (note, ann) in it.performance.notes.iter().zip(&it.notes) {
                let f0 = note_f0(&rolls, note, BEND_RANGE_SEMITONES);
                if let Some(l) = vibrato_value(&f0, 50.0, ann.score_index, &cfg) {
                    total += 1;
                    agree += (l.present == ann.vibrato.present) as usize;
                }
            }
        }
        assert!(total > 50);
        assert!(agree as f64 >= 0.98 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn vibrato_usage_tracks_profile() {
        let cfg = CorpusConfig {
            piece_duration_s: 1000.0,
            ..CorpusConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let piece = gen_piece("p", &cfg, &mut rng);
        for k in 0..3 {
            let prof = PerformerProfile::random(performer_id(k), &mut rng);
            let (_, anns) = perform(&piece, &prof, &mut rng);
            let eligible: Vec<_> = anns.iter().filter(|a| a.offset_s - a.onset_s >= MIN_VIBRATO_NOTE_S).collect();
            assert!(eligible.len() >= 500);
            let used = eligible.iter().filter(|a| a.vibrato.present).count() as f64 / eligible.len() as f64;
            assert!((used - prof.vibrato_prob).abs() <= 0.05, "{used} vs {}", prof.vibrato_prob);
            for a in eligible.iter().filter(|a| a.vibrato.present) {
                assert!((3.0..=9.0).contains(&a.vibrato.rate_hz));
            }
        }
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let corpus = gen_corpus(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), manifest);
        let loaded = load_item(dir.path(), &manifest.items[0]).unwrap();
        assert_eq!(loaded.performance.notes.len(), corpus.items[0].performance.notes.len());
        assert_eq!(loaded.audio.samples.len(), corpus.items[0].audio.samples.len());
    }
}
