//! Standard MIDI File reading and writing.
//!
//! Pitch bend in SMF is a channel-wide message, so per-note bend curves only
//! survive a round-trip when every concurrently sounding voice owns its own
//! channel. [`write_smf`] allocates channels that way and [`parse_smf`]
//! attaches each channel's bends to the note sounding on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TICKS_PER_QUARTER: u16 = 960;
pub const DEFAULT_TEMPO_US: u32 = 500_000;
const MAX_CHANNELS: usize = 16;

/// One pitch-bend sample, value in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendEvent {
    pub time_s: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_s: f64,
    pub offset_s: f64,
    pub velocity: u8,
    pub channel: u8,
    /// Step function of bend values, strictly time-ordered, first event at `onset_s`.
    #[serde(default)]
    pub bends: Vec<BendEvent>,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset_s: f64, offset_s: f64) -> Self {
        NoteEvent {
            pitch,
            onset_s,
            offset_s,
            velocity: 80,
            channel: 0,
            bends: Vec::new(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    /// Bend value in effect at time `t` (hold-until-next semantics).
    pub fn bend_at(&self, t: f64) -> f64 {
        let idx = self.bends.partition_point(|b| b.time_s <= t);
        if idx == 0 {
            0.0
        } else {
            self.bends[idx - 1].value
        }
    }
}

/// Tempo change at an absolute tick, in microseconds per quarter note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoChange {
    pub tick: u64,
    pub us_per_quarter: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempoMap {
    pub ticks_per_quarter: u16,
    pub changes: Vec<TempoChange>,
}

impl Default for TempoMap {
    fn default() -> Self {
        TempoMap {
            ticks_per_quarter: DEFAULT_TICKS_PER_QUARTER,
            changes: vec![TempoChange {
                tick: 0,
                us_per_quarter: DEFAULT_TEMPO_US,
            }],
        }
    }
}

impl TempoMap {
    // (start tick, start seconds, seconds per tick) for every segment
    fn segments(&self) -> Vec<(u64, f64, f64)> {
        let tpq = self.ticks_per_quarter as f64;
        let mut out = Vec::new();
        let mut tick = 0u64;
        let mut sec = 0.0;
        let mut spt = DEFAULT_TEMPO_US as f64 * 1e-6 / tpq;
        for c in &self.changes {
            if c.tick > tick {
                sec += (c.tick - tick) as f64 * spt;
                tick = c.tick;
            }
            spt = c.us_per_quarter as f64 * 1e-6 / tpq;
            if out.last().is_some_and(|s: &(u64, f64, f64)| s.0 == tick) {
                out.pop();
            }
            out.push((tick, sec, spt));
        }
        if out.first().is_none_or(|s| s.0 != 0) {
            out.insert(0, (0, 0.0, DEFAULT_TEMPO_US as f64 * 1e-6 / tpq));
        }
        out
    }

    pub fn tick_to_sec(&self, tick: u64) -> f64 {
        let segs = self.segments();
        let i = segs.partition_point(|s| s.0 <= tick) - 1;
        let (t0, s0, spt) = segs[i];
        s0 + (tick - t0) as f64 * spt
    }

    pub fn sec_to_tick(&self, sec: f64) -> u64 {
        let sec = sec.max(0.0);
        let segs = self.segments();
        let i = segs.partition_point(|s| s.1 <= sec).max(1) - 1;
        let (t0, s0, spt) = segs[i];
        t0 + ((sec - s0) / spt).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseWarning {
    /// Note-on without a matching note-off; closed at the end of its track.
    DanglingNote { channel: u8, pitch: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub performer_id: String,
    pub piece_id: String,
    /// Sorted by onset.
    pub notes: Vec<NoteEvent>,
    pub tempo: TempoMap,
    #[serde(skip)]
    pub warnings: Vec<ParseWarning>,
}

impl Default for Performance {
    fn default() -> Self {
        Performance {
            performer_id: String::new(),
            piece_id: String::new(),
            notes: Vec::new(),
            tempo: TempoMap::default(),
            warnings: Vec::new(),
        }
    }
}

impl Performance {
    pub fn new(performer_id: impl Into<String>, piece_id: impl Into<String>) -> Self {
        Performance {
            performer_id: performer_id.into(),
            piece_id: piece_id.into(),
            ..Default::default()
        }
    }

    pub fn end_time(&self) -> f64 {
        self.notes.iter().map(|n| n.offset_s).fold(0.0, f64::max)
    }

    pub fn sort_notes(&mut self) {
        self.notes.sort_by(|a, b| {
            a.onset_s
                .total_cmp(&b.onset_s)
                .then(a.pitch.cmp(&b.pitch))
                .then(a.channel.cmp(&b.channel))
        });
    }
}

/// Maps a raw 14-bit bend value to [-1, 1].
pub fn bend_from_raw(raw: u16) -> f64 {
    (raw as f64 - 8192.0) / 8192.0
}

/// Maps a bend value in [-1, 1] to the raw 14-bit range, saturating at the ends.
pub fn bend_to_raw(value: f64) -> u16 {
    (value.clamp(-1.0, 1.0) * 8192.0 + 8192.0).round().clamp(0.0, 16383.0) as u16
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.pos, "unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::parse(start, "variable-length quantity longer than 4 bytes"))
    }
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    NoteOn { pitch: u8, velocity: u8 },
    NoteOff { pitch: u8 },
    Bend(u16),
    Tempo(u32),
    TrackEnd,
}

#[derive(Debug, Clone, Copy)]
struct RawEvent {
    tick: u64,
    track: usize,
    seq: usize,
    channel: u8,
    kind: RawKind,
}

/// Parses an SMF (format 0 or 1) into a [`Performance`].
pub fn parse_smf(bytes: &[u8]) -> Result<Performance> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        return Err(Error::parse(0, "missing MThd header"));
    }
    let hlen = r.u32()? as usize;
    if hlen < 6 {
        return Err(Error::parse(4, "header chunk shorter than 6 bytes"));
    }
    let hstart = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division = r.u16()?;
    if format > 1 {
        return Err(Error::parse(hstart, format!("unsupported SMF format {format}")));
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(Error::parse(hstart + 4, "SMPTE or zero time division unsupported"));
    }
    r.pos = hstart + hlen;

    let mut events = Vec::new();
    let mut texts = Vec::new();
    let mut seq = 0usize;
    for track in 0..ntracks as usize {
        let chunk_at = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if id != b"MTrk" {
            // unknown chunks are skipped per SMF rules
            if r.pos + len > bytes.len() {
                return Err(Error::parse(chunk_at, "chunk length exceeds file"));
            }
            r.pos += len;
            continue;
        }
        let end = r.pos + len;
        if end > bytes.len() {
            return Err(Error::parse(chunk_at, "track length exceeds file"));
        }
        let mut tick = 0u64;
        let mut running: Option<u8> = None;
        while r.pos < end {
            tick += r.vlq()? as u64;
            let at = r.pos;
            let mut status = r.u8()?;
            let first_data;
            if status < 0x80 {
                first_data = Some(status);
                status = running.ok_or_else(|| Error::parse(at, "data byte without running status"))?;
            } else {
                first_data = None;
            }
            match status {
                0xff => {
                    let ty = r.u8()?;
                    let len = r.vlq()? as usize;
                    let payload = r.take(len)?;
                    match ty {
                        0x51 if len == 3 => {
                            let us = u32::from_be_bytes([0, payload[0], payload[1], payload[2]]);
                            events.push(RawEvent { tick, track, seq, channel: 0, kind: RawKind::Tempo(us) });
                        }
                        0x01 => texts.push(String::from_utf8_lossy(payload).into_owned()),
                        0x2f => {
                            events.push(RawEvent { tick, track, seq, channel: 0, kind: RawKind::TrackEnd });
                        }
                        _ => {}
                    }
                    seq += 1;
                    running = None;
                }
                0xf0 | 0xf7 => {
                    let len = r.vlq()? as usize;
                    r.take(len)?;
                    running = None;
                }
                0x80..=0xef => {
                    running = Some(status);
                    let channel = status & 0x0f;
                    let d1 = match first_data {
                        Some(b) => b,
                        None => r.u8()?,
                    };
                    let kind = match status & 0xf0 {
                        0xc0 | 0xd0 => None,
                        hi => {
                            let d2 = r.u8()?;
                            if d1 > 0x7f || d2 > 0x7f {
                                return Err(Error::parse(at, "data byte out of range"));
                            }
                            match hi {
                                0x90 if d2 > 0 => Some(RawKind::NoteOn { pitch: d1, velocity: d2 }),
                                0x80 | 0x90 => Some(RawKind::NoteOff { pitch: d1 }),
                                0xe0 => Some(RawKind::Bend(((d2 as u16) << 7) | d1 as u16)),
                                _ => None,
                            }
                        }
                    };
                    if let Some(kind) = kind {
                        events.push(RawEvent { tick, track, seq, channel, kind });
                        seq += 1;
                    }
                }
                _ => return Err(Error::parse(at, format!("invalid status byte {status:#04x}"))),
            }
        }
        if r.pos != end {
            return Err(Error::parse(r.pos, "event overruns track chunk"));
        }
        // implicit end of track for files missing the meta event
        events.push(RawEvent { tick, track, seq, channel: 0, kind: RawKind::TrackEnd });
        seq += 1;
    }

    let mut tempo = TempoMap {
        ticks_per_quarter: division,
        changes: events
            .iter()
            .filter_map(|e| match e.kind {
                RawKind::Tempo(us) => Some(TempoChange { tick: e.tick, us_per_quarter: us }),
                _ => None,
            })
            .collect(),
    };
    tempo.changes.sort_by_key(|c| c.tick);
    if tempo.changes.is_empty() {
        tempo.changes.push(TempoChange { tick: 0, us_per_quarter: DEFAULT_TEMPO_US });
    }

    events.sort_by_key(|e| (e.tick, e.seq));

    let mut perf = Performance {
        tempo,
        ..Default::default()
    };
    for t in &texts {
        for field in t.split(';') {
            if let Some(v) = field.strip_prefix("performer=") {
                perf.performer_id = v.to_string();
            } else if let Some(v) = field.strip_prefix("piece=") {
                perf.piece_id = v.to_string();
            }
        }
    }

    let mut bend_state = [0.0f64; MAX_CHANNELS];
    // (channel, pitch) -> index into perf.notes, plus the track that opened it
    let mut open: BTreeMap<(u8, u8), (usize, usize)> = BTreeMap::new();
    for e in &events {
        let time = perf.tempo.tick_to_sec(e.tick);
        match e.kind {
            RawKind::Tempo(_) => {}
            RawKind::Bend(raw) => {
                let value = bend_from_raw(raw);
                bend_state[e.channel as usize] = value;
                for (&(ch, _), &(idx, _)) in open.iter() {
                    if ch != e.channel {
                        continue;
                    }
                    let bends = &mut perf.notes[idx].bends;
                    match bends.last_mut() {
                        Some(last) if last.time_s >= time => last.value = value,
                        _ => bends.push(BendEvent { time_s: time, value }),
                    }
                }
            }
            RawKind::NoteOn { pitch, velocity } => {
                if let Some((idx, _)) = open.remove(&(e.channel, pitch)) {
                    // retrigger without note-off closes the previous note
                    perf.notes[idx].offset_s = time;
                }
                perf.notes.push(NoteEvent {
                    pitch,
                    onset_s: time,
                    offset_s: time,
                    velocity,
                    channel: e.channel,
                    bends: vec![BendEvent {
                        time_s: time,
                        value: bend_state[e.channel as usize],
                    }],
                });
                open.insert((e.channel, pitch), (perf.notes.len() - 1, e.track));
            }
            RawKind::NoteOff { pitch } => {
                if let Some((idx, _)) = open.remove(&(e.channel, pitch)) {
                    perf.notes[idx].offset_s = time;
                }
            }
            RawKind::TrackEnd => {
                let dangling: Vec<(u8, u8)> = open
                    .iter()
                    .filter(|(_, &(_, tr))| tr == e.track)
                    .map(|(&k, _)| k)
                    .collect();
                for key in dangling {
                    let (idx, _) = open.remove(&key).unwrap();
                    perf.notes[idx].offset_s = time;
                    perf.warnings.push(ParseWarning::DanglingNote { channel: key.0, pitch: key.1 });
                }
            }
        }
    }
    perf.notes.retain(|n| n.offset_s > n.onset_s);
    perf.sort_notes();
    Ok(perf)
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = ((v & 0x7f) as u8) | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Assigns a distinct channel to every concurrently sounding note, by tick.
/// Returns one channel per note in `perf.notes` order.
fn allocate_channels(onsets: &[u64], offsets: &[u64]) -> Result<Vec<u8>> {
    let mut order: Vec<usize> = (0..onsets.len()).collect();
    order.sort_by_key(|&i| (onsets[i], i));
    let mut busy_until = [0u64; MAX_CHANNELS];
    let mut in_use = [false; MAX_CHANNELS];
    let mut out = vec![0u8; onsets.len()];
    for i in order {
        let ch = (0..MAX_CHANNELS)
            .find(|&c| !in_use[c] || busy_until[c] <= onsets[i])
            .ok_or_else(|| {
                Error::Capacity(format!(
                    "more than {MAX_CHANNELS} simultaneous voices at tick {}",
                    onsets[i]
                ))
            })?;
        in_use[ch] = true;
        busy_until[ch] = offsets[i];
        out[i] = ch as u8;
    }
    Ok(out)
}

/// Serializes a performance as a format-0 SMF, one channel per concurrent voice.
pub fn write_smf(p: &Performance) -> Result<Vec<u8>> {
    let tempo = if p.tempo.changes.is_empty() {
        TempoMap {
            ticks_per_quarter: p.tempo.ticks_per_quarter.max(1),
            ..TempoMap::default()
        }
    } else {
        p.tempo.clone()
    };
    let onsets: Vec<u64> = p.notes.iter().map(|n| tempo.sec_to_tick(n.onset_s)).collect();
    let offsets: Vec<u64> = p
        .notes
        .iter()
        .zip(&onsets)
        .map(|(n, &on)| tempo.sec_to_tick(n.offset_s).max(on + 1))
        .collect();
    let channels = allocate_channels(&onsets, &offsets)?;

    // (tick, class, seq, bytes); class orders same-tick events:
    // 0 bends of notes ending here, 1 note-offs, 2 other bends, 3 note-ons
    let mut evs: Vec<(u64, u8, usize, Vec<u8>)> = Vec::new();
    let mut seq = 0usize;
    for c in &tempo.changes {
        let us = c.us_per_quarter.to_be_bytes();
        evs.push((c.tick, 0, seq, vec![0xff, 0x51, 0x03, us[1], us[2], us[3]]));
        seq += 1;
    }
    for (i, n) in p.notes.iter().enumerate() {
        let ch = channels[i];
        let pitch = n.pitch.min(127);
        let vel = n.velocity.clamp(1, 127);
        let mut bends = n.bends.clone();
        if bends.first().is_none_or(|b| b.time_s > n.onset_s) {
            bends.insert(0, BendEvent { time_s: n.onset_s, value: 0.0 });
        }
        for b in &bends {
            let tick = tempo.sec_to_tick(b.time_s).clamp(onsets[i], offsets[i]);
            let raw = bend_to_raw(b.value);
            let class = if tick == offsets[i] { 0 } else { 2 };
            evs.push((tick, class, seq, vec![0xe0 | ch, (raw & 0x7f) as u8, (raw >> 7) as u8]));
            seq += 1;
        }
        evs.push((onsets[i], 3, seq, vec![0x90 | ch, pitch, vel]));
        seq += 1;
        evs.push((offsets[i], 1, seq, vec![0x80 | ch, pitch, 0]));
        seq += 1;
    }
    evs.sort_by_key(|e| (e.0, e.1, e.2));

    let mut track = Vec::new();
    let mut meta = String::new();
    if !p.performer_id.is_empty() {
        meta.push_str(&format!("performer={}", p.performer_id));
    }
    if !p.piece_id.is_empty() {
        if !meta.is_empty() {
            meta.push(';');
        }
        meta.push_str(&format!("piece={}", p.piece_id));
    }
    if !meta.is_empty() {
        push_vlq(&mut track, 0);
        track.extend_from_slice(&[0xff, 0x01]);
        push_vlq(&mut track, meta.len() as u32);
        track.extend_from_slice(meta.as_bytes());
    }
    let mut last = 0u64;
    for (tick, _, _, bytes) in &evs {
        let delta = u32::try_from(tick - last)
            .map_err(|_| Error::Capacity("delta time exceeds 32 bits".into()))?;
        push_vlq(&mut track, delta);
        track.extend_from_slice(bytes);
        last = *tick;
    }
    push_vlq(&mut track, 0);
    track.extend_from_slice(&[0xff, 0x2f, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&tempo.ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf_with_track(tpq: u16, track: &[u8]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 1]);
        out.extend_from_slice(&tpq.to_be_bytes());
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(track.len() as u32).to_be_bytes());
        out.extend_from_slice(track);
        out
    }

    #[test]
    fn single_note_no_bends() {
        // 480 tpq at 120 bpm: 960 ticks = 1 s
        let track = [
            0x00, 0x90, 69, 100, //
            0x87, 0x40, 0x80, 69, 0, //
            0x00, 0xff, 0x2f, 0x00,
        ];
        let p = parse_smf(&smf_with_track(480, &track)).unwrap();
        assert_eq!(p.notes.len(), 1);
        let n = &p.notes[0];
        assert_eq!(n.pitch, 69);
        assert_eq!(n.onset_s, 0.0);
        assert!((n.offset_s - 1.0).abs() < 1e-12);
        // only the replicated onset value, which is the centre
        assert_eq!(n.bends, vec![BendEvent { time_s: 0.0, value: 0.0 }]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn raw_bend_mapping() {
        assert_eq!(bend_from_raw(8192), 0.0);
        assert_eq!(bend_to_raw(1.0), 16383);
        assert_eq!(bend_to_raw(-1.0), 0);
        assert_eq!(bend_to_raw(0.0), 8192);
    }

    #[test]
    fn running_status_and_note_on_zero_velocity() {
        let track = [
            0x00, 0x90, 60, 90, //
            0x00, 62, 90, // running status note-on
            0x83, 0x60, 60, 0, // note-on vel 0 == note-off, 480 ticks
            0x00, 62, 0, //
            0x00, 0xff, 0x2f, 0x00,
        ];
        let p = parse_smf(&smf_with_track(480, &track)).unwrap();
        assert_eq!(p.notes.len(), 2);
        assert!(p.notes.iter().all(|n| (n.offset_s - 0.5).abs() < 1e-12));
    }

    #[test]
    fn dangling_note_closed_at_track_end() {
        let track = [0x00, 0x90, 69, 100, 0x83, 0x60, 0xff, 0x2f, 0x00];
        let p = parse_smf(&smf_with_track(480, &track)).unwrap();
        assert_eq!(p.notes.len(), 1);
        assert!((p.notes[0].offset_s - 0.5).abs() < 1e-12);
        assert_eq!(p.warnings, vec![ParseWarning::DanglingNote { channel: 0, pitch: 69 }]);
    }

    #[test]
    fn bends_attach_to_sounding_note_only() {
        let track = [
            0x00, 0xe0, 0x00, 0x50, // bend before note: sets channel state
            0x00, 0x90, 69, 100, //
            0x83, 0x60, 0xe0, 0x7f, 0x7f, // +1.0 at 0.5 s
            0x83, 0x60, 0x80, 69, 0, // off at 1 s
            0x10, 0xe0, 0x00, 0x40, // after note: dropped
            0x00, 0xff, 0x2f, 0x00,
        ];
        let p = parse_smf(&smf_with_track(480, &track)).unwrap();
        let n = &p.notes[0];
        assert_eq!(n.bends.len(), 2);
        assert_eq!(n.bends[0].time_s, 0.0);
        assert_eq!(n.bends[0].value, bend_from_raw(0x50 << 7));
        assert!((n.bends[1].time_s - 0.5).abs() < 1e-12);
        assert_eq!(n.bends[1].value, bend_from_raw(16383));
    }

    #[test]
    fn malformed_header_reports_offset() {
        let err = parse_smf(b"MThx\0\0\0\x06").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
        let mut bytes = smf_with_track(480, &[0x00, 0x90, 69]);
        let len = bytes.len();
        match parse_smf(&bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, len),
            e => panic!("unexpected {e:?}"),
        }
        bytes[9] = 2; // format 2
        assert!(matches!(parse_smf(&bytes), Err(Error::Parse { offset: 8, .. })));
    }

    #[test]
    fn empty_performance_writes_valid_file() {
        let bytes = write_smf(&Performance::default()).unwrap();
        let p = parse_smf(&bytes).unwrap();
        assert!(p.notes.is_empty());
    }

    #[test]
    fn overlapping_notes_get_distinct_channels() {
        let mut p = Performance::new("perf0", "piece0");
        let mut a = NoteEvent::new(64, 0.0, 1.0);
        a.bends = vec![BendEvent { time_s: 0.0, value: 0.25 }];
        let mut b = NoteEvent::new(67, 0.5, 1.5);
        b.bends = vec![
            BendEvent { time_s: 0.5, value: -0.5 },
            BendEvent { time_s: 1.0, value: 0.5 },
        ];
        p.notes = vec![a, b];
        let q = parse_smf(&write_smf(&p).unwrap()).unwrap();
        assert_eq!(q.performer_id, "perf0");
        assert_eq!(q.piece_id, "piece0");
        assert_eq!(q.notes.len(), 2);
        assert_ne!(q.notes[0].channel, q.notes[1].channel);
        assert_eq!(q.notes[0].bends.len(), 1);
        assert!((q.notes[0].bends[0].value - 0.25).abs() <= 1.0 / 8192.0);
        assert_eq!(q.notes[1].bends.len(), 2);
        assert!((q.notes[1].bends[1].value - 0.5).abs() <= 1.0 / 8192.0);
    }

    #[test]
    fn seventeen_voices_is_a_capacity_error() {
        let mut p = Performance::default();
        p.notes = (0..17).map(|i| NoteEvent::new(60 + i, 0.0, 1.0)).collect();
        assert!(matches!(write_smf(&p), Err(Error::Capacity(_))));
        p.notes.pop();
        assert!(write_smf(&p).is_ok());
    }

    #[test]
    fn tempo_map_conversions() {
        let tm = TempoMap {
            ticks_per_quarter: 100,
            changes: vec![
                TempoChange { tick: 0, us_per_quarter: 1_000_000 },
                TempoChange { tick: 200, us_per_quarter: 500_000 },
            ],
        };
        assert!((tm.tick_to_sec(200) - 2.0).abs() < 1e-12);
        assert!((tm.tick_to_sec(300) - 2.5).abs() < 1e-12);
        assert_eq!(tm.sec_to_tick(2.5), 300);
        assert_eq!(tm.sec_to_tick(1.0), 100);
    }

    #[test]
    fn identical_bytes_parse_identically() {
        let mut p = Performance::new("a", "b");
        p.notes = vec![NoteEvent::new(70, 0.1, 0.4), NoteEvent::new(72, 0.2, 0.6)];
        let bytes = write_smf(&p).unwrap();
        assert_eq!(parse_smf(&bytes).unwrap(), parse_smf(&bytes).unwrap());
    }
}
