//! Standard MIDI File reading and writing, plus quantization onto the
//! 16-steps-per-bar grid.
//!
//! Only the subset the representation needs is interpreted: note on/off,
//! set-tempo, time-signature and end-of-track. Everything else is parsed
//! for framing and skipped.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::theory::Pitch;

/// Grid steps per 4/4 bar.
pub const TICKS_PER_BAR: u32 = 16;
/// Grid steps per quarter note.
pub const TICKS_PER_BEAT: u32 = 4;
/// Resolution used by [`write_midi`].
pub const OUTPUT_TICKS_PER_QUARTER: u16 = 480;

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed {chunk} at byte {offset}: {message}")]
    Parse {
        chunk: String,
        offset: usize,
        message: String,
    },
    #[error("unsupported SMF feature: {0}")]
    Unsupported(String),
    #[error("unsupported meter {numerator}/{denominator} at tick {tick}; only 4/4 is accepted")]
    UnsupportedMeter { numerator: u8, denominator: u32, tick: u64 },
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawNote {
    pub pitch: u8,
    pub start: u64,
    pub end: u64,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawTempo {
    pub tick: u64,
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u32,
}

/// File contents in source ticks, before quantization.
#[derive(Debug, Clone, Default)]
pub struct RawScore {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub notes: Vec<RawNote>,
    pub tempos: Vec<RawTempo>,
    pub time_signatures: Vec<TimeSignature>,
    /// Latest end-of-track tick across all tracks.
    pub end_tick: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: Pitch,
    /// Onset in grid steps from the start of the track.
    pub onset: u32,
    /// Length in grid steps, at least 1.
    pub duration: u32,
    pub velocity: u8,
}

impl Note {
    pub fn new(pitch: Pitch, onset: u32, duration: u32, velocity: u8) -> Self {
        Self {
            pitch,
            onset,
            duration,
            velocity,
        }
    }

    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TempoChange {
    /// Grid tick, always on a bar boundary.
    pub tick: u32,
    pub micros_per_quarter: u32,
}

impl TempoChange {
    pub fn from_bpm(tick: u32, bpm: f64) -> Self {
        Self {
            tick,
            micros_per_quarter: (60_000_000.0 / bpm).round() as u32,
        }
    }

    pub fn bpm(&self) -> f64 {
        60_000_000.0 / self.micros_per_quarter as f64
    }
}

/// Notes and tempo on the bar/sub-beat grid.
///
/// Invariants (checked by [`QuantizedTrack::new`]):
/// notes are sorted by onset then descending pitch, all notes end on or
/// before `bars * 16`, notes of equal pitch never overlap, velocities are in
/// 1..=127, and tempo changes sit on bar boundaries strictly inside the track
/// in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuantizedTrack {
    notes: Vec<Note>,
    tempo_changes: Vec<TempoChange>,
    bars: u32,
}

pub(crate) fn sort_notes(notes: &mut [Note]) {
    notes.sort_by(|a, b| a.onset.cmp(&b.onset).then(b.pitch.cmp(&a.pitch)));
}

impl QuantizedTrack {
    pub fn new(mut notes: Vec<Note>, tempo_changes: Vec<TempoChange>, bars: u32) -> Result<Self, MidiError> {
        sort_notes(&mut notes);
        let span = bars * TICKS_PER_BAR;
        let mut sounding: BTreeMap<Pitch, u32> = BTreeMap::new();
        for n in &notes {
            if n.duration == 0 {
                return Err(MidiError::InvalidTrack(format!("zero-length note at {}", n.onset)));
            }
            if n.velocity == 0 || n.velocity > 127 {
                return Err(MidiError::InvalidTrack(format!("velocity {} out of range", n.velocity)));
            }
            if n.end() > span {
                return Err(MidiError::InvalidTrack(format!(
                    "note at {} ends after the last bar ({} > {span})",
                    n.onset,
                    n.end()
                )));
            }
            if let Some(&until) = sounding.get(&n.pitch) {
                if n.onset < until {
                    return Err(MidiError::InvalidTrack(format!(
                        "overlapping {} at {}",
                        n.pitch, n.onset
                    )));
                }
            }
            sounding.insert(n.pitch, n.end());
        }
        let mut last = None;
        for t in &tempo_changes {
            if t.tick % TICKS_PER_BAR != 0 || t.tick >= span || t.micros_per_quarter == 0 {
                return Err(MidiError::InvalidTrack(format!("bad tempo change at {}", t.tick)));
            }
            if last.is_some_and(|l| l >= t.tick) {
                return Err(MidiError::InvalidTrack("tempo changes out of order".into()));
            }
            last = Some(t.tick);
        }
        Ok(Self {
            notes,
            tempo_changes,
            bars,
        })
    }

    pub fn empty(bars: u32) -> Self {
        Self {
            notes: Vec::new(),
            tempo_changes: Vec::new(),
            bars,
        }
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn tempo_changes(&self) -> &[TempoChange] {
        &self.tempo_changes
    }

    pub fn bars(&self) -> u32 {
        self.bars
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Notes whose onset falls in bar `bar`.
    pub fn bar_notes(&self, bar: u32) -> impl Iterator<Item = &Note> {
        let lo = bar * TICKS_PER_BAR;
        let hi = lo + TICKS_PER_BAR;
        self.notes.iter().filter(move |n| n.onset >= lo && n.onset < hi)
    }

    /// Shifts every pitch by `semitones`, failing if any leaves the piano range.
    pub fn transpose(&self, semitones: i32) -> Result<Self, crate::theory::TheoryError> {
        let notes = self
            .notes
            .iter()
            .map(|n| {
                Ok(Note {
                    pitch: Pitch::new(n.pitch.midi() as i32 + semitones)?,
                    ..*n
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut t = Self { notes, ..self.clone() };
        sort_notes(&mut t.notes);
        Ok(t)
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
    chunk: String,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> MidiError {
        MidiError::Parse {
            chunk: self.chunk.clone(),
            offset: self.base + self.pos,
            message: message.into(),
        }
    }

    fn byte(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| self.err("unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.data.len() {
            return Err(self.err(format!("need {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn varlen(&mut self) -> Result<u32, MidiError> {
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.byte()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.data.len()
    }
}

/// Parses an SMF of format 0 or 1.
///
/// Note-ons without a matching note-off are dropped with a warning, and
/// non-4/4 time signatures are reported in the result rather than rejected
/// (see [`quantize`]).
pub fn load_midi(bytes: &[u8]) -> Result<RawScore, MidiError> {
    let mut file = Cursor {
        data: bytes,
        pos: 0,
        base: 0,
        chunk: "MThd".into(),
    };
    let id = file.take(4)?;
    if id != b"MThd" {
        return Err(MidiError::Parse {
            chunk: "MThd".into(),
            offset: 0,
            message: "missing MThd header".into(),
        });
    }
    let len = u32::from_be_bytes(file.take(4)?.try_into().unwrap()) as usize;
    if len < 6 {
        return Err(file.err(format!("header length {len} < 6")));
    }
    let header = file.take(len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::Unsupported(format!("SMF format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::Unsupported("SMPTE time division".into()));
    }
    if division == 0 {
        return Err(MidiError::Parse {
            chunk: "MThd".into(),
            offset: 12,
            message: "zero ticks per quarter".into(),
        });
    }

    let mut score = RawScore {
        format,
        ticks_per_quarter: division,
        ..Default::default()
    };
    let mut track_index = 0usize;
    while !file.at_end() {
        let start = file.pos;
        file.chunk = format!("chunk header at track {track_index}");
        let id: [u8; 4] = file.take(4)?.try_into().unwrap();
        let len = u32::from_be_bytes(file.take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(&id).into_owned();
        if file.pos + len > bytes.len() {
            return Err(MidiError::Parse {
                chunk: name,
                offset: start,
                message: format!("chunk declares {len} bytes but only {} remain", bytes.len() - file.pos),
            });
        }
        let body = &bytes[file.pos..file.pos + len];
        let body_base = file.pos;
        file.pos += len;
        if &id != b"MTrk" {
            score
                .warnings
                .push(format!("skipped unknown chunk {name:?} at byte {start}"));
            continue;
        }
        parse_track(
            Cursor {
                data: body,
                pos: 0,
                base: body_base,
                chunk: format!("MTrk #{track_index}"),
            },
            track_index,
            &mut score,
        )?;
        track_index += 1;
    }
    if track_index != ntracks as usize {
        score
            .warnings
            .push(format!("header announces {ntracks} tracks, found {track_index}"));
    }
    score
        .notes
        .sort_by(|a, b| a.start.cmp(&b.start).then(a.pitch.cmp(&b.pitch)));
    score.tempos.sort_by_key(|t| t.tick);
    score.time_signatures.sort_by_key(|t| t.tick);
    for w in &score.warnings {
        log::warn!("{w}");
    }
    Ok(score)
}

fn parse_track(mut cur: Cursor<'_>, index: usize, score: &mut RawScore) -> Result<(), MidiError> {
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut pending: BTreeMap<(u8, u8), VecDeque<(u64, u8)>> = BTreeMap::new();
    let mut saw_eot = false;

    while !cur.at_end() {
        tick += cur.varlen()? as u64;
        let mut status = cur.byte()?;
        let first_data = if status < 0x80 {
            let data = status;
            status = running.ok_or_else(|| cur.err("data byte without running status"))?;
            Some(data)
        } else {
            None
        };
        match status {
            0x80..=0xEF => {
                running = Some(status);
                let d1 = match first_data {
                    Some(d) => d,
                    None => cur.byte()?,
                };
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let d2 = if matches!(kind, 0xC0 | 0xD0) { 0 } else { cur.byte()? };
                if d1 > 0x7f || d2 > 0x7f {
                    return Err(cur.err("data byte with high bit set"));
                }
                match kind {
                    0x90 if d2 > 0 => pending.entry((channel, d1)).or_default().push_back((tick, d2)),
                    0x80 | 0x90 => match pending.get_mut(&(channel, d1)).and_then(|q| q.pop_front()) {
                        Some((start, velocity)) => score.notes.push(RawNote {
                            pitch: d1,
                            start,
                            end: tick,
                            velocity,
                            channel,
                        }),
                        None => score.warnings.push(format!(
                            "track {index}: note-off for {d1} at tick {tick} without note-on"
                        )),
                    },
                    _ => {}
                }
            }
            0xFF => {
                let kind = cur.byte()?;
                let len = cur.varlen()? as usize;
                let data = cur.take(len)?;
                match kind {
                    0x51 => {
                        if len != 3 {
                            return Err(cur.err("set-tempo meta event must be 3 bytes"));
                        }
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        if us == 0 {
                            return Err(cur.err("zero tempo"));
                        }
                        score.tempos.push(RawTempo {
                            tick,
                            micros_per_quarter: us,
                        });
                    }
                    0x58 => {
                        if len < 2 {
                            return Err(cur.err("time-signature meta event too short"));
                        }
                        score.time_signatures.push(TimeSignature {
                            tick,
                            numerator: data[0],
                            denominator: 1u32.checked_shl(data[1] as u32).unwrap_or(0),
                        });
                    }
                    0x2F => {
                        saw_eot = true;
                        score.end_tick = score.end_tick.max(tick);
                        break;
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = cur.varlen()? as usize;
                cur.take(len)?;
            }
            other => return Err(cur.err(format!("unexpected status byte {other:#04x}"))),
        }
    }
    if !saw_eot {
        score.warnings.push(format!("track {index}: missing end-of-track"));
        score.end_tick = score.end_tick.max(tick);
    }
    for ((_, pitch), starts) in pending {
        for (start, _) in starts {
            score.warnings.push(format!(
                "track {index}: unresolved note-on for {pitch} at tick {start}, dropped"
            ));
        }
    }
    Ok(())
}

/// Snaps a raw score to the grid.
///
/// Onsets round to the nearest sub-beat, lengths round to at least one
/// sub-beat, tempo changes snap to the nearest bar line (the last one wins
/// when several collide). Same-pitch notes that overlap after snapping are
/// merged into one note spanning both. Pitches outside the piano range are
/// dropped.
pub fn quantize(score: &RawScore) -> Result<QuantizedTrack, MidiError> {
    if let Some(ts) = score
        .time_signatures
        .iter()
        .find(|t| t.numerator != 4 || t.denominator != 4)
    {
        return Err(MidiError::UnsupportedMeter {
            numerator: ts.numerator,
            denominator: ts.denominator,
            tick: ts.tick,
        });
    }
    let step = score.ticks_per_quarter as f64 / TICKS_PER_BEAT as f64;
    let to_grid = |t: u64| t as f64 / step;

    let mut by_pitch: BTreeMap<Pitch, Vec<Note>> = BTreeMap::new();
    for n in &score.notes {
        let Ok(pitch) = Pitch::new(n.pitch as i32) else {
            log::warn!("dropping out-of-range pitch {} at tick {}", n.pitch, n.start);
            continue;
        };
        let onset = to_grid(n.start).round() as u32;
        let duration = (to_grid(n.end) - to_grid(n.start)).round().max(1.0) as u32;
        by_pitch
            .entry(pitch)
            .or_default()
            .push(Note::new(pitch, onset, duration, n.velocity.max(1)));
    }
    let mut notes = Vec::new();
    for (_, mut group) in by_pitch {
        group.sort_by_key(|n| n.onset);
        let mut iter = group.into_iter();
        let Some(mut cur) = iter.next() else { continue };
        for n in iter {
            if n.onset < cur.end() {
                cur.duration = cur.end().max(n.end()) - cur.onset;
            } else {
                notes.push(cur);
                cur = n;
            }
        }
        notes.push(cur);
    }

    let max_end = notes.iter().map(Note::end).max().unwrap_or(0);
    let note_bars = max_end.div_ceil(TICKS_PER_BAR);
    let eot_bars = (to_grid(score.end_tick) / TICKS_PER_BAR as f64).round() as u32;
    let bars = note_bars.max(eot_bars);

    let mut tempo: BTreeMap<u32, u32> = BTreeMap::new();
    for t in &score.tempos {
        let bar = (to_grid(t.tick) / TICKS_PER_BAR as f64).round() as u32;
        tempo.insert(bar * TICKS_PER_BAR, t.micros_per_quarter);
    }
    let tempo_changes = tempo
        .into_iter()
        .filter(|&(tick, _)| tick < bars * TICKS_PER_BAR)
        .map(|(tick, micros_per_quarter)| TempoChange {
            tick,
            micros_per_quarter,
        })
        .collect();
    QuantizedTrack::new(notes, tempo_changes, bars)
}

fn write_varlen(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = (v & 0x7f) as u8 | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Serializes a track as a format-0 SMF at 480 ticks per quarter.
///
/// A 4/4 time signature is written at tick 0 and the end-of-track marker
/// sits exactly on the final bar line, so reloading and quantizing returns
/// the same track.
pub fn write_midi<W: Write>(track: &QuantizedTrack, mut out: W) -> Result<(), MidiError> {
    out.write_all(&midi_bytes(track))?;
    Ok(())
}

pub fn midi_bytes(track: &QuantizedTrack) -> Vec<u8> {
    let step = (OUTPUT_TICKS_PER_QUARTER as u32) / TICKS_PER_BEAT;
    // (tick, order, bytes): meta first, then note-offs, then note-ons
    let mut events: Vec<(u32, u8, u8, Vec<u8>)> = vec![(0, 0, 0, vec![0xFF, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08])];
    for t in &track.tempo_changes {
        let us = t.micros_per_quarter.to_be_bytes();
        events.push((t.tick * step, 0, 1, vec![0xFF, 0x51, 0x03, us[1], us[2], us[3]]));
    }
    for n in &track.notes {
        let p = n.pitch.midi();
        events.push((n.onset * step, 2, p, vec![0x90, p, n.velocity]));
        events.push((n.end() * step, 1, p, vec![0x80, p, 0x40]));
    }
    events.sort_by_key(|e| (e.0, e.1, e.2));

    let mut body = Vec::new();
    let mut now = 0;
    for (tick, _, _, bytes) in events {
        write_varlen(&mut body, tick - now);
        body.extend_from_slice(&bytes);
        now = tick;
    }
    let end = (track.bars * TICKS_PER_BAR * step).max(now);
    write_varlen(&mut body, end - now);
    body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&OUTPUT_TICKS_PER_QUARTER.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}
