//! Standard MIDI File reading and writing (formats 0 and 1, metrical timing).

use std::collections::{HashMap, VecDeque};

use num_integer::Integer;
use num_traits::ToPrimitive;

use super::{AbsoluteNote, Time};
use crate::error::{Error, Result};

pub const MAX_TICKS_PER_QUARTER: u32 = 960;
pub const OUTPUT_VELOCITY: u8 = 80;
const PERCUSSION_CHANNEL: u8 = 9;
const MAX_VLQ: u32 = 0x0FFF_FFFF;

/// Notes read from a file plus the events that were dropped on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MidiReport {
    pub notes: Vec<AbsoluteNote>,
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: usize,
    pub percussion_skipped: usize,
    pub orphan_note_offs: usize,
    pub zero_length_skipped: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Midi { offset: self.pos, reason: reason.into() })
    }

    fn u8(&mut self) -> Result<u8> {
        if self.pos >= self.end {
            return self.fail("unexpected end of data");
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.end - self.pos < n {
            return self.fail(format!("truncated: need {n} bytes, {} left", self.end - self.pos));
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
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7F);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        self.fail("variable-length quantity longer than 4 bytes")
    }

    fn data_byte(&mut self) -> Result<u8> {
        let b = self.u8()?;
        if b & 0x80 != 0 {
            self.pos -= 1;
            return self.fail(format!("expected data byte, found status {b:#04x}"));
        }
        Ok(b)
    }
}

struct PendingOn {
    tick: u64,
    offset: usize,
}

#[derive(Default)]
struct TrackNotes {
    notes: Vec<AbsoluteNote>,
    percussion_skipped: usize,
    orphan_note_offs: usize,
    zero_length_skipped: usize,
}

fn read_track(r: &mut Reader<'_>, division: i64) -> Result<TrackNotes> {
    let mut out = TrackNotes::default();
    let mut active: HashMap<(u8, u8), VecDeque<PendingOn>> = HashMap::new();
    let mut running: Option<u8> = None;
    let mut tick = 0u64;
    let mut ended = false;

    while r.pos < r.end {
        tick += u64::from(r.vlq()?);
        let event_offset = r.pos;
        let mut status = r.u8()?;
        if status < 0x80 {
            match running {
                Some(s) => {
                    status = s;
                    r.pos -= 1;
                }
                None => return r.fail("data byte without running status"),
            }
        }
        match status {
            0xFF => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                r.take(len)?;
                if kind == 0x2F {
                    ended = true;
                    break;
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0xF1..=0xFE => {
                r.pos = event_offset;
                return r.fail(format!("system message {status:#04x} not allowed in a file"));
            }
            _ => {
                running = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 | 0x90 => {
                        let pitch = r.data_byte()?;
                        let velocity = r.data_byte()?;
                        let is_on = status & 0xF0 == 0x90 && velocity > 0;
                        if channel == PERCUSSION_CHANNEL {
                            if is_on {
                                out.percussion_skipped += 1;
                            }
                            continue;
                        }
                        let queue = active.entry((channel, pitch)).or_default();
                        if is_on {
                            queue.push_back(PendingOn { tick, offset: event_offset });
                        } else if let Some(on) = queue.pop_front() {
                            if tick == on.tick {
                                out.zero_length_skipped += 1;
                            } else {
                                out.notes.push(AbsoluteNote {
                                    onset: Time::new(on.tick as i64, division),
                                    duration: Time::new((tick - on.tick) as i64, division),
                                    pitch,
                                });
                            }
                        } else {
                            out.orphan_note_offs += 1;
                        }
                    }
                    0xC0 | 0xD0 => {
                        r.data_byte()?;
                    }
                    _ => {
                        r.data_byte()?;
                        r.data_byte()?;
                    }
                }
            }
        }
    }
    if !ended {
        return r.fail("track ended without end-of-track event");
    }
    if let Some(((channel, pitch), on)) = active
        .iter()
        .filter_map(|(k, q)| q.front().map(|on| (*k, on)))
        .min_by_key(|(_, on)| on.offset)
    {
        return Err(Error::UnmatchedNoteOn { offset: on.offset, channel, pitch });
    }
    Ok(out)
}

/// Parses a Standard MIDI File, reporting dropped events alongside the notes.
pub fn parse_midi_report(bytes: &[u8]) -> Result<MidiReport> {
    let mut r = Reader { bytes, pos: 0, end: bytes.len() };
    if r.take(4).ok() != Some(b"MThd".as_slice()) {
        return Err(Error::Midi { offset: 0, reason: "missing MThd header".into() });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return r.fail(format!("header length {header_len} is shorter than 6"));
    }
    let header_start = r.pos;
    let format = r.u16()?;
    let declared_tracks = r.u16()?;
    let division = r.u16()?;
    r.pos = header_start;
    r.take(header_len)?;
    if format > 1 {
        return Err(Error::Midi { offset: header_start, reason: format!("unsupported format {format}") });
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(Error::Midi {
            offset: header_start + 4,
            reason: format!("division {division:#06x} is not metrical ticks per quarter"),
        });
    }

    let mut report = MidiReport { format, ticks_per_quarter: division, ..Default::default() };
    while report.tracks < usize::from(declared_tracks) {
        if r.pos >= bytes.len() {
            return r.fail(format!(
                "file ends after {} of {declared_tracks} tracks",
                report.tracks
            ));
        }
        let kind = r.take(4)?;
        let len = r.u32()? as usize;
        if kind != b"MTrk" {
            // Unknown chunks are skipped per the file format.
            r.take(len)?;
            continue;
        }
        if bytes.len() - r.pos < len {
            return r.fail(format!("track chunk of {len} bytes is truncated"));
        }
        let mut track = Reader { bytes, pos: r.pos, end: r.pos + len };
        let notes = read_track(&mut track, i64::from(division))?;
        r.pos += len;
        report.tracks += 1;
        report.notes.extend(notes.notes);
        report.percussion_skipped += notes.percussion_skipped;
        report.orphan_note_offs += notes.orphan_note_offs;
        report.zero_length_skipped += notes.zero_length_skipped;
    }
    report.notes.sort();
    Ok(report)
}

/// Parses a Standard MIDI File into onset-sorted notes.
///
/// Percussion-channel notes, orphan note-offs and zero-length notes are
/// dropped and logged as warnings.
pub fn parse_midi(bytes: &[u8]) -> Result<Vec<AbsoluteNote>> {
    let report = parse_midi_report(bytes)?;
    if report.percussion_skipped > 0 {
        log::warn!("skipped {} percussion notes", report.percussion_skipped);
    }
    if report.orphan_note_offs > 0 {
        log::warn!("ignored {} note-offs without a matching note-on", report.orphan_note_offs);
    }
    if report.zero_length_skipped > 0 {
        log::warn!("dropped {} zero-length notes", report.zero_length_skipped);
    }
    Ok(report.notes)
}

fn to_ticks(value: Time, ticks_per_quarter: u32) -> Result<u32> {
    let scaled = value * Time::from_integer(i64::from(ticks_per_quarter));
    let quantization = || Error::Quantization { value: value.to_string(), ticks_per_quarter };
    if !scaled.is_integer() {
        return Err(quantization());
    }
    scaled.to_integer().to_u32().filter(|&t| t <= MAX_VLQ).ok_or_else(quantization)
}

/// Smallest resolution that represents every time exactly, scaled up to
/// [`MAX_TICKS_PER_QUARTER`] when that is a multiple of it.
pub fn default_resolution(notes: &[AbsoluteNote]) -> Result<u32> {
    let mut lcm = 1i64;
    let mut widest: Option<Time> = None;
    for value in notes.iter().flat_map(|n| [n.onset, n.duration]) {
        lcm = lcm.lcm(value.denom());
        if widest.is_none_or(|w| value.denom() > w.denom()) {
            widest = Some(value);
        }
        if lcm > i64::from(MAX_TICKS_PER_QUARTER) {
            return Err(Error::Quantization {
                value: widest.unwrap_or(value).to_string(),
                ticks_per_quarter: MAX_TICKS_PER_QUARTER,
            });
        }
    }
    let lcm = lcm as u32;
    Ok(if MAX_TICKS_PER_QUARTER % lcm == 0 { MAX_TICKS_PER_QUARTER } else { lcm })
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7F) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(buf[i] | if i > 0 { 0x80 } else { 0 });
    }
}

/// Writes a format-0 file with one track.
///
/// Overlapping notes of the same pitch go to different channels so that a
/// re-parse pairs every note-on with its own note-off.
pub fn write_midi(notes: &[AbsoluteNote], ticks_per_quarter: u32) -> Result<Vec<u8>> {
    if ticks_per_quarter == 0 || ticks_per_quarter > 0x7FFF {
        return Err(Error::Quantization { value: "resolution".into(), ticks_per_quarter });
    }
    let mut sorted = notes.to_vec();
    sorted.sort();

    // (tick, is_on, channel, pitch); offs sort before ons at equal ticks.
    let mut events: Vec<(u32, bool, u8, u8)> = Vec::with_capacity(sorted.len() * 2);
    let mut busy_until: HashMap<(u8, u8), u32> = HashMap::new();
    for note in &sorted {
        note.validate()?;
        let on = to_ticks(note.onset, ticks_per_quarter)?;
        let off = to_ticks(note.offset(), ticks_per_quarter)?;
        let channel = (0u8..16)
            .filter(|&c| c != PERCUSSION_CHANNEL)
            .find(|&c| busy_until.get(&(c, note.pitch)).is_none_or(|&end| end <= on))
            .ok_or_else(|| {
                Error::InvalidNote(format!(
                    "more than 15 overlapping notes of pitch {} at {}",
                    note.pitch, note.onset
                ))
            })?;
        busy_until.insert((channel, note.pitch), off);
        events.push((on, true, channel, note.pitch));
        events.push((off, false, channel, note.pitch));
    }
    events.sort_by_key(|&(tick, is_on, channel, pitch)| (tick, is_on, channel, pitch));

    let mut track = Vec::with_capacity(events.len() * 4 + 4);
    let mut last = 0u32;
    for (tick, is_on, channel, pitch) in events {
        push_vlq(&mut track, tick - last);
        last = tick;
        if is_on {
            track.extend_from_slice(&[0x90 | channel, pitch, OUTPUT_VELOCITY]);
        } else {
            track.extend_from_slice(&[0x80 | channel, pitch, 0x40]);
        }
    }
    track.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(track.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(ticks_per_quarter as u16).to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}
