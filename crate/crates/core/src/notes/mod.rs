//! Note-event representation of polyphonic music.
//!
//! A piece is a stream of `(dT, T, P)` triples: onset gap to the previous
//! event, duration, and MIDI pitch. All times are exact rationals in
//! quarter-note units so triplets and other non-binary subdivisions survive
//! round trips unchanged.

mod midi;
mod vocab;

use std::cmp::Ordering;
use std::fmt;

use num_traits::{Signed, Zero};

pub use midi::{
    default_resolution, parse_midi, parse_midi_report, write_midi, MidiReport, MAX_TICKS_PER_QUARTER,
    OUTPUT_VELOCITY,
};
pub(crate) use vocab::encode_events;
pub use vocab::{decode_indices, encode_indices, IndexedSequence, Vocabularies, Vocabulary};

use crate::error::{Error, Result};

/// Exact musical time in quarter notes.
pub type Time = num_rational::Rational64;

pub const MAX_PITCH: u8 = 127;

/// One of the three note-event attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Dt,
    Duration,
    Pitch,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Dt, Attribute::Duration, Attribute::Pitch];

    pub fn tag(self) -> &'static str {
        match self {
            Attribute::Dt => "dT",
            Attribute::Duration => "T",
            Attribute::Pitch => "P",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "dT" => Some(Attribute::Dt),
            "T" => Some(Attribute::Duration),
            "P" => Some(Attribute::Pitch),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A note with absolute onset, as read from or written to MIDI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AbsoluteNote {
    pub onset: Time,
    pub duration: Time,
    pub pitch: u8,
}

impl AbsoluteNote {
    pub fn new(onset: Time, duration: Time, pitch: u8) -> Result<Self> {
        let note = AbsoluteNote { onset, duration, pitch };
        note.validate()?;
        Ok(note)
    }

    pub fn validate(&self) -> Result<()> {
        if self.onset.is_negative() {
            return Err(Error::InvalidNote(format!("negative onset {}", self.onset)));
        }
        if !self.duration.is_positive() {
            return Err(Error::InvalidNote(format!("non-positive duration {}", self.duration)));
        }
        if self.pitch > MAX_PITCH {
            return Err(Error::InvalidNote(format!("pitch {} above {MAX_PITCH}", self.pitch)));
        }
        Ok(())
    }

    pub fn offset(&self) -> Time {
        self.onset + self.duration
    }
}

// Onset first, ascending pitch within a chord, duration as the final tie-break.
impl Ord for AbsoluteNote {
    fn cmp(&self, other: &Self) -> Ordering {
        self.onset
            .cmp(&other.onset)
            .then(self.pitch.cmp(&other.pitch))
            .then(self.duration.cmp(&other.duration))
    }
}

impl PartialOrd for AbsoluteNote {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    /// Onset difference from the previous event; zero stacks a chord.
    pub dt: Time,
    pub duration: Time,
    pub pitch: u8,
}

impl NoteEvent {
    pub fn new(dt: Time, duration: Time, pitch: u8) -> Self {
        NoteEvent { dt, duration, pitch }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteSequence {
    pub events: Vec<NoteEvent>,
    /// Onset of the first event. Kept so pieces that begin after a rest
    /// survive the trip back to absolute time.
    pub start: Time,
    pub source_id: String,
}

impl NoteSequence {
    pub fn new(events: Vec<NoteEvent>, source_id: impl Into<String>) -> Self {
        NoteSequence { events, start: Time::zero(), source_id: source_id.into() }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.start.is_negative() {
            return Err(Error::InvalidNote(format!("negative start {}", self.start)));
        }
        for (i, ev) in self.events.iter().enumerate() {
            if i == 0 && !ev.dt.is_zero() {
                return Err(Error::InvalidNote(format!("first event has dT = {}", ev.dt)));
            }
            if ev.dt.is_negative() {
                return Err(Error::InvalidNote(format!("event {i} has negative dT {}", ev.dt)));
            }
            if !ev.duration.is_positive() {
                return Err(Error::InvalidNote(format!("event {i} has duration {}", ev.duration)));
            }
            if ev.pitch > MAX_PITCH {
                return Err(Error::InvalidNote(format!("event {i} has pitch {}", ev.pitch)));
            }
        }
        Ok(())
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn pitches(&self) -> impl Iterator<Item = u8> + '_ {
        self.events.iter().map(|e| e.pitch)
    }
}

/// Sorts notes by onset (ascending pitch within chords) and converts them to
/// onset differences.
pub fn to_note_events(notes: &[AbsoluteNote]) -> Result<NoteSequence> {
    if notes.is_empty() {
        return Err(Error::EmptyInput("note list"));
    }
    for note in notes {
        note.validate()?;
    }
    let mut sorted = notes.to_vec();
    sorted.sort();
    let start = sorted[0].onset;
    let mut prev = start;
    let events = sorted
        .iter()
        .map(|n| {
            let ev = NoteEvent::new(n.onset - prev, n.duration, n.pitch);
            prev = n.onset;
            ev
        })
        .collect();
    Ok(NoteSequence { events, start, source_id: String::new() })
}

/// Prefix-sums onset gaps back into absolute notes.
pub fn to_absolute(seq: &NoteSequence) -> Result<Vec<AbsoluteNote>> {
    seq.validate()?;
    let mut onset = seq.start;
    Ok(seq
        .events
        .iter()
        .map(|ev| {
            onset += ev.dt;
            AbsoluteNote { onset, duration: ev.duration, pitch: ev.pitch }
        })
        .collect())
}
