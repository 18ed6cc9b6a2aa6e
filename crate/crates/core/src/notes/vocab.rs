//! Value ↔ index dictionaries for the three note attributes.

use std::collections::HashMap;
use std::fmt::Display;
use std::hash::Hash;
use std::str::FromStr;

use num_traits::Zero;

use super::{Attribute, NoteEvent, NoteSequence, Time};
use crate::error::{Error, Result};

/// Dense bijection between attribute values and indices, in first-appearance order.
#[derive(Debug, Clone)]
pub struct Vocabulary<V> {
    attribute: Attribute,
    values: Vec<V>,
    index: HashMap<V, usize>,
}

impl<V: PartialEq> PartialEq for Vocabulary<V> {
    fn eq(&self, other: &Self) -> bool {
        // the index map is derived from `values`
        self.attribute == other.attribute && self.values == other.values
    }
}

impl<V: Eq> Eq for Vocabulary<V> {}

impl<V: Clone + Eq + Hash + Display> Vocabulary<V> {
    pub fn new(attribute: Attribute) -> Self {
        Vocabulary { attribute, values: Vec::new(), index: HashMap::new() }
    }

    pub fn from_values(attribute: Attribute, values: impl IntoIterator<Item = V>) -> Self {
        let mut vocab = Self::new(attribute);
        for v in values {
            vocab.insert(v);
        }
        vocab
    }

    /// Returns the index of `value`, assigning the next free one if unseen.
    pub fn insert(&mut self, value: V) -> usize {
        if let Some(&i) = self.index.get(&value) {
            return i;
        }
        let i = self.values.len();
        self.index.insert(value.clone(), i);
        self.values.push(value);
        i
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn index_of(&self, value: &V) -> Result<usize> {
        self.index.get(value).copied().ok_or_else(|| Error::OutOfVocabulary {
            attribute: self.attribute,
            value: value.to_string(),
        })
    }

    pub fn value_of(&self, index: usize) -> Result<&V> {
        self.values.get(index).ok_or(Error::IndexOutOfRange {
            attribute: self.attribute,
            index,
            size: self.values.len(),
        })
    }

    fn write_text(&self, out: &mut String) {
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{v}\n", self.attribute));
        }
    }
}

/// The three per-attribute vocabularies used by one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabularies {
    pub dt: Vocabulary<Time>,
    pub duration: Vocabulary<Time>,
    pub pitch: Vocabulary<u8>,
}

impl Default for Vocabularies {
    fn default() -> Self {
        Vocabularies {
            dt: Vocabulary::new(Attribute::Dt),
            duration: Vocabulary::new(Attribute::Duration),
            pitch: Vocabulary::new(Attribute::Pitch),
        }
    }
}

impl Vocabularies {
    /// Builds all three vocabularies in corpus order (sequence order, then event order).
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a NoteSequence>) -> Self {
        let mut vocabs = Self::default();
        for seq in corpus {
            vocabs.extend(&seq.events);
        }
        vocabs
    }

    pub fn extend(&mut self, events: &[NoteEvent]) {
        for ev in events {
            self.dt.insert(ev.dt);
            self.duration.insert(ev.duration);
            self.pitch.insert(ev.pitch);
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.dt.len(), self.duration.len(), self.pitch.len()]
    }

    pub fn encode_event(&self, ev: &NoteEvent) -> Result<[usize; 3]> {
        Ok([self.dt.index_of(&ev.dt)?, self.duration.index_of(&ev.duration)?, self.pitch.index_of(&ev.pitch)?])
    }

    pub fn decode_event(&self, idx: [usize; 3]) -> Result<NoteEvent> {
        Ok(NoteEvent {
            dt: *self.dt.value_of(idx[0])?,
            duration: *self.duration.value_of(idx[1])?,
            pitch: *self.pitch.value_of(idx[2])?,
        })
    }

    /// Line format: `<index>\t<attribute>\t<value>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.dt.write_text(&mut out);
        self.duration.write_text(&mut out);
        self.pitch.write_text(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        fn parse<V: FromStr>(s: &str, line: usize) -> Result<V> {
            s.parse().map_err(|_| Error::Container(format!("vocabulary line {line}: bad value {s:?}")))
        }
        fn push<V: Clone + Eq + Hash + Display>(vocab: &mut Vocabulary<V>, index: usize, value: V, line: usize) -> Result<()> {
            if index != vocab.len() || vocab.index.contains_key(&value) {
                return Err(Error::Container(format!(
                    "vocabulary line {line}: index {index} breaks the dense bijection"
                )));
            }
            vocab.insert(value);
            Ok(())
        }

        let mut vocabs = Self::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut fields = line.split('\t');
            let (Some(index), Some(attr), Some(value), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Container(format!("vocabulary line {}: expected 3 fields", n + 1)));
            };
            let index: usize = parse(index, n + 1)?;
            match Attribute::from_tag(attr) {
                Some(Attribute::Dt) => push(&mut vocabs.dt, index, parse(value, n + 1)?, n + 1)?,
                Some(Attribute::Duration) => push(&mut vocabs.duration, index, parse(value, n + 1)?, n + 1)?,
                Some(Attribute::Pitch) => push(&mut vocabs.pitch, index, parse(value, n + 1)?, n + 1)?,
                None => return Err(Error::Container(format!("vocabulary line {}: unknown attribute {attr:?}", n + 1))),
            }
        }
        Ok(vocabs)
    }
}

/// Model-facing form of a note sequence: one index stream per attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct IndexedSequence {
    pub dt: Vec<usize>,
    pub duration: Vec<usize>,
    pub pitch: Vec<usize>,
}

impl IndexedSequence {
    pub fn with_capacity(n: usize) -> Self {
        IndexedSequence { dt: Vec::with_capacity(n), duration: Vec::with_capacity(n), pitch: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.dt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dt.is_empty()
    }

    pub fn push(&mut self, idx: [usize; 3]) {
        self.dt.push(idx[0]);
        self.duration.push(idx[1]);
        self.pitch.push(idx[2]);
    }

    pub fn get(&self, t: usize) -> [usize; 3] {
        [self.dt[t], self.duration[t], self.pitch[t]]
    }

    pub fn stream(&self, attribute: Attribute) -> &[usize] {
        match attribute {
            Attribute::Dt => &self.dt,
            Attribute::Duration => &self.duration,
            Attribute::Pitch => &self.pitch,
        }
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        IndexedSequence {
            dt: self.dt[start..start + len].to_vec(),
            duration: self.duration[start..start + len].to_vec(),
            pitch: self.pitch[start..start + len].to_vec(),
        }
    }

    pub fn check(&self, sizes: [usize; 3]) -> Result<()> {
        if self.duration.len() != self.dt.len() {
            return Err(Error::LengthMismatch(self.dt.len(), self.duration.len()));
        }
        if self.pitch.len() != self.dt.len() {
            return Err(Error::LengthMismatch(self.dt.len(), self.pitch.len()));
        }
        for attribute in Attribute::ALL {
            let size = sizes[attribute.index()];
            if let Some(&index) = self.stream(attribute).iter().find(|&&i| i >= size) {
                return Err(Error::IndexOutOfRange { attribute, index, size });
            }
        }
        Ok(())
    }
}

pub fn encode_indices(seq: &NoteSequence, vocabs: &Vocabularies) -> Result<IndexedSequence> {
    encode_events(&seq.events, vocabs)
}

pub(crate) fn encode_events(events: &[NoteEvent], vocabs: &Vocabularies) -> Result<IndexedSequence> {
    let mut out = IndexedSequence::with_capacity(events.len());
    for ev in events {
        out.push(vocabs.encode_event(ev)?);
    }
    Ok(out)
}

/// Inverse of [`encode_indices`].
///
/// A nonzero leading gap (from a window cut mid-piece, or a generated first
/// note) is folded into the sequence start so the result stays valid.
pub fn decode_indices(idx: &IndexedSequence, vocabs: &Vocabularies) -> Result<NoteSequence> {
    idx.check(vocabs.sizes())?;
    let mut events = (0..idx.len())
        .map(|t| vocabs.decode_event(idx.get(t)))
        .collect::<Result<Vec<_>>>()?;
    let mut start = Time::zero();
    if let Some(first) = events.first_mut() {
        start = std::mem::replace(&mut first.dt, Time::zero());
    }
    Ok(NoteSequence { events, start, source_id: String::new() })
}
