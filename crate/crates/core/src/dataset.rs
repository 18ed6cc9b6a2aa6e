//! Corpus preparation: segmentation, transposition, index encoding, batching
//! and the on-disk cache.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Container, Payload};
use crate::error::{Error, Result};
use crate::notes::{
    decode_indices, encode_indices, Attribute, IndexedSequence, NoteEvent, NoteSequence, Time, Vocabularies, MAX_PITCH,
};
use crate::notes::{encode_events, parse_midi, to_note_events};

const CACHE_MAGIC: [u8; 8] = *b"MLDADATA";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub segment_length: usize,
    pub stride: usize,
    /// Every shift in `−max_transpose..=max_transpose` is materialized.
    pub max_transpose: u8,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { segment_length: 100, stride: 50, max_transpose: 3 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_length == 0 || self.stride == 0 {
            return Err(Error::Config("segment_length and stride must be positive".into()));
        }
        if self.max_transpose > 12 {
            return Err(Error::Config(format!("max_transpose {} exceeds an octave", self.max_transpose)));
        }
        Ok(())
    }
}

/// Window position inside one corpus sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub source: usize,
    pub start: usize,
}

/// Fixed-length windows `[0, L), [stride, stride + L), …`; short tails are dropped.
pub fn segment_corpus(corpus: &[NoteSequence], length: usize, stride: usize) -> Vec<SegmentSpan> {
    assert!(length > 0 && stride > 0, "segment length and stride must be positive");
    corpus
        .iter()
        .enumerate()
        .flat_map(|(source, seq)| {
            let n = seq.len();
            let count = if n < length { 0 } else { (n - length) / stride + 1 };
            (0..count).map(move |i| SegmentSpan { source, start: i * stride })
        })
        .collect()
}

/// Shifts every pitch; `None` when any pitch would leave `0..=127`.
pub fn transpose(events: &[NoteEvent], semitones: i8) -> Option<Vec<NoteEvent>> {
    events
        .iter()
        .map(|ev| {
            let p = i16::from(ev.pitch) + i16::from(semitones);
            (0..=i16::from(MAX_PITCH)).contains(&p).then(|| NoteEvent { pitch: p as u8, ..*ev })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub indexed: IndexedSequence,
    pub source: usize,
    pub start: usize,
    pub transposition: i8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSequence {
    pub id: String,
    /// Corpus label from the manifest (used for latent-space analysis).
    pub label: String,
    pub start: Time,
    pub indexed: IndexedSequence,
}

/// Encoded corpus: vocabularies, whole source sequences and augmented segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub vocabs: Vocabularies,
    pub sources: Vec<SourceSequence>,
    pub segments: Vec<Segment>,
}

impl Dataset {
    /// Segments and transposes every sequence, then encodes against vocabularies
    /// that include all augmented values.
    pub fn build(corpus: &[(NoteSequence, String)], config: &DatasetConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyInput("corpus"));
        }
        let sequences: Vec<NoteSequence> = corpus.iter().map(|(s, _)| s.clone()).collect();
        let mut vocabs = Vocabularies::build(&sequences);

        let max = config.max_transpose as i8;
        let mut raw_segments = Vec::new();
        for span in segment_corpus(&sequences, config.segment_length, config.stride) {
            let window = &sequences[span.source].events[span.start..span.start + config.segment_length];
            for shift in -max..=max {
                if let Some(events) = transpose(window, shift) {
                    vocabs.extend(&events);
                    raw_segments.push((span, shift, events));
                }
            }
        }

        let sources = corpus
            .iter()
            .map(|(seq, label)| {
                Ok(SourceSequence {
                    id: seq.source_id.clone(),
                    label: label.clone(),
                    start: seq.start,
                    indexed: encode_indices(seq, &vocabs)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let segments = raw_segments
            .into_iter()
            .map(|(span, shift, events)| {
                Ok(Segment { indexed: encode_events(&events, &vocabs)?, source: span.source, start: span.start, transposition: shift })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { config: config.clone(), vocabs, sources, segments })
    }

    /// Decodes source `i` back into the note sequence it was built from.
    pub fn sequence(&self, i: usize) -> Result<NoteSequence> {
        let src = &self.sources[i];
        let mut seq = decode_indices(&src.indexed, &self.vocabs)?;
        seq.start = src.start;
        seq.source_id = src.id.clone();
        Ok(seq)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for s in &self.sources {
            if !labels.contains(&s.label) {
                labels.push(s.label.clone());
            }
        }
        labels
    }

    pub fn segment_sequences(&self) -> Vec<IndexedSequence> {
        self.segments.iter().map(|s| s.indexed.clone()).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut c = Container::new(CACHE_MAGIC);
        let config = toml::to_string(&self.config).map_err(|e| Error::Container(e.to_string()))?;
        c.push_text("config", config)?;
        c.push_text("vocab", self.vocabs.to_text())?;
        let ids: String = self.sources.iter().map(|s| format!("{}\t{}\n", s.label, s.id)).collect();
        c.push_text("sources.ids", ids)?;
        let n = self.sources.len();
        c.push("sources.lengths", vec![n], Payload::U32(self.sources.iter().map(|s| s.indexed.len() as u32).collect()))?;
        c.push(
            "sources.start",
            vec![n, 2],
            Payload::I64(self.sources.iter().flat_map(|s| [*s.start.numer(), *s.start.denom()]).collect()),
        )?;
        let total: usize = self.sources.iter().map(|s| s.indexed.len()).sum();
        c.push("sources.indices", vec![total, 3], Payload::U32(flatten(self.sources.iter().map(|s| &s.indexed))))?;
        let m = self.segments.len();
        c.push(
            "segments.meta",
            vec![m, 3],
            Payload::I64(
                self.segments
                    .iter()
                    .flat_map(|s| [s.source as i64, s.start as i64, i64::from(s.transposition)])
                    .collect(),
            ),
        )?;
        c.push(
            "segments.indices",
            vec![m, self.config.segment_length, 3],
            Payload::U32(flatten(self.segments.iter().map(|s| &s.indexed))),
        )?;
        Ok(c.to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(CACHE_MAGIC, bytes)?;
        let config: DatasetConfig =
            toml::from_str(c.require("config")?.as_text()?).map_err(|e| Error::Container(e.to_string()))?;
        let vocabs = Vocabularies::from_text(c.require("vocab")?.as_text()?)?;
        let sizes = vocabs.sizes();
        let ids: Vec<(String, String)> = c
            .require("sources.ids")?
            .as_text()?
            .lines()
            .map(|l| {
                let (label, id) = l.split_once('\t').unwrap_or(("", l));
                (label.to_string(), id.to_string())
            })
            .collect();
        let lengths = c.require("sources.lengths")?.as_u32()?;
        let starts = c.require("sources.start")?.as_i64()?;
        let flat = c.require("sources.indices")?.as_u32()?;
        if ids.len() != lengths.len() || starts.len() != 2 * lengths.len() {
            return Err(Error::Container("source tables disagree in length".into()));
        }
        let mut sources = Vec::with_capacity(lengths.len());
        let mut offset = 0;
        for (i, ((label, id), &len)) in ids.into_iter().zip(lengths).enumerate() {
            let len = len as usize;
            let indexed = unflatten(flat, offset, len)?;
            indexed.check(sizes)?;
            offset += len;
            if starts[2 * i + 1] <= 0 {
                return Err(Error::Container(format!("source {i} has a non-positive start denominator")));
            }
            sources.push(SourceSequence { id, label, start: Time::new(starts[2 * i], starts[2 * i + 1]), indexed });
        }
        let meta = c.require("segments.meta")?.as_i64()?;
        let seg_flat = c.require("segments.indices")?.as_u32()?;
        let len = config.segment_length;
        let mut segments = Vec::with_capacity(meta.len() / 3);
        for (i, m) in meta.chunks_exact(3).enumerate() {
            let indexed = unflatten(seg_flat, i * len, len)?;
            indexed.check(sizes)?;
            let source = usize::try_from(m[0]).ok().filter(|&s| s < sources.len());
            let (Some(source), Ok(start), Ok(transposition)) = (source, usize::try_from(m[1]), i8::try_from(m[2])) else {
                return Err(Error::Container(format!("segment {i} has invalid metadata {m:?}")));
            };
            segments.push(Segment { indexed, source, start, transposition });
        }
        Ok(Dataset { config, vocabs, sources, segments })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn flatten<'a>(seqs: impl Iterator<Item = &'a IndexedSequence>) -> Vec<u32> {
    seqs.flat_map(|s| (0..s.len()).flat_map(move |t| s.get(t).map(|i| i as u32))).collect()
}

fn unflatten(flat: &[u32], offset: usize, len: usize) -> Result<IndexedSequence> {
    let slice = flat
        .get(offset * 3..(offset + len) * 3)
        .ok_or_else(|| Error::Container("index array shorter than declared lengths".into()))?;
    let mut out = IndexedSequence::with_capacity(len);
    for c in slice.chunks_exact(3) {
        out.push([c[0] as usize, c[1] as usize, c[2] as usize]);
    }
    Ok(out)
}

/// Index matrices for a group of equal-length sequences, stored row-major
/// (`rows × length`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: usize,
    pub length: usize,
    pub dt: Vec<usize>,
    pub duration: Vec<usize>,
    pub pitch: Vec<usize>,
    /// Positions of the rows in the list the batch was drawn from.
    pub ids: Vec<usize>,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a IndexedSequence>) -> Result<Self> {
        let seqs: Vec<&IndexedSequence> = seqs.into_iter().collect();
        let Some(first) = seqs.first() else {
            return Err(Error::EmptyInput("batch"));
        };
        let length = first.len();
        if length == 0 {
            return Err(Error::EmptyInput("sequence"));
        }
        let mut batch = Batch {
            rows: seqs.len(),
            length,
            dt: Vec::with_capacity(seqs.len() * length),
            duration: Vec::with_capacity(seqs.len() * length),
            pitch: Vec::with_capacity(seqs.len() * length),
            ids: (0..seqs.len()).collect(),
        };
        for s in seqs {
            if s.len() != length {
                return Err(Error::LengthMismatch(length, s.len()));
            }
            batch.dt.extend_from_slice(&s.dt);
            batch.duration.extend_from_slice(&s.duration);
            batch.pitch.extend_from_slice(&s.pitch);
        }
        Ok(batch)
    }

    fn matrix(&self, attribute: Attribute) -> &[usize] {
        match attribute {
            Attribute::Dt => &self.dt,
            Attribute::Duration => &self.duration,
            Attribute::Pitch => &self.pitch,
        }
    }

    /// Indices of every row at time step `t`.
    pub fn column(&self, attribute: Attribute, t: usize) -> Vec<usize> {
        let m = self.matrix(attribute);
        (0..self.rows).map(|r| m[r * self.length + t]).collect()
    }

    pub fn row(&self, r: usize) -> IndexedSequence {
        let span = r * self.length..(r + 1) * self.length;
        IndexedSequence {
            dt: self.dt[span.clone()].to_vec(),
            duration: self.duration[span.clone()].to_vec(),
            pitch: self.pitch[span].to_vec(),
        }
    }
}

/// Shuffled mini-batches; the final partial batch is kept.
pub struct Batches<'a> {
    sequences: &'a [IndexedSequence],
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

pub fn make_batches(sequences: &[IndexedSequence], batch_size: usize, seed: u64) -> Batches<'_> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Batches { sequences, order, batch_size, next: 0 }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let ids = &self.order[self.next..(self.next + self.batch_size).min(self.order.len())];
        self.next += ids.len();
        Some(Batch::from_sequences(ids.iter().map(|&i| &self.sequences[i])).map(|mut b| {
            b.ids = ids.to_vec();
            b
        }))
    }
}

/// One manifest line: a MIDI path and the corpus it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub label: String,
    pub path: PathBuf,
}

/// Reads `path` or `label<TAB>path` lines; `#` starts a comment.
///
/// Relative paths resolve against the manifest's directory. Unlabelled
/// entries take their parent directory name as the corpus label.
pub fn parse_manifest(text: &str, base: &Path) -> Vec<ManifestEntry> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let (label, path) = match line.split_once('\t') {
                Some((label, path)) => (Some(label.trim().to_string()), path.trim()),
                None => (None, line),
            };
            let path = base.join(path);
            let label = label.unwrap_or_else(|| {
                path.parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "default".into())
            });
            ManifestEntry { label, path }
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text, path.parent().unwrap_or(Path::new("."))))
}

/// Outcome of reading a manifest into a dataset.
#[derive(Debug, Clone)]
pub struct IngestReport {
    pub dataset: Dataset,
    /// Successfully parsed files per corpus label, in manifest order.
    pub files_per_label: Vec<(String, usize)>,
    /// Files that could not be read or parsed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (label, n) in &self.files_per_label {
            out.push_str(&format!("corpus {label}: {n} files\n"));
        }
        let d = &self.dataset;
        let events: usize = d.sources.iter().map(|s| s.indexed.len()).sum();
        out.push_str(&format!("skipped files: {}\n", self.skipped.len()));
        out.push_str(&format!("note events: {events}\n"));
        out.push_str(&format!("segments: {}\n", d.segments.len()));
        let [a, b, c] = d.vocabs.sizes();
        out.push_str(&format!("vocabulary sizes: dT {a}, T {b}, P {c}\n"));
        out
    }
}

/// Parses every manifest entry, skipping unreadable files with a warning,
/// and builds the dataset from the rest.
pub fn ingest(entries: &[ManifestEntry], config: &DatasetConfig) -> Result<IngestReport> {
    let mut corpus = Vec::new();
    let mut skipped = Vec::new();
    let mut files_per_label: Vec<(String, usize)> = Vec::new();
    for entry in entries {
        let parsed = std::fs::read(&entry.path)
            .map_err(|e| Error::io(&entry.path, e))
            .and_then(|bytes| parse_midi(&bytes))
            .and_then(|notes| to_note_events(&notes));
        match parsed {
            Ok(seq) => {
                corpus.push((seq.with_source(entry.path.display().to_string()), entry.label.clone()));
                match files_per_label.iter_mut().find(|(l, _)| *l == entry.label) {
                    Some((_, n)) => *n += 1,
                    None => files_per_label.push((entry.label.clone(), 1)),
                }
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path.display());
                skipped.push((entry.path.clone(), e.to_string()));
            }
        }
    }
    if corpus.is_empty() {
        return Err(Error::EmptyInput("no manifest entry could be parsed"));
    }
    let dataset = Dataset::build(&corpus, config)?;
    Ok(IngestReport { dataset, files_per_label, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_of_len(n: usize, base_pitch: u8) -> NoteSequence {
        let events = (0..n)
            .map(|i| {
                let dt = if i == 0 { Time::new(0, 1) } else { Time::new((i % 3) as i64, 2) };
                NoteEvent::new(dt, Time::new(1 + (i % 2) as i64, 4), base_pitch + (i % 12) as u8)
            })
            .collect();
        NoteSequence::new(events, format!("seq{n}"))
    }

    #[test]
    fn window_counts() {
        assert_eq!(segment_corpus(&[seq_of_len(100, 60)], 100, 50).len(), 1);
        let spans = segment_corpus(&[seq_of_len(150, 60)], 100, 50);
        assert_eq!(spans.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 50]);
        assert_eq!(segment_corpus(&[seq_of_len(149, 60)], 100, 50).len(), 1);
        assert_eq!(segment_corpus(&[seq_of_len(99, 60)], 100, 50).len(), 0);
    }

    #[test]
    fn window_count_matches_closed_form_by_enumeration() {
        let lens = [0usize, 3, 99, 100, 101, 149, 150, 151, 260, 777];
        let corpus: Vec<NoteSequence> = lens.iter().filter(|&&n| n > 0).map(|&n| seq_of_len(n, 40)).collect();
        for (length, stride) in [(100, 50), (7, 3), (20, 20), (1, 1)] {
            let brute: usize = corpus
                .iter()
                .map(|s| (0..s.len()).filter(|&st| st % stride == 0 && st + length <= s.len()).count())
                .sum();
            let closed: usize = corpus
                .iter()
                .map(|s| if s.len() < length { 0 } else { (s.len() - length) / stride + 1 })
                .sum();
            assert_eq!(brute, closed);
            assert_eq!(segment_corpus(&corpus, length, stride).len(), closed);
        }
    }

    #[test]
    fn transposition_rules() {
        let ev = |p| NoteEvent::new(Time::new(1, 2), Time::new(1, 4), p);
        let window = vec![ev(60), ev(64)];
        assert_eq!(transpose(&window, 0).unwrap(), window);
        let up = transpose(&window, 3).unwrap();
        assert_eq!(up.iter().map(|e| e.pitch).collect::<Vec<_>>(), vec![63, 67]);
        assert!(up.iter().zip(&window).all(|(a, b)| a.dt == b.dt && a.duration == b.duration));
        assert!(transpose(&[ev(127)], 1).is_none());
        assert!(transpose(&[ev(1)], -2).is_none());
    }

    #[test]
    fn dataset_expands_shifts_and_stays_in_vocabulary() {
        let mut high = seq_of_len(30, 110);
        high.events[5].pitch = 126;
        let corpus = vec![(seq_of_len(30, 60), "a".to_string()), (high, "b".to_string())];
        let config = DatasetConfig { segment_length: 10, stride: 10, max_transpose: 3 };
        let ds = Dataset::build(&corpus, &config).unwrap();
        // 3 windows per sequence; second sequence's first window loses +2 and +3
        assert_eq!(ds.segments.len(), 3 * 7 + 3 * 7 - 2);
        for seg in &ds.segments {
            seg.indexed.check(ds.vocabs.sizes()).unwrap();
            assert!(seg.transposition.abs() <= 3);
            let orig = &corpus[seg.source].0.events[seg.start..seg.start + 10];
            let decoded = decode_indices(&seg.indexed, &ds.vocabs).unwrap();
            for (t, (d, o)) in decoded.events.iter().zip(orig).enumerate() {
                assert_eq!(i16::from(d.pitch) - i16::from(o.pitch), i16::from(seg.transposition));
                assert_eq!(d.duration, o.duration);
                if t > 0 {
                    assert_eq!(d.dt, o.dt);
                }
            }
        }
        assert_eq!(ds.sequence(0).unwrap(), corpus[0].0);
        assert_eq!(ds.labels(), vec!["a", "b"]);
    }

    #[test]
    fn cache_round_trip_is_exact_and_deterministic() {
        let mut late = seq_of_len(25, 50);
        late.start = Time::new(7, 3);
        let corpus = vec![(seq_of_len(40, 60), "x".to_string()), (late, "y".to_string())];
        let config = DatasetConfig { segment_length: 12, stride: 6, max_transpose: 2 };
        let ds = Dataset::build(&corpus, &config).unwrap();
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.sequence(1).unwrap(), corpus[1].0);
        assert_eq!(Dataset::build(&corpus, &config).unwrap().to_bytes().unwrap(), bytes);
        let mut corrupt = bytes.clone();
        corrupt.truncate(bytes.len() - 5);
        assert!(Dataset::from_bytes(&corrupt).is_err());
    }

    fn dummy(n: usize) -> Vec<IndexedSequence> {
        (0..n).map(|i| IndexedSequence { dt: vec![i, 0], duration: vec![0, 1], pitch: vec![1, i] }).collect()
    }

    #[test]
    fn batching_sizes_and_determinism() {
        let seqs = dummy(256);
        let sizes: Vec<usize> = make_batches(&seqs, 128, 1).map(|b| b.unwrap().rows).collect();
        assert_eq!(sizes, vec![128, 128]);
        let seqs = dummy(130);
        let sizes: Vec<usize> = make_batches(&seqs, 128, 1).map(|b| b.unwrap().rows).collect();
        assert_eq!(sizes, vec![128, 2]);
        let a: Vec<Batch> = make_batches(&seqs, 16, 9).map(Result::unwrap).collect();
        let b: Vec<Batch> = make_batches(&seqs, 16, 9).map(Result::unwrap).collect();
        assert_eq!(a, b);
        let c: Vec<Batch> = make_batches(&seqs, 16, 10).map(Result::unwrap).collect();
        assert_ne!(a, c);
        assert_eq!(make_batches(&[], 4, 0).count(), 0);
    }

    #[test]
    fn batches_partition_the_input() {
        let seqs = dummy(37);
        let mut seen: Vec<usize> = make_batches(&seqs, 8, 3).flat_map(|b| b.unwrap().ids).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        for batch in make_batches(&seqs, 8, 3) {
            let batch = batch.unwrap();
            for (r, &id) in batch.ids.iter().enumerate() {
                assert_eq!(batch.row(r), seqs[id]);
            }
        }
    }

    #[test]
    fn manifest_parsing() {
        let text = "# comment\nnottingham\ta.mid\n\njsb/b.mid\n";
        let entries = parse_manifest(text, Path::new("/data"));
        assert_eq!(
            entries,
            vec![
                ManifestEntry { label: "nottingham".into(), path: "/data/a.mid".into() },
                ManifestEntry { label: "jsb".into(), path: "/data/jsb/b.mid".into() },
            ]
        );
    }
}
