//! Shared test fixtures: a synthetic two-style MIDI corpus written byte by
//! byte, independently of the library's writer, together with the notes
//! each file is known to contain.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use melodia::notes::{AbsoluteNote, Time};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHORALE: &str = "chorale";
pub const FOLK: &str = "folk";

/// One generated file and its ground truth.
pub struct Piece {
    pub label: &'static str,
    pub name: String,
    pub bytes: Vec<u8>,
    /// Pitched notes in the file, sorted; percussion excluded.
    pub notes: Vec<AbsoluteNote>,
}

fn vlq(mut v: u64) -> Vec<u8> {
    let mut out = vec![(v & 0x7f) as u8];
    v >>= 7;
    while v > 0 {
        out.push(0x80 | (v & 0x7f) as u8);
        v >>= 7;
    }
    out.reverse();
    out
}

/// Raw event list of one track: `(tick, priority, bytes)`; lower priority
/// sorts first at equal ticks.
#[derive(Default)]
struct Track {
    events: Vec<(u64, u8, Vec<u8>)>,
}

impl Track {
    fn meta(&mut self, tick: u64, kind: u8, data: &[u8]) {
        let mut e = vec![0xff, kind];
        e.extend(vlq(data.len() as u64));
        e.extend_from_slice(data);
        self.events.push((tick, 0, e));
    }

    fn channel(&mut self, tick: u64, priority: u8, bytes: Vec<u8>) {
        self.events.push((tick, priority, bytes));
    }

    /// Note with either a 0x80 release or a velocity-0 note-on.
    fn note(&mut self, channel: u8, on: u64, off: u64, pitch: u8, velocity: u8, zero_velocity_off: bool) {
        self.channel(on, 2, vec![0x90 | channel, pitch, velocity]);
        let release = if zero_velocity_off { vec![0x90 | channel, pitch, 0] } else { vec![0x80 | channel, pitch, 0x40] };
        self.channel(off, 1, release);
    }

    /// Serializes with delta times, optionally compressing repeated status
    /// bytes (running status). Meta and sysex events cancel running status.
    fn encode(mut self, running_status: bool) -> Vec<u8> {
        self.events.sort_by_key(|(t, p, _)| (*t, *p));
        let mut body = Vec::new();
        let mut last_tick = 0;
        let mut running: Option<u8> = None;
        let end = self.events.last().map_or(0, |e| e.0);
        for (tick, _, bytes) in &self.events {
            body.extend(vlq(tick - last_tick));
            last_tick = *tick;
            let status = bytes[0];
            if status >= 0xf0 {
                running = None;
                body.extend_from_slice(bytes);
            } else if running_status && running == Some(status) {
                body.extend_from_slice(&bytes[1..]);
            } else {
                running = Some(status);
                body.extend_from_slice(bytes);
            }
        }
        body.extend(vlq(end.saturating_sub(last_tick)));
        body.extend_from_slice(&[0xff, 0x2f, 0x00]);
        let mut chunk = b"MTrk".to_vec();
        chunk.extend((body.len() as u32).to_be_bytes());
        chunk.extend(body);
        chunk
    }
}

fn file(format: u16, tpq: u16, tracks: Vec<Vec<u8>>, junk_chunk: bool) -> Vec<u8> {
    let mut out = b"MThd".to_vec();
    out.extend(6u32.to_be_bytes());
    out.extend(format.to_be_bytes());
    out.extend((tracks.len() as u16).to_be_bytes());
    out.extend(tpq.to_be_bytes());
    if junk_chunk {
        out.extend_from_slice(b"XFIH");
        out.extend(4u32.to_be_bytes());
        out.extend_from_slice(&[1, 2, 3, 4]);
    }
    for t in tracks {
        out.extend(t);
    }
    out
}

fn quarters(ticks: u64, tpq: u16) -> Time {
    Time::new(ticks as i64, i64::from(tpq))
}

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];

fn scale_pitches(root: u8, lo: u8, hi: u8, steps: &[u8]) -> Vec<u8> {
    (lo..=hi).filter(|p| steps.contains(&((p + 12 - root % 12) % 12))).collect()
}

/// Four-voice homophonic chorale on a format-1 file: a conductor track and
/// one track per voice. Each chord sounds a random subset of the voices,
/// always including the soprano.
pub fn chorale(index: usize, seed: u64) -> Piece {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpq: u16 = *[480u16, 240, 960].choose(&mut rng).unwrap();
    let q = u64::from(tpq);
    let root = rng.random_range(0..12u8);
    let ranges = [(43u8, 57u8), (53, 65), (60, 72), (67, 79)];
    let zero_velocity_off = rng.random_bool(0.5);
    let running = rng.random_bool(0.7);

    let mut conductor = Track::default();
    conductor.meta(0, 0x03, b"chorale");
    conductor.meta(0, 0x51, &[0x07, 0xa1, 0x20]);
    conductor.meta(0, 0x58, &[4, 2, 24, 8]);
    let mut voices: Vec<Track> = (0..4).map(|_| Track::default()).collect();
    let mut drums = Track::default();
    let with_drums = index % 5 == 3;

    let mut notes = Vec::new();
    let mut tick = if index % 7 == 2 { q } else { 0 };
    let chords = rng.random_range(40..70);
    for _ in 0..chords {
        let len = *[q, q, q / 2, 2 * q].choose(&mut rng).unwrap();
        let degree = rng.random_range(0..7usize);
        let triad: Vec<u8> = [0, 2, 4].iter().map(|d| (root + MAJOR[(degree + d) % 7]) % 12).collect();
        for (v, &(lo, hi)) in ranges.iter().enumerate() {
            if v != 3 && !rng.random_bool(0.6) {
                continue;
            }
            let options = scale_pitches(0, lo, hi, &triad);
            let pitch = *options.choose(&mut rng).unwrap();
            voices[v].note(v as u8, tick, tick + len, pitch, rng.random_range(50..100), zero_velocity_off);
            notes.push(AbsoluteNote { onset: quarters(tick, tpq), duration: quarters(len, tpq), pitch });
        }
        if with_drums {
            drums.note(9, tick, tick + q / 4, 36, 100, false);
        }
        tick += len;
        if rng.random_bool(0.05) {
            tick += q / 2;
        }
    }
    let mut tracks = vec![conductor.encode(running)];
    for (v, mut t) in voices.into_iter().enumerate() {
        t.channel(0, 0, vec![0xc0 | v as u8, 52]);
        t.channel(0, 0, vec![0xb0 | v as u8, 7, 100]);
        tracks.push(t.encode(running));
    }
    if with_drums {
        tracks.push(drums.encode(running));
    }
    notes.sort();
    Piece { label: CHORALE, name: format!("chorale_{index:03}.mid"), bytes: file(1, tpq, tracks, index % 4 == 1), notes }
}

/// Monophonic tune in a high register on a single format-0 track with
/// running status, velocity-0 releases, triplets and dotted rhythms.
pub fn folk(index: usize, seed: u64) -> Piece {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tpq: u16 = *[96u16, 192, 384].choose(&mut rng).unwrap();
    let q = u64::from(tpq);
    let root = rng.random_range(0..12u8);
    let pentatonic = [0u8, 2, 4, 7, 9];
    let pitches = scale_pitches(root, 72, 91, &pentatonic);
    let patterns: [&[u64]; 5] = [&[q / 2, q / 2], &[3 * q / 4, q / 4], &[q / 3, q / 3, q / 3], &[q], &[3 * q / 2, q / 2]];

    let mut track = Track::default();
    track.meta(0, 0x03, b"tune");
    track.channel(0, 0, vec![0xc0, 73]);
    track.channel(0, 0, vec![0xf0, 0x03, 0x7e, 0x7f, 0xf7]);
    let mut notes = Vec::new();
    let mut tick = 0;
    let mut at = rng.random_range(0..pitches.len());
    let bars = rng.random_range(50..80);
    for _ in 0..bars {
        for &len in *patterns.choose(&mut rng).unwrap() {
            let step: i64 = rng.random_range(-2..=2);
            at = (at as i64 + step).clamp(0, pitches.len() as i64 - 1) as usize;
            let pitch = pitches[at];
            // Slightly detached articulation on long notes.
            let sounding = if len >= q && rng.random_bool(0.3) { len - q / 4 } else { len };
            track.note(0, tick, tick + sounding, pitch, 90, true);
            notes.push(AbsoluteNote { onset: quarters(tick, tpq), duration: quarters(sounding, tpq), pitch });
            if rng.random_bool(0.1) {
                track.channel(tick + sounding / 2, 3, vec![0xe0, 0x00, 0x41]);
            }
            tick += len;
        }
    }
    notes.sort();
    Piece { label: FOLK, name: format!("folk_{index:03}.mid"), bytes: file(0, tpq, vec![track.encode(true)], false), notes }
}

/// `n` pieces alternating between the two styles.
pub fn corpus(n: usize, seed: u64) -> Vec<Piece> {
    (0..n)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            if i % 2 == 0 {
                chorale(i, s)
            } else {
                folk(i, s)
            }
        })
        .collect()
}

/// Writes the pieces under `dir/<label>/` and returns a manifest path.
pub fn write_corpus(dir: &Path, pieces: &[Piece]) -> PathBuf {
    let mut manifest = String::new();
    for p in pieces {
        let sub = dir.join(p.label);
        std::fs::create_dir_all(&sub).unwrap();
        std::fs::write(sub.join(&p.name), &p.bytes).unwrap();
        manifest.push_str(&format!("{}\t{}/{}\n", p.label, p.label, p.name));
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Random index sequences over the given vocabulary sizes.
pub fn random_sequences(n: usize, len: usize, sizes: [usize; 3], seed: u64) -> Vec<melodia::notes::IndexedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut s = melodia::notes::IndexedSequence::with_capacity(len);
            for _ in 0..len {
                s.push([rng.random_range(0..sizes[0]), rng.random_range(0..sizes[1]), rng.random_range(0..sizes[2])]);
            }
            s
        })
        .collect()
}

/// Small configuration for exhaustive numerical checks.
pub fn tiny_config(hidden: usize, latent: usize, sizes: [usize; 3]) -> melodia::model::ModelConfig {
    melodia::model::ModelConfig {
        hidden,
        latent,
        embed_dt: 3,
        embed_duration: 3,
        embed_pitch: 4,
        ..Default::default()
    }
    .with_vocab_sizes(sizes)
}

/// Worst gradient disagreement of a model against central differences.
pub struct GradCheck {
    pub checked: usize,
    pub worst_relative: f64,
    pub worst_name: String,
    pub failures: usize,
    /// Entries whose gradient magnitude is at the rounding-noise level.
    pub below_noise: usize,
}

/// Compares analytic ELBO gradients with central differences of step `h`.
/// An entry passes when its relative error is within `tol`, or its absolute
/// error is at the level of the loss's rounding noise.
pub fn grad_check(
    model: &melodia::model::MusicVae<f64>,
    batch: &melodia::dataset::Batch,
    beta: f64,
    mode: &melodia::model::LatentMode<f64>,
    h: f64,
    tol: f64,
) -> GradCheck {
    use melodia::nn::Graph;
    let loss = |m: &melodia::model::MusicVae<f64>| {
        let mut g = Graph::inference(m.params());
        let terms = m.elbo_graph(&mut g, batch, beta, mode).unwrap();
        g.value(terms.loss).item()
    };
    let mut g = Graph::new(model.params());
    let terms = model.elbo_graph(&mut g, batch, beta, mode).unwrap();
    let base = g.value(terms.loss).item();
    let grads = g.backward(terms.loss).unwrap();
    let noise = 8.0 * f64::EPSILON * base.abs().max(1.0) / h;
    let mut probe = model.clone();
    let mut out = GradCheck { checked: 0, worst_relative: 0.0, worst_name: String::new(), failures: 0, below_noise: 0 };
    let ids: Vec<_> = model.params().iter().map(|(id, p)| (id, p.name.clone(), p.value.len())).collect();
    for (id, name, len) in ids {
        for i in 0..len {
            let orig = probe.params().value(id).data()[i];
            probe.params_mut().value_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.params_mut().value_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.params_mut().value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).data()[i];
            let abs = (numeric - analytic).abs();
            let rel = abs / numeric.abs().max(analytic.abs()).max(f64::MIN_POSITIVE);
            out.checked += 1;
            // Relative error is meaningless for gradients at the rounding
            // noise level; those are held to the absolute noise bound.
            if numeric.abs().max(analytic.abs()) <= noise / tol {
                out.below_noise += 1;
                if abs > noise {
                    out.failures += 1;
                }
                continue;
            }
            if rel > tol {
                out.failures += 1;
            }
            if rel > out.worst_relative {
                out.worst_relative = rel;
                out.worst_name = format!("{name}[{i}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    out
}
