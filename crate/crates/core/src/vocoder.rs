//! Lookup vocoder: resynthesis by concatenating stored audio segments.
//!
//! Each deduplicated run `i` is mapped to a key built from its unit, its
//! duration and/or its neighbours. The table keeps the audio span of the
//! first appearance of every key; a run whose key is already stored emits
//! that span, otherwise it emits its own source span.
//!
//! The table is filled utterance by utterance along a seeded shuffle of the
//! corpus. Keys first seen inside an utterance become visible once that
//! utterance is finished, so an utterance resynthesized against a cold table
//! reproduces its input exactly.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::types::{DedupedSequence, Unit, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    /// `(u_i)`
    LocalSingle,
    /// `(u_i, l_i)`
    LocalFull,
    /// `(u_{i-1}, u_i, u_{i+1})`
    ContextSingle,
    /// `(u_{i-1}, u_i, u_{i+1}, l_i)`
    ContextFull,
}

impl KeyKind {
    pub const ALL: [KeyKind; 4] = [
        KeyKind::LocalSingle,
        KeyKind::LocalFull,
        KeyKind::ContextSingle,
        KeyKind::ContextFull,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            KeyKind::LocalSingle => "ls",
            KeyKind::LocalFull => "lf",
            KeyKind::ContextSingle => "cs",
            KeyKind::ContextFull => "cf",
        }
    }
}

impl fmt::Display for KeyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for KeyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ls" | "local-single" => Ok(KeyKind::LocalSingle),
            "lf" | "local-full" => Ok(KeyKind::LocalFull),
            "cs" | "context-single" => Ok(KeyKind::ContextSingle),
            "cf" | "context-full" => Ok(KeyKind::ContextFull),
            other => Err(Error::invalid(format!("unknown key kind {other:?} (ls|lf|cs|cf)"))),
        }
    }
}

/// Lookup key; context keys use `K` for "before start" and `K + 1` for "after end".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key {
    parts: [u32; 4],
    len: u8,
}

impl Key {
    fn new(parts: &[u32]) -> Self {
        let mut buf = [0u32; 4];
        buf[..parts.len()].copy_from_slice(parts);
        Self {
            parts: buf,
            len: parts.len() as u8,
        }
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts[..self.len as usize]
    }
}

/// Sentinel units for sequence boundaries in a vocabulary of size `k`.
pub fn sentinels(k: usize) -> (Unit, Unit) {
    (k as Unit, k as Unit + 1)
}

pub fn make_key(d: &DedupedSequence, i: usize, kind: KeyKind, k: usize) -> Result<Key> {
    let units = d.units();
    if i >= units.len() {
        return Err(Error::invalid(format!(
            "run index {i} out of range for {} runs",
            units.len()
        )));
    }
    let (bos, eos) = sentinels(k);
    let u = units[i];
    let l = d.durations()[i];
    let prev = if i == 0 { bos } else { units[i - 1] };
    let next = units.get(i + 1).copied().unwrap_or(eos);
    Ok(match kind {
        KeyKind::LocalSingle => Key::new(&[u]),
        KeyKind::LocalFull => Key::new(&[u, l]),
        KeyKind::ContextSingle => Key::new(&[prev, u, next]),
        KeyKind::ContextFull => Key::new(&[prev, u, next, l]),
    })
}

/// Where a stored segment came from: corpus index and frame span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSource {
    pub utterance: usize,
    pub frame_start: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSegment {
    pub samples: Vec<f64>,
    pub source: SegmentSource,
}

/// Insertion-ordered key -> segment table; entries are never overwritten.
#[derive(Debug, Clone, Default)]
pub struct SegmentTable {
    index: HashMap<Key, usize>,
    entries: Vec<(Key, StoredSegment)>,
    pub fill_seed: u64,
}

impl SegmentTable {
    pub fn new(fill_seed: u64) -> Self {
        Self {
            fill_seed,
            ..Self::default()
        }
    }

    pub fn get(&self, key: &Key) -> Option<&StoredSegment> {
        self.index.get(key).map(|&i| &self.entries[i].1)
    }

    /// Stores `segment` unless the key is present; returns whether it was inserted.
    pub fn insert_first(&mut self, key: Key, segment: StoredSegment) -> bool {
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.entries.len());
        self.entries.push((key, segment));
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Key, &StoredSegment)> {
        self.entries.iter().map(|(k, s)| (k, s))
    }
}

/// One emitted segment of a resynthesized utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmittedSegment {
    pub run: usize,
    pub hit: bool,
    pub source: SegmentSource,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resynthesis {
    pub waveform: Waveform,
    pub segments: Vec<EmittedSegment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceMemorization {
    pub utterance_id: String,
    pub unseen: usize,
    pub keys: usize,
}

impl UtteranceMemorization {
    pub fn percent(&self) -> f64 {
        if self.keys == 0 {
            0.0
        } else {
            100.0 * self.unseen as f64 / self.keys as f64
        }
    }
}

/// Per-utterance unseen-key statistics, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemorizationReport {
    pub per_utterance: Vec<UtteranceMemorization>,
}

impl MemorizationReport {
    /// Unseen keys over all keys in the corpus, in percent.
    pub fn pooled_rate(&self) -> Result<f64> {
        let keys: usize = self.per_utterance.iter().map(|u| u.keys).sum();
        if keys == 0 {
            return Err(Error::invalid("memorization report has no keys"));
        }
        let unseen: usize = self.per_utterance.iter().map(|u| u.unseen).sum();
        Ok(100.0 * unseen as f64 / keys as f64)
    }

    /// `utterance_id<TAB>percent` lines followed by a `mean` line.
    pub fn to_tsv(&self, pooled: bool) -> Result<String> {
        let mut out = String::from("utterance_id\tunseen_percent\n");
        for u in &self.per_utterance {
            out.push_str(&format!("{}\t{}\n", u.utterance_id, u.percent()));
        }
        let mean = if pooled {
            self.pooled_rate()?
        } else {
            memorization_rate(self)?
        };
        out.push_str(&format!("mean\t{mean}\n"));
        Ok(out)
    }
}

/// Unweighted mean over utterances of the unseen-key percentage.
pub fn memorization_rate(report: &MemorizationReport) -> Result<f64> {
    if report.per_utterance.is_empty() {
        return Err(Error::invalid("memorization report is empty"));
    }
    Ok(report.per_utterance.iter().map(UtteranceMemorization::percent).sum::<f64>()
        / report.per_utterance.len() as f64)
}

/// A deduplicated transcription paired with its source audio.
#[derive(Debug, Clone, Copy)]
pub struct LvItem<'a> {
    pub units: &'a DedupedSequence,
    pub wave: &'a Waveform,
}

/// Sample span of every run; the last run also takes any sub-frame tail.
fn run_spans(item: &LvItem<'_>, frame_rate_hz: f64) -> Result<Vec<(usize, usize)>> {
    let spf = item.wave.samples_per_frame(frame_rate_hz)?;
    let frames = item.units.frames();
    let n = item.wave.samples.len();
    if n < frames * spf || n >= (frames + 1) * spf {
        return Err(Error::invalid(format!(
            "{}: {} samples do not match {frames} frames of {spf} samples",
            item.units.utterance_id(),
            n
        )));
    }
    let runs = item.units.len();
    Ok(item
        .units
        .run_starts()
        .into_iter()
        .zip(item.units.durations())
        .enumerate()
        .map(|(i, (start, &dur))| {
            let end = if i + 1 == runs { n } else { (start + dur as usize) * spf };
            (start * spf, end)
        })
        .collect())
}

/// Resynthesizes every utterance with the lookup vocoder.
///
/// Results come back in corpus order; the fill order is a shuffle keyed by
/// `fill_seed`. `k` is the vocabulary size used for boundary sentinels.
pub fn lv_resynthesize(
    corpus: &[LvItem<'_>],
    frame_rate_hz: f64,
    kind: KeyKind,
    k: usize,
    fill_seed: u64,
) -> Result<(Vec<Resynthesis>, MemorizationReport, SegmentTable)> {
    let spans: Vec<Vec<(usize, usize)>> = corpus
        .iter()
        .map(|item| run_spans(item, frame_rate_hz))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::stream(fill_seed, purpose::LV_FILL_ORDER));

    let mut table = SegmentTable::new(fill_seed);
    let mut results: Vec<Option<(Resynthesis, UtteranceMemorization)>> = vec![None; corpus.len()];
    for &u in &order {
        let item = &corpus[u];
        let starts = item.units.run_starts();
        let mut pending: Vec<(Key, StoredSegment)> = Vec::new();
        let mut samples = Vec::with_capacity(item.wave.samples.len());
        let mut segments = Vec::with_capacity(item.units.len());
        let mut unseen = 0;
        for (i, &(s0, s1)) in spans[u].iter().enumerate() {
            let key = make_key(item.units, i, kind, k)?;
            match table.get(&key) {
                Some(stored) => {
                    samples.extend_from_slice(&stored.samples);
                    segments.push(EmittedSegment {
                        run: i,
                        hit: true,
                        source: stored.source,
                        samples: stored.samples.len(),
                    });
                }
                None => {
                    unseen += 1;
                    let own = &item.wave.samples[s0..s1];
                    let source = SegmentSource {
                        utterance: u,
                        frame_start: starts[i],
                        frames: item.units.durations()[i] as usize,
                    };
                    samples.extend_from_slice(own);
                    segments.push(EmittedSegment {
                        run: i,
                        hit: false,
                        source,
                        samples: own.len(),
                    });
                    if !pending.iter().any(|(pk, _)| *pk == key) {
                        pending.push((
                            key,
                            StoredSegment {
                                samples: own.to_vec(),
                                source,
                            },
                        ));
                    }
                }
            }
        }
        for (key, seg) in pending {
            table.insert_first(key, seg);
        }
        results[u] = Some((
            Resynthesis {
                waveform: Waveform::new(
                    item.units.utterance_id(),
                    item.wave.sample_rate_hz,
                    samples,
                ),
                segments,
            },
            UtteranceMemorization {
                utterance_id: item.units.utterance_id().to_string(),
                unseen,
                keys: item.units.len(),
            },
        ));
    }

    let mut outputs = Vec::with_capacity(corpus.len());
    let mut report = MemorizationReport::default();
    for r in results {
        let (res, mem) = r.expect("every utterance is visited once");
        outputs.push(res);
        report.per_utterance.push(mem);
    }
    Ok((outputs, report, table))
}
