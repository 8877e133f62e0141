//! Core data carried between pipeline stages.
//!
//! Unit IDs are 0-based everywhere (`0..K`). Real values are held as `f64`;
//! on-disk formats narrow to `f32`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete unit ID in `0..K`.
pub type Unit = u32;

/// Per-utterance `frames x dim` matrix of continuous frame representations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    utterance_id: String,
    frame_rate_hz: f64,
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from frame-major `data`; rejects empty shapes and non-finite values.
    pub fn new(
        utterance_id: impl Into<String>,
        frame_rate_hz: f64,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "feature payload of {} values is not a positive multiple of dim {dim}",
                data.len()
            )));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::invalid(format!("frame rate {frame_rate_hz} must be > 0")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature value at frame {}, dim {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            frame_rate_hz,
            frames: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn from_rows(
        utterance_id: impl Into<String>,
        frame_rate_hz: f64,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged feature rows"));
        }
        Self::new(utterance_id, frame_rate_hz, dim, rows.concat())
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// K cluster centroids plus training occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centroids: Vec<f64>,
    counts: Vec<u64>,
    source_tag: String,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "codebook payload of {} values does not form K >= 1 rows of dim {dim}",
                centroids.len()
            )));
        }
        let k = centroids.len() / dim;
        if counts.len() != k {
            return Err(Error::invalid(format!(
                "codebook has {k} centroids but {} counts",
                counts.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite centroid value"));
        }
        let mut seen = HashSet::with_capacity(k);
        for (i, row) in centroids.chunks_exact(dim).enumerate() {
            let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::invalid(format!("centroid {i} duplicates an earlier row")));
            }
        }
        Ok(Self {
            k,
            dim,
            centroids,
            counts,
            source_tag: String::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("ragged centroid rows"));
        }
        Self::new(dim, rows.concat(), vec![0; rows.len()])
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, unit: usize) -> &[f64] {
        &self.centroids[unit * self.dim..(unit + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.centroids.chunks_exact(self.dim)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }
}

/// Frame-level unit transcription of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSequence {
    pub utterance_id: String,
    pub units: Vec<Unit>,
}

impl UnitSequence {
    pub fn new(utterance_id: impl Into<String>, units: Vec<Unit>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            units,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Run-length collapsed units: adjacent units differ, durations in frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupedSequence {
    utterance_id: String,
    units: Vec<Unit>,
    durations: Vec<u32>,
}

impl DedupedSequence {
    pub fn new(utterance_id: impl Into<String>, units: Vec<Unit>, durations: Vec<u32>) -> Result<Self> {
        if units.len() != durations.len() {
            return Err(Error::invalid(format!(
                "{} units but {} durations",
                units.len(),
                durations.len()
            )));
        }
        if durations.contains(&0) {
            return Err(Error::invalid("durations must be positive"));
        }
        if let Some(i) = units.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!(
                "adjacent runs {i} and {} carry the same unit {}",
                i + 1,
                units[i]
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            units,
            durations,
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn durations(&self) -> &[u32] {
        &self.durations
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Total frame count covered by the runs.
    pub fn frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// Frame offset at which each run starts.
    pub fn run_starts(&self) -> Vec<usize> {
        let mut acc = 0usize;
        self.durations
            .iter()
            .map(|&d| {
                let start = acc;
                acc += d as usize;
                start
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Phoneme,
    Speaker,
    Gender,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelKind::Phoneme => "phoneme",
            LabelKind::Speaker => "speaker",
            LabelKind::Gender => "gender",
        })
    }
}

impl FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phoneme" | "phone" => Ok(LabelKind::Phoneme),
            "speaker" => Ok(LabelKind::Speaker),
            "gender" => Ok(LabelKind::Gender),
            other => Err(Error::invalid(format!("unknown label kind {other:?}"))),
        }
    }
}

/// Reserved category for frames not covered by any segment.
pub const SIL: &str = "SIL";

/// Per-frame categorical labels for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAlignment {
    pub utterance_id: String,
    pub kind: LabelKind,
    pub frame_labels: Vec<u32>,
    pub category_names: Arc<[String]>,
}

impl LabelAlignment {
    pub fn new(
        utterance_id: impl Into<String>,
        kind: LabelKind,
        frame_labels: Vec<u32>,
        category_names: Arc<[String]>,
    ) -> Result<Self> {
        if let Some(bad) = frame_labels
            .iter()
            .find(|&&c| c as usize >= category_names.len())
        {
            return Err(Error::invalid(format!(
                "label ID {bad} has no category name ({} names)",
                category_names.len()
            )));
        }
        Ok(Self {
            utterance_id: utterance_id.into(),
            kind,
            frame_labels,
            category_names,
        })
    }

    pub fn frames(&self) -> usize {
        self.frame_labels.len()
    }

    pub fn name(&self, category: u32) -> &str {
        &self.category_names[category as usize]
    }

    /// Category ID of the reserved silence label, when present.
    pub fn sil_id(&self) -> Option<u32> {
        self.category_names
            .iter()
            .position(|n| n == SIL)
            .map(|i| i as u32)
    }
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub utterance_id: String,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(utterance_id: impl Into<String>, sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            sample_rate_hz,
            samples,
        }
    }

    /// Integral samples per feature frame, or an error if the rates do not divide.
    pub fn samples_per_frame(&self, frame_rate_hz: f64) -> Result<usize> {
        let ratio = f64::from(self.sample_rate_hz) / frame_rate_hz;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "{}: sample rate {} Hz is not an integer multiple of frame rate {frame_rate_hz} Hz",
                self.utterance_id, self.sample_rate_hz
            )));
        }
        Ok(rounded as usize)
    }
}
