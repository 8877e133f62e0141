//! Seeded synthetic corpora: Gaussian-blob features with planted phone,
//! speaker and gender labels, matching toy audio, and a planted unit-swap
//! re-encoder for circular resynthesis.
//!
//! Generation recipe, for a fixed seed:
//! 1. `phones` blob centers are drawn uniformly in `[-spread, spread]^dim`;
//!    blob 0 is silence. Draws use one RNG stream, in this order.
//! 2. Planted pairs are `(1,2), (3,4), ...`; each pair swaps both ways with
//!    `swap_probability`.
//! 3. Each utterance is a silence run, `runs` phone runs, a silence run. A run
//!    never repeats its predecessor nor follows its planted partner, so a
//!    swapped run can never fuse with a neighbour.
//! 4. Frames are `center + speaker offset + N(0, blob_sigma^2)`, rounded to
//!    single precision so in-memory and on-disk corpora agree exactly.
//! 5. Audio renders each frame as a blob-specific tone plus noise on the
//!    16-bit grid, `sample_rate_hz / frame_rate_hz` samples per frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_feats, write_wav};
use crate::redundancy::{PlantedSwap, SyntheticReencoder};
use crate::rng::{self, purpose};
use crate::types::{Codebook, FeatureMatrix, LabelAlignment, LabelKind, Waveform, SIL};

/// Phone symbols for the blobs after silence (TIMIT folded set).
const PHONES: [&str; 38] = [
    "IY", "S", "AA", "N", "EH", "T", "UW", "Z", "AE", "M", "ER", "K", "AH", "SH", "OW", "D", "EY", "F", "IH", "L",
    "AY", "P", "UH", "R", "AW", "B", "OY", "V", "W", "G", "Y", "NG", "CH", "JH", "TH", "DH", "HH", "DX",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Blob count including silence.
    pub phones: usize,
    pub dim: usize,
    pub utterances: usize,
    /// Phone runs per utterance, excluding the silence runs at both ends.
    pub runs: usize,
    pub min_duration: u32,
    pub max_duration: u32,
    pub speakers: usize,
    pub spread: f64,
    pub blob_sigma: f64,
    /// Standard deviation of each speaker's constant feature offset.
    pub speaker_shift: f64,
    pub swap_pairs: usize,
    pub swap_probability: f64,
    /// Gaussian noise added to second-pass features.
    pub reencode_noise: f64,
    pub frame_rate_hz: f64,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            phones: 12,
            dim: 8,
            utterances: 40,
            runs: 30,
            min_duration: 1,
            max_duration: 4,
            speakers: 4,
            spread: 10.0,
            blob_sigma: 0.5,
            speaker_shift: 0.3,
            swap_pairs: 2,
            swap_probability: 0.7,
            reencode_noise: 0.0,
            frame_rate_hz: 50.0,
            sample_rate_hz: 800,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.phones < 4 || self.phones > PHONES.len() + 1 {
            return Err(Error::invalid(format!("phones must lie in [4, {}]", PHONES.len() + 1)));
        }
        if 2 * self.swap_pairs + 1 > self.phones {
            return Err(Error::invalid("not enough non-silence phones for the planted pairs"));
        }
        if self.dim == 0 || self.utterances == 0 || self.runs == 0 || self.speakers == 0 {
            return Err(Error::invalid("dim, utterances, runs and speakers must be >= 1"));
        }
        if self.min_duration == 0 || self.max_duration < self.min_duration {
            return Err(Error::invalid("durations must satisfy 1 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return Err(Error::invalid("swap probability outside [0, 1]"));
        }
        for (name, v) in [
            ("spread", self.spread),
            ("blob_sigma", self.blob_sigma),
            ("speaker_shift", self.speaker_shift),
            ("reencode_noise", self.reencode_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.spread > 0.0) {
            return Err(Error::invalid("spread must be positive"));
        }
        let spf = self.sample_rate_hz as f64 / self.frame_rate_hz;
        if !(self.frame_rate_hz > 0.0) || spf.fract() != 0.0 || spf < 1.0 {
            return Err(Error::invalid("sample rate must be a positive multiple of the frame rate"));
        }
        Ok(())
    }
}

/// Ground truth needed to re-run or score a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub config: SyntheticConfig,
    pub phone_names: Vec<String>,
    pub speaker_names: Vec<String>,
    pub planted_pairs: Vec<(usize, usize)>,
    pub reencoder: SyntheticReencoder,
}

impl SyntheticTruth {
    /// Codebook whose centroids are the true blob centers.
    pub fn center_codebook(&self) -> Result<Codebook> {
        Codebook::from_rows(&self.reencoder.centers).map(|c| c.with_source_tag("synthetic blob centers"))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("truth serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub features: Vec<FeatureMatrix>,
    pub waves: Vec<Waveform>,
    pub phones: Vec<LabelAlignment>,
    pub speakers: Vec<LabelAlignment>,
    pub genders: Vec<LabelAlignment>,
    /// Blob index of every frame, per utterance.
    pub frame_blobs: Vec<Vec<usize>>,
    pub truth: SyntheticTruth,
}

fn partner_of(pairs: &[(usize, usize)], blob: usize) -> Option<usize> {
    pairs.iter().find_map(|&(a, b)| {
        if a == blob {
            Some(b)
        } else if b == blob {
            Some(a)
        } else {
            None
        }
    })
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, purpose::SYNTHETIC_CORPUS);
    let mut audio_rng = rng::stream(cfg.seed, purpose::SYNTHETIC_AUDIO);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");

    let centers: Vec<Vec<f64>> = (0..cfg.phones)
        .map(|_| (0..cfg.dim).map(|_| rng.random_range(-cfg.spread..=cfg.spread)).collect())
        .collect();
    let offsets: Vec<Vec<f64>> = (0..cfg.speakers)
        .map(|_| (0..cfg.dim).map(|_| cfg.speaker_shift * unit.sample(&mut rng)).collect())
        .collect();
    let pairs: Vec<(usize, usize)> = (0..cfg.swap_pairs).map(|p| (2 * p + 1, 2 * p + 2)).collect();
    let mut phone_names = vec![SIL.to_string()];
    phone_names.extend(PHONES[..cfg.phones - 1].iter().map(|s| s.to_string()));
    let speaker_names: Vec<String> = (0..cfg.speakers).map(|s| format!("spk{s:02}")).collect();
    let gender_names: Arc<[String]> = vec![SIL.to_string(), "F".to_string(), "M".to_string()].into();
    let phone_table: Arc<[String]> = phone_names.clone().into();
    let speaker_table: Arc<[String]> = std::iter::once(SIL.to_string()).chain(speaker_names.iter().cloned()).collect();

    let spf = (cfg.sample_rate_hz as f64 / cfg.frame_rate_hz) as usize;
    let mut corpus = SyntheticCorpus {
        features: Vec::with_capacity(cfg.utterances),
        waves: Vec::with_capacity(cfg.utterances),
        phones: Vec::with_capacity(cfg.utterances),
        speakers: Vec::with_capacity(cfg.utterances),
        genders: Vec::with_capacity(cfg.utterances),
        frame_blobs: Vec::with_capacity(cfg.utterances),
        truth: SyntheticTruth {
            config: cfg.clone(),
            phone_names: phone_names.clone(),
            speaker_names: speaker_names.clone(),
            planted_pairs: pairs.clone(),
            reencoder: SyntheticReencoder {
                centers: centers.clone(),
                swaps: pairs
                    .iter()
                    .flat_map(|&(a, b)| {
                        [
                            PlantedSwap { from: a, to: b, probability: cfg.swap_probability },
                            PlantedSwap { from: b, to: a, probability: cfg.swap_probability },
                        ]
                    })
                    .collect(),
                noise_sigma: cfg.reencode_noise,
                seed: cfg.seed,
            },
        },
    };

    for u in 0..cfg.utterances {
        let id = format!("utt{u:05}");
        let spk = u % cfg.speakers;
        let mut runs = vec![0usize];
        while runs.len() < cfg.runs + 1 {
            let prev = *runs.last().unwrap();
            let b = rng.random_range(0..cfg.phones);
            // The final phone run must not be silence so the closing silence stays separate.
            let closing = runs.len() == cfg.runs;
            if b != prev && partner_of(&pairs, prev) != Some(b) && !(closing && b == 0) {
                runs.push(b);
            }
        }
        runs.push(0);

        let mut blobs = Vec::new();
        for &b in &runs {
            let dur = rng.random_range(cfg.min_duration..=cfg.max_duration);
            blobs.extend(std::iter::repeat_n(b, dur as usize));
        }
        let mut data = Vec::with_capacity(blobs.len() * cfg.dim);
        for &b in &blobs {
            for d in 0..cfg.dim {
                let v = centers[b][d] + offsets[spk][d] + cfg.blob_sigma * unit.sample(&mut rng);
                data.push(v as f32 as f64);
            }
        }
        let mut samples = Vec::with_capacity(blobs.len() * spf);
        for (t, &b) in blobs.iter().enumerate() {
            let freq = 0.02 + 0.4 * (b as f64 + 1.0) / (cfg.phones as f64 + 1.0);
            for s in 0..spf {
                let n = (t * spf + s) as f64;
                let x = 0.4 * (std::f64::consts::TAU * freq * n).sin() + 0.05 * (audio_rng.random::<f64>() - 0.5);
                samples.push((x * 32768.0).round() / 32768.0);
            }
        }
        let frames = blobs.len();
        corpus.features.push(FeatureMatrix::new(id.clone(), cfg.frame_rate_hz, cfg.dim, data)?);
        corpus.waves.push(Waveform::new(id.clone(), cfg.sample_rate_hz, samples));
        corpus.phones.push(LabelAlignment::new(
            id.clone(),
            LabelKind::Phoneme,
            blobs.iter().map(|&b| b as u32).collect(),
            phone_table.clone(),
        )?);
        corpus.speakers.push(LabelAlignment::new(
            id.clone(),
            LabelKind::Speaker,
            vec![spk as u32 + 1; frames],
            speaker_table.clone(),
        )?);
        corpus.genders.push(LabelAlignment::new(
            id,
            LabelKind::Gender,
            vec![if spk % 2 == 0 { 1 } else { 2 }; frames],
            gender_names.clone(),
        )?);
        corpus.frame_blobs.push(blobs);
    }
    Ok(corpus)
}

/// Segment TSV (`utt, start, end, label`) for a set of alignments.
pub fn alignment_tsv(alignments: &[LabelAlignment]) -> String {
    let mut out = String::new();
    for a in alignments {
        let mut start = 0;
        for t in 1..=a.frames() {
            if t == a.frames() || a.frame_labels[t] != a.frame_labels[start] {
                writeln!(out, "{}\t{start}\t{t}\t{}", a.utterance_id, a.name(a.frame_labels[start])).unwrap();
                start = t;
            }
        }
    }
    out
}

/// Writes `feats/`, `wav/`, `phones.tsv`, `speakers.tsv`, `genders.tsv`
/// and `truth.json` under `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<BTreeMap<&'static str, usize>> {
    let feats_dir = dir.join("feats");
    let wav_dir = dir.join("wav");
    for d in [dir, &feats_dir, &wav_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (m, w) in corpus.features.iter().zip(&corpus.waves) {
        write_feats(m, &feats_dir.join(format!("{}.feats", m.utterance_id())))?;
        write_wav(w, &wav_dir.join(format!("{}.wav", w.utterance_id)))?;
    }
    for (name, a) in [("phones.tsv", &corpus.phones), ("speakers.tsv", &corpus.speakers), ("genders.tsv", &corpus.genders)] {
        let p = dir.join(name);
        std::fs::write(&p, alignment_tsv(a)).map_err(|e| Error::io(&p, e))?;
    }
    corpus.truth.write_json(&dir.join("truth.json"))?;
    Ok(BTreeMap::from([
        ("utterances", corpus.features.len()),
        ("frames", corpus.features.iter().map(|m| m.frames()).sum()),
        ("phones", corpus.truth.phone_names.len()),
        ("planted_pairs", corpus.truth.planted_pairs.len()),
    ]))
}
