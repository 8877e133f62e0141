use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compare_passes, CrMatrix, CrNormalization, UedSummary};
use crate::error::{Error, Result};
use crate::quantizer::{deduplicate, nearest, quantize};
use crate::rng::{self, purpose};
use crate::types::{Codebook, DedupedSequence, FeatureMatrix, Unit, UnitSequence, Waveform};
use crate::vocoder::{lv_resynthesize, KeyKind, LvItem, MemorizationReport, Resynthesis};

/// Speech-to-unit stage used for both passes.
pub trait Encoder: Sync {
    fn encode(&self, m: &FeatureMatrix) -> Result<UnitSequence>;
    fn vocabulary(&self) -> usize;
}

/// Nearest-centroid quantization, optionally followed by a unit relabeling.
#[derive(Debug, Clone, Copy)]
pub struct CodebookEncoder<'a> {
    pub codebook: &'a Codebook,
    pub relabel: Option<&'a [Unit]>,
}

impl<'a> CodebookEncoder<'a> {
    pub fn new(codebook: &'a Codebook) -> Self {
        Self {
            codebook,
            relabel: None,
        }
    }

    pub fn with_relabel(codebook: &'a Codebook, mapping: &'a [Unit]) -> Result<Self> {
        if mapping.len() != codebook.k() {
            return Err(Error::invalid(format!(
                "relabel map covers {} units, codebook has {}",
                mapping.len(),
                codebook.k()
            )));
        }
        Ok(Self {
            codebook,
            relabel: Some(mapping),
        })
    }
}

impl Encoder for CodebookEncoder<'_> {
    fn encode(&self, m: &FeatureMatrix) -> Result<UnitSequence> {
        let mut z = quantize(m, self.codebook)?;
        if let Some(map) = self.relabel {
            z.units.iter_mut().for_each(|u| *u = map[*u as usize]);
        }
        Ok(z)
    }

    fn vocabulary(&self) -> usize {
        match self.relabel {
            Some(map) => map.iter().max().map_or(0, |&m| m as usize + 1),
            None => self.codebook.k(),
        }
    }
}

/// Re-encoding perturbation: a decoded segment whose frames sit nearest to
/// blob `from` is shifted onto blob `to` with the given probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSwap {
    pub from: usize,
    pub to: usize,
    pub probability: f64,
}

/// Closes the decode -> encode loop without a neural encoder: pass-2
/// features are the original feature frames behind each decoded segment,
/// moved by planted swaps and jittered with isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReencoder {
    pub centers: Vec<Vec<f64>>,
    pub swaps: Vec<PlantedSwap>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticReencoder {
    /// Identity loop: pass-2 features equal the source frames.
    pub fn identity() -> Self {
        Self {
            centers: Vec::new(),
            swaps: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be finite and >= 0"));
        }
        for s in &self.swaps {
            if s.from >= self.centers.len() || s.to >= self.centers.len() || s.from == s.to {
                return Err(Error::invalid(format!(
                    "planted swap {} -> {} does not name two distinct blobs",
                    s.from, s.to
                )));
            }
            if !(0.0..=1.0).contains(&s.probability) {
                return Err(Error::invalid("swap probability outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Pass-2 features for one resynthesized utterance.
    pub fn reencode_features(
        &self,
        resynthesis: &Resynthesis,
        sources: &[&FeatureMatrix],
        rng: &mut rng::Rng,
    ) -> Result<FeatureMatrix> {
        let first = sources
            .first()
            .ok_or_else(|| Error::invalid("no source features"))?;
        let dim = first.dim();
        let swaps: BTreeMap<usize, Vec<&PlantedSwap>> =
            self.swaps.iter().fold(BTreeMap::new(), |mut acc, s| {
                acc.entry(s.from).or_insert_with(Vec::new).push(s);
                acc
            });
        let centers: Vec<f64> = self.centers.concat();
        let noise = Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::invalid(e.to_string()))?;
        let mut data = Vec::new();
        for seg in &resynthesis.segments {
            let src = sources[seg.source.utterance];
            let rows = seg.source.frame_start..seg.source.frame_start + seg.source.frames;
            let mut block: Vec<f64> = rows.flat_map(|t| src.row(t).iter().copied()).collect();
            if !self.swaps.is_empty() {
                let mut mean = vec![0.0; dim];
                for row in block.chunks_exact(dim) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                let n = (block.len() / dim) as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                let (blob, _) = nearest(&centers, dim, &mean);
                if let Some(cands) = swaps.get(&(blob as usize)) {
                    for swap in cands {
                        if rng.random::<f64>() < swap.probability {
                            let shift: Vec<f64> = self.centers[swap.to]
                                .iter()
                                .zip(&self.centers[swap.from])
                                .map(|(t, f)| t - f)
                                .collect();
                            for row in block.chunks_exact_mut(dim) {
                                row.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
                            }
                            break;
                        }
                    }
                }
            }
            if self.noise_sigma > 0.0 {
                block.iter_mut().for_each(|v| *v += noise.sample(rng));
            }
            data.extend(block);
        }
        FeatureMatrix::new(
            resynthesis.waveform.utterance_id.clone(),
            first.frame_rate_hz(),
            dim,
            data,
        )
    }
}

/// How pass-2 features are obtained.
#[derive(Debug, Clone, Copy)]
pub enum SecondPass<'a> {
    /// Built in-process from the decoded segments.
    Synthetic(&'a SyntheticReencoder),
    /// Produced externally from the resynthesized audio, one per utterance in corpus order.
    Features(&'a [FeatureMatrix]),
}

#[derive(Debug, Clone)]
pub struct CircularConfig {
    pub kind: KeyKind,
    pub fill_seed: u64,
    pub normalization: CrNormalization,
}

impl Default for CircularConfig {
    fn default() -> Self {
        Self {
            kind: KeyKind::ContextFull,
            fill_seed: 0,
            normalization: CrNormalization::SourceOccurrences,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CircularReport {
    pub pass1: Vec<DedupedSequence>,
    pub pass2: Vec<DedupedSequence>,
    pub ued: UedSummary,
    pub cr: CrMatrix,
    pub memorization: MemorizationReport,
    pub resynthesized: Vec<Resynthesis>,
}

impl CircularReport {
    pub fn mean_ued(&self) -> f64 {
        self.ued.mean
    }
}

/// Encode, decode with the lookup vocoder, re-encode, and compare the two
/// deduplicated transcriptions.
pub fn circular_resynthesis(
    features: &[FeatureMatrix],
    waves: &[Waveform],
    encoder: &dyn Encoder,
    second: SecondPass<'_>,
    cfg: &CircularConfig,
) -> Result<CircularReport> {
    if features.len() != waves.len() {
        return Err(Error::invalid(format!(
            "{} feature matrices but {} waveforms",
            features.len(),
            waves.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let frame_rate = features[0].frame_rate_hz();
    let pass1: Vec<DedupedSequence> = features
        .par_iter()
        .map(|m| encoder.encode(m).map(|z| deduplicate(&z)))
        .collect::<Result<_>>()?;
    let items: Vec<LvItem> = pass1
        .iter()
        .zip(waves)
        .map(|(units, wave)| LvItem { units, wave })
        .collect();
    let k = encoder.vocabulary();
    let (resynthesized, memorization, _) =
        lv_resynthesize(&items, frame_rate, cfg.kind, k, cfg.fill_seed)?;

    let pass2_feats: Vec<FeatureMatrix> = match second {
        SecondPass::Synthetic(re) => {
            re.validate()?;
            let sources: Vec<&FeatureMatrix> = features.iter().collect();
            let mut rng = rng::stream(re.seed, purpose::REENCODE);
            resynthesized
                .iter()
                .map(|r| re.reencode_features(r, &sources, &mut rng))
                .collect::<Result<_>>()?
        }
        SecondPass::Features(f) => {
            if f.len() != features.len() {
                return Err(Error::invalid(format!(
                    "second-pass features missing: {} of {} utterances provided",
                    f.len(),
                    features.len()
                )));
            }
            for (a, b) in features.iter().zip(f) {
                if a.utterance_id() != b.utterance_id() {
                    return Err(Error::invalid(format!(
                        "second-pass features for {} missing (found {})",
                        a.utterance_id(),
                        b.utterance_id()
                    )));
                }
            }
            f.to_vec()
        }
    };
    let pass2: Vec<DedupedSequence> = pass2_feats
        .par_iter()
        .map(|m| encoder.encode(m).map(|z| deduplicate(&z)))
        .collect::<Result<_>>()?;

    let as_pairs = |s: &[DedupedSequence]| -> Vec<(String, Vec<Unit>)> {
        s.iter()
            .map(|d| (d.utterance_id().to_string(), d.units().to_vec()))
            .collect()
    };
    let (ued, cr) = compare_passes(&as_pairs(&pass1), &as_pairs(&pass2), k, cfg.normalization)?;
    Ok(CircularReport {
        pass1,
        pass2,
        ued,
        cr,
        memorization,
        resynthesized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn corpus(n: usize) -> (Vec<FeatureMatrix>, Vec<Waveform>, Codebook) {
        let cb = Codebook::from_rows(&[vec![0.0, 0.0], vec![10.0, 0.0], vec![0.0, 10.0], vec![10.0, 10.0]]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut feats = Vec::new();
        let mut waves = Vec::new();
        for u in 0..n {
            let mut rows = Vec::new();
            let mut prev = usize::MAX;
            for _ in 0..30 {
                let mut c = rng.random_range(0..4);
                if c == prev {
                    c = (c + 1) % 4;
                }
                prev = c;
                for _ in 0..rng.random_range(1..4) {
                    let base = cb.centroid(c);
                    rows.push(vec![base[0] + rng.random::<f64>() * 0.1, base[1] + rng.random::<f64>() * 0.1]);
                }
            }
            let frames = rows.len();
            feats.push(FeatureMatrix::from_rows(format!("u{u}"), 50.0, &rows).unwrap());
            waves.push(Waveform::new(
                format!("u{u}"),
                800,
                (0..frames * 16).map(|i| ((i % 7) as f64) / 32768.0).collect(),
            ));
        }
        (feats, waves, cb)
    }

    #[test]
    fn identity_loop_is_a_fixed_point() {
        let (feats, waves, cb) = corpus(5);
        let enc = CodebookEncoder::new(&cb);
        for kind in KeyKind::ALL {
            let cfg = CircularConfig { kind, ..CircularConfig::default() };
            let report = circular_resynthesis(
                &feats,
                &waves,
                &enc,
                SecondPass::Synthetic(&SyntheticReencoder::identity()),
                &cfg,
            )
            .unwrap();
            assert_eq!(report.mean_ued(), 0.0, "{kind}");
            assert!(report.cr.rates().iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn certain_swap_turns_every_occurrence() {
        let (feats, waves, cb) = corpus(4);
        let enc = CodebookEncoder::new(&cb);
        let re = SyntheticReencoder {
            centers: cb.rows().map(|r| r.to_vec()).collect(),
            swaps: vec![PlantedSwap { from: 0, to: 3, probability: 1.0 }],
            noise_sigma: 0.0,
            seed: 0,
        };
        let report = circular_resynthesis(&feats, &waves, &enc, SecondPass::Synthetic(&re), &CircularConfig::default())
            .unwrap();
        assert!(report.mean_ued() > 0.0);
        // runs of 0 next to runs of 3 collapse, so the rate is a lower bound
        assert!(report.cr.rate(0, 3) > 0.3, "{}", report.cr.rate(0, 3));
        assert_eq!(report.cr.rate(3, 0), 0.0);
    }

    #[test]
    fn missing_second_pass_features_is_error() {
        let (feats, waves, cb) = corpus(3);
        let enc = CodebookEncoder::new(&cb);
        let err = circular_resynthesis(&feats, &waves, &enc, SecondPass::Features(&feats[..2]), &CircularConfig::default());
        assert!(err.is_err());
        let ok = circular_resynthesis(&feats, &waves, &enc, SecondPass::Features(&feats), &CircularConfig::default()).unwrap();
        assert_eq!(ok.mean_ued(), 0.0);
    }

    #[test]
    fn reproducible_with_fixed_seeds() {
        let (feats, waves, cb) = corpus(6);
        let enc = CodebookEncoder::new(&cb);
        let re = SyntheticReencoder {
            centers: cb.rows().map(|r| r.to_vec()).collect(),
            swaps: vec![PlantedSwap { from: 1, to: 2, probability: 0.4 }],
            noise_sigma: 0.5,
            seed: 9,
        };
        let cfg = CircularConfig { kind: KeyKind::LocalSingle, fill_seed: 4, ..CircularConfig::default() };
        let a = circular_resynthesis(&feats, &waves, &enc, SecondPass::Synthetic(&re), &cfg).unwrap();
        let b = circular_resynthesis(&feats, &waves, &enc, SecondPass::Synthetic(&re), &cfg).unwrap();
        assert_eq!(a.cr, b.cr);
        assert_eq!(a.ued, b.ued);
    }
}
