//! Machine ABX discrimination over discrete unit transcriptions.
//!
//! Items are triphone-context segments; a triple (A, B, X) scores an error
//! when X (same phone as A) is closer to B under frame-wise DTW with
//! `1 - cos` frame distance between unit centroids.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantizer::deduplicate;
use crate::rng::{self, purpose};
use crate::types::{Codebook, LabelAlignment, Unit, UnitSequence, SIL};

/// One maximal same-phone segment with phone neighbours on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbxItem {
    pub utterance_id: String,
    pub start: usize,
    pub end: usize,
    /// Index into [`ItemSet::phones`].
    pub center: u32,
    pub left: u32,
    pub right: u32,
    /// Index into [`ItemSet::speakers`].
    pub speaker: u32,
}

/// Items plus the name tables their IDs index.
#[derive(Debug, Clone, Default)]
pub struct ItemSet {
    pub items: Vec<AbxItem>,
    pub phones: Vec<String>,
    pub speakers: Vec<String>,
}

#[derive(Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn id(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }
}

/// Builds items from phone and speaker alignments paired by utterance ID.
/// Segments at utterance edges have no context and are skipped; silence is
/// never a center but may serve as context. An item's speaker is the speaker
/// label of its first frame.
pub fn extract_items(phones: &[LabelAlignment], speakers: &[LabelAlignment]) -> Result<ItemSet> {
    let by_id: HashMap<&str, &LabelAlignment> = speakers.iter().map(|s| (s.utterance_id.as_str(), s)).collect();
    let mut phone_names = Interner::default();
    let mut speaker_names = Interner::default();
    let mut items = Vec::new();
    for p in phones {
        let s = by_id
            .get(p.utterance_id.as_str())
            .ok_or_else(|| Error::invalid(format!("no speaker alignment for utterance {}", p.utterance_id)))?;
        if s.frames() != p.frames() {
            return Err(Error::invalid(format!(
                "utterance {}: {} phone frames vs {} speaker frames",
                p.utterance_id,
                p.frames(),
                s.frames()
            )));
        }
        let mut runs: Vec<(usize, usize, u32)> = Vec::new();
        for (t, &c) in p.frame_labels.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.2 == c => r.1 = t + 1,
                _ => runs.push((t, t + 1, c)),
            }
        }
        for w in runs.windows(3) {
            let (l, mid, r) = (w[0], w[1], w[2]);
            let center = p.name(mid.2);
            if center == SIL {
                continue;
            }
            items.push(AbxItem {
                utterance_id: p.utterance_id.clone(),
                start: mid.0,
                end: mid.1,
                center: phone_names.id(center),
                left: phone_names.id(p.name(l.2)),
                right: phone_names.id(p.name(r.2)),
                speaker: speaker_names.id(s.name(s.frame_labels[mid.0])),
            });
        }
    }
    Ok(ItemSet {
        items,
        phones: phone_names.names,
        speakers: speaker_names.names,
    })
}

/// Frame distance `1 - cos` between every pair of unit centroids.
///
/// Entries are rounded to single precision so that a positive rescaling of the
/// codebook cannot flip a comparison through last-bit rounding.
#[derive(Debug, Clone)]
pub struct CosineTable {
    k: usize,
    d: Vec<f64>,
}

impl CosineTable {
    pub fn new(cb: &Codebook) -> Result<Self> {
        let k = cb.k();
        let unit: Vec<Vec<f64>> = cb
            .rows()
            .enumerate()
            .map(|(u, c)| {
                let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    Err(Error::invalid(format!("centroid {u} has zero norm")))
                } else {
                    Ok(c.iter().map(|v| v / n).collect())
                }
            })
            .collect::<Result<_>>()?;
        let mut d = vec![0.0; k * k];
        for p in 0..k {
            for q in 0..k {
                if p != q {
                    let cos: f64 = unit[p].iter().zip(&unit[q]).map(|(a, b)| a * b).sum();
                    d[p * k + q] = ((1.0 - cos.clamp(-1.0, 1.0)) as f32) as f64;
                }
            }
        }
        Ok(Self { k, d })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, p: Unit, q: Unit) -> f64 {
        self.d[p as usize * self.k + q as usize]
    }
}

/// DTW with steps (1,0), (0,1), (1,1): the minimum accumulated frame cost
/// divided by the length of the path achieving it. Among equal-cost paths the
/// longest is taken, which makes the result symmetric in its arguments.
pub fn dtw(a: &[Unit], b: &[Unit], table: &CosineTable) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("DTW needs two non-empty sequences"));
    }
    if let Some(&u) = a.iter().chain(b).find(|&&u| u as usize >= table.k()) {
        return Err(Error::invalid(format!("unit {u} outside codebook of size {}", table.k())));
    }
    let m = b.len();
    // (cost, path length) per cell; row-rolling buffers.
    let better = |x: (f64, usize), y: (f64, usize)| x.0 < y.0 || (x.0 == y.0 && x.1 > y.1);
    let mut prev = vec![(0.0, 0usize); m];
    let mut cur = vec![(0.0, 0usize); m];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let c = table.get(ai, bj);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = [None, None, None];
                if i > 0 {
                    cands[0] = Some(prev[j]);
                }
                if j > 0 {
                    cands[1] = Some(cur[j - 1]);
                }
                if i > 0 && j > 0 {
                    cands[2] = Some(prev[j - 1]);
                }
                cands
                    .into_iter()
                    .flatten()
                    .reduce(|x, y| if better(y, x) { y } else { x })
                    .unwrap()
            };
            cur[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    Ok(cost / len as f64)
}

/// [`dtw`] building the distance table from the codebook.
pub fn dtw_distance(a: &[Unit], b: &[Unit], cb: &Codebook) -> Result<f64> {
    dtw(a, b, &CosineTable::new(cb)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbxMode {
    Within,
    Across,
}

impl fmt::Display for AbxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbxMode::Within => "within",
            AbxMode::Across => "across",
        })
    }
}

impl FromStr for AbxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within" => Ok(AbxMode::Within),
            "across" => Ok(AbxMode::Across),
            other => Err(Error::invalid(format!("unknown ABX mode {other:?} (within|across)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbxConfig {
    pub mode: AbxMode,
    pub max_triples: usize,
    pub seed: u64,
    /// Collapse repeated units inside each item before DTW.
    pub deduplicated: bool,
}

impl Default for AbxConfig {
    fn default() -> Self {
        Self {
            mode: AbxMode::Within,
            max_triples: 500,
            seed: 0,
            deduplicated: false,
        }
    }
}

/// Cell key: phones a (A and X) and b (B), shared context, speaker of A and B,
/// speaker of X (equal to the A/B speaker in within mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub a: u32,
    pub b: u32,
    pub left: u32,
    pub right: u32,
    pub speaker_ab: u32,
    pub speaker_x: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub key: CellKey,
    pub triples: usize,
    /// Mean error in [0, 1].
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbxReport {
    /// Error percentage.
    pub score: f64,
    pub cells: Vec<CellScore>,
    pub triples: usize,
}

/// Triples of item indices (A, B, X) per cell, subsampled to `max_triples`.
pub(crate) fn sample_triples(items: &[AbxItem], cfg: &AbxConfig) -> Vec<(CellKey, Vec<[usize; 3]>)> {
    type Group = (u32, u32, u32, u32);
    let mut groups: BTreeMap<Group, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry((it.left, it.right, it.speaker, it.center)).or_default().push(i);
    }
    // context -> speaker -> center -> items
    let mut by_ctx: BTreeMap<(u32, u32), BTreeMap<u32, BTreeMap<u32, &Vec<usize>>>> = BTreeMap::new();
    for ((l, r, s, c), v) in &groups {
        by_ctx.entry((*l, *r)).or_default().entry(*s).or_default().insert(*c, v);
    }
    let mut rng = rng::stream(cfg.seed, purpose::ABX_SAMPLING);
    let mut cells = Vec::new();
    for (&(left, right), speakers) in &by_ctx {
        for (&s_ab, centers) in speakers {
            let x_speakers: Vec<u32> = match cfg.mode {
                AbxMode::Within => vec![s_ab],
                AbxMode::Across => speakers.keys().copied().filter(|&s| s != s_ab).collect(),
            };
            for (&a, &a_items) in centers {
                for (&b, &b_items) in centers {
                    if a == b {
                        continue;
                    }
                    for &s_x in &x_speakers {
                        let Some(&x_items) = speakers[&s_x].get(&a) else { continue };
                        let same = s_x == s_ab;
                        // X ranges over x_items, skipping A itself when they share a pool.
                        let nx = if same { x_items.len() - 1 } else { x_items.len() };
                        let total = a_items.len() * b_items.len() * nx;
                        if total == 0 {
                            continue;
                        }
                        let decode = |t: usize| {
                            let xi = t % nx;
                            let rest = t / nx;
                            let bi = rest % b_items.len();
                            let ai = rest / b_items.len();
                            let xi = if same && xi >= ai { xi + 1 } else { xi };
                            [a_items[ai], b_items[bi], x_items[xi]]
                        };
                        let triples: Vec<[usize; 3]> = if total <= cfg.max_triples {
                            (0..total).map(decode).collect()
                        } else {
                            let mut picks = index::sample(&mut rng, total, cfg.max_triples).into_vec();
                            picks.sort_unstable();
                            picks.into_iter().map(decode).collect()
                        };
                        let key = CellKey {
                            a,
                            b,
                            left,
                            right,
                            speaker_ab: s_ab,
                            speaker_x: s_x,
                        };
                        cells.push((key, triples));
                    }
                }
            }
        }
    }
    cells
}

/// 1 if X is closer to B, 0.5 on a tie, 0 otherwise.
pub fn triple_error(d_xa: f64, d_xb: f64) -> f64 {
    if d_xa > d_xb {
        1.0
    } else if d_xa == d_xb {
        0.5
    } else {
        0.0
    }
}

/// Averages directed cell errors over (a, b) and (b, a), then over the
/// resulting symmetric cells, as a percentage.
pub fn aggregate(cells: &[CellScore]) -> f64 {
    let mut sym: BTreeMap<(u32, u32, u32, u32, u32, u32), (f64, usize)> = BTreeMap::new();
    for c in cells {
        let k = c.key;
        let (lo, hi) = if k.a < k.b { (k.a, k.b) } else { (k.b, k.a) };
        let e = sym.entry((lo, hi, k.left, k.right, k.speaker_ab, k.speaker_x)).or_default();
        e.0 += c.error;
        e.1 += 1;
    }
    let n = sym.len() as f64;
    100.0 * sym.values().map(|(s, c)| s / *c as f64).sum::<f64>() / n
}

fn item_units<'a>(
    items: &[AbxItem],
    units: &'a [UnitSequence],
    deduplicated: bool,
) -> Result<Vec<std::borrow::Cow<'a, [Unit]>>> {
    let by_id: HashMap<&str, &UnitSequence> = units.iter().map(|z| (z.utterance_id.as_str(), z)).collect();
    items
        .iter()
        .map(|it| {
            let z = by_id
                .get(it.utterance_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no units for utterance {}", it.utterance_id)))?;
            if it.end > z.units.len() {
                return Err(Error::invalid(format!(
                    "utterance {}: item ends at frame {} but only {} units exist",
                    it.utterance_id,
                    it.end,
                    z.units.len()
                )));
            }
            let span = &z.units[it.start..it.end];
            Ok(if deduplicated {
                std::borrow::Cow::Owned(deduplicate(&UnitSequence::new("", span.to_vec())).units().to_vec())
            } else {
                std::borrow::Cow::Borrowed(span)
            })
        })
        .collect()
}

/// Scores every sampled triple and returns per-cell errors and the aggregate.
pub fn abx_report(items: &[AbxItem], units: &[UnitSequence], cb: &Codebook, cfg: &AbxConfig) -> Result<AbxReport> {
    if cfg.max_triples == 0 {
        return Err(Error::invalid("max_triples must be >= 1"));
    }
    let table = CosineTable::new(cb)?;
    let seqs = item_units(items, units, cfg.deduplicated)?;
    let cells = sample_triples(items, cfg);
    if cells.is_empty() {
        return Err(Error::invalid(format!("no valid ABX triples in {} mode", cfg.mode)));
    }
    let scored: Vec<CellScore> = cells
        .par_iter()
        .map(|(key, triples)| {
            let mut sum = 0.0;
            for &[a, b, x] in triples {
                let d_xa = dtw(&seqs[x], &seqs[a], &table)?;
                let d_xb = dtw(&seqs[x], &seqs[b], &table)?;
                sum += triple_error(d_xa, d_xb);
            }
            Ok(CellScore {
                key: *key,
                triples: triples.len(),
                error: sum / triples.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AbxReport {
        score: aggregate(&scored),
        triples: scored.iter().map(|c| c.triples).sum(),
        cells: scored,
    })
}

/// ABX error percentage.
pub fn abx_score(items: &[AbxItem], units: &[UnitSequence], cb: &Codebook, cfg: &AbxConfig) -> Result<f64> {
    abx_report(items, units, cb, cfg).map(|r| r.score)
}
