//! Codebook reduction: k-means over centroids (KK), average-linkage
//! agglomeration under Euclidean distance (KH) and under the CR-weighted
//! distance `L2 * (1 - (CR(i,j) + CR(j,i)) / 2)` (KWH).

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantizer::{kmeans_weighted, sq_dist, KMeansConfig};
use crate::redundancy::CrMatrix;
use crate::types::{Codebook, Unit, UnitSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MergeMethod {
    KK,
    KH,
    KWH,
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMethod::KK => "kk",
            MergeMethod::KH => "kh",
            MergeMethod::KWH => "kwh",
        })
    }
}

impl FromStr for MergeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kk" => Ok(MergeMethod::KK),
            "kh" => Ok(MergeMethod::KH),
            "kwh" => Ok(MergeMethod::KWH),
            other => Err(Error::invalid(format!("unknown merge method {other:?} (kk|kh|kwh)"))),
        }
    }
}

/// Surjective map from source units onto `[0, target_k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMap {
    mapping: Vec<Unit>,
    target_k: usize,
    method: MergeMethod,
}

impl MergeMap {
    pub fn new(mapping: Vec<Unit>, method: MergeMethod) -> Result<Self> {
        let target_k = mapping.iter().map(|&u| u as usize + 1).max().unwrap_or(0);
        let mut hit = vec![false; target_k];
        for &u in &mapping {
            hit[u as usize] = true;
        }
        if let Some(missing) = hit.iter().position(|h| !h) {
            return Err(Error::invalid(format!("merge map never targets group {missing}")));
        }
        Ok(Self {
            mapping,
            target_k,
            method,
        })
    }

    pub fn mapping(&self) -> &[Unit] {
        &self.mapping
    }

    pub fn source_k(&self) -> usize {
        self.mapping.len()
    }

    pub fn target_k(&self) -> usize {
        self.target_k
    }

    pub fn method(&self) -> MergeMethod {
        self.method
    }

    pub fn apply(&self, unit: Unit) -> Result<Unit> {
        self.mapping.get(unit as usize).copied().ok_or_else(|| {
            Error::invalid(format!("unit {unit} outside merge map of size {}", self.mapping.len()))
        })
    }

    /// Members of each target group, ascending.
    pub fn groups(&self) -> Vec<Vec<Unit>> {
        let mut groups = vec![Vec::new(); self.target_k];
        for (src, &dst) in self.mapping.iter().enumerate() {
            groups[dst as usize].push(src as Unit);
        }
        groups
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# method={}\nunit\tmerged\n", self.method);
        for (src, dst) in self.mapping.iter().enumerate() {
            writeln!(out, "{src}\t{dst}").unwrap();
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut method = None;
        let mut mapping = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(rest) = line.strip_prefix("# method=") {
                method = Some(rest.trim().parse().map_err(|e: Error| perr(line_no, e.to_string()))?);
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() || line.starts_with("unit\t") {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(src), Some(dst), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(perr(line_no, "expected two tab-separated columns".into()));
            };
            let src: usize = src.parse().map_err(|_| perr(line_no, format!("bad unit {src:?}")))?;
            let dst: Unit = dst.parse().map_err(|_| perr(line_no, format!("bad group {dst:?}")))?;
            if src != mapping.len() {
                return Err(perr(line_no, format!("expected unit {}, found {src}", mapping.len())));
            }
            mapping.push(dst);
        }
        Self::new(mapping, method.unwrap_or(MergeMethod::KH))
    }
}

/// One agglomeration step: group `absorbed` joins group `kept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    /// Lowest source index of the surviving group.
    pub kept: usize,
    /// Lowest source index of the absorbed group (always greater than `kept`).
    pub absorbed: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Merged {
    pub codebook: Codebook,
    pub map: MergeMap,
    /// Agglomeration order; empty for KK.
    pub steps: Vec<MergeStep>,
}

impl Merged {
    /// Index of the step after which units `a` and `b` first share a group.
    pub fn joined_at(&self, a: usize, b: usize) -> Option<usize> {
        let k = self.map.source_k();
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (s, step) in self.steps.iter().enumerate() {
            let (x, y) = (find(&mut parent, step.kept), find(&mut parent, step.absorbed));
            parent[y] = x;
            if find(&mut parent, a) == find(&mut parent, b) {
                return Some(s);
            }
        }
        None
    }
}

fn check_target(cb: &Codebook, target_k: usize) -> Result<()> {
    if target_k == 0 || target_k >= cb.k() {
        return Err(Error::invalid(format!(
            "target K must lie in [1, {}), got {target_k}",
            cb.k()
        )));
    }
    Ok(())
}

/// Renumbers groups by their lowest member and builds the merged codebook.
fn finish(cb: &Codebook, raw: &[usize], method: MergeMethod, steps: Vec<MergeStep>) -> Result<Merged> {
    let mut label = vec![usize::MAX; cb.k()];
    let mut mapping = Vec::with_capacity(cb.k());
    let mut next = 0;
    for &r in raw {
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        mapping.push(label[r] as Unit);
    }
    let map = MergeMap::new(mapping, method)?;
    let codebook = merged_codebook(cb, &map)?.with_source_tag(format!(
        "merge {method} {} -> {}",
        cb.k(),
        map.target_k()
    ));
    Ok(Merged { codebook, map, steps })
}

/// Occupancy-weighted mean of each group's member centroids (plain mean if
/// the group has no occupancy).
pub fn merged_codebook(cb: &Codebook, map: &MergeMap) -> Result<Codebook> {
    if map.source_k() != cb.k() {
        return Err(Error::DimensionMismatch {
            expected: cb.k(),
            got: map.source_k(),
        });
    }
    let dim = cb.dim();
    let mut centroids = Vec::with_capacity(map.target_k() * dim);
    let mut counts = Vec::with_capacity(map.target_k());
    for group in map.groups() {
        let mass: u64 = group.iter().map(|&u| cb.counts()[u as usize]).sum();
        let mut acc = vec![0.0; dim];
        for &u in &group {
            let w = if mass > 0 { cb.counts()[u as usize] as f64 } else { 1.0 };
            for (a, v) in acc.iter_mut().zip(cb.centroid(u as usize)) {
                *a += w * v;
            }
        }
        let norm = if mass > 0 { mass as f64 } else { group.len() as f64 };
        centroids.extend(acc.into_iter().map(|a| a / norm));
        counts.push(mass);
    }
    Codebook::new(dim, centroids, counts)
}

/// Second k-means over the centroid rows; `occupancy_weighted` weights each
/// row by its training count.
pub fn merge_kk(cb: &Codebook, target_k: usize, seed: u64, occupancy_weighted: bool) -> Result<Merged> {
    check_target(cb, target_k)?;
    let weights: Option<Vec<f64>> = occupancy_weighted.then(|| cb.counts().iter().map(|&c| c as f64).collect());
    let fit = kmeans_weighted(cb.centroids(), cb.dim(), weights.as_deref(), &KMeansConfig::new(target_k, seed))?;
    let raw: Vec<usize> = fit.labels.iter().map(|&u| u as usize).collect();
    let mut merged = finish(cb, &raw, MergeMethod::KK, Vec::new())?;
    // Keep the sub-k-means centers rather than the occupancy-weighted means.
    let mut centroids = vec![0.0; target_k * cb.dim()];
    for (src, &dst) in raw.iter().enumerate() {
        let to = merged.map.mapping()[src] as usize;
        centroids[to * cb.dim()..(to + 1) * cb.dim()].copy_from_slice(fit.codebook.centroid(dst));
    }
    merged.codebook = Codebook::new(cb.dim(), centroids, merged.codebook.counts().to_vec())?
        .with_source_tag(merged.codebook.source_tag().to_string());
    Ok(merged)
}

/// Pairwise Euclidean distances between centroids, row-major K x K.
pub fn l2_matrix(cb: &Codebook) -> Vec<f64> {
    let k = cb.k();
    let mut d = vec![0.0; k * k];
    d.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = sq_dist(cb.centroid(i), cb.centroid(j)).sqrt();
        }
    });
    d
}

/// How CR values outside `[0, 1]` are treated when weighting distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrBounds {
    #[default]
    Reject,
    Clamp,
}

/// CR-weighted distance matrix. Returns the matrix and how many CR entries
/// had to be clamped.
pub fn kwh_distance(cb: &Codebook, cr: &CrMatrix, bounds: CrBounds) -> Result<(Vec<f64>, usize)> {
    let k = cb.k();
    if cr.k() < k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: cr.k(),
        });
    }
    let mut clamped = 0;
    let mut rates = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let r = cr.rate(i as Unit, j as Unit);
            rates[i * k + j] = if (0.0..=1.0).contains(&r) {
                r
            } else {
                match bounds {
                    CrBounds::Reject => {
                        return Err(Error::invalid(format!("CR({i},{j}) = {r} lies outside [0, 1]")))
                    }
                    CrBounds::Clamp if r.is_nan() => return Err(Error::invalid(format!("CR({i},{j}) is NaN"))),
                    CrBounds::Clamp => {
                        clamped += 1;
                        r.clamp(0.0, 1.0)
                    }
                }
            };
        }
    }
    let mut d = l2_matrix(cb);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                d[i * k + j] *= 1.0 - 0.5 * (rates[i * k + j] + rates[j * k + i]);
            }
        }
    }
    Ok((d, clamped))
}

/// Average-linkage agglomeration over a symmetric K x K distance matrix until
/// `target_k` groups remain. Each step merges the pair with the smallest
/// linkage; ties go to the lowest `(kept, absorbed)` pair of group indices,
/// where a group's index is its lowest member.
pub fn agglomerate(dist: &[f64], k: usize, target_k: usize) -> Result<(Vec<usize>, Vec<MergeStep>)> {
    if dist.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            got: dist.len(),
        });
    }
    if target_k == 0 || target_k > k {
        return Err(Error::invalid(format!("cannot agglomerate {k} items into {target_k} groups")));
    }
    if dist.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite distance"));
    }
    let mut d = dist.to_vec();
    let mut size = vec![1.0f64; k];
    let mut active = vec![true; k];
    let mut owner: Vec<usize> = (0..k).collect();
    // nn[i]: best (distance, j) over active j > i.
    let mut nn: Vec<Option<(f64, usize)>> = vec![None; k];
    let scan = |d: &[f64], active: &[bool], i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..k {
            if active[j] && best.is_none_or(|(bd, _)| d[i * k + j] < bd) {
                best = Some((d[i * k + j], j));
            }
        }
        best
    };
    for i in 0..k {
        nn[i] = scan(&d, &active, i);
    }
    let mut steps = Vec::with_capacity(k - target_k);
    for _ in 0..k - target_k {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..k {
            if let (true, Some((dv, j))) = (active[i], nn[i]) {
                if pick.is_none_or(|(pd, _, _)| dv < pd) {
                    pick = Some((dv, i, j));
                }
            }
        }
        let (dv, a, b) = pick.expect("at least two active groups remain");
        steps.push(MergeStep {
            kept: a,
            absorbed: b,
            distance: dv,
        });
        let (sa, sb) = (size[a], size[b]);
        active[b] = false;
        for x in 0..k {
            if active[x] && x != a {
                let v = (sa * d[a * k + x] + sb * d[b * k + x]) / (sa + sb);
                d[a * k + x] = v;
                d[x * k + a] = v;
            }
        }
        size[a] = sa + sb;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        nn[b] = None;
        nn[a] = scan(&d, &active, a);
        for x in 0..k {
            if !active[x] || x == a {
                continue;
            }
            match nn[x] {
                Some((_, j)) if j == a || j == b => nn[x] = scan(&d, &active, x),
                Some(_) if x > a => {}
                Some((bd, j)) => {
                    let v = d[x * k + a];
                    if v < bd || (v == bd && a < j) {
                        nn[x] = Some((v, a));
                    }
                }
                None => nn[x] = scan(&d, &active, x),
            }
        }
    }
    Ok((owner, steps))
}

/// Average-linkage agglomeration under Euclidean distance.
pub fn merge_kh(cb: &Codebook, target_k: usize) -> Result<Merged> {
    check_target(cb, target_k)?;
    let (owner, steps) = agglomerate(&l2_matrix(cb), cb.k(), target_k)?;
    finish(cb, &owner, MergeMethod::KH, steps)
}

/// Average-linkage agglomeration under the CR-weighted distance.
pub fn merge_kwh(cb: &Codebook, cr: &CrMatrix, target_k: usize, bounds: CrBounds) -> Result<Merged> {
    check_target(cb, target_k)?;
    let (dist, _) = kwh_distance(cb, cr, bounds)?;
    let (owner, steps) = agglomerate(&dist, cb.k(), target_k)?;
    finish(cb, &owner, MergeMethod::KWH, steps)
}

/// Maps every unit through the merge map.
pub fn relabel_units(zs: &[UnitSequence], m: &MergeMap) -> Result<Vec<UnitSequence>> {
    zs.par_iter()
        .map(|z| {
            let units = z.units.iter().map(|&u| m.apply(u)).collect::<Result<Vec<_>>>()?;
            Ok(UnitSequence::new(z.utterance_id.clone(), units))
        })
        .collect()
}
