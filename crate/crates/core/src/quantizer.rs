//! k-means codebook learning, nearest-centroid quantization and run-length
//! deduplication of unit sequences.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::types::{Codebook, DedupedSequence, FeatureMatrix, Unit, UnitSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative SSE improvement of an iteration drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 100,
            max_iters: 300,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }
}

/// Full result of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub labels: Vec<Unit>,
    pub sse: f64,
    /// SSE after initialization and after every Lloyd iteration.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance; ties go to the lowest ID.
pub fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (Unit, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j as Unit, d);
        }
    }
    best
}

fn assign(points: &[f64], dim: usize, centroids: &[f64], weights: Option<&[f64]>) -> Vec<(Unit, f64)> {
    let mut out: Vec<(Unit, f64)> = points
        .par_chunks_exact(dim)
        .map(|x| nearest(centroids, dim, x))
        .collect();
    if let Some(w) = weights {
        for (a, w) in out.iter_mut().zip(w) {
            a.1 *= w;
        }
    }
    out
}

fn total(assignment: &[(Unit, f64)]) -> f64 {
    assignment.iter().map(|a| a.1).sum()
}

fn kmeans_pp_init(points: &[f64], dim: usize, k: usize, weights: Option<&[f64]>, seed: u64) -> Result<Vec<f64>> {
    let n = points.len() / dim;
    let mut rng = rng::stream(seed, purpose::KMEANS_INIT);
    let first = rng.random_range(0..n);
    let mut centroids = points[first * dim..(first + 1) * dim].to_vec();
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|x| sq_dist(x, &centroids))
        .collect();
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    for _ in 1..k {
        let mass: f64 = d2.iter().enumerate().map(|(i, d)| d * weight(i)).sum();
        if !(mass > 0.0) {
            return Err(Error::invalid(format!(
                "fewer than k = {k} distinct points in the training data"
            )));
        }
        let target = rng.random::<f64>() * mass;
        let mut acc = 0.0;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            let m = d * weight(i);
            acc += m;
            if acc > target && m > 0.0 {
                pick = i;
                break;
            }
        }
        while d2[pick] * weight(pick) == 0.0 {
            pick -= 1;
        }
        let c = &points[pick * dim..(pick + 1) * dim];
        for (slot, x) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *slot = slot.min(sq_dist(x, c));
        }
        centroids.extend_from_slice(c);
    }
    Ok(centroids)
}

/// Moves, for each empty cluster, the point farthest from its centroid into it.
fn repair_empty(points: &[f64], dim: usize, centroids: &mut [f64], assignment: &mut [(Unit, f64)], k: usize) {
    let mut sizes = vec![0usize; k];
    for a in assignment.iter() {
        sizes[a.0 as usize] += 1;
    }
    for c in 0..k {
        if sizes[c] != 0 {
            continue;
        }
        let donor = assignment
            .iter()
            .enumerate()
            .filter(|(_, a)| sizes[a.0 as usize] > 1)
            .fold(None::<(usize, f64)>, |best, (i, a)| match best {
                Some((_, d)) if d >= a.1 => best,
                _ => Some((i, a.1)),
            });
        let Some((i, _)) = donor else { return };
        sizes[assignment[i].0 as usize] -= 1;
        sizes[c] = 1;
        assignment[i] = (c as Unit, 0.0);
        centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}

fn update_means(
    points: &[f64],
    dim: usize,
    centroids: &mut [f64],
    assignment: &[(Unit, f64)],
    weights: Option<&[f64]>,
    k: usize,
) {
    let mut sums = vec![0.0; k * dim];
    let mut sizes = vec![0.0; k];
    let mut plain = vec![0.0; k * dim];
    let mut members = vec![0usize; k];
    for (i, (x, a)) in points.chunks_exact(dim).zip(assignment).enumerate() {
        let c = a.0 as usize;
        let w = weights.map_or(1.0, |w| w[i]);
        sizes[c] += w;
        members[c] += 1;
        for ((s, p), v) in sums[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&mut plain[c * dim..(c + 1) * dim])
            .zip(x)
        {
            *s += w * v;
            *p += v;
        }
    }
    for c in 0..k {
        // A cluster holding only zero-weight points falls back to their plain mean.
        if sizes[c] == 0.0 && members[c] > 0 {
            sizes[c] = members[c] as f64;
            sums[c * dim..(c + 1) * dim].copy_from_slice(&plain[c * dim..(c + 1) * dim]);
        }
        if sizes[c] > 0.0 {
            let inv = sizes[c];
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = s / inv;
            }
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding over `points` (row-major, `dim` columns).
pub fn kmeans(points: &[f64], dim: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    kmeans_weighted(points, dim, None, cfg)
}

/// As [`kmeans`], with optional non-negative per-point weights in the objective.
pub fn kmeans_weighted(points: &[f64], dim: usize, weights: Option<&[f64]>, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if dim == 0 || points.is_empty() || points.len() % dim != 0 {
        return Err(Error::invalid("k-means needs a non-empty N x D point matrix"));
    }
    let n = points.len() / dim;
    if cfg.k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if n < cfg.k {
        return Err(Error::invalid(format!("k = {} exceeds the {n} training points", cfg.k)));
    }
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite training value"));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: w.len() });
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::invalid("weights must be finite, non-negative and not all zero"));
        }
    }
    let k = cfg.k;
    let mut centroids = kmeans_pp_init(points, dim, k, weights, cfg.seed)?;
    let mut assignment = assign(points, dim, &centroids, weights);
    let mut sse = total(&assignment);
    let mut history = vec![sse];
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        repair_empty(points, dim, &mut centroids, &mut assignment, k);
        update_means(points, dim, &mut centroids, &assignment, weights, k);
        assignment = assign(points, dim, &centroids, weights);
        let next = total(&assignment);
        // Lloyd steps never raise the objective; allow only summation noise.
        assert!(
            next <= sse * (1.0 + 1e-9) + 1e-12,
            "k-means SSE increased from {sse} to {next} at iteration {iterations}"
        );
        history.push(next);
        let improvement = sse - next;
        sse = next;
        if sse == 0.0 || improvement <= cfg.tol * sse {
            break;
        }
    }

    let mut counts = vec![0u64; k];
    for a in &assignment {
        counts[a.0 as usize] += 1;
    }
    let codebook = Codebook::new(dim, centroids, counts)?
        .with_source_tag(format!("kmeans k={k} seed={} n={n}", cfg.seed));
    Ok(KMeansFit {
        codebook,
        labels: assignment.iter().map(|a| a.0).collect(),
        sse,
        sse_history: history,
        iterations,
    })
}

pub fn kmeans_fit(points: &[f64], dim: usize, cfg: &KMeansConfig) -> Result<Codebook> {
    kmeans(points, dim, cfg).map(|f| f.codebook)
}

/// Concatenates frames of all matrices; every matrix must share one dimension.
pub fn pool_frames(mats: &[FeatureMatrix]) -> Result<(Vec<f64>, usize)> {
    let dim = mats
        .first()
        .ok_or_else(|| Error::invalid("no feature matrices to pool"))?
        .dim();
    let mut pooled = Vec::with_capacity(mats.iter().map(|m| m.data().len()).sum());
    for m in mats {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.dim(),
            });
        }
        pooled.extend_from_slice(m.data());
    }
    Ok((pooled, dim))
}

/// Per-dimension z-scoring fitted on pooled training frames.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[f64], dim: usize) -> Self {
        let n = (points.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in points.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in points.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, points: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        points
            .chunks_exact(dim)
            .flat_map(|x| {
                x.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
            })
            .collect()
    }

    pub fn invert(&self, points: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        points
            .chunks_exact(dim)
            .flat_map(|x| {
                x.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| v * s + m)
            })
            .collect()
    }
}

/// Maps each frame to its nearest centroid.
pub fn quantize(m: &FeatureMatrix, cb: &Codebook) -> Result<UnitSequence> {
    if m.dim() != cb.dim() {
        return Err(Error::DimensionMismatch {
            expected: cb.dim(),
            got: m.dim(),
        });
    }
    let units = assign(m.data(), m.dim(), cb.centroids(), None)
        .into_iter()
        .map(|a| a.0)
        .collect();
    Ok(UnitSequence::new(m.utterance_id(), units))
}

pub fn deduplicate(z: &UnitSequence) -> DedupedSequence {
    let mut units: Vec<Unit> = Vec::new();
    let mut durations: Vec<u32> = Vec::new();
    for &u in &z.units {
        match units.last() {
            Some(&last) if last == u => *durations.last_mut().unwrap() += 1,
            _ => {
                units.push(u);
                durations.push(1);
            }
        }
    }
    DedupedSequence::new(z.utterance_id.clone(), units, durations)
        .expect("run-length encoding always yields a valid deduplicated sequence")
}

pub fn reduplicate(d: &DedupedSequence) -> UnitSequence {
    let units = d
        .units()
        .iter()
        .zip(d.durations())
        .flat_map(|(&u, &n)| std::iter::repeat_n(u, n as usize))
        .collect();
    UnitSequence::new(d.utterance_id(), units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn sorted_rows(cb: &Codebook) -> Vec<Vec<f64>> {
        let mut rows: Vec<Vec<f64>> = cb.rows().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows
    }

    #[test]
    fn symmetric_square_splits_in_two() {
        let pts = [0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0];
        for seed in 0..5 {
            let cb = kmeans_fit(&pts, 2, &KMeansConfig::new(2, seed)).unwrap();
            assert_eq!(sorted_rows(&cb), vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
            assert_eq!(cb.counts(), &[2, 2]);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0];
        let cb = kmeans_fit(&pts, 2, &KMeansConfig::new(1, 9)).unwrap();
        assert!((cb.centroid(0)[0] - 1.0).abs() < 1e-12);
        assert!((cb.centroid(0)[1] - 2.0).abs() < 1e-12);
    }

    /// Global optimum of a 2-clustering by enumerating every assignment.
    fn brute_force_two_means(pts: &[[f64; 2]]) -> f64 {
        let n = pts.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let mut sse = 0.0;
            for side in [true, false] {
                let members: Vec<&[f64; 2]> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| &pts[i])
                    .collect();
                let m = members.len() as f64;
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / m;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / m;
                sse += members
                    .iter()
                    .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
                    .sum::<f64>();
            }
            best = best.min(sse);
        }
        best
    }

    #[test]
    fn reaches_enumerated_optimum_for_some_seed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let pts: Vec<[f64; 2]> = (0..8).map(|_| [rng.random(), rng.random()]).collect();
            let optimum = brute_force_two_means(&pts);
            let flat: Vec<f64> = pts.iter().flatten().copied().collect();
            let best = (0..10)
                .map(|s| kmeans(&flat, 2, &KMeansConfig::new(2, s)).unwrap().sse)
                .fold(f64::INFINITY, f64::min);
            assert!((best - optimum).abs() < 1e-9, "{best} vs {optimum}");
        }
    }

    #[test]
    fn sse_history_is_non_increasing_and_clusters_non_empty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..600).map(|_| rng.random::<f64>() * 10.0).collect();
        let fit = kmeans(&pts, 3, &KMeansConfig::new(25, 1)).unwrap();
        for w in fit.sse_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9));
        }
        assert!(fit.codebook.counts().iter().all(|&c| c > 0));
        assert_eq!(fit.codebook.counts().iter().sum::<u64>(), 200);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let a = kmeans_fit(&pts, 4, &KMeansConfig::new(7, 11)).unwrap();
        let b = kmeans_fit(&pts, 4, &KMeansConfig::new(7, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(kmeans_fit(&[0.0, 1.0], 1, &KMeansConfig::new(3, 0)).is_err());
        assert!(kmeans_fit(&[], 1, &KMeansConfig::new(1, 0)).is_err());
        assert!(kmeans_fit(&[1.0, 1.0, 1.0], 1, &KMeansConfig::new(2, 0)).is_err());
    }

    #[test]
    fn repair_refills_empty_cluster_with_farthest_point() {
        let pts = [0.0, 1.0, 2.0, 10.0];
        let mut centroids = vec![1.0, 100.0];
        let mut assignment = assign(&pts, 1, &centroids, None);
        repair_empty(&pts, 1, &mut centroids, &mut assignment, 2);
        assert_eq!(centroids[1], 10.0);
        assert_eq!(assignment[3], (1, 0.0));
    }

    #[test]
    fn quantize_exact_match_and_tie_break() {
        let cb = Codebook::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![5.0, 5.0],
            vec![2.0, 2.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        let m = FeatureMatrix::from_rows("u", 50.0, &[vec![2.0, 2.0], vec![0.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(quantize(&m, &cb).unwrap().units[0], 3);
        // (0,0) is centroid 0 exactly; shift it to sit between 1 and 4.
        let cb2 = Codebook::from_rows(&[vec![9.0, 9.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![7.0, 7.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(quantize(&m, &cb2).unwrap().units[1], 1);
        let bad = FeatureMatrix::from_rows("u", 50.0, &[vec![1.0]]).unwrap();
        assert!(quantize(&bad, &cb).is_err());
    }

    #[test]
    fn quantize_matches_exhaustive_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let dim = 6;
        let rows: Vec<Vec<f64>> = (0..17).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let cb = Codebook::from_rows(&rows).unwrap();
        let frames: Vec<Vec<f64>> = (0..100).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let m = FeatureMatrix::from_rows("u", 50.0, &frames).unwrap();
        let z = quantize(&m, &cb).unwrap();
        for (t, f) in frames.iter().enumerate() {
            let mut best = 0;
            for j in 1..rows.len() {
                if sq_dist(f, &rows[j]) < sq_dist(f, &rows[best]) {
                    best = j;
                }
            }
            assert_eq!(z.units[t] as usize, best);
        }
    }

    #[test]
    fn centroids_quantize_to_their_own_ids() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let cb = kmeans_fit(&pts, 3, &KMeansConfig::new(12, 0)).unwrap();
        let m = FeatureMatrix::new("c", 50.0, 3, cb.centroids().to_vec()).unwrap();
        assert_eq!(quantize(&m, &cb).unwrap().units, (0..12).collect::<Vec<Unit>>());
    }

    #[test]
    fn dedup_worked_example() {
        let d = deduplicate(&UnitSequence::new("u", vec![12, 12, 25, 31, 31, 31]));
        assert_eq!(d.units(), &[12, 25, 31]);
        assert_eq!(d.durations(), &[2, 1, 3]);
        assert_eq!(reduplicate(&d).units, vec![12, 12, 25, 31, 31, 31]);
    }

    #[test]
    fn dedup_edge_cases() {
        let d = deduplicate(&UnitSequence::new("u", vec![7]));
        assert_eq!((d.units(), d.durations()), (&[7][..], &[1][..]));
        let d = deduplicate(&UnitSequence::new("u", vec![3, 3, 3, 3]));
        assert_eq!((d.units(), d.durations()), (&[3][..], &[4][..]));
        let empty = DedupedSequence::new("u", vec![], vec![]).unwrap();
        assert!(reduplicate(&empty).units.is_empty());
    }

    #[test]
    fn standardizer_round_trips() {
        let pts = [1.0, 10.0, 3.0, 30.0, 5.0, 20.0];
        let s = Standardizer::fit(&pts, 2);
        let back = s.invert(&s.apply(&pts));
        for (a, b) in back.iter().zip(pts) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn prop_dedup_inverse(units in proptest::collection::vec(0u32..5, 0..60)) {
            let z = UnitSequence::new("p", units);
            let d = deduplicate(&z);
            prop_assert_eq!(d.frames(), z.len());
            prop_assert_eq!(&reduplicate(&d), &z);
            prop_assert_eq!(deduplicate(&reduplicate(&d)), d);
        }
    }
}
