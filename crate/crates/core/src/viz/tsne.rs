//! Exact t-SNE over codebook centroids.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantizer::sq_dist;
use crate::rng::{self, purpose};
use crate::types::Codebook;

const LEARNING_RATE: f64 = 200.0;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsneMetric {
    /// Squared Euclidean distance.
    #[default]
    Euclidean,
    /// `1 - cos` between centroids.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub metric: TsneMetric,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            metric: TsneMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    pub seed: u64,
    pub final_kl: f64,
    /// KL divergence right after early exaggeration ends (None if the run
    /// is shorter than the exaggeration phase).
    pub kl_after_exaggeration: Option<f64>,
    /// Perplexity actually used after clamping.
    pub perplexity: f64,
}

/// Pairwise input dissimilarities, row-major K x K.
pub fn input_distances(cb: &Codebook, metric: TsneMetric) -> Result<Vec<f64>> {
    let k = cb.k();
    let mut d = vec![0.0; k * k];
    match metric {
        TsneMetric::Euclidean => {
            for i in 0..k {
                for j in 0..k {
                    d[i * k + j] = sq_dist(cb.centroid(i), cb.centroid(j));
                }
            }
        }
        TsneMetric::Cosine => {
            let norms: Vec<f64> = cb.rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            if let Some(u) = norms.iter().position(|&n| n == 0.0) {
                return Err(Error::invalid(format!("centroid {u} has zero norm")));
            }
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        let dot: f64 = cb.centroid(i).iter().zip(cb.centroid(j)).map(|(a, b)| a * b).sum();
                        d[i * k + j] = (1.0 - dot / (norms[i] * norms[j])).max(0.0);
                    }
                }
            }
        }
    }
    Ok(d)
}

/// Conditional affinities p(j|i) per row at the given perplexity, each found
/// by bisection on the Gaussian precision. Returns the row-major matrix and the
/// perplexity each row achieved.
pub fn conditional_affinities(dist: &[f64], k: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * k..(i + 1) * k];
            let dmin = (0..k).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
            // Entropy (nats) and normalized row for precision beta.
            let eval = |beta: f64| {
                let mut p = vec![0.0; k];
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..k {
                    if j != i {
                        let shifted = row[j] - dmin;
                        let v = (-beta * shifted).exp();
                        p[j] = v;
                        sum += v;
                        weighted += v * shifted;
                    }
                }
                for v in &mut p {
                    *v /= sum;
                }
                (sum.ln() + beta * weighted / sum, p)
            };
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut best = eval(beta);
            for _ in 0..2000 {
                let (h, _) = &best;
                if (h.exp() - perplexity).abs() < 1e-7 {
                    break;
                }
                if *h > target {
                    lo = beta;
                    beta = if hi.is_finite() { 0.5 * (lo + hi) } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = 0.5 * (lo + hi);
                }
                if lo == hi {
                    break;
                }
                best = eval(beta);
            }
            let perp = best.0.exp();
            (best.1, perp)
        })
        .collect();
    let mut p = Vec::with_capacity(k * k);
    let mut perps = Vec::with_capacity(k);
    for (row, perp) in rows {
        p.extend(row);
        perps.push(perp);
    }
    (p, perps)
}

/// Symmetrized joint affinities `(p(j|i) + p(i|j)) / 2K`.
pub fn joint_affinities(cond: &[f64], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            p[i * k + j] = (cond[i * k + j] + cond[j * k + i]) / (2.0 * k as f64);
        }
    }
    p
}

fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let k = y.len();
    let mut num = vec![0.0; k * k];
    num.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                *slot = 1.0 / (1.0 + dx * dx + dy * dy);
            }
        }
    });
    let z: f64 = num.chunks(k).map(|r| r.iter().sum::<f64>()).sum();
    (num, z)
}

/// KL(P || Q) for an embedding.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_t(y);
    p.iter()
        .zip(&num)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, n)| pv * (pv / (n / z).max(1e-300)).ln())
        .sum()
}

/// Embeds the codebook centroids in 2-D.
pub fn tsne_embed(cb: &Codebook, cfg: &TsneConfig) -> Result<Embedding2D> {
    let k = cb.k();
    if k < 4 {
        return Err(Error::invalid(format!("t-SNE needs at least 4 centroids, got {k}")));
    }
    if !(cfg.perplexity > 0.0) {
        return Err(Error::invalid("perplexity must be positive"));
    }
    let perplexity = cfg.perplexity.min((k - 1) as f64 / 3.0);
    let dist = input_distances(cb, cfg.metric)?;
    let (cond, _) = conditional_affinities(&dist, k, perplexity);
    let p = joint_affinities(&cond, k);

    let mut rng = rng::stream(cfg.seed, purpose::TSNE_INIT);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..k).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; k];
    let mut gains = vec![[1.0f64; 2]; k];
    let mut kl_after = None;

    for iter in 0..cfg.iters {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < EXAGGERATION_ITERS { MOMENTUM_EARLY } else { MOMENTUM_LATE };
        if iter == EXAGGERATION_ITERS {
            kl_after = Some(kl_divergence(&p, &y));
        }
        let (num, z) = student_t(&y);
        let grad: Vec<[f64; 2]> = (0..k)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..k {
                    if i != j {
                        let n = num[i * k + j];
                        let m = (exaggeration * p[i * k + j] - n / z) * n;
                        g[0] += m * (y[i][0] - y[j][0]);
                        g[1] += m * (y[i][1] - y[j][1]);
                    }
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..k {
            for a in 0..2 {
                let gain = &mut gains[i][a];
                *gain = if (grad[i][a] > 0.0) != (update[i][a] > 0.0) {
                    *gain + 0.2
                } else {
                    *gain * 0.8
                };
                *gain = (*gain).max(MIN_GAIN);
                update[i][a] = momentum * update[i][a] - LEARNING_RATE * *gain * grad[i][a];
                y[i][a] += update[i][a];
            }
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / k as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / k as f64,
        ];
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-SNE diverged to non-finite coordinates"));
    }
    Ok(Embedding2D {
        final_kl: kl_divergence(&p, &y),
        points: y,
        seed: cfg.seed,
        kl_after_exaggeration: kl_after,
        perplexity,
    })
}

/// Fraction of points whose nearest other point shares their label.
pub fn nn_purity(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let hits = (0..n)
        .filter(|&i| {
            let nn = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (points[a][0] - points[i][0]).powi(2) + (points[a][1] - points[i][1]).powi(2);
                    let db = (points[b][0] - points[i][0]).powi(2) + (points[b][1] - points[i][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            labels[nn] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blobs(per: usize, dim: usize, sep: f64, seed: u64) -> (Codebook, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for b in 0..3 {
            for _ in 0..per {
                for d in 0..dim {
                    let center = if d == b { sep } else { 0.0 };
                    data.push(center + normal.sample(&mut rng));
                }
                labels.push(b);
            }
        }
        (Codebook::new(dim, data, vec![1; 3 * per]).unwrap(), labels)
    }

    #[test]
    fn affinity_rows_are_distributions_at_target_perplexity() {
        let (cb, _) = blobs(20, 5, 6.0, 1);
        let k = cb.k();
        for metric in [TsneMetric::Euclidean, TsneMetric::Cosine] {
            let d = input_distances(&cb, metric).unwrap();
            let (cond, perps) = conditional_affinities(&d, k, 15.0);
            for i in 0..k {
                let s: f64 = cond[i * k..(i + 1) * k].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert_eq!(cond[i * k + i], 0.0);
                // Oracle: perplexity from the row's own Shannon entropy.
                let h: f64 = cond[i * k..(i + 1) * k].iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
                assert!((h.exp() - 15.0).abs() < 1e-4, "row {i}: {}", h.exp());
                assert!((perps[i] - 15.0).abs() < 1e-4);
            }
            let p = joint_affinities(&cond, k);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_decreasing_kl() {
        let (cb, _) = blobs(10, 4, 10.0, 2);
        let cfg = TsneConfig { iters: 400, ..TsneConfig::default() };
        let a = tsne_embed(&cb, &cfg).unwrap();
        let b = tsne_embed(&cb, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.final_kl < a.kl_after_exaggeration.unwrap());
        assert!((a.perplexity - 29.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn separates_blobs() {
        let (cb, labels) = blobs(30, 8, 20.0, 3);
        let e = tsne_embed(&cb, &TsneConfig::default()).unwrap();
        assert!(nn_purity(&e.points, &labels) >= 0.99);
    }

    #[test]
    fn rejects_tiny_codebooks() {
        let cb = Codebook::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(tsne_embed(&cb, &TsneConfig::default()).is_err());
    }
}
