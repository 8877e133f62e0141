//! Unit/attribute co-occurrence and V-measure.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{LabelAlignment, UnitSequence};

/// Reserved label for units that never co-occur with any category.
pub const UNSEEN: &str = "UNSEEN";

/// Frame-level unit x category counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    units: usize,
    categories: usize,
    counts: Vec<u64>,
    unit_totals: Vec<u64>,
    category_totals: Vec<u64>,
    category_names: Arc<[String]>,
}

impl ContingencyTable {
    /// Builds a table from a row-major `units x categories` count matrix.
    pub fn from_counts(units: usize, categories: usize, counts: Vec<u64>) -> Result<Self> {
        let names: Vec<String> = (0..categories).map(|c| c.to_string()).collect();
        Self::with_names(units, counts, names.into())
    }

    pub fn with_names(units: usize, counts: Vec<u64>, category_names: Arc<[String]>) -> Result<Self> {
        let categories = category_names.len();
        if units == 0 || categories == 0 || counts.len() != units * categories {
            return Err(Error::invalid(format!(
                "contingency payload of {} counts does not match {units} x {categories}",
                counts.len()
            )));
        }
        let mut unit_totals = vec![0u64; units];
        let mut category_totals = vec![0u64; categories];
        for (u, row) in counts.chunks_exact(categories).enumerate() {
            for (c, &n) in row.iter().enumerate() {
                unit_totals[u] += n;
                category_totals[c] += n;
            }
        }
        Ok(Self {
            units,
            categories,
            counts,
            unit_totals,
            category_totals,
            category_names,
        })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn count(&self, unit: usize, category: usize) -> u64 {
        self.counts[unit * self.categories + category]
    }

    pub fn row(&self, unit: usize) -> &[u64] {
        &self.counts[unit * self.categories..(unit + 1) * self.categories]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn unit_totals(&self) -> &[u64] {
        &self.unit_totals
    }

    pub fn category_totals(&self) -> &[u64] {
        &self.category_totals
    }

    pub fn total(&self) -> u64 {
        self.unit_totals.iter().sum()
    }

    pub fn category_names(&self) -> &Arc<[String]> {
        &self.category_names
    }

    /// Adds another table over the same units and categories.
    pub fn merge(&mut self, other: &ContingencyTable) -> Result<()> {
        if self.units != other.units || self.category_names != other.category_names {
            return Err(Error::invalid("cannot merge contingency tables of different shape"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unit_totals.iter_mut().zip(&other.unit_totals) {
            *a += b;
        }
        for (a, b) in self.category_totals.iter_mut().zip(&other.category_totals) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts unit/category co-occurrences frame by frame over paired utterances.
///
/// `units` is the vocabulary size K; with `exclude_sil` frames labelled `SIL`
/// are skipped.
pub fn build_contingency(
    zs: &[UnitSequence],
    labels: &[LabelAlignment],
    units: usize,
    exclude_sil: bool,
) -> Result<ContingencyTable> {
    let first = labels
        .first()
        .ok_or_else(|| Error::invalid("no label alignments"))?;
    let names = first.category_names.clone();
    if labels.iter().any(|l| l.category_names != names) {
        return Err(Error::invalid("label alignments use different category tables"));
    }
    let by_id: BTreeMap<&str, &LabelAlignment> =
        labels.iter().map(|l| (l.utterance_id.as_str(), l)).collect();
    let z_ids: BTreeSet<&str> = zs.iter().map(|z| z.utterance_id.as_str()).collect();
    let mut unmatched: Vec<&str> = z_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .copied()
        .collect();
    unmatched.extend(by_id.keys().filter(|id| !z_ids.contains(*id)));
    if !unmatched.is_empty() {
        return Err(Error::invalid(format!(
            "unpaired utterances: {}",
            unmatched.join(", ")
        )));
    }
    let sil = if exclude_sil { first.sil_id() } else { None };
    let c = names.len();
    let mut counts = vec![0u64; units * c];
    for z in zs {
        let lab = by_id[z.utterance_id.as_str()];
        if lab.frames() != z.len() {
            return Err(Error::invalid(format!(
                "{}: {} unit frames but {} label frames",
                z.utterance_id,
                z.len(),
                lab.frames()
            )));
        }
        for (&u, &cat) in z.units.iter().zip(&lab.frame_labels) {
            if u as usize >= units {
                return Err(Error::invalid(format!(
                    "{}: unit {u} outside vocabulary of {units}",
                    z.utterance_id
                )));
            }
            if Some(cat) == sil {
                continue;
            }
            counts[u as usize * c + cat as usize] += 1;
        }
    }
    ContingencyTable::with_names(units, counts, names)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v: f64,
}

fn entropy(totals: &[u64], n: f64, log: &impl Fn(f64) -> f64) -> f64 {
    totals
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * log(p)
        })
        .sum()
}

/// V-measure with an explicit logarithm; the ratios make the base irrelevant.
pub fn v_measure_with_log(t: &ContingencyTable, log: impl Fn(f64) -> f64) -> Result<VMeasure> {
    let total = t.total();
    if total == 0 {
        return Err(Error::invalid("contingency table is empty"));
    }
    let n = total as f64;
    let h_units = entropy(&t.unit_totals, n, &log);
    let h_cats = entropy(&t.category_totals, n, &log);
    let mut h_units_given_cats = 0.0;
    let mut h_cats_given_units = 0.0;
    for u in 0..t.units {
        for c in 0..t.categories {
            let joint = t.count(u, c);
            if joint == 0 {
                continue;
            }
            let p = joint as f64 / n;
            h_units_given_cats -= p * log(joint as f64 / t.category_totals[c] as f64);
            h_cats_given_units -= p * log(joint as f64 / t.unit_totals[u] as f64);
        }
    }
    let homogeneity = if h_units == 0.0 {
        1.0
    } else {
        1.0 - h_units_given_cats / h_units
    };
    let completeness = if h_cats == 0.0 {
        1.0
    } else {
        1.0 - h_cats_given_units / h_cats
    };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    Ok(VMeasure {
        homogeneity: 100.0 * homogeneity,
        completeness: 100.0 * completeness,
        v: 100.0 * v,
    })
}

/// Homogeneity, completeness and V (beta = 1), natural-log entropies, on a 0-100 scale.
pub fn v_measure(t: &ContingencyTable) -> Result<VMeasure> {
    v_measure_with_log(t, f64::ln)
}

/// Most frequent category per unit, lowest category ID on ties; `None` for unseen units.
pub fn majority_label(t: &ContingencyTable) -> Vec<Option<u32>> {
    (0..t.units)
        .map(|u| {
            let row = t.row(u);
            let mut best: Option<(u32, u64)> = None;
            for (c, &n) in row.iter().enumerate() {
                if n > 0 && best.is_none_or(|(_, b)| n > b) {
                    best = Some((c as u32, n));
                }
            }
            best.map(|b| b.0)
        })
        .collect()
}

/// Majority labels as category names, with [`UNSEEN`] for empty units.
pub fn majority_names(t: &ContingencyTable) -> Vec<String> {
    majority_label(t)
        .into_iter()
        .map(|m| m.map_or_else(|| UNSEEN.to_string(), |c| t.category_names[c as usize].clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn names(n: &[&str]) -> Arc<[String]> {
        n.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }

    #[test]
    fn direct_count_and_additivity() {
        let cats = names(&["SIL", "AA", "IY"]);
        let z = UnitSequence::new("u1", vec![0, 0, 1]);
        let l = LabelAlignment::new("u1", LabelKind::Phoneme, vec![1, 1, 2], cats.clone()).unwrap();
        let t = build_contingency(&[z.clone()], &[l.clone()], 2, false).unwrap();
        assert_eq!(t.count(0, 1), 2);
        assert_eq!(t.count(1, 2), 1);
        assert_eq!(t.total(), 3);

        let z2 = UnitSequence::new("u2", z.units.clone());
        let l2 = LabelAlignment::new("u2", LabelKind::Phoneme, l.frame_labels.clone(), cats).unwrap();
        let t2 = build_contingency(&[z, z2], &[l, l2], 2, false).unwrap();
        assert_eq!(t2.count(0, 1), 4);
        assert_eq!(t2.count(1, 2), 2);
    }

    #[test]
    fn unpaired_and_mismatched_utterances_error() {
        let cats = names(&["SIL", "AA"]);
        let l = LabelAlignment::new("a", LabelKind::Phoneme, vec![1, 1], cats).unwrap();
        let err = build_contingency(&[UnitSequence::new("b", vec![0, 0])], &[l.clone()], 1, false).unwrap_err();
        assert!(err.to_string().contains('a') && err.to_string().contains('b'));
        assert!(build_contingency(&[UnitSequence::new("a", vec![0])], &[l], 1, false).is_err());
    }

    #[test]
    fn exclude_sil_drops_silence_frames() {
        let cats = names(&["SIL", "AA"]);
        let l = LabelAlignment::new("a", LabelKind::Phoneme, vec![0, 1, 0], cats).unwrap();
        let z = UnitSequence::new("a", vec![0, 1, 0]);
        let t = build_contingency(&[z], &[l], 2, true).unwrap();
        assert_eq!(t.total(), 1);
    }

    #[test]
    fn brute_force_tally_matches() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let cats = names(&["SIL", "A", "B", "C"]);
        let mut zs = Vec::new();
        let mut ls = Vec::new();
        for i in 0..6 {
            let n = rng.random_range(1..30);
            zs.push(UnitSequence::new(format!("u{i}"), (0..n).map(|_| rng.random_range(0..5)).collect()));
            ls.push(
                LabelAlignment::new(format!("u{i}"), LabelKind::Phoneme, (0..n).map(|_| rng.random_range(0..4)).collect(), cats.clone())
                    .unwrap(),
            );
        }
        let t = build_contingency(&zs, &ls, 5, false).unwrap();
        for u in 0..5u32 {
            for c in 0..4u32 {
                let mut tally = 0;
                for (z, l) in zs.iter().zip(&ls) {
                    for f in 0..z.len() {
                        if z.units[f] == u && l.frame_labels[f] == c {
                            tally += 1;
                        }
                    }
                }
                assert_eq!(t.count(u as usize, c as usize), tally);
            }
        }
    }

    #[test]
    fn diagonal_table_is_perfect() {
        let t = ContingencyTable::from_counts(3, 3, vec![5, 0, 0, 0, 2, 0, 0, 0, 9]).unwrap();
        let v = v_measure(&t).unwrap();
        assert_eq!(v.v, 100.0);
        assert_eq!(v.homogeneity, 100.0);
        assert_eq!(v.completeness, 100.0);
    }

    #[test]
    fn degenerate_conventions() {
        let t = ContingencyTable::from_counts(1, 2, vec![4, 4]).unwrap();
        let v = v_measure(&t).unwrap();
        assert_eq!(v.homogeneity, 100.0);
        assert_eq!(v.completeness, 0.0);
        assert_eq!(v.v, 0.0);
        assert!(v_measure(&ContingencyTable::from_counts(1, 1, vec![0]).unwrap()).is_err());
    }

    /// Entropies from the joint distribution via the chain rule H(X|Y) = H(X,Y) - H(Y).
    pub(crate) fn oracle_v(k: usize, c: usize, counts: &[u64]) -> f64 {
        let n: f64 = counts.iter().sum::<u64>() as f64;
        let h = |ps: Vec<f64>| -> f64 { ps.into_iter().filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum() };
        let joint = h(counts.iter().map(|&x| x as f64 / n).collect());
        let pu: Vec<f64> = (0..k).map(|u| (0..c).map(|j| counts[u * c + j]).sum::<u64>() as f64 / n).collect();
        let pc: Vec<f64> = (0..c).map(|j| (0..k).map(|u| counts[u * c + j]).sum::<u64>() as f64 / n).collect();
        let (hu, hc) = (h(pu), h(pc));
        let hom = if hu == 0.0 { 1.0 } else { 1.0 - (joint - hc) / hu };
        let com = if hc == 0.0 { 1.0 } else { 1.0 - (joint - hu) / hc };
        if hom + com == 0.0 {
            0.0
        } else {
            100.0 * 2.0 * hom * com / (hom + com)
        }
    }

    #[test]
    fn random_table_matches_entropy_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..20).map(|_| rng.random_range(0..40)).collect();
            let t = ContingencyTable::from_counts(5, 4, counts.clone()).unwrap();
            if t.total() == 0 {
                continue;
            }
            let v = v_measure(&t).unwrap().v;
            assert!((v - oracle_v(5, 4, &counts)).abs() < 1e-9);
        }
    }

    #[test]
    fn log_base_cancels() {
        let t = ContingencyTable::from_counts(3, 2, vec![3, 1, 0, 5, 2, 2]).unwrap();
        let e = v_measure(&t).unwrap();
        let b2 = v_measure_with_log(&t, f64::log2).unwrap();
        let b10 = v_measure_with_log(&t, f64::log10).unwrap();
        for other in [b2, b10] {
            assert!((e.v - other.v).abs() < 1e-9);
            assert!((e.homogeneity - other.homogeneity).abs() < 1e-9);
        }
    }

    #[test]
    fn majority_with_ties_and_unseen() {
        let t = ContingencyTable::with_names(3, vec![7, 3, 5, 5, 0, 0], names(&["AA", "IY"])).unwrap();
        assert_eq!(majority_label(&t), vec![Some(0), Some(0), None]);
        assert_eq!(majority_names(&t), ["AA", "AA", UNSEEN]);
    }

    #[test]
    fn majority_matches_row_argmax() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let counts: Vec<u64> = (0..8 * 6).map(|_| rng.random_range(0..4)).collect();
        let t = ContingencyTable::from_counts(8, 6, counts.clone()).unwrap();
        let m = majority_label(&t);
        for u in 0..8 {
            let row = &counts[u * 6..(u + 1) * 6];
            let max = *row.iter().max().unwrap();
            let expected = if max == 0 { None } else { row.iter().position(|&x| x == max).map(|p| p as u32) };
            assert_eq!(m[u], expected);
        }
    }

    #[test]
    fn merging_distinct_majority_units_does_not_raise_unit_purity() {
        let cases: [(usize, Vec<u64>); 3] = [
            (3, vec![9, 1, 0, 1, 8, 1, 0, 2, 7]),
            (3, vec![20, 2, 1, 3, 15, 2, 1, 1, 30]),
            (4, vec![5, 1, 0, 0, 0, 6, 1, 0, 1, 0, 7, 1, 0, 0, 2, 9]),
        ];
        for (c, counts) in cases {
            let k = counts.len() / c;
            let before = v_measure(&ContingencyTable::from_counts(k, c, counts.clone()).unwrap()).unwrap();
            let mut merged: Vec<u64> = counts[..c].iter().zip(&counts[c..2 * c]).map(|(a, b)| a + b).collect();
            merged.extend_from_slice(&counts[2 * c..]);
            let after = v_measure(&ContingencyTable::from_counts(k - 1, c, merged).unwrap()).unwrap();
            // purity of units w.r.t. categories is the 1 - H(C|U)/H(C) term
            assert!(after.completeness <= before.completeness + 1e-12, "{after:?} vs {before:?}");
            assert!(after.completeness < before.completeness);
        }
    }

    proptest! {
        #[test]
        fn prop_bounds_and_permutation_symmetry(
            k in 1usize..6, c in 1usize..6, seed in any::<u64>()
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let counts: Vec<u64> = (0..k * c).map(|_| rng.random_range(0..6)).collect();
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let t = ContingencyTable::from_counts(k, c, counts.clone()).unwrap();
            let v = v_measure(&t).unwrap();
            for x in [v.homogeneity, v.completeness, v.v] {
                prop_assert!((-1e-9..=100.0 + 1e-9).contains(&x));
            }
            // reverse rows and columns
            let mut permuted = vec![0u64; k * c];
            for u in 0..k {
                for j in 0..c {
                    permuted[(k - 1 - u) * c + (c - 1 - j)] = counts[u * c + j];
                }
            }
            let p = v_measure(&ContingencyTable::from_counts(k, c, permuted).unwrap()).unwrap();
            prop_assert!((p.v - v.v).abs() < 1e-9);
        }
    }
}
