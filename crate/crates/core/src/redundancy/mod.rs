//! Unit edit distance and Circular Resynthesis swap rates.
//!
//! A pass-1 transcription is compared with the transcription obtained after
//! decoding and re-encoding it; substitutions in the minimal edit script
//! between the two measure how often one unit turns into another.

mod circular;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Unit;

pub use circular::{
    circular_resynthesis, CircularConfig, CircularReport, CodebookEncoder, Encoder, PlantedSwap,
    SecondPass, SyntheticReencoder,
};

/// One step of an edit script turning `a` into `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { a_pos: usize, b_pos: usize, unit: Unit },
    Substitute { a_pos: usize, b_pos: usize, from: Unit, to: Unit },
    Delete { a_pos: usize, unit: Unit },
    Insert { b_pos: usize, unit: Unit },
}

impl EditOp {
    pub fn cost(&self) -> usize {
        match self {
            EditOp::Match { .. } => 0,
            _ => 1,
        }
    }
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &[Unit], b: &[Unit]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Unit-Edit-Distance: edit distance normalized by `a`'s length, in percent.
pub fn ued(a: &[Unit], b: &[Unit]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("UED reference sequence is empty"));
    }
    Ok(100.0 * edit_distance(a, b) as f64 / a.len() as f64)
}

/// A minimal edit script from a full DP-table backtrace.
///
/// Walking back from the end, a diagonal step (match or substitution) is
/// preferred over a deletion, and a deletion over an insertion.
pub fn align_ops(a: &[Unit], b: &[Unit]) -> Vec<EditOp> {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut table = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        table[j] = j;
    }
    for i in 1..=n {
        table[i * w] = i;
        for j in 1..=m {
            let sub = table[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = table[(i - 1) * w + j] + 1;
            let ins = table[i * w + j - 1] + 1;
            table[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * w + j];
        if i > 0 && j > 0 && here == table[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            i -= 1;
            j -= 1;
            ops.push(if a[i] == b[j] {
                EditOp::Match { a_pos: i, b_pos: j, unit: a[i] }
            } else {
                EditOp::Substitute { a_pos: i, b_pos: j, from: a[i], to: b[j] }
            });
        } else if i > 0 && here == table[(i - 1) * w + j] + 1 {
            i -= 1;
            ops.push(EditOp::Delete { a_pos: i, unit: a[i] });
        } else {
            j -= 1;
            ops.push(EditOp::Insert { b_pos: j, unit: b[j] });
        }
    }
    ops.reverse();
    ops
}

/// Applies an edit script to `a`.
pub fn replay(a: &[Unit], ops: &[EditOp]) -> Result<Vec<Unit>> {
    let mut out = Vec::with_capacity(ops.len());
    let mut next_a = 0;
    for op in ops {
        match *op {
            EditOp::Match { a_pos, unit, .. } | EditOp::Substitute { a_pos, from: unit, .. } => {
                if a_pos != next_a || a.get(a_pos) != Some(&unit) {
                    return Err(Error::invalid(format!("edit script out of step at a[{a_pos}]")));
                }
                next_a += 1;
                out.push(match *op {
                    EditOp::Substitute { to, .. } => to,
                    _ => unit,
                });
            }
            EditOp::Delete { a_pos, unit } => {
                if a_pos != next_a || a.get(a_pos) != Some(&unit) {
                    return Err(Error::invalid(format!("edit script out of step at a[{a_pos}]")));
                }
                next_a += 1;
            }
            EditOp::Insert { unit, .. } => out.push(unit),
        }
    }
    if next_a != a.len() {
        return Err(Error::invalid("edit script does not consume the whole source"));
    }
    Ok(out)
}

/// Denominator used to turn substitution counts into swap rates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrNormalization {
    /// Occurrences of the source unit in pass-1 transcriptions.
    #[default]
    SourceOccurrences,
    /// All edit operations over the corpus.
    TotalEdits,
}

/// Raw substitution statistics; merge per-utterance tallies with [`CrCounts::merge`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrCounts {
    k: usize,
    substitutions: Vec<u64>,
    occurrences: Vec<u64>,
    total_edits: u64,
}

impl CrCounts {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            substitutions: vec![0; k * k],
            occurrences: vec![0; k],
            total_edits: 0,
        }
    }

    /// Tallies one utterance's pass-1 / pass-2 transcriptions.
    pub fn add(&mut self, pass1: &[Unit], pass2: &[Unit]) -> Result<()> {
        let k = self.k;
        if let Some(&u) = pass1.iter().chain(pass2).find(|&&u| u as usize >= k) {
            return Err(Error::invalid(format!("unit {u} outside vocabulary of {k}")));
        }
        for &u in pass1 {
            self.occurrences[u as usize] += 1;
        }
        for op in align_ops(pass1, pass2) {
            self.total_edits += op.cost() as u64;
            if let EditOp::Substitute { from, to, .. } = op {
                self.substitutions[from as usize * k + to as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CrCounts) {
        assert_eq!(self.k, other.k, "CR tallies over different vocabularies");
        for (a, b) in self.substitutions.iter_mut().zip(&other.substitutions) {
            *a += b;
        }
        for (a, b) in self.occurrences.iter_mut().zip(&other.occurrences) {
            *a += b;
        }
        self.total_edits += other.total_edits;
    }

    pub fn substitutions(&self, from: Unit, to: Unit) -> u64 {
        self.substitutions[from as usize * self.k + to as usize]
    }

    pub fn to_matrix(&self, normalization: CrNormalization) -> CrMatrix {
        let k = self.k;
        let mut swap_rate = vec![0.0; k * k];
        for i in 0..k {
            let denom = match normalization {
                CrNormalization::SourceOccurrences => self.occurrences[i],
                CrNormalization::TotalEdits => self.total_edits,
            };
            if denom == 0 {
                continue;
            }
            for j in 0..k {
                if i != j {
                    swap_rate[i * k + j] = self.substitutions[i * k + j] as f64 / denom as f64;
                }
            }
        }
        CrMatrix {
            k,
            swap_rate,
            occurrence_counts: self.occurrences.clone(),
        }
    }
}

/// Directed swap rates between units; the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CrMatrix {
    k: usize,
    swap_rate: Vec<f64>,
    occurrence_counts: Vec<u64>,
}

impl CrMatrix {
    pub fn new(k: usize, swap_rate: Vec<f64>, occurrence_counts: Vec<u64>) -> Result<Self> {
        if swap_rate.len() != k * k || occurrence_counts.len() != k {
            return Err(Error::invalid(format!("CR matrix payload does not match K = {k}")));
        }
        Ok(Self {
            k,
            swap_rate,
            occurrence_counts,
        })
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            swap_rate: vec![0.0; k * k],
            occurrence_counts: vec![0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rate(&self, from: Unit, to: Unit) -> f64 {
        self.swap_rate[from as usize * self.k + to as usize]
    }

    pub fn rates(&self) -> &[f64] {
        &self.swap_rate
    }

    pub fn occurrence_counts(&self) -> &[u64] {
        &self.occurrence_counts
    }

    pub fn set_rate(&mut self, from: Unit, to: Unit, rate: f64) {
        self.swap_rate[from as usize * self.k + to as usize] = rate;
    }

    /// Mean of the two directed rates.
    pub fn symmetric(&self, a: Unit, b: Unit) -> f64 {
        0.5 * (self.rate(a, b) + self.rate(b, a))
    }

    /// TSV: header row of unit IDs, then one row per source unit.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("unit");
        for j in 0..self.k {
            write!(out, "\t{j}").unwrap();
        }
        out.push('\n');
        for i in 0..self.k {
            write!(out, "{i}").unwrap();
            for j in 0..self.k {
                write!(out, "\t{}", self.swap_rate[i * self.k + j]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty CR matrix".into()))?;
        let k = header.split('\t').count().saturating_sub(1);
        let mut swap_rate = Vec::with_capacity(k * k);
        let mut rows = 0;
        for (idx, line) in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != k + 1 {
                return Err(perr(idx + 1, format!("expected {} columns, found {}", k + 1, cols.len())));
            }
            for c in &cols[1..] {
                swap_rate.push(
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| perr(idx + 1, format!("bad rate {c:?}")))?,
                );
            }
            rows += 1;
        }
        if rows != k {
            return Err(perr(1, format!("{k} header columns but {rows} rows")));
        }
        Self::new(k, swap_rate, vec![0; k])
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// Per-utterance UED plus the corpus mean.
#[derive(Debug, Clone, PartialEq)]
pub struct UedSummary {
    pub per_utterance: Vec<(String, f64)>,
    pub mean: f64,
}

/// Pairs pass-1 and pass-2 transcriptions by position; utterance IDs must agree.
pub fn compare_passes<'a>(
    pass1: &'a [(String, Vec<Unit>)],
    pass2: &'a [(String, Vec<Unit>)],
    k: usize,
    normalization: CrNormalization,
) -> Result<(UedSummary, CrMatrix)> {
    use rayon::prelude::*;

    if pass1.len() != pass2.len() {
        return Err(Error::invalid(format!(
            "{} pass-1 utterances but {} pass-2 utterances",
            pass1.len(),
            pass2.len()
        )));
    }
    if pass1.is_empty() {
        return Err(Error::invalid("no utterances to compare"));
    }
    let per: Vec<(String, f64, CrCounts)> = pass1
        .par_iter()
        .zip(pass2)
        .map(|((id1, a), (id2, b))| {
            if id1 != id2 {
                return Err(Error::invalid(format!("utterance order differs: {id1} vs {id2}")));
            }
            let mut counts = CrCounts::new(k);
            counts.add(a, b)?;
            Ok((id1.clone(), ued(a, b)?, counts))
        })
        .collect::<Result<_>>()?;
    let mut total = CrCounts::new(k);
    for (_, _, c) in &per {
        total.merge(c);
    }
    let mean = per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64;
    Ok((
        UedSummary {
            per_utterance: per.into_iter().map(|(id, u, _)| (id, u)).collect(),
            mean,
        },
        total.to_matrix(normalization),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ued_examples() {
        assert_eq!(ued(&[12, 25, 31], &[12, 25, 31]).unwrap(), 0.0);
        assert!((ued(&[12, 25, 31], &[12, 31]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!(ued(&[], &[1]).is_err());
    }

    #[test]
    fn align_examples() {
        assert_eq!(
            align_ops(&[1, 2], &[1, 3]),
            vec![
                EditOp::Match { a_pos: 0, b_pos: 0, unit: 1 },
                EditOp::Substitute { a_pos: 1, b_pos: 1, from: 2, to: 3 }
            ]
        );
        assert_eq!(
            align_ops(&[1], &[1, 9]),
            vec![EditOp::Match { a_pos: 0, b_pos: 0, unit: 1 }, EditOp::Insert { b_pos: 1, unit: 9 }]
        );
        assert_eq!(align_ops(&[], &[]), vec![]);
    }

    #[test]
    fn substitution_preferred_over_indel_pair() {
        // [1,2] -> [2,1] costs 2 either way; the script must use substitutions
        let ops = align_ops(&[1, 2], &[2, 1]);
        assert!(ops.iter().all(|o| matches!(o, EditOp::Substitute { .. })), "{ops:?}");
    }

    #[test]
    fn cr_counts_every_substitution() {
        let mut c = CrCounts::new(4);
        c.add(&[1, 2, 1, 2], &[1, 3, 1, 3]).unwrap();
        let m = c.to_matrix(CrNormalization::SourceOccurrences);
        assert_eq!(m.rate(2, 3), 1.0);
        assert_eq!(m.rate(3, 2), 0.0);
        assert_eq!(m.rate(1, 1), 0.0);
        assert_eq!(m.occurrence_counts(), &[0, 2, 2, 0]);
    }

    #[test]
    fn total_edits_normalization() {
        let mut c = CrCounts::new(4);
        c.add(&[1, 2, 1, 2], &[1, 3, 1]).unwrap();
        let m = c.to_matrix(CrNormalization::TotalEdits);
        assert_eq!(m.rate(2, 3), 0.5);
    }

    #[test]
    fn tsv_round_trip() {
        let mut m = CrMatrix::zeros(3);
        m.set_rate(0, 2, 0.25);
        m.set_rate(2, 1, 1.0 / 3.0);
        let back = CrMatrix::from_tsv(&m.to_tsv(), Path::new("cr")).unwrap();
        assert_eq!(back.rates(), m.rates());
        assert!(m.to_tsv().starts_with("unit\t0\t1\t2\n"));
    }

    #[test]
    fn compare_passes_identity_is_zero() {
        let p: Vec<(String, Vec<Unit>)> = vec![("a".into(), vec![0, 1, 2]), ("b".into(), vec![2, 0])];
        let (u, m) = compare_passes(&p, &p, 3, CrNormalization::SourceOccurrences).unwrap();
        assert_eq!(u.mean, 0.0);
        assert!(m.rates().iter().all(|&r| r == 0.0));
    }

    /// Textbook Levenshtein over the full table, written independently of [`edit_distance`].
    fn oracle_distance(a: &[Unit], b: &[Unit]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = *[d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + c].iter().min().unwrap();
            }
        }
        d[a.len()][b.len()]
    }

    proptest! {
        #[test]
        fn prop_script_matches_oracle(
            a in proptest::collection::vec(0u32..6, 0..25),
            b in proptest::collection::vec(0u32..6, 0..25),
        ) {
            let d = oracle_distance(&a, &b);
            prop_assert_eq!(edit_distance(&a, &b), d);
            let ops = align_ops(&a, &b);
            prop_assert_eq!(ops.iter().map(EditOp::cost).sum::<usize>(), d);
            prop_assert_eq!(replay(&a, &ops).unwrap(), b);
        }

        #[test]
        fn prop_ued_triangle(
            a in proptest::collection::vec(0u32..5, 1..20),
            b in proptest::collection::vec(0u32..5, 0..20),
            c in proptest::collection::vec(0u32..5, 0..20),
        ) {
            prop_assert_eq!(ued(&a, &a).unwrap(), 0.0);
            let n = a.len() as f64;
            let lhs = ued(&a, &c).unwrap() * n / 100.0;
            let rhs = ued(&a, &b).unwrap() * n / 100.0 + edit_distance(&b, &c) as f64;
            prop_assert!(lhs <= rhs + 1e-9);
        }

        #[test]
        fn prop_cr_rows_bounded(
            pairs in proptest::collection::vec(
                (proptest::collection::vec(0u32..5, 1..15), proptest::collection::vec(0u32..5, 0..15)), 1..6)
        ) {
            let mut c = CrCounts::new(5);
            for (a, b) in &pairs {
                c.add(a, b).unwrap();
            }
            let m = c.to_matrix(CrNormalization::SourceOccurrences);
            for i in 0..5u32 {
                let row: f64 = (0..5u32).map(|j| m.rate(i, j)).sum();
                prop_assert!(row <= 1.0 + 1e-12);
                for j in 0..5u32 {
                    prop_assert!((0.0..=1.0).contains(&m.rate(i, j)));
                }
            }
        }
    }
}
