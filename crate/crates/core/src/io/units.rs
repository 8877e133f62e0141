use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DedupedSequence, Unit, UnitSequence};

const DURATION_PREFIX: &str = "D";

fn join<T: std::fmt::Display>(head: &str, values: &[T]) -> String {
    let mut line = head.to_string();
    for v in values {
        write!(line, " {v}").unwrap();
    }
    line
}

pub fn format_units(seqs: &[UnitSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&join(&s.utterance_id, &s.units));
        out.push('\n');
    }
    out
}

pub fn format_deduped(seqs: &[DedupedSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&join(s.utterance_id(), s.units()));
        out.push('\n');
        out.push_str(&join(DURATION_PREFIX, s.durations()));
        out.push('\n');
    }
    out
}

fn parse_ints<T: std::str::FromStr>(fields: &[&str], path: &Path, line: usize) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("not a non-negative integer: {f:?}"),
            })
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
}

/// Parses frame-level unit lines. Duration lines, if any, are rejected.
pub fn parse_units(text: &str, path: &Path) -> Result<Vec<UnitSequence>> {
    content_lines(text)
        .map(|(line, fields)| {
            if fields[0] == DURATION_PREFIX {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "duration line in a frame-level unit file".into(),
                });
            }
            Ok(UnitSequence::new(fields[0], parse_ints::<Unit>(&fields[1..], path, line)?))
        })
        .collect()
}

pub fn parse_deduped(text: &str, path: &Path) -> Result<Vec<DedupedSequence>> {
    let mut out = Vec::new();
    let mut pending: Option<(usize, String, Vec<Unit>)> = None;
    for (line, fields) in content_lines(text) {
        let perr = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        if fields[0] == DURATION_PREFIX {
            let (_, id, units) = pending
                .take()
                .ok_or_else(|| perr("duration line without a preceding unit line"))?;
            let durations = parse_ints::<u32>(&fields[1..], path, line)?;
            let seq = DedupedSequence::new(id, units, durations).map_err(|e| perr(&e.to_string()))?;
            out.push(seq);
        } else {
            if let Some((l, id, _)) = pending {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: l,
                    msg: format!("{id}: missing duration line"),
                });
            }
            pending = Some((line, fields[0].to_string(), parse_ints(&fields[1..], path, line)?));
        }
    }
    if let Some((line, id, _)) = pending {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{id}: missing duration line"),
        });
    }
    Ok(out)
}

pub fn read_units(path: &Path) -> Result<Vec<UnitSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_units(&text, path)
}

pub fn read_deduped(path: &Path) -> Result<Vec<DedupedSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_deduped(&text, path)
}

pub fn write_units(seqs: &[UnitSequence], path: &Path) -> Result<()> {
    std::fs::write(path, format_units(seqs)).map_err(|e| Error::io(path, e))
}

pub fn write_deduped(seqs: &[DedupedSequence], path: &Path) -> Result<()> {
    std::fs::write(path, format_deduped(seqs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deduped_layout() {
        let d = DedupedSequence::new("utt1", vec![12, 25, 31], vec![2, 1, 3]).unwrap();
        assert_eq!(format_deduped(&[d.clone()]), "utt1 12 25 31\nD 2 1 3\n");
        assert_eq!(parse_deduped("utt1 12 25 31\nD 2 1 3\n", Path::new("d")).unwrap(), vec![d]);
    }

    #[test]
    fn empty_sequences_round_trip() {
        let u = vec![UnitSequence::new("a", vec![]), UnitSequence::new("b", vec![3, 3])];
        assert_eq!(parse_units(&format_units(&u), Path::new("u")).unwrap(), u);
    }

    #[test]
    fn missing_duration_line_is_error() {
        assert!(parse_deduped("a 1 2\nb 3\nD 1\n", Path::new("d")).is_err());
        assert!(parse_deduped("a 1 2\n", Path::new("d")).is_err());
        assert!(parse_deduped("a 1 1\nD 1 1\n", Path::new("d")).is_err());
    }

    #[test]
    fn negative_unit_rejected() {
        assert!(parse_units("a 1 -2\n", Path::new("u")).is_err());
    }
}
