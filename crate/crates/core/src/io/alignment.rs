use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::types::{LabelAlignment, LabelKind, SIL};

/// One `utterance_id, start, end, label` row; `end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSegment {
    pub utterance_id: String,
    pub start: usize,
    pub end: usize,
    pub label: String,
    pub line: usize,
}

fn parse_segments(text: &str, path: &Path) -> Result<Vec<AlignmentSegment>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 4 {
            return Err(perr(format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        let start: usize = cols[1]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad start frame {:?}", cols[1])))?;
        let end: usize = cols[2]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad end frame {:?}", cols[2])))?;
        if end <= start {
            return Err(perr(format!("empty segment [{start}, {end})")));
        }
        let label = cols[3].trim();
        if label.is_empty() {
            return Err(perr("empty label".into()));
        }
        out.push(AlignmentSegment {
            utterance_id: cols[0].trim().to_string(),
            start,
            end,
            label: label.to_string(),
            line,
        });
    }
    Ok(out)
}

/// Expands segments into per-frame labels. Uncovered frames get [`SIL`].
///
/// The category table is shared by every returned alignment: `SIL` first,
/// then the remaining labels in sorted order. Utterance lengths default to
/// the last segment end when `lengths` does not list the utterance.
pub fn read_alignment_str(
    text: &str,
    path: &Path,
    kind: LabelKind,
    lengths: Option<&BTreeMap<String, usize>>,
) -> Result<Vec<LabelAlignment>> {
    let segments = parse_segments(text, path)?;

    let mut names: Vec<String> = vec![SIL.to_string()];
    let labels: BTreeSet<&str> = segments
        .iter()
        .map(|s| s.label.as_str())
        .filter(|l| *l != SIL)
        .collect();
    names.extend(labels.iter().map(|l| l.to_string()));
    let index: BTreeMap<&str, u32> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i as u32))
        .collect();
    let names: Arc<[String]> = names.clone().into();

    let mut by_utt: BTreeMap<&str, Vec<&AlignmentSegment>> = BTreeMap::new();
    for s in &segments {
        by_utt.entry(&s.utterance_id).or_default().push(s);
    }

    let mut out = Vec::with_capacity(by_utt.len());
    for (utt, mut segs) in by_utt {
        segs.sort_by_key(|s| (s.start, s.end, s.line));
        let collisions: Vec<String> = segs
            .windows(2)
            .filter(|w| w[1].start < w[0].end)
            .map(|w| {
                format!(
                    "line {} [{}, {}) overlaps line {} [{}, {})",
                    w[0].line, w[0].start, w[0].end, w[1].line, w[1].start, w[1].end
                )
            })
            .collect();
        if !collisions.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: segs[0].line,
                msg: format!("overlapping segments for {utt}: {}", collisions.join("; ")),
            });
        }
        let last_end = segs.last().map_or(0, |s| s.end);
        let frames = match lengths.and_then(|l| l.get(utt)) {
            Some(&n) if n < last_end => {
                return Err(Error::invalid(format!(
                    "{utt}: alignment reaches frame {last_end} but the utterance has {n} frames"
                )))
            }
            Some(&n) => n,
            None => last_end,
        };
        let mut frame_labels = vec![0u32; frames];
        for s in segs {
            let id = index[s.label.as_str()];
            frame_labels[s.start..s.end].fill(id);
        }
        out.push(LabelAlignment::new(utt, kind, frame_labels, names.clone())?);
    }
    Ok(out)
}

pub fn read_alignment(
    path: &Path,
    kind: LabelKind,
    lengths: Option<&BTreeMap<String, usize>>,
) -> Result<Vec<LabelAlignment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_alignment_str(&text, path, kind, lengths)
}
