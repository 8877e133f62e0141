//! Phone to articulatory-family table.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const TIMIT: &str = include_str!("../../data/phone_families.tsv");

/// Family used for labels missing from the table.
pub const OTHER: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneFamilies {
    /// Lower-cased phone -> (folded phone, family).
    entries: BTreeMap<String, (String, String)>,
}

impl PhoneFamilies {
    /// TIMIT 61-phone set folded to 39 phones.
    pub fn timit() -> Self {
        Self::from_tsv(TIMIT).expect("bundled family table parses")
    }

    /// Lines `phone<TAB>folded<TAB>family`; `#` comments and blank lines skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [phone, folded, family] = cols[..] else {
                return Err(Error::invalid(format!("family table line {}: expected 3 columns", n + 1)));
            };
            entries.insert(phone.to_lowercase(), (folded.to_lowercase(), family.to_string()));
        }
        Ok(Self { entries })
    }

    /// Case-insensitive family lookup.
    pub fn family(&self, phone: &str) -> &str {
        self.entries.get(&phone.to_lowercase()).map_or(OTHER, |e| e.1.as_str())
    }

    pub fn folded(&self, phone: &str) -> Option<&str> {
        self.entries.get(&phone.to_lowercase()).map(|e| e.0.as_str())
    }

    /// Distinct folded phones.
    pub fn folded_set(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.entries.values().map(|e| e.0.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Fill colour per family.
pub fn family_color(family: &str) -> &'static str {
    match family {
        "vowel" => "#e4572e",
        "fricative" => "#29335c",
        "affricate" => "#a8c686",
        "stop" => "#f3a712",
        "nasal" => "#669bbc",
        "semivowel" => "#8e6c8a",
        "silence" => "#d9d9d9",
        _ => "#9e9e9e",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timit_folds_to_39() {
        let t = PhoneFamilies::timit();
        assert_eq!(t.folded_set().len(), 39);
        assert_eq!(t.family("AA"), "vowel");
        assert_eq!(t.family("SIL"), "silence");
        assert_eq!(t.family("zh"), "fricative");
        assert_eq!(t.folded("ZH"), Some("sh"));
        assert_eq!(t.family("xyz"), OTHER);
    }
}
