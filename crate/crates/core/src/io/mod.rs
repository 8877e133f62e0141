//! File formats: FEATS and CBOK binaries, alignment TSV, unit text files, PCM WAV.
//!
//! Binary formats are little-endian with `f32` reals regardless of host.

mod alignment;
mod binary;
mod codebook;
mod feats;
mod units;
mod wav;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use alignment::{read_alignment, read_alignment_str, AlignmentSegment};
pub use codebook::{read_codebook, write_codebook, CODEBOOK_MAGIC};
pub use feats::{read_feats, read_feats_dir, write_feats, FEATS_MAGIC};
pub use units::{
    format_deduped, format_units, parse_deduped, parse_units, read_deduped, read_units,
    write_deduped, write_units,
};
pub use wav::{read_wav, write_wav};

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == extension) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
