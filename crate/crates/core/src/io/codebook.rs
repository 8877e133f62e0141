use std::path::Path;

use super::binary::{push_f32s, read_file, write_file, ByteReader};
use crate::error::Result;
use crate::types::Codebook;

pub const CODEBOOK_MAGIC: &[u8; 4] = b"CBOK";
const VERSION: u32 = 1;

pub fn encode_codebook(cb: &Codebook) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + 4 * cb.centroids().len() + 8 * cb.k());
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.k() as u64).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    push_f32s(&mut out, cb.centroids(), "centroid")?;
    for &c in cb.counts() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_codebook(bytes: &[u8], path: &Path) -> Result<Codebook> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(CODEBOOK_MAGIC)?;
    let version_at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(version_at, format!("unsupported version {version}")));
    }
    let k_at = r.pos();
    let k = r.u64("K")?;
    let dim_at = r.pos();
    let dim = r.u32("dimension")? as usize;
    if k == 0 {
        return Err(r.error(k_at, "K must be >= 1"));
    }
    if dim == 0 {
        return Err(r.error(dim_at, "dimension must be >= 1"));
    }
    let k = usize::try_from(k).map_err(|_| r.error(k_at, "K overflows"))?;
    let centroids = r.f32_block(k * dim, "centroid payload")?;
    let counts = (0..k).map(|_| r.u64("counts")).collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    Ok(Codebook::new(dim, centroids, counts)?.with_source_tag(format!("file:{}", path.display())))
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    decode_codebook(&read_file(path)?, path)
}

pub fn write_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    let bytes = encode_codebook(cb)?;
    write_file(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn round_trip_preserves_counts() {
        let cb = Codebook::new(2, vec![0.0, 1.0, 2.5, -3.0], vec![7, 11]).unwrap();
        let back = decode_codebook(&encode_codebook(&cb).unwrap(), Path::new("c")).unwrap();
        assert_eq!(back.centroids(), cb.centroids());
        assert_eq!(back.counts(), &[7, 11]);
    }

    #[test]
    fn layout_is_fixed() {
        let cb = Codebook::new(1, vec![1.0], vec![3]).unwrap();
        let bytes = encode_codebook(&cb).unwrap();
        assert_eq!(&bytes[..4], b"CBOK");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 4 + 8);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..], &3u64.to_le_bytes());
    }

    #[test]
    fn missing_counts_are_truncation() {
        let cb = Codebook::new(1, vec![1.0, 2.0], vec![3, 4]).unwrap();
        let bytes = encode_codebook(&cb).unwrap();
        let err = decode_codebook(&bytes[..bytes.len() - 3], Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn duplicate_rows_rejected() {
        assert!(Codebook::new(2, vec![1.0, 2.0, 1.0, 2.0], vec![0, 0]).is_err());
    }
}
