use std::path::Path;

use super::binary::{push_f32s, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::types::FeatureMatrix;

pub const FEATS_MAGIC: &[u8; 4] = b"FEAT";
const VERSION: u32 = 1;

pub fn encode_feats(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let id = m.utterance_id().as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::invalid("utterance ID longer than 65535 bytes"))?;
    let rate = m.frame_rate_hz() as f32;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::invalid("frame rate not representable as f32"));
    }
    let mut out = Vec::with_capacity(26 + id.len() + 4 * m.data().len());
    out.extend_from_slice(FEATS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.frames() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    push_f32s(&mut out, m.data(), "feature")?;
    Ok(out)
}

pub fn decode_feats(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FEATS_MAGIC)?;
    let version_at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(version_at, format!("unsupported version {version}")));
    }
    let frames_at = r.pos();
    let frames = r.u64("frame count")?;
    let dim_at = r.pos();
    let dim = r.u32("dimension")? as usize;
    let rate_at = r.pos();
    let rate = r.f32("frame rate")?;
    let id_len = r.u16("utterance ID length")? as usize;
    let id_at = r.pos();
    let id = std::str::from_utf8(r.take(id_len, "utterance ID")?)
        .map_err(|_| r.error(id_at, "utterance ID is not UTF-8"))?
        .to_string();
    if frames == 0 {
        return Err(r.error(frames_at, "frame count must be >= 1"));
    }
    if dim == 0 {
        return Err(r.error(dim_at, "dimension must be >= 1"));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(r.error(rate_at, format!("frame rate {rate} must be > 0")));
    }
    let frame_bytes = 4 * dim;
    let payload_at = r.pos();
    let declared = usize::try_from(frames)
        .ok()
        .and_then(|f| f.checked_mul(frame_bytes))
        .ok_or_else(|| r.error(frames_at, "declared payload size overflows"))?;
    if r.remaining() < declared {
        let whole = r.remaining() / frame_bytes;
        return Err(r.error(
            payload_at + whole * frame_bytes,
            format!("truncated payload: header declares {frames} frames, found {whole}"),
        ));
    }
    let data = r.f32_block(frames as usize * dim, "feature payload")?;
    r.expect_end()?;
    FeatureMatrix::new(id, f64::from(rate), dim, data)
}

pub fn read_feats(path: &Path) -> Result<FeatureMatrix> {
    decode_feats(&read_file(path)?, path)
}

/// Validates and serializes before touching the file system.
pub fn write_feats(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let bytes = encode_feats(m)?;
    write_file(path, &bytes)
}

/// All `*.feats` files under `dir`, in file-name order.
pub fn read_feats_dir(dir: &Path) -> Result<Vec<FeatureMatrix>> {
    super::list_files(dir, "feats")?
        .iter()
        .map(|p| read_feats(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureMatrix {
        FeatureMatrix::from_rows("utt1", 50.0, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()
    }

    #[test]
    fn round_trip_small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.feats");
        let m = sample();
        write_feats(&m, &path).unwrap();
        assert_eq!(read_feats(&path).unwrap(), m);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_feats(&sample()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        match decode_feats(&bytes, Path::new("x")) {
            Err(Error::Format { offset: 0, msg, .. }) => assert!(msg.contains("magic")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset_of_missing_frame() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.5]).collect();
        let m = FeatureMatrix::from_rows("u", 50.0, &rows).unwrap();
        let mut bytes = encode_feats(&m).unwrap();
        bytes.truncate(bytes.len() - 8);
        let header = 4 + 4 + 8 + 4 + 4 + 2 + 1;
        match decode_feats(&bytes, Path::new("x")) {
            Err(Error::Format { offset, msg, .. }) => {
                assert_eq!(offset as usize, header + 9 * 8);
                assert!(msg.contains("found 9"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_payload_is_rejected_with_offset() {
        let mut bytes = encode_feats(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_feats(&bytes, Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, n - 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn writes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_feats(&sample(), &a).unwrap();
        write_feats(&sample(), &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn minimal_matrix_is_header_plus_four_bytes() {
        let m = FeatureMatrix::from_rows("", 50.0, &[vec![0.0]]).unwrap();
        assert_eq!(encode_feats(&m).unwrap().len(), 26 + 4);
    }

    #[test]
    fn unrepresentable_value_fails_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feats");
        let m = FeatureMatrix::from_rows("u", 50.0, &[vec![1e300]]).unwrap();
        assert!(write_feats(&m, &path).is_err());
        assert!(!path.exists());
        assert!(FeatureMatrix::from_rows("u", 50.0, &[vec![f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn prop_round_trip(frames in 1usize..12, dim in 1usize..6, seed in any::<u64>(), id in "[a-z0-9_]{0,12}") {
            let mut state = seed;
            let data: Vec<f64> = (0..frames * dim)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from(((state >> 33) as i32) as f32 / 1024.0)
                })
                .collect();
            let m = FeatureMatrix::new(id, 50.0, dim, data).unwrap();
            let bytes = encode_feats(&m).unwrap();
            prop_assert_eq!(decode_feats(&bytes, Path::new("p")).unwrap(), m);
        }
    }
}
