//! IDX container format: big-endian magic `0x0000_08nn` where `nn` is the
//! number of dimensions, followed by one big-endian `u32` per dimension and
//! the unsigned-byte payload.

use std::path::Path;

use crate::error::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parse an IDX byte buffer whose magic must equal `expected_magic`.
/// `path` is used only for diagnostics.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray, DataError> {
    let truncated = |expected| DataError::Truncated { path: path.to_owned(), expected, actual: bytes.len() };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(DataError::BadMagic { path: path.to_owned(), expected: expected_magic, found: magic });
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let raw: Vec<u32> =
        bytes[4..header].chunks_exact(4).map(|c| u32::from_be_bytes(c.try_into().unwrap())).collect();
    let payload = raw
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| DataError::DimensionOverflow { path: path.to_owned(), dims: raw.clone() })?;
    if bytes.len() < payload {
        return Err(truncated(payload));
    }
    if bytes.len() > payload {
        return Err(DataError::Format {
            path: path.to_owned(),
            detail: format!("{} trailing bytes after a payload of {} bytes", bytes.len() - payload, payload - header),
        });
    }
    Ok(IdxArray { dims: raw.iter().map(|&d| d as usize).collect(), data: bytes[header..].to_vec() })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_owned(), source })?;
    parse_idx(&bytes, expected_magic, path)
}

/// Encode an unsigned-byte IDX file; the inverse of [`parse_idx`].
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&(0x0800u32 | dims.len() as u32).to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Read an image file and its label file, checking that they agree.
pub fn read_image_pair(images: &Path, labels: &Path) -> Result<(IdxArray, Vec<u8>), DataError> {
    let img = read_idx(images, IMAGE_MAGIC)?;
    let lab = read_idx(labels, LABEL_MAGIC)?;
    if lab.dims[0] != img.dims[0] {
        return Err(DataError::Format {
            path: labels.to_owned(),
            detail: format!("{} labels for {} images in {}", lab.dims[0], img.dims[0], images.display()),
        });
    }
    if let Some((index, &label)) = lab.data.iter().enumerate().find(|(_, &l)| l >= 10) {
        return Err(DataError::LabelRange { path: labels.to_owned(), index, label });
    }
    Ok((img, lab.data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("fixture")
    }

    #[test]
    fn two_image_round_trip() {
        let pixels: Vec<u8> = (0..8).map(|i| i * 30).collect();
        let bytes = encode_idx(&[2, 2, 2], &pixels);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let arr = parse_idx(&bytes, IMAGE_MAGIC, p()).unwrap();
        assert_eq!(arr.dims, vec![2, 2, 2]);
        assert_eq!(arr.data, pixels);
    }

    #[test]
    fn truncation_names_both_sizes() {
        let mut bytes = encode_idx(&[2, 2, 2], &[1; 8]);
        bytes.truncate(bytes.len() - 3);
        let err = parse_idx(&bytes, IMAGE_MAGIC, p()).unwrap_err();
        assert!(matches!(err, DataError::Truncated { expected: 24, actual: 21, .. }), "{err}");
        assert!(err.to_string().contains("expected 24 bytes, found 21"));
    }

    #[test]
    fn wrong_magic_is_distinct() {
        let bytes = encode_idx(&[3], &[1, 2, 3]);
        let err = parse_idx(&bytes, IMAGE_MAGIC, p()).unwrap_err();
        assert!(matches!(err, DataError::BadMagic { found: 0x801, .. }));
    }

    #[test]
    fn overflowing_dimensions_are_distinct() {
        let mut bytes = 0x0000_0803u32.to_be_bytes().to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let err = parse_idx(&bytes, IMAGE_MAGIC, p()).unwrap_err();
        assert!(matches!(err, DataError::DimensionOverflow { .. }));
    }
}
