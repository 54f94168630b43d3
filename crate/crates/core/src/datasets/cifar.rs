//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).

use std::path::Path;

use crate::error::DataError;

pub const RECORD_BYTES: usize = 3073;
pub const PIXELS: usize = 3072;
pub const RECORDS_PER_BATCH: usize = 10_000;
pub const BATCH_BYTES: usize = RECORD_BYTES * RECORDS_PER_BATCH;

/// Parse any whole number of records. Returns planar pixels and labels.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(DataError::CifarSize {
            path: path.to_owned(),
            expected: bytes.len().div_ceil(RECORD_BYTES).max(1) * RECORD_BYTES,
            actual: bytes.len(),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] >= 10 {
            return Err(DataError::LabelRange { path: path.to_owned(), index, label: rec[0] });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

/// Read official batch files in the given order; each must hold exactly
/// 10000 records.
pub fn parse_cifar_binary(paths: &[impl AsRef<Path>]) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    let mut pixels = Vec::with_capacity(paths.len() * RECORDS_PER_BATCH * PIXELS);
    let mut labels = Vec::with_capacity(paths.len() * RECORDS_PER_BATCH);
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_owned(), source })?;
        if bytes.len() != BATCH_BYTES {
            return Err(DataError::CifarSize { path: path.to_owned(), expected: BATCH_BYTES, actual: bytes.len() });
        }
        let (p, l) = parse_records(&bytes, path)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Ok((pixels, labels))
}
