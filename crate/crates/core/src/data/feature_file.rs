//! Binary container for one frame-feature sequence.
//!
//! Little-endian layout:
//!
//! ```text
//! "CSFT" | u32 version=1 | u32 num_frames | u32 dim | u32 flags
//!        | [u32 x num_frames source indices, if flags bit 0]
//!        | f32 x (num_frames * dim), row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, FeatureFileError, Result};
use crate::model::FrameFeatureSequence;
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"CSFT";
pub const VERSION: u32 = 1;
pub const FLAG_SOURCE_INDICES: u32 = 1;

const HEADER_LEN: usize = 20;

pub fn encode_features(seq: &FrameFeatureSequence<f32>) -> std::result::Result<Vec<u8>, FeatureFileError> {
    let (rows, dim) = (seq.num_frames(), seq.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + rows * 4 + rows * dim * 4);
    out.extend_from_slice(&MAGIC);
    for word in [VERSION, rows as u32, dim as u32, FLAG_SOURCE_INDICES] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for &i in &seq.source_indices {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for (k, &v) in seq.features.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(FeatureFileError::NonFinite {
                row: k / dim,
                col: k % dim,
            });
        }
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn decode_features(bytes: &[u8]) -> std::result::Result<FrameFeatureSequence<f32>, FeatureFileError> {
    if bytes.len() < 4 {
        return Err(FeatureFileError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FeatureFileError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureFileError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FeatureFileError::BadVersion(version));
    }
    let rows = u32_at(bytes, 8);
    let dim = u32_at(bytes, 12);
    let flags = u32_at(bytes, 16);
    if dim == 0 {
        return Err(FeatureFileError::BadDim(dim));
    }
    if rows == 0 {
        return Err(FeatureFileError::BadFrameCount(rows));
    }
    let (rows, dim) = (rows as usize, dim as usize);
    let has_indices = flags & FLAG_SOURCE_INDICES != 0;
    let index_bytes = if has_indices { rows * 4 } else { 0 };
    let expected = HEADER_LEN + index_bytes + rows * dim * 4;
    if bytes.len() < expected {
        return Err(FeatureFileError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FeatureFileError::TrailingBytes {
            expected,
            found: bytes.len(),
        });
    }
    let mut offset = HEADER_LEN;
    let source_indices = if has_indices {
        let idx = (0..rows).map(|i| u32_at(bytes, offset + 4 * i)).collect();
        offset += index_bytes;
        idx
    } else {
        (0..rows as u32).collect()
    };
    let mut data = Vec::with_capacity(rows * dim);
    for k in 0..rows * dim {
        let v = f32::from_le_bytes(bytes[offset + 4 * k..offset + 4 * k + 4].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FeatureFileError::NonFinite {
                row: k / dim,
                col: k % dim,
            });
        }
        data.push(v);
    }
    let features = Tensor::new(vec![rows, dim], data).expect("validated extents");
    Ok(FrameFeatureSequence {
        features,
        source_indices,
    })
}

pub fn write_feature_file(path: &Path, seq: &FrameFeatureSequence<f32>) -> Result<()> {
    let bytes = encode_features(seq).map_err(|kind| Error::FeatureFile {
        path: path.to_path_buf(),
        kind,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FrameFeatureSequence<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|kind| Error::FeatureFile {
        path: path.to_path_buf(),
        kind,
    })
}
