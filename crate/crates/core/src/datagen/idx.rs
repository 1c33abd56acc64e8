use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels {
        count: usize,
        labels: Vec<u8>,
    },
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Parses an unsigned-byte IDX buffer (big-endian header). `path` is only
/// used in error messages.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxData> {
    let fail = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| fail(format!("truncated header (need word {}, file has {} bytes)", i, bytes.len())))
    };
    let magic = word(0)? as u32;
    match magic {
        IMAGES_MAGIC => {
            let (count, rows, cols) = (word(1)?, word(2)?, word(3)?);
            let size = count
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| fail(format!("dimension overflow {}x{}x{}", count, rows, cols)))?;
            let body = &bytes[16..];
            if body.len() < size {
                return Err(fail(format!(
                    "truncated image data: expected {} bytes, found {}",
                    size,
                    body.len()
                )));
            }
            Ok(IdxData::Images {
                count,
                rows,
                cols,
                pixels: body[..size].to_vec(),
            })
        }
        LABELS_MAGIC => {
            let count = word(1)?;
            let body = &bytes[8..];
            if body.len() < count {
                return Err(fail(format!(
                    "truncated label data: expected {} bytes, found {}",
                    count,
                    body.len()
                )));
            }
            Ok(IdxData::Labels {
                count,
                labels: body[..count].to_vec(),
            })
        }
        other => Err(fail(format!("bad magic 0x{:08x}", other))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(words: &[u32]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_be_bytes()).collect()
    }

    #[test]
    fn parses_images_and_labels() {
        let mut img = header(&[IMAGES_MAGIC, 2, 2, 3]);
        img.extend(0u8..12);
        match parse_idx(&img, Path::new("img")).unwrap() {
            IdxData::Images { count, rows, cols, pixels } => {
                assert_eq!((count, rows, cols), (2, 2, 3));
                assert_eq!(pixels.len(), 12);
            }
            other => panic!("{other:?}"),
        }
        let mut lab = header(&[LABELS_MAGIC, 3]);
        lab.extend([7, 0, 9]);
        assert_eq!(
            parse_idx(&lab, Path::new("lab")).unwrap(),
            IdxData::Labels { count: 3, labels: vec![7, 0, 9] }
        );
    }

    #[test]
    fn rejects_bad_magic() {
        let err = parse_idx(&header(&[0, 1]), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let mut img = header(&[IMAGES_MAGIC, 2, 2, 2]);
        img.extend([0u8; 7]);
        assert!(parse_idx(&img, Path::new("x")).unwrap_err().to_string().contains("truncated"));
        assert!(parse_idx(&[0, 0], Path::new("x")).is_err());
    }

    #[test]
    fn rejects_overflowing_dims() {
        let img = header(&[IMAGES_MAGIC, u32::MAX, u32::MAX, u32::MAX]);
        let msg = parse_idx(&img, Path::new("x")).unwrap_err().to_string();
        assert!(msg.contains("overflow") || msg.contains("truncated"), "{msg}");
    }
}
