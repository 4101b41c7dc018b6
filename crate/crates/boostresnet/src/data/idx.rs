//! IDX (MNIST-style) binary format: big-endian magic + dimensions, then raw
//! unsigned bytes. Images magic 0x00000803, labels magic 0x00000801.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an images/labels pair. Pixels are scaled to [0, 1] by /255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;

    let magic = read_be_u32(&images, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}"),
        });
    }
    let count = read_be_u32(&images, 4, "image count")? as usize;
    let rows = read_be_u32(&images, 8, "image rows")? as usize;
    let cols = read_be_u32(&images, 12, "image cols")? as usize;
    let pixels = rows * cols;
    let data_start = 16;
    let need = data_start + count * pixels;
    if images.len() < need {
        return Err(Error::Format {
            offset: images.len() as u64,
            message: format!("image data truncated: need {need} bytes, have {}", images.len()),
        });
    }

    let lmagic = read_be_u32(&labels, 0, "label magic")?;
    if lmagic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic 0x{lmagic:08x}, expected 0x{LABELS_MAGIC:08x}"),
        });
    }
    let lcount = read_be_u32(&labels, 4, "label count")? as usize;
    if lcount != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("label count {lcount} does not match image count {count}"),
        });
    }
    let lneed = 8 + count;
    if labels.len() < lneed {
        return Err(Error::Format {
            offset: labels.len() as u64,
            message: format!("label data truncated: need {lneed} bytes, have {}", labels.len()),
        });
    }

    let mut x = Matrix::zeros(count, pixels);
    for i in 0..count {
        let src = &images[data_start + i * pixels..data_start + (i + 1) * pixels];
        for (dst, &b) in x.row_mut(i).iter_mut().zip(src) {
            *dst = b as f64 / 255.0;
        }
    }
    let y: Vec<usize> = labels[8..8 + count].iter().map(|&b| b as usize).collect();
    let n_classes = y.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(x, y, n_classes, Split::Train)
}

/// Write images in IDX format (for fixtures and synthetic sets).
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(img);
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    /// Byte-by-byte fixture: two 2x3 images with known pixel values.
    fn fixture_images() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes()); // count
        b.extend_from_slice(&2u32.to_be_bytes()); // rows
        b.extend_from_slice(&3u32.to_be_bytes()); // cols
        b.extend_from_slice(&[0, 51, 102, 153, 204, 255]); // image 0
        b.extend_from_slice(&[255, 0, 255, 0, 255, 0]); // image 1
        b
    }

    fn fixture_labels() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&[7, 1]);
        b
    }

    #[test]
    fn loads_handcrafted_fixture_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write_bytes(dir.path(), "imgs", &fixture_images());
        let labs = write_bytes(dir.path(), "labs", &fixture_labels());
        let ds = load_idx(&imgs, &labs).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.n(), 6);
        assert_eq!(ds.y, vec![7, 1]);
        let expect0 = [0.0, 51.0 / 255.0, 102.0 / 255.0, 153.0 / 255.0, 204.0 / 255.0, 1.0];
        for (a, b) in ds.x.row(0).iter().zip(&expect0) {
            assert_eq!(a, b);
        }
        assert_eq!(ds.x.row(1), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = fixture_images();
        bytes.truncate(bytes.len() - 3);
        let imgs = write_bytes(dir.path(), "imgs", &bytes);
        let labs = write_bytes(dir.path(), "labs", &fixture_labels());
        match load_idx(&imgs, &labs) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn label_count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write_bytes(dir.path(), "imgs", &fixture_images());
        let mut labs_bytes = Vec::new();
        labs_bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labs_bytes.extend_from_slice(&3u32.to_be_bytes());
        labs_bytes.extend_from_slice(&[7, 1, 0]);
        let labs = write_bytes(dir.path(), "labs", &labs_bytes);
        match load_idx(&imgs, &labs) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = fixture_images();
        bytes[3] = 0x99;
        let imgs = write_bytes(dir.path(), "imgs", &bytes);
        let labs = write_bytes(dir.path(), "labs", &fixture_labels());
        assert!(matches!(load_idx(&imgs, &labs), Err(Error::Format { .. })));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![vec![0u8, 128, 255, 64], vec![10, 20, 30, 40]];
        let labels = vec![1u8, 0];
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        write_idx_images(&ip, &images, 2, 2).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.y, vec![1, 0]);
        assert_eq!(ds.x.get(0, 1), 128.0 / 255.0);
    }
}
