//! MNIST-style IDX files (big-endian headers, unsigned-byte payloads).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{DataError, LabeledDataset, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const NUM_CLASSES: usize = 10;

fn read_u32(bytes: &[u8], offset: usize, file: &'static str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().unwrap())),
        None => Err(DataError::Truncated {
            file,
            offset: bytes.len(),
            needed: offset + 4 - bytes.len(),
        }),
    }
}

fn expect_magic(bytes: &[u8], expected: u32, file: &'static str) -> Result<()> {
    let found = read_u32(bytes, 0, file)?;
    if found != expected {
        return Err(DataError::BadMagic {
            file,
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, file: &'static str) -> Result<&'a [u8]> {
    let end = start.checked_add(len).ok_or(DataError::Truncated {
        file,
        offset: bytes.len(),
        needed: usize::MAX,
    })?;
    bytes.get(start..end).ok_or(DataError::Truncated {
        file,
        offset: bytes.len(),
        needed: end - bytes.len(),
    })
}

/// Decodes an image/label IDX pair already in memory. Pixels are scaled to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    expect_magic(images, IMAGE_MAGIC, "images")?;
    let count = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;

    expect_magic(labels, LABEL_MAGIC, "labels")?;
    let label_count = read_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            offset: 4,
            images: count,
            labels: label_count,
        });
    }
    if count == 0 {
        return Err(DataError::NoSamples);
    }

    let pixels_per_image = rows * cols;
    let pixels = payload(images, 16, count * pixels_per_image, "images")?;
    let label_bytes = payload(labels, 8, count, "labels")?;

    let features = Array2::from_shape_vec(
        (count, pixels_per_image),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels: Vec<usize> = label_bytes.iter().map(|&l| usize::from(l)).collect();
    LabeledDataset::new(features, labels, NUM_CLASSES)
}

/// Reads an image file and its label file.
pub fn load_idx(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    let images = read(image_path.as_ref())?;
    let labels = read(label_path.as_ref())?;
    parse_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(count: u32, rows: u32, cols: u32, data: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for w in [IMAGE_MAGIC, count, rows, cols] {
            v.extend_from_slice(&w.to_be_bytes());
        }
        v.extend_from_slice(data);
        v
    }

    fn labels(count: u32, data: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        v.extend_from_slice(&count.to_be_bytes());
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn scales_pixels() {
        let d = parse_idx(&images(2, 1, 2, &[0, 255, 51, 102]), &labels(2, &[3, 9])).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.num_features(), 2);
        assert_eq!(d.num_classes(), 10);
        assert_eq!(d.features().row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(d.features().row(1).to_vec(), vec![0.2, 0.4]);
        assert_eq!(d.labels(), &[3, 9]);
    }

    #[test]
    fn label_file_as_images_is_bad_magic() {
        let l = labels(1, &[0]);
        match parse_idx(&l, &l) {
            Err(DataError::BadMagic {
                expected,
                found,
                offset: 0,
                ..
            }) => {
                assert_eq!(expected, IMAGE_MAGIC);
                assert_eq!(found, LABEL_MAGIC);
            }
            other => panic!("unexpected {other:?}"),
        }
        let i = images(1, 1, 1, &[0]);
        assert!(matches!(
            parse_idx(&i, &i),
            Err(DataError::BadMagic { file: "labels", .. })
        ));
    }

    #[test]
    fn count_mismatch() {
        let err = parse_idx(&images(10, 1, 1, &[0; 10]), &labels(9, &[0; 9])).unwrap_err();
        assert!(matches!(
            err,
            DataError::CountMismatch {
                images: 10,
                labels: 9,
                offset: 4
            }
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let err = parse_idx(&images(2, 2, 2, &[0; 7]), &labels(2, &[0, 0])).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                file: "images",
                offset: 23,
                needed: 1
            }
        ));
        let err = parse_idx(&images(2, 1, 1, &[0, 0])[..10], &labels(2, &[0, 0])).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                file: "images",
                offset: 10,
                ..
            }
        ));
        let err = parse_idx(&images(2, 1, 1, &[0, 0]), &labels(2, &[0])).unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                file: "labels",
                offset: 9,
                needed: 1
            }
        ));
    }

    #[test]
    fn rejects_labels_above_nine() {
        let err = parse_idx(&images(1, 1, 1, &[0]), &labels(1, &[10])).unwrap_err();
        assert!(matches!(err, DataError::InvalidLabel { label: 10, .. }));
    }
}
