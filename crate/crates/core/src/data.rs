//! Datasets: IDX files (the MNIST / Fashion-MNIST container) and seeded
//! Gaussian blobs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rng::{seeded, standard_normal};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples as rows of `features`, with class indices in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> (DenseMatrix, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        let x = DenseMatrix::from_vec(idx.len(), d, data).expect("selected rows are valid");
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or(Error::TruncatedFile {
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses an unsigned-byte image file into `count × (rows·cols)` pixels
/// scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<DenseMatrix> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            needed,
            found: bytes.len(),
        });
    }
    let data = bytes[16..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    DenseMatrix::from_vec(count, pixels, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::TruncatedFile {
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is one more than the
/// largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let features = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if features.rows() != labels.len() {
        return Err(Error::CountMismatch {
            images: features.rows(),
            labels: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)
}

/// `n_per_class` samples per class from `N(separation · e_c, I)` in `dim`
/// dimensions, so class means are `separation·√2` apart. Samples are
/// interleaved by class.
pub fn synth_dataset(seed: u64, n_per_class: usize, classes: usize, dim: usize, separation: f64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("synthetic data needs at least two classes".into()));
    }
    if dim < classes {
        return Err(Error::Config(format!(
            "dimension {dim} is smaller than class count {classes}"
        )));
    }
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    let mut rng = seeded(seed, 0);
    let n = n_per_class * classes;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for j in 0..dim {
            let mean = if j == c { separation } else { 0.0 };
            data.push(mean + standard_normal(&mut rng));
        }
        labels.push(c);
    }
    Dataset::new(DenseMatrix::from_vec(n, dim, data)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parses_small_fixture() {
        let bytes = idx_images(2, 2, 2, &[0, 51, 102, 255, 255, 0, 0, 0]);
        let x = parse_idx_images(&bytes).unwrap();
        assert_eq!(x.shape(), (2, 4));
        assert_eq!(x.row(0), &[0.0, 0.2, 0.4, 1.0]);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 1])).unwrap(), vec![3, 1]);
    }

    #[test]
    fn error_paths() {
        let images = idx_images(1, 1, 1, &[9]);
        assert_eq!(
            parse_idx_labels(&images),
            Err(Error::BadMagic {
                expected: IDX_LABELS_MAGIC,
                found: IDX_IMAGES_MAGIC
            })
        );
        let short = idx_images(2, 2, 2, &[1, 2, 3]);
        assert_eq!(
            parse_idx_images(&short),
            Err(Error::TruncatedFile { needed: 24, found: 19 })
        );
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn load_pair_from_disk() {
        let dir = std::env::temp_dir().join(format!("oni-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = dir.join("img");
        let lbl = dir.join("lbl");
        std::fs::write(&img, idx_images(2, 1, 2, &[0, 255, 255, 0])).unwrap();
        std::fs::write(&lbl, idx_labels(&[0, 1])).unwrap();
        let ds = load_idx(&img, &lbl).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes), (2, 2, 2));

        std::fs::write(&lbl, idx_labels(&[0, 1, 1])).unwrap();
        assert_eq!(load_idx(&img, &lbl), Err(Error::CountMismatch { images: 2, labels: 3 }));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synth_dataset(4, 10, 3, 5, 2.0).unwrap();
        let b = synth_dataset(4, 10, 3, 5, 2.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_eq!(&a.labels[..4], &[0, 1, 2, 0]);
        assert!(synth_dataset(4, 10, 1, 5, 2.0).is_err());
    }

    #[test]
    fn synthetic_class_means() {
        let ds = synth_dataset(5, 4000, 2, 3, 10.0).unwrap();
        let mut sums = [[0.0; 3]; 2];
        for (i, &l) in ds.labels.iter().enumerate() {
            for (sum, x) in sums[l].iter_mut().zip(ds.features.row(i)) {
                *sum += x;
            }
        }
        assert!((sums[0][0] / 4000.0 - 10.0).abs() < 0.1);
        assert!((sums[1][1] / 4000.0 - 10.0).abs() < 0.1);
        assert!((sums[0][1] / 4000.0).abs() < 0.1);
    }
}
