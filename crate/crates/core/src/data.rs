//! Dataset ingestion: IDX image/label containers, per-sample normalization,
//! and arrangement into class-major sample matrices.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{LpnError, Result};
use crate::linalg::Mat;
use crate::state::ClassMatrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples as columns (`M × N`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Mat,
    pub labels: Vec<usize>,
    /// Sample count per class index.
    pub class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(samples: Mat, labels: Vec<usize>) -> Result<Self> {
        if samples.ncols() != labels.len() {
            return Err(LpnError::CountMismatch {
                images: samples.ncols(),
                labels: labels.len(),
            });
        }
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut class_counts = vec![0usize; classes];
        for &l in &labels {
            class_counts[l] += 1;
        }
        Ok(LabeledDataset {
            samples,
            labels,
            class_counts,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    /// Keeps the first `per_class` samples of each class, in stable order.
    pub fn take_per_class(&self, per_class: usize) -> Result<LabeledDataset> {
        let cm = to_class_matrix(self, per_class)?;
        let labels = cm.labels();
        LabeledDataset::new(cm.data, labels)
    }
}

fn read_u32_be(reader: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| LpnError::UnexpectedEof(path.display().to_string()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label file pair. Pixel bytes are mapped to `[0, 1]`
/// and each image is flattened row-major into one column.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut images = std::fs::File::open(images_path)?;
    let magic = read_u32_be(&mut images, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(LpnError::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = read_u32_be(&mut images, images_path)? as usize;
    let rows = read_u32_be(&mut images, images_path)? as usize;
    let cols = read_u32_be(&mut images, images_path)? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; count * dim];
    images
        .read_exact(&mut pixels)
        .map_err(|_| LpnError::UnexpectedEof(images_path.display().to_string()))?;

    let mut labels_file = std::fs::File::open(labels_path)?;
    let magic = read_u32_be(&mut labels_file, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(LpnError::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let label_count = read_u32_be(&mut labels_file, labels_path)? as usize;
    if label_count != count {
        return Err(LpnError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let mut label_bytes = vec![0u8; label_count];
    labels_file
        .read_exact(&mut label_bytes)
        .map_err(|_| LpnError::UnexpectedEof(labels_path.display().to_string()))?;

    let mut samples = Array2::<f64>::zeros((dim, count));
    for (j, chunk) in pixels.chunks_exact(dim).enumerate() {
        for (i, &b) in chunk.iter().enumerate() {
            samples[[i, j]] = b as f64 / 255.0;
        }
    }
    let labels = label_bytes.into_iter().map(|b| b as usize).collect();
    LabeledDataset::new(samples, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NormalizeOptions {
    /// Subtract each column's mean before scaling (off by default: the
    /// normalization only fixes the variance).
    pub center_mean: bool,
    /// Scale by one shared factor from the pooled variance instead of one
    /// factor per sample.
    pub per_dataset: bool,
}

/// Scales each sample column to unit variance (its mean untouched unless
/// requested). Errors listing the indices of zero-variance columns.
pub fn normalize_unit_variance(dataset: &LabeledDataset) -> Result<LabeledDataset> {
    normalize_with(dataset, NormalizeOptions::default())
}

pub fn normalize_with(dataset: &LabeledDataset, opts: NormalizeOptions) -> Result<LabeledDataset> {
    let m = dataset.dim() as f64;
    let mut samples = dataset.samples.clone();
    let column_variance = |col: ndarray::ArrayView1<'_, f64>| {
        let mean = col.sum() / m;
        col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m
    };
    if opts.per_dataset {
        let mut pooled = 0.0;
        for col in samples.columns() {
            pooled += column_variance(col);
        }
        pooled /= samples.ncols() as f64;
        if pooled <= 0.0 {
            return Err(LpnError::ZeroVarianceColumns(
                (0..samples.ncols()).collect(),
            ));
        }
        let scale = 1.0 / pooled.sqrt();
        if opts.center_mean {
            for mut col in samples.columns_mut() {
                let mean = col.sum() / m;
                col.mapv_inplace(|v| (v - mean) * scale);
            }
        } else {
            samples.mapv_inplace(|v| v * scale);
        }
    } else {
        let mut dead = Vec::new();
        for (j, col) in dataset.samples.columns().into_iter().enumerate() {
            if column_variance(col) <= 0.0 {
                dead.push(j);
            }
        }
        if !dead.is_empty() {
            return Err(LpnError::ZeroVarianceColumns(dead));
        }
        for mut col in samples.columns_mut() {
            let mean = col.sum() / m;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let scale = 1.0 / var.sqrt();
            if opts.center_mean {
                col.mapv_inplace(|v| (v - mean) * scale);
            } else {
                col.mapv_inplace(|v| v * scale);
            }
        }
    }
    LabeledDataset::new(samples, dataset.labels.clone())
}

/// First `per_class` samples of each class in stable order, columns laid
/// out class-major. Errors naming the first class with too few samples.
pub fn to_class_matrix(dataset: &LabeledDataset, per_class: usize) -> Result<ClassMatrix> {
    let classes = dataset.class_counts.len();
    if classes == 0 {
        return Err(LpnError::SingleClass(0));
    }
    for (c, &count) in dataset.class_counts.iter().enumerate() {
        if count < per_class {
            return Err(LpnError::ClassDeficit {
                class: c,
                have: count,
                need: per_class,
            });
        }
    }
    let mut data = Array2::<f64>::zeros((dataset.dim(), classes * per_class));
    let mut taken = vec![0usize; classes];
    for (j, &label) in dataset.labels.iter().enumerate() {
        if taken[label] < per_class {
            let dst = label * per_class + taken[label];
            data.column_mut(dst).assign(&dataset.samples.column(j));
            taken[label] += 1;
        }
    }
    ClassMatrix::new(data, classes, per_class)
}

/// Debug CSV export: header `class,k,f0,f1,...`, one row per column.
pub fn export_class_matrix_csv(cm: &ClassMatrix, path: &Path) -> Result<()> {
    let mut out = String::from("class,k");
    for i in 0..cm.data.nrows() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for c in 0..cm.classes {
        for k in 0..cm.per_class {
            out.push_str(&format!("{c},{k}"));
            let col = cm.data.column(cm.col_index(c, k));
            for v in col {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built IDX pair: two 2×2 images with known bytes.
    fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = dir.join("imgs.idx3-ubyte");
        let labels = dir.join("lbls.idx1-ubyte");
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 51, 102, 255, 255, 204, 153, 0]);
        std::fs::write(&images, img).unwrap();
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[7, 1]);
        std::fs::write(&labels, lbl).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_fixture_loads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());
        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.n_samples(), 2);
        assert_eq!(ds.labels, vec![7, 1]);
        let expected0 = [0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        for (i, &e) in expected0.iter().enumerate() {
            assert_eq!(ds.samples[[i, 0]], e);
        }
        assert_eq!(ds.samples[[0, 1]], 1.0);
        assert_eq!(ds.samples[[3, 1]], 0.0);
    }

    #[test]
    fn truncated_idx_reports_eof() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());
        let bytes = std::fs::read(&images).unwrap();
        std::fs::write(&images, &bytes[..bytes.len() - 2]).unwrap();
        match load_idx(&images, &labels) {
            Err(LpnError::UnexpectedEof(_)) => {}
            other => panic!("expected EOF, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());
        let mut bytes = std::fs::read(&images).unwrap();
        bytes[3] = 0x05;
        std::fs::write(&images, bytes).unwrap();
        assert!(matches!(
            load_idx(&images, &labels),
            Err(LpnError::BadMagic { .. })
        ));
    }

    #[test]
    fn count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_fixture(dir.path());
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&3u32.to_be_bytes());
        lbl.extend_from_slice(&[7, 1, 0]);
        std::fs::write(&labels, lbl).unwrap();
        assert!(matches!(
            load_idx(&images, &labels),
            Err(LpnError::CountMismatch { .. })
        ));
    }

    #[test]
    fn normalization_scales_to_unit_variance() {
        // Column with variance 4 is scaled by one half.
        let samples = ndarray::array![[2.0, 1.0], [-2.0, 2.0], [2.0, 0.0], [-2.0, 1.0]];
        let ds = LabeledDataset::new(samples, vec![0, 1]).unwrap();
        let normed = normalize_unit_variance(&ds).unwrap();
        assert!((normed.samples[[0, 0]] - 1.0).abs() < 1e-12);
        for col in normed.samples.columns() {
            let m = col.sum() / 4.0;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
        // Idempotence.
        let again = normalize_unit_variance(&normed).unwrap();
        for (a, b) in again.samples.iter().zip(normed.samples.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_column_is_reported() {
        let samples = ndarray::array![[1.0, 0.5], [1.0, 2.0]];
        let ds = LabeledDataset::new(samples, vec![0, 1]).unwrap();
        match normalize_unit_variance(&ds) {
            Err(LpnError::ZeroVarianceColumns(idx)) => assert_eq!(idx, vec![0]),
            other => panic!("expected zero-variance error, got {other:?}"),
        }
    }

    #[test]
    fn mean_centering_switch() {
        let samples = ndarray::array![[3.0], [5.0]];
        let ds = LabeledDataset::new(samples, vec![0]).unwrap();
        let centered = normalize_with(
            &ds,
            NormalizeOptions {
                center_mean: true,
                per_dataset: false,
            },
        )
        .unwrap();
        let col = centered.samples.column(0);
        assert!((col.sum()).abs() < 1e-12);
    }

    #[test]
    fn class_matrix_layout_and_deficit() {
        let samples = ndarray::Array2::from_shape_fn((2, 6), |(_, j)| j as f64);
        let ds = LabeledDataset::new(samples, vec![1, 0, 1, 0, 1, 0]).unwrap();
        let cm = to_class_matrix(&ds, 2).unwrap();
        assert_eq!(cm.data.ncols(), 4);
        // Column (c, k) carries a sample whose label is c.
        assert_eq!(cm.data[[0, cm.col_index(0, 0)]], 1.0);
        assert_eq!(cm.data[[0, cm.col_index(0, 1)]], 3.0);
        assert_eq!(cm.data[[0, cm.col_index(1, 0)]], 0.0);
        assert_eq!(cm.data[[0, cm.col_index(1, 1)]], 2.0);
        match to_class_matrix(&ds, 4) {
            Err(LpnError::ClassDeficit { class, have, need }) => {
                assert_eq!((have, need), (3, 4));
                assert!(class <= 1);
            }
            other => panic!("expected deficit, got {other:?}"),
        }
    }

    #[test]
    fn csv_export_has_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cm.csv");
        let data = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let cm = ClassMatrix::new(data, 2, 1).unwrap();
        export_class_matrix_csv(&cm, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("class,k,f0,f1\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
