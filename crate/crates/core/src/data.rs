//! Synthetic generators and the IDX image/label loader.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::network::Dataset;
use crate::objective::LayerData;
use crate::rng::Rng;

/// Shape of a Gaussian layer-data instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub d1: usize,
    pub d2: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Inputs `samples × d1` and outputs `samples × d2` with i.i.d. standard
/// normal entries. With `nonnegative_outputs` the outputs are replaced by
/// their absolute values, as a rectifier layer would produce.
pub fn toy_gaussian(spec: ToySpec, nonnegative_outputs: bool) -> Result<LayerData> {
    if spec.d1 == 0 || spec.d2 == 0 || spec.samples == 0 {
        return Err(Error::invalid(format!("toy dimensions must be positive: {spec:?}")));
    }
    let mut rng = Rng::new(spec.seed);
    let a = rng.gaussian_matrix(spec.samples, spec.d1);
    let mut b = rng.gaussian_matrix(spec.samples, spec.d2);
    if nonnegative_outputs {
        b = b.map(f64::abs);
    }
    LayerData::new(a, b)
}

/// `classes` isotropic Gaussian blobs in `dim` dimensions. Centers are
/// standard normal vectors; each sample adds `spread`-scaled standard
/// normal noise to its center. Rows are grouped by class.
pub fn synth_blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::invalid("blobs need at least one sample per class"));
    }
    if dim == 0 {
        return Err(Error::invalid("blobs need at least one dimension"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be nonnegative, got {spread}")));
    }
    let mut rng = Rng::new(seed);
    let centers = rng.gaussian_matrix(classes, dim);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            data.extend(centers.row(c).iter().map(|&mu| mu + spread * rng.normal()));
            labels.push(c);
        }
    }
    Dataset::new(DenseMatrix::new(classes * per_class, dim, data)?, labels, classes)
}

/// Maps every sample through a fixed random `dim × ambient_dim` Gaussian
/// matrix scaled by `1/√dim`, placing the data on a `dim`-dimensional
/// linear subspace of a larger input space.
pub fn lift_linear(data: &Dataset, ambient_dim: usize, seed: u64) -> Result<Dataset> {
    if ambient_dim == 0 {
        return Err(Error::invalid("ambient dimension must be positive"));
    }
    let map = Rng::new(seed).gaussian_matrix(data.dim(), ambient_dim).scaled(1.0 / (data.dim() as f64).sqrt());
    Dataset::new(data.inputs.matmul(&map)?, data.labels.clone(), data.classes)
}

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Reads an IDX image file and its label file. Pixels are scaled to
/// `[0, 1]`; the class count is one more than the largest label.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let images = std::fs::read(images)?;
    let labels = std::fs::read(labels)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (n_images, rows, cols, pixels) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != n_images {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: labels.len(),
        });
    }
    let inputs = DenseMatrix::new(
        n_images,
        rows * cols,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )?;
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(2);
    Dataset::new(inputs, labels.into_iter().map(usize::from).collect(), classes)
}

fn read_header(r: &mut &[u8], fields: usize) -> Result<Vec<u32>> {
    (0..fields)
        .map(|_| {
            r.read_u32::<BigEndian>()
                .map_err(|_| Error::Format("IDX header is truncated".into()))
        })
        .collect()
}

fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    if bytes.is_empty() {
        return Err(Error::Format("empty IDX image file".into()));
    }
    let mut r = bytes;
    let header = read_header(&mut r, 4)?;
    if header[0] != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: header[0],
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let (n, rows, cols) = (header[1] as usize, header[2] as usize, header[3] as usize);
    let expected = n * rows * cols;
    if r.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: r.len(),
        });
    }
    Ok((n, rows, cols, &r[..expected]))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.is_empty() {
        return Err(Error::Format("empty IDX label file".into()));
    }
    let mut r = bytes;
    let header = read_header(&mut r, 2)?;
    if header[0] != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: header[0],
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n = header[1] as usize;
    let mut out = vec![0u8; n];
    r.read_exact(&mut out).map_err(|_| Error::Truncated {
        expected: n,
        found: r.len(),
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
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
    fn toy_is_deterministic() {
        let spec = ToySpec { d1: 5, d2: 3, samples: 7, seed: 9 };
        assert_eq!(toy_gaussian(spec, false).unwrap(), toy_gaussian(spec, false).unwrap());
        assert!(toy_gaussian(spec, true).unwrap().has_nonnegative_outputs());
        let col = toy_gaussian(ToySpec { d1: 1, ..spec }, false).unwrap();
        assert_eq!(col.inputs().shape(), (7, 1));
    }

    #[test]
    fn toy_mean_is_near_zero() {
        let spec = ToySpec { d1: 1000, d2: 1, samples: 1000, seed: 1 };
        let d = toy_gaussian(spec, false).unwrap();
        let mean = d.inputs().as_slice().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn blobs_shape_and_errors() {
        let d = synth_blobs(3, 4, 5, 0.0, 2).unwrap();
        assert_eq!(d.len(), 15);
        assert_eq!(d.classes, 3);
        // zero spread: every sample sits on its center
        assert_eq!(d.inputs.row(0), d.inputs.row(4));
        assert_ne!(d.inputs.row(0), d.inputs.row(5));
        assert!(synth_blobs(3, 4, 0, 1.0, 2).is_err());
        assert_eq!(synth_blobs(3, 4, 5, 0.5, 7).unwrap(), synth_blobs(3, 4, 5, 0.5, 7).unwrap());
    }

    #[test]
    fn idx_fixture() {
        let images = idx_images(2, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 0]);
        let labels = idx_labels(&[3, 1]);
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!(d.inputs.shape(), (2, 4));
        assert_eq!(d.inputs.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels, vec![3, 1]);
        assert_eq!(d.classes, 4);
    }

    #[test]
    fn idx_errors() {
        let images = idx_images(2, 2, 2, &[0; 8]);
        assert!(matches!(parse_idx(&[], &idx_labels(&[0, 1])), Err(Error::Format(_))));
        assert!(matches!(
            parse_idx(&images, &idx_labels(&[0, 1, 1])),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
        assert!(matches!(
            parse_idx(&images[..images.len() - 1], &idx_labels(&[0, 1])),
            Err(Error::Truncated { expected: 8, found: 7 })
        ));
        let mut bad = images.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx(&bad, &idx_labels(&[0, 1])), Err(Error::BadMagic { .. })));
        assert!(matches!(parse_idx(&images, &images), Err(Error::BadMagic { .. })));
    }
}
