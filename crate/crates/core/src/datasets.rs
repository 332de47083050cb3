//! Image datasets: IDX loading, a synthetic shape generator, normalisation,
//! test-subset selection and noise-bucket assignment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dae::NoiseSchedule;
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

/// IDX magic number of an unsigned-byte, rank-3 image file.
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// Seed used to pick the fixed evaluation subset of a test set.
pub const TEST_SUBSET_SEED: u64 = 1234;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Idx { path: String },
    Synthetic { seed: u64 },
}

/// A stack of images `[n, H, W, C]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    split: Split,
    source: Source,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, split: Split, source: Source) -> Result<Self> {
        if images.rank() != 4 {
            return shape_err(format!("dataset images must be [n, H, W, C], got {:?}", images.shape()));
        }
        Ok(Self { images, split, source })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[H, W, C]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image<T: Real>(&self, i: usize) -> Result<Tensor<T>> {
        if i >= self.len() {
            return shape_err(format!("image {i} out of range for {} images", self.len()));
        }
        let n = self.image_len();
        let data = self.images.data()[i * n..(i + 1) * n].iter().map(|&v| T::c(v as f64)).collect();
        Tensor::new(self.image_shape().to_vec(), data)
    }

    /// Every image as its own tensor.
    pub fn samples<T: Real>(&self) -> Vec<Tensor<T>> {
        (0..self.len()).map(|i| self.image(i).expect("index in range")).collect()
    }

    /// Mean pixel value over all images.
    pub fn mean_pixel(&self) -> f64 {
        let d = self.images.data();
        d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64
    }

    /// The images at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return shape_err("cannot select zero images");
        }
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.len() {
                return shape_err(format!("image {i} out of range for {} images", self.len()));
            }
            data.extend_from_slice(&self.images.data()[i * n..(i + 1) * n]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Self::new(Tensor::new(shape, data)?, self.split, self.source.clone())
    }
}

/// Parses an IDX image file: big-endian `u32` magic 2051, three `u32` dims,
/// then `n·rows·cols` unsigned bytes scaled by 1/255.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("IDX header needs 16 bytes, got {}", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let magic = word(0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!("IDX magic {magic} is not an image file (expected {IDX_IMAGE_MAGIC})")));
    }
    let dims = [word(1) as usize, word(2) as usize, word(3) as usize];
    let expected = dims.iter().product::<usize>();
    let actual = bytes.len() - 16;
    if actual < expected {
        return Err(Error::Format(format!("truncated IDX payload: expected {expected} bytes, got {actual}")));
    }
    let data = bytes[16..16 + expected].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![dims[0], dims[1], dims[2], 1], data)
}

pub fn load_idx(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let images = parse_idx(&bytes)?;
    Dataset::new(images, split, Source::Idx { path: path.display().to_string() })
}

/// Clamps every pixel into `[0, 1]`; non-finite values become 0.
pub fn normalize(ds: &Dataset) -> Dataset {
    let images = ds.images.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
    Dataset { images, split: ds.split, source: ds.source.clone() }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect { half_w: f64, half_h: f64 },
    Disc { radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    peak: f64,
}

impl Blob {
    fn random(rng: &mut SeededRng, size: f64) -> Self {
        let kind = if rng.below(2) == 0 {
            ShapeKind::Rect {
                half_w: rng.uniform_range(0.08, 0.25) * size,
                half_h: rng.uniform_range(0.08, 0.25) * size,
            }
        } else {
            ShapeKind::Disc { radius: rng.uniform_range(0.1, 0.25) * size }
        };
        Self {
            kind,
            cx: rng.uniform_range(0.3, 0.7) * size,
            cy: rng.uniform_range(0.3, 0.7) * size,
            peak: rng.uniform_range(0.6, 1.0),
        }
    }

    /// Intensity at a pixel centre: a one-pixel soft edge times a smooth
    /// radial falloff from the shape's centre.
    fn value(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (inside, r2) = match self.kind {
            ShapeKind::Rect { half_w, half_h } => {
                let inside = (half_w - dx.abs()).min(half_h - dy.abs());
                (inside, (dx / half_w).powi(2) + (dy / half_h).powi(2))
            }
            ShapeKind::Disc { radius } => {
                let d = (dx * dx + dy * dy).sqrt();
                (radius - d, (d / radius).powi(2))
            }
        };
        let coverage = (inside + 0.5).clamp(0.0, 1.0);
        coverage * self.peak * (1.0 - 0.4 * r2.min(1.0))
    }
}

/// `n` greyscale `size × size` images, each the pixelwise maximum of 1–3
/// random rectangles and discs placed around the centre.
pub fn synth_generate(rng: &mut SeededRng, n: usize, size: usize) -> Result<Dataset> {
    if n == 0 || size == 0 {
        return shape_err(format!("synthetic dataset needs n >= 1 and size >= 1 (got {n}, {size})"));
    }
    let seed = rng.seed();
    let mut data = vec![0.0f32; n * size * size];
    for img in data.chunks_mut(size * size) {
        let count = 1 + rng.below(3);
        let blobs: Vec<Blob> = (0..count).map(|_| Blob::random(rng, size as f64)).collect();
        for (p, v) in img.iter_mut().enumerate() {
            let (x, y) = ((p % size) as f64 + 0.5, (p / size) as f64 + 0.5);
            let best = blobs.iter().map(|b| b.value(x, y)).fold(0.0, f64::max);
            *v = best.clamp(0.0, 1.0) as f32;
        }
    }
    Dataset::new(Tensor::new(vec![n, size, size, 1], data)?, Split::Train, Source::Synthetic { seed })
}

/// Shuffles `0..n` and cuts it into `buckets` near-equal parts (earlier
/// parts take the remainder). Returns the bucket of each index.
pub fn bucket_assignment(n: usize, buckets: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
    if buckets == 0 || n < buckets {
        return Err(Error::Partition(format!("cannot split {n} samples into {buckets} buckets")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut assignment = vec![0; n];
    let (base, extra) = (n / buckets, n % buckets);
    let mut pos = 0;
    for b in 0..buckets {
        let len = base + usize::from(b < extra);
        for &i in &order[pos..pos + len] {
            assignment[i] = b;
        }
        pos += len;
    }
    Ok(assignment)
}

/// Assigns each training image to one noise level of `schedule`.
pub fn split_and_bucket(ds: &Dataset, schedule: &NoiseSchedule, rng: &mut SeededRng) -> Result<NoiseSchedule> {
    let assignment = bucket_assignment(ds.len(), schedule.sigmas.len(), rng)?;
    Ok(NoiseSchedule { sigmas: schedule.sigmas.clone(), assignment })
}

/// Indices of a fixed random subset of `count` images, ascending.
pub fn subset_indices(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    SeededRng::new(seed).shuffle(&mut idx);
    idx.truncate(count.min(len));
    idx.sort_unstable();
    idx
}

/// The evaluation subset of a test set (see [`TEST_SUBSET_SEED`]).
pub fn test_subset(ds: &Dataset, count: usize) -> Result<Dataset> {
    ds.select(&subset_indices(ds.len(), count, TEST_SUBSET_SEED))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: [u32; 3], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_parsing() {
        let payload: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let t = parse_idx(&idx_bytes(2051, [2, 28, 28], &payload)).unwrap();
        assert_eq!(t.shape(), &[2, 28, 28, 1]);
        assert_eq!(t.data()[255], 1.0);
        assert_eq!(t.data()[0], 0.0);

        let err = parse_idx(&idx_bytes(2049, [2, 28, 28], &payload)).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let err = parse_idx(&idx_bytes(2051, [3, 28, 28], &payload)).unwrap_err().to_string();
        assert!(err.contains("expected 2352") && err.contains("got 1568"), "{err}");
        assert!(parse_idx(&[0, 0, 8]).is_err());
    }

    #[test]
    fn load_idx_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs.idx");
        std::fs::write(&path, idx_bytes(2051, [1, 2, 2], &[0, 51, 102, 255])).unwrap();
        let ds = load_idx(&path, Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.split(), Split::Test);
        assert_eq!(ds.image::<f64>(0).unwrap().data(), &[0.0, 0.2f32 as f64, 0.4f32 as f64, 1.0]);
        assert!(load_idx(&dir.path().join("missing"), Split::Test).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let a = synth_generate(&mut SeededRng::new(3), 50, 28).unwrap();
        let b = synth_generate(&mut SeededRng::new(3), 50, 28).unwrap();
        assert_eq!(a, b);
        assert!(a.images().min() >= 0.0 && a.images().max() <= 1.0);
        // Every image has some content and some background.
        for x in a.samples::<f32>() {
            assert!(x.max() > 0.3 && x.min() == 0.0);
        }
        let c = synth_generate(&mut SeededRng::new(4), 50, 28).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalize_clamps_and_is_idempotent() {
        let t = Tensor::new(vec![1, 2, 2, 1], vec![-0.5f32, 0.3, 1.7, f32::NAN]).unwrap();
        let ds = Dataset::new(t, Split::Train, Source::Synthetic { seed: 0 }).unwrap();
        let once = normalize(&ds);
        assert_eq!(once.images().data(), &[0.0, 0.3, 1.0, 0.0]);
        assert_eq!(normalize(&once), once);
    }

    #[test]
    fn bucket_sizes_and_partition() {
        let mut rng = SeededRng::new(1);
        let sizes = |a: &[usize]| (0..5).map(|b| a.iter().filter(|&&v| v == b).count()).collect::<Vec<_>>();
        assert_eq!(sizes(&bucket_assignment(10, 5, &mut rng).unwrap()), vec![2; 5]);
        assert_eq!(sizes(&bucket_assignment(13, 5, &mut rng).unwrap()), vec![3, 3, 3, 2, 2]);
        assert!(matches!(bucket_assignment(4, 5, &mut rng), Err(Error::Partition(_))));
        let a = bucket_assignment(13, 5, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, bucket_assignment(13, 5, &mut SeededRng::new(9)).unwrap());
    }

    #[test]
    fn split_and_bucket_uses_schedule_sigmas() {
        let ds = synth_generate(&mut SeededRng::new(5), 13, 8).unwrap();
        let s = split_and_bucket(&ds, &NoiseSchedule::default(), &mut SeededRng::new(2)).unwrap();
        assert_eq!(s.bucket_sizes(), vec![3, 3, 3, 2, 2]);
        assert_eq!(s.assignment.len(), 13);
    }

    #[test]
    fn test_subset_is_fixed() {
        let ds = synth_generate(&mut SeededRng::new(6), 40, 8).unwrap();
        let a = test_subset(&ds, 10).unwrap();
        assert_eq!(a, test_subset(&ds, 10).unwrap());
        assert_eq!(a.len(), 10);
        let idx = subset_indices(40, 10, TEST_SUBSET_SEED);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.image::<f32>(3).unwrap(), ds.image::<f32>(idx[3]).unwrap());
    }
}
