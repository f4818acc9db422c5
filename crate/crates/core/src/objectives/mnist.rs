//! MNIST ingestion from IDX files (optionally gzipped) and deterministic
//! stratified subsetting.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{Dataset, Mlp, SparseImage};
use crate::error::{invalid, Error, IdxError, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.rows * self.cols;
        &self.pixels[i * len..(i + 1) * len]
    }
}

fn read_u32(bytes: &[u8], at: usize) -> std::result::Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Parses an IDX3 image file: big-endian magic `0x803`, count, rows, cols,
/// then unsigned bytes.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload[..expected].to_vec(),
    })
}

/// Parses an IDX1 label file: big-endian magic `0x801`, count, then bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(IdxError::Truncated {
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload[..count].to_vec())
}

/// Reads `name` from `dir`, falling back to `name.gz`.
fn read_maybe_gz(dir: &Path, name: &str) -> Result<(PathBuf, Vec<u8>)> {
    let plain = dir.join(name);
    let mut bytes = Vec::new();
    if plain.exists() {
        BufReader::new(File::open(&plain)?).read_to_end(&mut bytes)?;
        return Ok((plain, bytes));
    }
    let gz = dir.join(format!("{name}.gz"));
    GzDecoder::new(BufReader::new(File::open(&gz)?)).read_to_end(&mut bytes)?;
    Ok((gz, bytes))
}

fn load_split(dir: &Path, images: &str, labels: &str) -> Result<(IdxImages, Vec<u8>)> {
    let (ipath, ibytes) = read_maybe_gz(dir, images)?;
    let imgs = parse_idx_images(&ibytes).map_err(|kind| Error::Idx {
        path: ipath.clone(),
        kind,
    })?;
    if (imgs.rows, imgs.cols) != (28, 28) {
        return Err(Error::Idx {
            path: ipath,
            kind: IdxError::Shape {
                rows: imgs.rows,
                cols: imgs.cols,
            },
        });
    }
    let (lpath, lbytes) = read_maybe_gz(dir, labels)?;
    let labs = parse_idx_labels(&lbytes).map_err(|kind| Error::Idx {
        path: lpath.clone(),
        kind,
    })?;
    if labs.len() != imgs.count() {
        return Err(Error::Idx {
            path: lpath,
            kind: IdxError::CountMismatch {
                images: imgs.count(),
                labels: labs.len(),
            },
        });
    }
    if let Some(&bad) = labs.iter().find(|&&y| usize::from(y) >= CLASSES) {
        return Err(Error::Idx {
            path: lpath,
            kind: IdxError::Label(bad),
        });
    }
    Ok((imgs, labs))
}

/// Picks `n` indices with per-class counts proportional to the class
/// frequencies (largest-remainder rounding), shuffled.
fn stratified_indices(labels: &[u8], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        by_class[usize::from(y)].push(i);
    }
    for class in by_class.iter_mut() {
        class.shuffle(rng);
    }
    let total = labels.len();
    let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
    let mut remainders: Vec<(usize, usize)> = by_class
        .iter()
        .enumerate()
        .map(|(k, c)| (c.len() * n % total, k))
        .collect();
    // largest remainder first, lower class on ties
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = n - quotas.iter().sum::<usize>();
    for &(_, k) in remainders.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quotas[k] < by_class[k].len() {
            quotas[k] += 1;
            missing -= 1;
        }
    }
    let mut picked: Vec<usize> = by_class
        .iter()
        .zip(&quotas)
        .flat_map(|(c, &q)| c[..q].iter().copied())
        .collect();
    picked.shuffle(rng);
    picked
}

/// Raw pixels and labels of a train/test subset.
#[derive(Debug, Clone)]
pub struct MnistSubset {
    pub train_images: Vec<Vec<u8>>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<Vec<u8>>,
    pub test_labels: Vec<u8>,
}

impl MnistSubset {
    /// Loads `n_train` training and `n_test` test digits from the four
    /// standard MNIST files in `dir` (plain or `.gz`).
    pub fn load(dir: impl AsRef<Path>, n_train: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_train == 0 {
            return Err(invalid("n_train", "must be positive"));
        }
        let dir = dir.as_ref();
        let (train_imgs, train_labs) = load_split(dir, TRAIN_IMAGES, TRAIN_LABELS)?;
        let (test_imgs, test_labs) = load_split(dir, TEST_IMAGES, TEST_LABELS)?;
        if n_train > train_labs.len() {
            return Err(Error::OutOfBounds {
                requested: n_train,
                available: train_labs.len(),
            });
        }
        if n_test > test_labs.len() {
            return Err(Error::OutOfBounds {
                requested: n_test,
                available: test_labs.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train_idx = stratified_indices(&train_labs, n_train, &mut rng);
        let test_idx = stratified_indices(&test_labs, n_test, &mut rng);
        Ok(Self {
            train_images: train_idx.iter().map(|&i| train_imgs.image(i).to_vec()).collect(),
            train_labels: train_idx.iter().map(|&i| train_labs[i]).collect(),
            test_images: test_idx.iter().map(|&i| test_imgs.image(i).to_vec()).collect(),
            test_labels: test_idx.iter().map(|&i| test_labs[i]).collect(),
        })
    }

    fn dataset<T: Scalar>(images: &[Vec<u8>], labels: &[u8]) -> Dataset<T> {
        let scale = T::one() / T::lit(255.0);
        Dataset {
            inputs: images
                .iter()
                .map(|img| {
                    let dense: Vec<T> = img.iter().map(|&p| T::lit(f64::from(p)) * scale).collect();
                    SparseImage::from_dense(&dense)
                })
                .collect(),
            labels: labels.to_vec(),
        }
    }

    /// Model 1 objective over this subset, pixels scaled to `[0, 1]`.
    pub fn into_model1<T: Scalar>(self) -> Result<Mlp<T>> {
        let train = Self::dataset(&self.train_images, &self.train_labels);
        let test = Self::dataset(&self.test_images, &self.test_labels);
        Mlp::model1(train, test)
    }
}

pub fn load_mnist_subset<T: Scalar>(dir: impl AsRef<Path>, n_train: usize, n_test: usize, seed: u64) -> Result<Mlp<T>> {
    MnistSubset::load(dir, n_train, n_test, seed)?.into_model1()
}
