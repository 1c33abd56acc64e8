use std::path::{Path, PathBuf};

use super::idx::{read_idx, IdxData};
use super::rng::{check_probability, DomainRng};
use super::{DomainDataset, LabeledExample};
use crate::error::{Error, Result};

/// Aligned MNIST images and digit labels.
#[derive(Debug, Clone)]
pub struct MnistSplit {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub digits: Vec<u8>,
}

impl MnistSplit {
    pub fn new(images: IdxData, labels: IdxData) -> Result<Self> {
        match (images, labels) {
            (
                IdxData::Images {
                    count,
                    rows,
                    cols,
                    pixels,
                },
                IdxData::Labels {
                    count: n_labels,
                    labels,
                },
            ) => {
                if count != n_labels {
                    return Err(Error::InvalidArgument(format!(
                        "{} images but {} labels",
                        count, n_labels
                    )));
                }
                if let Some(bad) = labels.iter().find(|&&d| d > 9) {
                    return Err(Error::InvalidArgument(format!("digit label {} > 9", bad)));
                }
                Ok(MnistSplit {
                    rows,
                    cols,
                    pixels,
                    digits: labels,
                })
            }
            _ => Err(Error::InvalidArgument(
                "expected an image file and a label file".into(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }

    pub fn select(&self, idx: &[usize]) -> MnistSplit {
        let mut pixels = Vec::with_capacity(idx.len() * self.rows * self.cols);
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
        }
        MnistSplit {
            rows: self.rows,
            cols: self.cols,
            pixels,
            digits: idx.iter().map(|&i| self.digits[i]).collect(),
        }
    }
}

/// The four standard MNIST files found in one directory.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train: MnistSplit,
    pub test: MnistSplit,
}

const FILE_STEMS: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl MnistFiles {
    /// Paths of the four files, accepting either `-idx3-ubyte` or
    /// `.idx3-ubyte` spellings. Fails with the list of missing paths.
    pub fn locate(dir: &Path) -> Result<[PathBuf; 4]> {
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for stem in FILE_STEMS {
            let dashed = dir.join(stem);
            let dotted = dir.join(stem.replacen("-idx", ".idx", 1));
            if dashed.is_file() {
                found.push(dashed);
            } else if dotted.is_file() {
                found.push(dotted);
            } else {
                missing.push(dashed.display().to_string());
            }
        }
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing MNIST files: {}",
                missing.join(", ")
            )));
        }
        Ok(found.try_into().expect("four paths"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let [ti, tl, si, sl] = Self::locate(dir)?;
        Ok(MnistFiles {
            train: MnistSplit::new(read_idx(&ti)?, read_idx(&tl)?)?,
            test: MnistSplit::new(read_idx(&si)?, read_idx(&sl)?)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMnistOptions {
    /// Side length after average pooling.
    pub side: usize,
    /// Probability of flipping the binary label.
    pub label_noise: f64,
}

impl Default for ColorMnistOptions {
    fn default() -> Self {
        ColorMnistOptions {
            side: 14,
            label_noise: 0.25,
        }
    }
}

/// Colored binary MNIST domain.
///
/// Digits 0-4 map to label 0 and 5-9 to label 1; the label is then flipped
/// with probability `label_noise`. The color bit `z` equals the (noisy) label
/// with probability `beta`. The pooled grayscale image, scaled to `[0, 1]`,
/// is written into the channel selected by `z`; the other channel is zero.
pub fn build_color_mnist(
    split: &MnistSplit,
    beta: f64,
    rng: &mut DomainRng,
    opts: ColorMnistOptions,
) -> Result<DomainDataset> {
    check_probability(beta)?;
    check_probability(opts.label_noise)?;
    let side = opts.side;
    if side == 0 || split.rows % side != 0 || split.cols % side != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot pool {}x{} images down to {}x{}",
            split.rows, split.cols, side, side
        )));
    }
    let (fr, fc) = (split.rows / side, split.cols / side);
    let plane = side * side;
    let mut examples = Vec::with_capacity(split.len());
    for i in 0..split.len() {
        let mut y = usize::from(split.digits[i] >= 5);
        if rng.bernoulli(opts.label_noise) {
            y = 1 - y;
        }
        let z = if rng.bernoulli(beta) { y } else { 1 - y };
        let img = split.image(i);
        let mut x = vec![0.0; 2 * plane];
        for r in 0..side {
            for c in 0..side {
                let mut acc = 0.0;
                for dr in 0..fr {
                    for dc in 0..fc {
                        acc += img[(r * fr + dr) * split.cols + c * fc + dc] as f64;
                    }
                }
                x[z * plane + r * side + c] = acc / (255.0 * (fr * fc) as f64);
            }
        }
        examples.push(LabeledExample {
            x,
            y,
            z: Some(z as i64),
        });
    }
    Ok(DomainDataset {
        domain_id: format!("color_mnist-{beta}"),
        beta,
        examples,
    })
}
