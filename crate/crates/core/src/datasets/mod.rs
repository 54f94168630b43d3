//! Dataset parsing, splitting, augmentation and normalization.

pub mod augment;
pub mod batch;
pub mod cifar;
pub mod idx;
pub mod normalize;
pub mod split;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::DataError;
use crate::prng::{self, Purpose};

pub use augment::{AugmentDraw, AugmentPolicy};
pub use batch::Pipeline;
pub use normalize::Stats;
pub use split::SplitIndices;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Mnist, DatasetName::FashionMnist, DatasetName::Cifar10];

    pub fn key(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Cifar10 => "cifar10",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            DatasetName::Mnist => "MNIST",
            DatasetName::FashionMnist => "Fashion-MNIST",
            DatasetName::Cifar10 => "CIFAR-10",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            DatasetName::Cifar10 => 3,
            _ => 1,
        }
    }

    pub fn resolution(self) -> usize {
        match self {
            DatasetName::Cifar10 => 32,
            _ => 28,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            DatasetName::Cifar10 => 150,
            _ => 10,
        }
    }

    /// Decimal places used when reporting accuracies for this dataset.
    pub fn report_precision(self) -> usize {
        match self {
            DatasetName::Cifar10 => 1,
            _ => 2,
        }
    }

    pub fn class_names(self) -> [&'static str; 10] {
        match self {
            DatasetName::Mnist => ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"],
            DatasetName::FashionMnist => [
                "t-shirt/top", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag", "ankle boot",
            ],
            DatasetName::Cifar10 => {
                ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]
            }
        }
    }

    pub fn augment_policy(self) -> AugmentPolicy {
        match self {
            DatasetName::Cifar10 => AugmentPolicy { pad_crop: 4, rotation_deg: 0.0, hflip_prob: 0.5 },
            _ => AugmentPolicy { pad_crop: 4, rotation_deg: 10.0, hflip_prob: 0.0 },
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for DatasetName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" | "fashion-mnist" => Ok(DatasetName::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
            other => Err(format!("unknown dataset `{other}` (expected mnist, fashion_mnist or cifar10)")),
        }
    }
}

/// Images stored as planar bytes `[N, C, H, W]` with labels in `[0, 10)`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: DatasetName,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: DatasetName, images: Vec<u8>, labels: Vec<u8>) -> Result<Self, DataError> {
        let (c, r) = (name.channels(), name.resolution());
        if images.len() != labels.len() * c * r * r {
            return Err(DataError::Invalid(format!(
                "{} pixel bytes for {} labels of {c}x{r}x{r} images",
                images.len(),
                labels.len()
            )));
        }
        Ok(Dataset { name, channels: c, height: r, width: r, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// A new dataset holding `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { name: self.name, channels: self.channels, height: self.height, width: self.width, images, labels }
    }

    pub fn class_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Keep at most `n` samples, drawn uniformly without replacement and
    /// kept in file order. `stream` distinguishes the train and test pools.
    pub fn cap(&self, n: usize, seed: u64, stream: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = prng::stream(seed, Purpose::Subset, stream, 0);
        let mut keep = prng::permutation(self.len(), &mut rng);
        keep.truncate(n);
        keep.sort_unstable();
        self.select(&keep)
    }
}

/// The official training and test partitions of one dataset.
#[derive(Clone, Debug)]
pub struct DataBundle {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load(name: DatasetName, root: &Path) -> Result<DataBundle, DataError> {
    let dir = root.join(name.key());
    match name {
        DatasetName::Mnist | DatasetName::FashionMnist => {
            let read = |prefix: &str| -> Result<Dataset, DataError> {
                let (img, labels) = idx::read_image_pair(
                    &dir.join(format!("{prefix}-images-idx3-ubyte")),
                    &dir.join(format!("{prefix}-labels-idx1-ubyte")),
                )?;
                if img.dims[1..] != [28, 28] {
                    return Err(DataError::Format {
                        path: dir.join(format!("{prefix}-images-idx3-ubyte")),
                        detail: format!("expected 28x28 images, header says {:?}", &img.dims[1..]),
                    });
                }
                Dataset::new(name, img.data, labels)
            };
            Ok(DataBundle { train: read("train")?, test: read("t10k")? })
        }
        DatasetName::Cifar10 => {
            let train: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            let (px, lab) = cifar::parse_cifar_binary(&train)?;
            let (tpx, tlab) = cifar::parse_cifar_binary(&[dir.join("test_batch.bin")])?;
            Ok(DataBundle { train: Dataset::new(name, px, lab)?, test: Dataset::new(name, tpx, tlab)? })
        }
    }
}
