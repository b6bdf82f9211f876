//! Synthetic classification task whose classes differ only in the spatial
//! arrangement of two patch-sized parts.
//!
//! Each class template is a 2×2 block of patch cells holding part `A`, part
//! `B` and two blanks; classes are distinct placements of `A` and `B` in the
//! block. Every image therefore contains the same multiset of patches, so a
//! model without any positional signal cannot beat chance, while a model
//! that sees local neighbourhoods can solve it wherever the block sits.
//! Blocks are placed on the patch grid.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::digest::fnv1a64;
use crate::error::{Error, Result};
use crate::nn::keyword_enum;
use crate::rng::{normal, Seed};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    UniformRandom,
    CenterOnly,
}

keyword_enum!(Placement, "placement", Placement::UniformRandom => "uniform", Placement::CenterOnly => "center");

/// All ordered placements of `A` and `B` in the four cells of the block.
const ARRANGEMENTS: [(usize, usize); 12] = [
    (0, 1),
    (1, 0),
    (0, 2),
    (2, 0),
    (1, 3),
    (3, 1),
    (2, 3),
    (3, 2),
    (0, 3),
    (3, 0),
    (1, 2),
    (2, 1),
];

pub const MAX_CLASSES: usize = ARRANGEMENTS.len();

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub image_size: usize,
    pub patch: usize,
    pub classes: usize,
    pub placement: Placement,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            image_size: 64,
            patch: 8,
            classes: 4,
            placement: Placement::UniformRandom,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl SyntheticTask {
    /// Side of a class template in pixels.
    pub fn template_size(&self) -> usize {
        2 * self.patch
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(Error::config(
                "image_size",
                format!("{} is not divisible by patch size {}", self.image_size, self.patch),
            ));
        }
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return Err(Error::config("classes", format!("must lie in 2..={MAX_CLASSES}, got {}", self.classes)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std", "must be non-negative"));
        }
        let need = self.template_size() + 2 * 2 * self.patch;
        if self.template_size() > self.image_size {
            return Err(Error::config("image_size", "pattern is larger than the image"));
        }
        if need > self.image_size {
            return Err(Error::config(
                "image_size",
                format!("pattern of {} px needs a {need} px image for a 2-patch margin", self.template_size()),
            ));
        }
        Ok(())
    }

    /// The two parts, each `S×S`, drawn from the task seed.
    pub fn parts(&self) -> [Tensor<f32>; 2] {
        let mut rng = Seed(self.seed).stream("task/parts");
        let s = self.patch;
        let a = Tensor::from_fn(vec![s, s], |_| rng.gen_range(0.5f32..1.0));
        let b = Tensor::from_fn(vec![s, s], |_| rng.gen_range(-1.0f32..-0.5));
        [a, b]
    }

    /// Noise-free `2S×2S` template of `class`.
    pub fn template(&self, class: usize) -> Tensor<f32> {
        let s = self.patch;
        let t = self.template_size();
        let parts = self.parts();
        let (ca, cb) = ARRANGEMENTS[class];
        let mut out = Tensor::zeros(vec![t, t]);
        for (cell, part) in [(ca, &parts[0]), (cb, &parts[1])] {
            let (oy, ox) = ((cell / 2) * s, (cell % 2) * s);
            for y in 0..s {
                for x in 0..s {
                    out.data_mut()[(oy + y) * t + ox + x] = part.data()[y * s + x];
                }
            }
        }
        out
    }

    pub fn pattern_bank(&self) -> Vec<Tensor<f32>> {
        (0..self.classes).map(|c| self.template(c)).collect()
    }

    /// Admissible top-left cells (in patch units) along one axis.
    pub fn valid_starts(&self) -> Vec<usize> {
        let g = self.image_size / self.patch;
        (2..=g - 4).collect()
    }

    pub fn center_start(&self) -> usize {
        let g = self.image_size / self.patch;
        (g - 2) / 2
    }

    fn draw_offset(&self, rng: &mut impl Rng) -> (usize, usize) {
        match self.placement {
            Placement::CenterOnly => (self.center_start(), self.center_start()),
            Placement::UniformRandom => {
                let starts = self.valid_starts();
                (starts[rng.gen_range(0..starts.len())], starts[rng.gen_range(0..starts.len())])
            }
        }
    }

    /// `n` labelled images from the stream of `split`.
    pub fn generate(&self, n: usize, split: Split) -> Result<Dataset> {
        self.validate()?;
        let stream = match split {
            Split::Train => "data/train",
            Split::Test => "data/test",
        };
        let mut rng = Seed(self.seed).stream(stream);
        let size = self.image_size;
        let t = self.template_size();
        let bank = self.pattern_bank();
        let mut images = vec![0f32; n * size * size];
        let mut labels = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let label = rng.gen_range(0..self.classes);
            let (cy, cx) = self.draw_offset(&mut rng);
            let img = &mut images[i * size * size..(i + 1) * size * size];
            let (py, px) = (cy * self.patch, cx * self.patch);
            for y in 0..t {
                for x in 0..t {
                    img[(py + y) * size + px + x] = bank[label].data()[y * t + x];
                }
            }
            if self.noise_std > 0.0 {
                for v in img.iter_mut() {
                    *v += normal(&mut rng, self.noise_std) as f32;
                }
            }
            labels.push(label);
            offsets.push((py, px));
        }
        Ok(Dataset {
            images: Tensor::new(vec![n, 1, size, size], images)?,
            labels,
            offsets,
            classes: self.classes,
        })
    }
}

/// Train and test sets of `task`, drawn from disjoint seed streams.
pub fn generate_dataset(task: &SyntheticTask, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
    Ok((task.generate(n_train, Split::Train)?, task.generate(n_test, Split::Test)?))
}

/// Labelled images `[n, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Pixel offset of the pattern's top-left corner.
    pub offsets: Vec<(usize, usize)>,
    pub classes: usize,
}

const DATA_MAGIC: &[u8; 8] = b"CPVTDATA";

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    /// Images and labels at `indices`, converted to `T`.
    pub fn batch<T: Float>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.images.data()[i * per..(i + 1) * per].iter().map(|&v| T::of(v as f64)));
        }
        let t = Tensor::new(vec![indices.len(), s[1], s[2], s[3]], data).expect("batch shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DATA_MAGIC);
        for &d in self.images.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.classes as u64).to_le_bytes());
        for (&l, &(y, x)) in self.labels.iter().zip(&self.offsets) {
            for v in [l, y, x] {
                buf.extend_from_slice(&(v as u64).to_le_bytes());
            }
        }
        for &v in self.images.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = fnv1a64(&buf);
        buf.extend_from_slice(&digest.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corruption {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        if bytes.len() < 8 + 5 * 8 + 8 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a64(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("digest mismatch"));
        }
        if &body[..8] != DATA_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut words = body[8..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize);
        let mut next = || words.next().ok_or_else(|| corrupt("truncated header"));
        let shape = vec![next()?, next()?, next()?, next()?];
        let classes = next()?;
        let n = shape[0];
        let mut labels = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(next()?);
            offsets.push((next()?, next()?));
        }
        let start = 8 + (5 + 3 * n) * 8;
        let numel: usize = shape.iter().product();
        if body.len() != start + 4 * numel {
            return Err(corrupt("payload length does not match header"));
        }
        let data = body[start..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Dataset {
            images: Tensor::new(shape, data)?,
            labels,
            offsets,
            classes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
