use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{tokenize, Dataset, Split, Triplet, Vocab};
use crate::error::{IdcError, Result};
use crate::imaging::{augment, AugmentConfig, Raster};
use crate::model::{prepare_pair, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A triplet with its images in memory.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub triplet: Triplet,
    pub ref_image: Raster,
    pub mod_image: Raster,
}

impl LoadedPair {
    /// Model input, optionally after photometric augmentation of both images
    /// with independent draws from `rng`.
    pub fn input<S: Scalar>(
        &self,
        cfg: &ModelConfig,
        aug: Option<(&AugmentConfig, &mut ChaCha8Rng)>,
    ) -> Result<Tensor<S>> {
        match aug {
            None => prepare_pair(&self.ref_image, &self.mod_image, cfg),
            Some((a, rng)) => {
                let r = augment(&self.ref_image, rng, a);
                let m = augment(&self.mod_image, rng, a);
                prepare_pair(&r, &m, cfg)
            }
        }
    }
}

pub fn load_split(ds: &Dataset, split: Split) -> Result<Vec<LoadedPair>> {
    let triplets: Vec<&Triplet> = ds.split(split).collect();
    triplets
        .par_iter()
        .map(|t| {
            let (r, m) = ds.load_pair(t)?;
            Ok(LoadedPair {
                triplet: (*t).clone(),
                ref_image: r,
                mod_image: m,
            })
        })
        .collect()
}

/// Everything a training run reads: train pairs from every dataset, and the
/// val and test splits of the first one.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub sources: Vec<PathBuf>,
    pub vocab: Vocab,
    pub train: Vec<LoadedPair>,
    /// Word ids of each train pair's first caption.
    pub targets: Vec<Vec<usize>>,
    pub val: Vec<LoadedPair>,
    pub test: Vec<LoadedPair>,
}

impl TrainData {
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        if paths.is_empty() {
            return Err(IdcError::Config("no training dataset given".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in paths {
            if !seen.insert(std::fs::canonicalize(p).map_err(|e| IdcError::io(p, e))?) {
                return Err(IdcError::Config(format!("dataset {} listed twice", p.display())));
            }
        }
        let sets = paths.iter().map(Dataset::load).collect::<Result<Vec<_>>>()?;
        let mut train = Vec::new();
        for ds in &sets {
            train.extend(load_split(ds, Split::Train)?);
        }
        if train.is_empty() {
            return Err(IdcError::Config("training split is empty".into()));
        }
        Ok(Self::from_parts(
            paths.to_vec(),
            train,
            load_split(&sets[0], Split::Val)?,
            load_split(&sets[0], Split::Test)?,
        ))
    }

    /// Builds the vocabulary over the train captions of `train`.
    pub fn from_parts(
        sources: Vec<PathBuf>,
        train: Vec<LoadedPair>,
        val: Vec<LoadedPair>,
        test: Vec<LoadedPair>,
    ) -> Self {
        let vocab = Vocab::build(train.iter().flat_map(|p| p.triplet.captions.iter().map(String::as_str)));
        let targets = train.iter().map(|p| tokenize(&p.triplet.captions[0], &vocab)).collect();
        TrainData {
            sources,
            vocab,
            train,
            targets,
            val,
            test,
        }
    }
}

/// Sample order: the concatenation of one seeded permutation per epoch.
pub struct BatchOrder {
    seed: u64,
    n: usize,
    epoch: usize,
    perm: Vec<usize>,
}

impl BatchOrder {
    pub fn new(seed: u64, n: usize) -> Self {
        let mut o = BatchOrder {
            seed,
            n,
            epoch: usize::MAX,
            perm: Vec::new(),
        };
        o.load_epoch(0);
        o
    }

    fn load_epoch(&mut self, e: usize) {
        if self.epoch != e {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(2 + e as u64);
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = e;
        }
    }

    /// Sample indices of batch `step`.
    pub fn batch(&mut self, step: usize, size: usize) -> Vec<usize> {
        (step * size..(step + 1) * size)
            .map(|pos| {
                self.load_epoch(pos / self.n);
                self.perm[pos % self.n]
            })
            .collect()
    }
}

/// Augmentation stream for one training step; independent of batch order
/// bookkeeping so a resumed run draws the same values.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11d);
    rng.set_stream(step as u64);
    rng
}
