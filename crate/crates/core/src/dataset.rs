//! Train/validation/test splits, normalisation, the δ grid and synthetic
//! low-rank completion problems.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factored::{full_svd_oracle, ThinSvd};
use crate::math::{round, sqrt};
use crate::objective::{rmse, Entry, Observations};

/// A split, normalised completion problem. Values in every split are
/// `(raw - mean) / std` with `mean` and `std` fitted on the training part.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Observations,
    pub validation: Observations,
    pub test: Observations,
    pub mean: f64,
    pub std: f64,
}

impl Dataset {
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.std + self.mean
    }

    /// RMSE of `x` on `split`, on the original rating scale.
    pub fn raw_rmse(&self, x: &ThinSvd, split: &Observations) -> Result<f64> {
        Ok(rmse(x, split)? * self.std)
    }
}

/// Seeded 50/25/25 split (validation and test get `n / 4` entries each,
/// training the rest), then normalisation with the training mean and
/// population standard deviation.
pub fn split_and_normalize(obs: &Observations, seed: u64, name: &str) -> Result<Dataset> {
    let n = obs.len();
    if n < 4 {
        return Err(Error::TooFewEntries { required: 4, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let quarter = n / 4;
    let n_train = n - 2 * quarter;
    let (train_idx, rest) = order.split_at(n_train);
    let (val_idx, test_idx) = rest.split_at(quarter);

    let values = obs.values();
    let mean = train_idx.iter().map(|&e| values[e]).sum::<f64>() / n_train as f64;
    let var = train_idx
        .iter()
        .map(|&e| (values[e] - mean) * (values[e] - mean))
        .sum::<f64>()
        / n_train as f64;
    let std = sqrt(var);
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let pick = |idx: &[usize]| -> Result<Observations> {
        let entries = idx
            .iter()
            .map(|&e| Entry::new(obs.rows()[e], obs.cols()[e], (values[e] - mean) / std))
            .collect();
        Observations::new(obs.nrows(), obs.ncols(), entries)
    };
    Ok(Dataset {
        name: String::from(name),
        train: pick(train_idx)?,
        validation: pick(val_idx)?,
        test: pick(test_idx)?,
        mean,
        std,
    })
}

/// Point `j` of the radius grid `δ = (2 + 0.2 j) ||Y||_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSchedule {
    pub j: usize,
    pub mu: f64,
    pub delta: f64,
}

pub fn mu(j: usize) -> f64 {
    2.0 + 0.2 * j as f64
}

/// `||Y||_F` is taken over the observed training entries.
pub fn delta_for(train: &Observations, j: usize) -> Result<DeltaSchedule> {
    if train.is_empty() {
        return Err(Error::EmptySet);
    }
    let mu = mu(j);
    Ok(DeltaSchedule {
        j,
        mu,
        delta: mu * train.frobenius_norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub nrows: usize,
    pub ncols: usize,
    pub rank: usize,
    pub obs_fraction: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.nrows == 0 || self.ncols == 0 {
            return Err(Error::InvalidParameter("synthetic dimensions must be positive"));
        }
        if self.rank > self.nrows.min(self.ncols) {
            return Err(Error::InvalidParameter("synthetic rank exceeds min(m, n)"));
        }
        if !(self.obs_fraction > 0.0 && self.obs_fraction <= 1.0) {
            return Err(Error::InvalidParameter("obs_fraction must be in (0, 1]"));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidParameter("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// `X* = A B'` with standard-normal factors. A uniformly drawn fraction of
/// the entries (plus noise) is the training set; the remaining entries are
/// split evenly into validation and test. No normalisation is applied
/// (mean 0, std 1). Returns the dataset and the thin SVD of `X*`.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(Dataset, ThinSvd)> {
    spec.validate()?;
    let (m, n, r) = (spec.nrows, spec.ncols, spec.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth = &a * b.transpose();

    let total = m * n;
    let count = (round(spec.obs_fraction * total as f64) as usize).clamp(1, total);
    let mut observed = alloc::vec![false; total];
    for k in index::sample(&mut rng, total, count).iter() {
        observed[k] = true;
    }
    let mut held_out: Vec<usize> = (0..total).filter(|&k| !observed[k]).collect();
    held_out.shuffle(&mut rng);

    let noise = spec.noise_std;
    let mut entry = |k: usize| {
        let (i, j) = (k / n, k % n);
        let eps: f64 = rng.sample(StandardNormal);
        Entry::new(i, j, truth[(i, j)] + noise * eps)
    };
    let train: Vec<Entry> = (0..total).filter(|&k| observed[k]).map(&mut entry).collect();
    let half = held_out.len() / 2;
    let validation: Vec<Entry> = held_out[..half].iter().map(|&k| entry(k)).collect();
    let test: Vec<Entry> = held_out[half..].iter().map(|&k| entry(k)).collect();

    let name = alloc::format!(
        "synthetic:m={m},n={n},rank={r},obs={},noise={},seed={}",
        spec.obs_fraction,
        spec.noise_std,
        spec.seed
    );
    let dataset = Dataset {
        name,
        train: Observations::new(m, n, train)?,
        validation: Observations::new(m, n, validation)?,
        test: Observations::new(m, n, test)?,
        mean: 0.0,
        std: 1.0,
    };
    Ok((dataset, full_svd_oracle(&truth)))
}
