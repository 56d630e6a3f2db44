//! Seeded random streams and bootstrap standard errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Independent generator for item `stream` of a run seeded with `seed`.
/// The stream depends only on `(seed, stream)`, never on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for sub-run `index`, so nested runs never share streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d62_656c_6c5f_7331);
    rng.set_stream(index);
    rng.random()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Bootstrap standard error of `stat`, which receives the resampled row
/// indices. Resample `r` draws from its own stream.
pub fn bootstrap_std_err<F>(n: usize, resamples: usize, seed: u64, stat: F) -> Result<f64>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    bootstrap_std_err_stratified(&[n], resamples, seed, |idx| stat(&idx[0]))
}

/// Bootstrap with independent resampling inside each stratum of the given
/// sizes; `stat` receives one index list per stratum.
pub fn bootstrap_std_err_stratified<F>(sizes: &[usize], resamples: usize, seed: u64, stat: F) -> Result<f64>
where
    F: Fn(&[Vec<usize>]) -> f64 + Sync,
{
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if resamples < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: resamples,
        });
    }
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map_init(
            || sizes.iter().map(|&n| vec![0usize; n]).collect::<Vec<_>>(),
            |idx, r| {
                let mut rng = stream_rng(seed, r as u64);
                for (stratum, &n) in idx.iter_mut().zip(sizes) {
                    stratum.iter_mut().for_each(|i| *i = rng.random_range(0..n));
                }
                stat(idx)
            },
        )
        .collect();
    Ok(sample_variance(&values).sqrt())
}

/// Streaming first and second moments of a weighted sum and a normalizer
/// over selected rows; shared by the NRF and Stokes-variance estimators.
pub(crate) fn ratio_of_variance(d: &[f64], s: &[f64], rows: impl Iterator<Item = usize>) -> f64 {
    let (mut n, mut sd, mut sdd, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for i in rows {
        n += 1.0;
        sd += d[i];
        sdd += d[i] * d[i];
        ss += s[i];
    }
    let var = (sdd - sd * sd / n) / (n - 1.0);
    var / (ss / n)
}
