//! Block-weight training from per-block recognition rates.

use rayon::prelude::*;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::{convolve, default_gaussian_radius, gaussian_kernel};
use crate::lbp::{block_distance, extract_descriptor, BlockWeightMap, LbpDescriptor};

/// Per-block recognition rates in `[0, 1]`, row-major.
///
/// Probes are blurred with a Gaussian of width `sigma` (0 = no blur); each
/// block then classifies every probe by its nearest gallery histogram in
/// that block alone, ties going to the earlier gallery entry.
pub fn block_recognition_rates(dataset: &Dataset, sigma: f64, grid: (usize, usize)) -> Result<Vec<f64>> {
    if dataset.classes.len() < 2 {
        return Err(Error::Dataset("block-weight training needs at least two classes".into()));
    }
    if dataset.probes.is_empty() {
        return Err(Error::Dataset("block-weight training needs probes".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be finite and >= 0")));
    }
    let (bx, by) = grid;
    let kernel = if sigma > 0.0 {
        Some(gaussian_kernel(sigma, default_gaussian_radius(sigma))?)
    } else {
        None
    };
    let gallery: Vec<LbpDescriptor> = dataset
        .gallery
        .par_iter()
        .map(|g| extract_descriptor(&g.chip, bx, by))
        .collect::<Result<_>>()?;
    let probes: Vec<LbpDescriptor> = dataset
        .probes
        .par_iter()
        .map(|p| {
            let img = match &kernel {
                Some(k) => convolve(&p.chip, k)?,
                None => p.chip.clone(),
            };
            extract_descriptor(&img, bx, by)
        })
        .collect::<Result<_>>()?;

    let mut rates = Vec::with_capacity(bx * by);
    for y in 0..by {
        for x in 0..bx {
            let correct = probes
                .iter()
                .zip(&dataset.probes)
                .filter(|(pd, p)| {
                    let mut best = 0;
                    let mut best_d = f64::INFINITY;
                    for (i, gd) in gallery.iter().enumerate() {
                        let d = block_distance(pd, gd, x, y);
                        if d < best_d {
                            best_d = d;
                            best = i;
                        }
                    }
                    dataset.gallery[best].class_id == p.class_id
                })
                .count();
            rates.push(correct as f64 / probes.len() as f64);
        }
    }
    Ok(rates)
}

/// Maps rates to the levels 4/2/1/0 by quartile of rank.
///
/// A block's rank is the fraction of blocks with a strictly lower rate:
/// at least 0.75 gives 4, 0.5 gives 2, 0.25 gives 1 and anything below
/// gives 0. When every level comes out 0 the best block is raised to 1.
pub fn rates_to_levels(rates: &[f64]) -> Vec<f64> {
    let n = rates.len();
    let mut levels: Vec<f64> = rates
        .iter()
        .map(|&r| {
            let below = rates.iter().filter(|&&o| o < r).count() as f64 / n as f64;
            if below >= 0.75 {
                4.0
            } else if below >= 0.5 {
                2.0
            } else if below >= 0.25 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    if levels.iter().all(|&l| l == 0.0) && n > 0 {
        let mut best = 0;
        for (i, &r) in rates.iter().enumerate() {
            if r > rates[best] {
                best = i;
            }
        }
        levels[best] = 1.0;
    }
    levels
}

pub fn train_block_weights(dataset: &Dataset, sigma: f64, grid: (usize, usize)) -> Result<BlockWeightMap> {
    let rates = block_recognition_rates(dataset, sigma, grid)?;
    BlockWeightMap::new(grid.0, grid.1, rates_to_levels(&rates))
}
