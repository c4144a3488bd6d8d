//! Bootstrap standard errors for the observation-weighted ATT.
//!
//! The default resamples fitted treated units with replacement, carrying each
//! unit's weight with its effect. `Refit` also resamples each drawn unit's
//! donors and re-solves both weight programs per replicate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_with_donors, weighted_att, SdidConfig, SdidUnitFit};
use crate::error::Result;
use crate::panel::{donor_pool_for, PanelDataset, TreatmentSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    UnitResample,
    Refit,
}

/// Sample standard deviation; 0 for fewer than two replicates.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// SD of the weighted mean of `(effect, weight)` pairs over `n_boot` resamples.
pub fn resampled_att_sd(effects: &[(f64, f64)], n_boot: usize, seed: u64) -> f64 {
    if effects.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = effects.len();
    let stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..n {
                let (tau, w) = effects[rng.random_range(0..n)];
                num += w * tau;
                den += w;
            }
            num / den
        })
        .collect();
    std_dev(&stats)
}

pub fn bootstrap_se(unit_fits: &[SdidUnitFit], n_boot: usize, seed: u64) -> f64 {
    let effects: Vec<(f64, f64)> = unit_fits.iter().map(|f| (f.tau, f.n_obs_weight)).collect();
    resampled_att_sd(&effects, n_boot, seed)
}

/// Bootstrap that re-estimates unit and time weights inside every replicate.
///
/// Replicates whose every drawn unit fails to refit are dropped.
pub fn bootstrap_se_refit(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
    unit_fits: &[SdidUnitFit],
    config: &SdidConfig,
) -> Result<f64> {
    let pools = unit_fits
        .iter()
        .map(|f| donor_pool_for(panel, &f.treated_unit, spec))
        .collect::<Result<Vec<_>>>()?;
    let n = unit_fits.len();
    let stats: Vec<Option<f64>> = (0..config.n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, b));
            let mut draws = vec![];
            for _ in 0..n {
                let i = rng.random_range(0..n);
                let pool = &pools[i];
                let donors: Vec<_> = (0..pool.len())
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect();
                if let Ok(fit) = fit_with_donors(
                    panel,
                    &unit_fits[i].treated_unit,
                    &donors,
                    spec.onset(),
                    config,
                ) {
                    draws.push(fit);
                }
            }
            (!draws.is_empty()).then(|| weighted_att(&draws))
        })
        .collect();
    let stats: Vec<f64> = stats.into_iter().flatten().collect();
    Ok(std_dev(&stats))
}
