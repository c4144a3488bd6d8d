//! Synthetic difference-in-differences, estimated one treated unit at a time.
//!
//! For each treated unit the donor pool is the set of controls observed in
//! every period the treated unit is observed. Unit weights over donors match
//! the treated pre-period path; time weights over pre-periods match the
//! donors' post-period mean. The effect is the treatment coefficient of a
//! TWFE regression on the panel reweighted by `ω_i · λ_t`, with weight 1 on
//! the treated unit and `1/T_post` on each post-period.

mod bootstrap;
mod simplex;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

pub use bootstrap::{bootstrap_se, bootstrap_se_refit, resampled_att_sd, BootstrapMode};
pub use simplex::{
    project_simplex, solve_simplex_ls, SimplexSolution, SimplexWeights, SolverOptions,
};

use crate::error::{Error, Result};
use crate::fe::{fit_wls, FeSample};
use crate::panel::{donor_pool_for, PanelDataset, TimeIndex, TreatmentSpec, UnitId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SdidConfig {
    pub unit_weights: SolverOptions,
    pub time_weights: SolverOptions,
    pub n_boot: usize,
    pub seed: u64,
    pub bootstrap: BootstrapMode,
}

impl Default for SdidConfig {
    fn default() -> Self {
        SdidConfig {
            unit_weights: SolverOptions::default(),
            time_weights: SolverOptions::default(),
            n_boot: 1000,
            seed: 20221130,
            bootstrap: BootstrapMode::UnitResample,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdidUnitFit {
    pub treated_unit: UnitId,
    pub tau: f64,
    pub mu: f64,
    /// Unit effects for positively weighted units, weighted mean zero.
    pub unit_fe: BTreeMap<UnitId, f64>,
    /// Period effects for positively weighted periods, weighted mean zero.
    pub time_fe: BTreeMap<TimeIndex, f64>,
    pub omega: SimplexWeights<UnitId>,
    pub lambda: SimplexWeights<TimeIndex>,
    pub donor_count: usize,
    /// Total post-period n_obs of the treated unit; its weight in the ATT.
    pub n_obs_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    InsufficientPrePeriods,
    NoPostPeriods,
    NoBalancedDonors,
    EstimationFailed(String),
}

impl SkipReason {
    pub fn code(&self) -> &str {
        match self {
            SkipReason::InsufficientPrePeriods => "insufficient_pre_periods",
            SkipReason::NoPostPeriods => "no_post_periods",
            SkipReason::NoBalancedDonors => "no_balanced_donors",
            SkipReason::EstimationFailed(_) => "estimation_failed",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SdidFit {
    pub unit_fits: Vec<SdidUnitFit>,
    pub skipped: Vec<(UnitId, SkipReason)>,
    pub att: f64,
    pub se_bootstrap: f64,
    pub n_boot: usize,
}

fn values_matrix(
    panel: &PanelDataset,
    rows: usize,
    cols: usize,
    cell: impl Fn(usize, usize) -> (UnitId, TimeIndex),
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let (u, t) = cell(i, j);
            m[(i, j)] = panel.value(&u, t)?;
        }
    }
    Ok(m)
}

/// Merges weight on repeated keys so the result has distinct keys.
fn collapse<K: Clone + Ord>(keys: &[K], values: &[f64], objective: f64) -> SimplexWeights<K> {
    let mut merged: BTreeMap<K, f64> = BTreeMap::new();
    for (k, v) in keys.iter().zip(values) {
        *merged.entry(k.clone()).or_default() += v;
    }
    let (keys, values) = merged.into_iter().unzip();
    SimplexWeights {
        keys,
        values,
        objective,
    }
}

/// Donor weights reproducing the treated unit's pre-period path.
///
/// Repeated donors act as repeated draws; their weights are merged.
pub fn solve_unit_weights(
    panel: &PanelDataset,
    treated_unit: &UnitId,
    donors: &[UnitId],
    pre: &[TimeIndex],
    opts: &SolverOptions,
) -> Result<SimplexWeights<UnitId>> {
    if donors.is_empty() {
        return Err(Error::NoBalancedDonors(treated_unit.to_string()));
    }
    let a = values_matrix(panel, pre.len(), donors.len(), |t, j| {
        (donors[j].clone(), pre[t])
    })?;
    let b = DVector::from_vec(
        pre.iter()
            .map(|&t| panel.value(treated_unit, t))
            .collect::<Result<Vec<_>>>()?,
    );
    let sol = solve_simplex_ls(&a, &b, opts)?;
    Ok(collapse(donors, &sol.weights, sol.objective))
}

/// Pre-period weights whose combination of donor outcomes predicts each donor's post-period mean.
pub fn solve_time_weights(
    panel: &PanelDataset,
    donors: &[UnitId],
    pre: &[TimeIndex],
    post: &[TimeIndex],
    opts: &SolverOptions,
) -> Result<SimplexWeights<TimeIndex>> {
    if donors.is_empty() {
        return Err(Error::NoBalancedDonors("<time weights>".into()));
    }
    if post.is_empty() {
        return Err(Error::Invalid(
            "time weights need at least one post period".into(),
        ));
    }
    let a = values_matrix(panel, donors.len(), pre.len(), |j, t| {
        (donors[j].clone(), pre[t])
    })?;
    let mut b = DVector::zeros(donors.len());
    for (j, d) in donors.iter().enumerate() {
        let s = post
            .iter()
            .map(|&t| panel.value(d, t))
            .sum::<Result<f64>>()?;
        b[j] = s / post.len() as f64;
    }
    let sol = solve_simplex_ls(&a, &b, opts)?;
    Ok(collapse(pre, &sol.weights, sol.objective))
}

/// Weighted TWFE regression for one treated unit given its unit and time weights.
pub fn weighted_twfe_tau(
    panel: &PanelDataset,
    treated_unit: &UnitId,
    omega: &SimplexWeights<UnitId>,
    lambda: &SimplexWeights<TimeIndex>,
    onset: TimeIndex,
) -> Result<SdidUnitFit> {
    let post: Vec<TimeIndex> = panel
        .observed_periods(treated_unit)?
        .into_iter()
        .filter(|&t| t >= onset)
        .collect();
    if post.is_empty() {
        return Err(Error::NotIdentified(format!(
            "unit `{treated_unit}` has no post-period cells"
        )));
    }
    if lambda.keys.iter().any(|&t| t >= onset) {
        return Err(Error::Invalid(
            "time weights must sit on pre-onset periods".into(),
        ));
    }
    if omega.keys.contains(treated_unit) {
        return Err(Error::Invalid(
            "treated unit cannot be its own donor".into(),
        ));
    }
    if !(omega.values.iter().sum::<f64>() > 0.0) || !(lambda.values.iter().sum::<f64>() > 0.0) {
        return Err(Error::Invalid(
            "degenerate weighting: zero total weight on donors or pre-periods".into(),
        ));
    }

    let mut units: Vec<(UnitId, f64)> = vec![(treated_unit.clone(), 1.0)];
    units.extend(
        omega
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(u, w)| (u.clone(), w)),
    );
    let post_w = 1.0 / post.len() as f64;
    let mut periods: Vec<(TimeIndex, f64)> = lambda
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(t, w)| (*t, w))
        .collect();
    periods.extend(post.iter().map(|&t| (t, post_w)));

    let (mut ui, mut ti, mut wt, mut y, mut d) = (vec![], vec![], vec![], vec![], vec![]);
    for (i, (u, wu)) in units.iter().enumerate() {
        for (t, (p, wp)) in periods.iter().enumerate() {
            ui.push(i);
            ti.push(t);
            wt.push(wu * wp);
            y.push(panel.value(u, *p)?);
            d.push((i == 0 && *p >= onset) as u8 as f64);
        }
    }
    let sample = FeSample::new(ui, ti, wt)?;
    let fit = fit_wls(
        &sample,
        &y,
        vec![d.clone()],
        &["treated x post".to_string()],
    )?;
    let tau = fit.coef[0];

    let r: Vec<f64> = y.iter().zip(&d).map(|(y, d)| y - tau * d).collect();
    let (alpha, beta) = sample.two_way_effects(&r)?;
    let uw: f64 = units.iter().map(|(_, w)| w).sum();
    let pw: f64 = periods.iter().map(|(_, w)| w).sum();
    let a_bar = units
        .iter()
        .zip(&alpha)
        .map(|((_, w), a)| w * a)
        .sum::<f64>()
        / uw;
    let b_bar = periods
        .iter()
        .zip(&beta)
        .map(|((_, w), b)| w * b)
        .sum::<f64>()
        / pw;

    let n_obs_weight = post
        .iter()
        .filter_map(|&t| panel.cell(treated_unit, t))
        .map(|c| c.n_obs as f64)
        .sum();

    Ok(SdidUnitFit {
        treated_unit: treated_unit.clone(),
        tau,
        mu: a_bar + b_bar,
        unit_fe: units
            .iter()
            .zip(&alpha)
            .map(|((u, _), a)| (u.clone(), a - a_bar))
            .collect(),
        time_fe: periods
            .iter()
            .zip(&beta)
            .map(|((t, _), b)| (*t, b - b_bar))
            .collect(),
        donor_count: omega.keys.len(),
        omega: omega.clone(),
        lambda: lambda.clone(),
        n_obs_weight,
    })
}

/// Pre and post periods in which `unit` is observed.
pub(crate) fn unit_windows(
    panel: &PanelDataset,
    unit: &UnitId,
    onset: TimeIndex,
) -> Result<(Vec<TimeIndex>, Vec<TimeIndex>)> {
    Ok(panel
        .observed_periods(unit)?
        .into_iter()
        .partition(|&t| t < onset))
}

pub(crate) fn fit_with_donors(
    panel: &PanelDataset,
    unit: &UnitId,
    donors: &[UnitId],
    onset: TimeIndex,
    config: &SdidConfig,
) -> Result<SdidUnitFit> {
    let (pre, post) = unit_windows(panel, unit, onset)?;
    let omega = solve_unit_weights(panel, unit, donors, &pre, &config.unit_weights)?;
    let lambda = solve_time_weights(panel, donors, &pre, &post, &config.time_weights)?;
    weighted_twfe_tau(panel, unit, &omega, &lambda, onset)
}

/// Full per-unit estimation for one treated unit, or the reason it was skipped.
pub fn fit_unit(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
    unit: &UnitId,
    config: &SdidConfig,
) -> std::result::Result<SdidUnitFit, SkipReason> {
    let donors = match donor_pool_for(panel, unit, spec) {
        Ok(d) => d,
        Err(Error::InsufficientPrePeriods { .. }) => {
            return Err(SkipReason::InsufficientPrePeriods)
        }
        Err(e) => return Err(SkipReason::EstimationFailed(e.to_string())),
    };
    let (_, post) = unit_windows(panel, unit, spec.onset())
        .map_err(|e| SkipReason::EstimationFailed(e.to_string()))?;
    if post.is_empty() {
        return Err(SkipReason::NoPostPeriods);
    }
    if donors.is_empty() {
        return Err(SkipReason::NoBalancedDonors);
    }
    fit_with_donors(panel, unit, &donors, spec.onset(), config)
        .map_err(|e| SkipReason::EstimationFailed(e.to_string()))
}

/// ATT as the `n_obs_weight`-weighted mean of unit effects.
pub fn weighted_att(fits: &[SdidUnitFit]) -> f64 {
    let (num, den) = fits.iter().fold((0.0, 0.0), |(n, d), f| {
        (n + f.n_obs_weight * f.tau, d + f.n_obs_weight)
    });
    num / den
}

pub fn sdid_per_unit(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
    config: &SdidConfig,
) -> Result<SdidFit> {
    let treated: Vec<&UnitId> = spec.treated().iter().collect();
    let results: Vec<_> = treated
        .par_iter()
        .map(|u| fit_unit(panel, spec, u, config))
        .collect();

    let mut unit_fits = vec![];
    let mut skipped = vec![];
    for (u, r) in treated.into_iter().zip(results) {
        match r {
            Ok(f) => unit_fits.push(f),
            Err(reason) => skipped.push((u.clone(), reason)),
        }
    }
    if unit_fits.is_empty() {
        return Err(Error::NoUnitsFitted {
            skipped: skipped.len(),
        });
    }
    let att = weighted_att(&unit_fits);
    let se_bootstrap = if config.n_boot == 0 {
        0.0
    } else {
        match config.bootstrap {
            BootstrapMode::UnitResample => bootstrap_se(&unit_fits, config.n_boot, config.seed),
            BootstrapMode::Refit => bootstrap_se_refit(panel, spec, &unit_fits, config)?,
        }
    };
    Ok(SdidFit {
        unit_fits,
        skipped,
        att,
        se_bootstrap,
        n_boot: config.n_boot,
    })
}
