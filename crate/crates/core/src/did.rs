//! Two-way fixed-effects difference-in-differences and event studies.
//!
//! All three estimators share one weighted within-estimator with standard
//! errors clustered by unit. With `weight_by_nobs` each cell is weighted by
//! the number of micro records behind it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fe::{cluster_vcov, fit_wls, FeSample};
use crate::panel::{PanelDataset, TimeIndex, TreatmentSpec, UnitId};

#[derive(Debug, Clone, Serialize)]
pub struct TwfeFit {
    pub beta: f64,
    pub se_clustered: f64,
    pub n_cells: usize,
    pub n_clusters: usize,
    /// Level of the first unit in the first period.
    pub intercept: f64,
    /// Unit effects, first unit normalized to 0.
    pub alpha: BTreeMap<UnitId, f64>,
    /// Period effects, first period normalized to 0.
    pub delta: BTreeMap<TimeIndex, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventCoefficient {
    pub beta: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EventStudyFit {
    /// Keyed by months relative to onset; the reference month is never present.
    pub coefficients: BTreeMap<i64, EventCoefficient>,
    pub omitted_k: i64,
    pub n_cells: usize,
    pub n_clusters: usize,
}

/// Cells selected for estimation, with dense unit/time indices.
struct Sample {
    fe: FeSample,
    y: Vec<f64>,
    units: Vec<UnitId>,
    periods: Vec<TimeIndex>,
}

impl Sample {
    fn unit_of(&self, k: usize) -> &UnitId {
        &self.units[self.fe.unit[k]]
    }

    fn period_of(&self, k: usize) -> TimeIndex {
        self.periods[self.fe.time[k]]
    }
}

fn build_sample<F>(panel: &PanelDataset, include: F, weight_by_nobs: bool) -> Result<Sample>
where
    F: Fn(&UnitId) -> bool,
{
    let mut unit_ix: BTreeMap<&UnitId, usize> = BTreeMap::new();
    let mut time_ix: BTreeMap<TimeIndex, usize> = BTreeMap::new();
    for (u, t, _) in panel.iter_cells().filter(|(u, _, _)| include(u)) {
        let n = unit_ix.len();
        unit_ix.entry(u).or_insert(n);
        time_ix.insert(t, 0);
    }
    // BTreeMap iteration order gives sorted dense indices
    for (k, v) in time_ix.values_mut().enumerate() {
        *v = k;
    }
    for (k, v) in unit_ix.values_mut().enumerate() {
        *v = k;
    }
    let (mut unit, mut time, mut weight, mut y) = (vec![], vec![], vec![], vec![]);
    for (u, t, c) in panel.iter_cells().filter(|(u, _, _)| include(u)) {
        unit.push(unit_ix[u]);
        time.push(time_ix[&t]);
        weight.push(if weight_by_nobs { c.n_obs as f64 } else { 1.0 });
        y.push(c.value);
    }
    Ok(Sample {
        fe: FeSample::new(unit, time, weight)?,
        y,
        units: unit_ix.into_keys().cloned().collect(),
        periods: time_ix.into_keys().collect(),
    })
}

struct Estimate {
    coef: Vec<f64>,
    se: Vec<f64>,
    intercept: f64,
    alpha: BTreeMap<UnitId, f64>,
    delta: BTreeMap<TimeIndex, f64>,
}

fn estimate(sample: &Sample, regressors: Vec<Vec<f64>>, names: &[String]) -> Result<Estimate> {
    let raw = regressors.clone();
    let fit = fit_wls(&sample.fe, &sample.y, regressors, names)?;
    let vcov = cluster_vcov(&sample.fe, &fit)?;
    let se = (0..fit.coef.len())
        .map(|j| vcov[(j, j)].max(0.0).sqrt())
        .collect();

    let r: Vec<f64> = (0..sample.y.len())
        .map(|k| {
            sample.y[k]
                - raw
                    .iter()
                    .zip(&fit.coef)
                    .map(|(x, b)| x[k] * b)
                    .sum::<f64>()
        })
        .collect();
    let (a, d) = sample.fe.two_way_effects(&r)?;
    let intercept = a[0] + d[0];
    Ok(Estimate {
        coef: fit.coef,
        se,
        intercept,
        alpha: sample
            .units
            .iter()
            .cloned()
            .zip(a.iter().map(|x| x - a[0]))
            .collect(),
        delta: sample
            .periods
            .iter()
            .copied()
            .zip(d.iter().map(|x| x - d[0]))
            .collect(),
    })
}

fn require_group_coverage(sample: &Sample, spec: &TreatmentSpec) -> Result<()> {
    let mut seen = [[false; 2]; 2];
    for k in 0..sample.y.len() {
        let g = spec.is_treated(sample.unit_of(k)) as usize;
        let p = (sample.period_of(k) >= spec.onset()) as usize;
        seen[g][p] = true;
    }
    if seen.iter().flatten().all(|s| *s) {
        Ok(())
    } else {
        Err(Error::NotIdentified(
            "need treated and control cells in both pre and post periods".into(),
        ))
    }
}

/// TWFE regression of the outcome on the treated × post indicator.
pub fn twfe_did(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
    weight_by_nobs: bool,
) -> Result<TwfeFit> {
    let sample = build_sample(
        panel,
        |u| spec.is_treated(u) || spec.controls().contains(u),
        weight_by_nobs,
    )?;
    require_group_coverage(&sample, spec)?;
    let w: Vec<f64> = (0..sample.y.len())
        .map(|k| {
            (spec.is_treated(sample.unit_of(k)) && sample.period_of(k) >= spec.onset()) as u8 as f64
        })
        .collect();
    let est = estimate(&sample, vec![w], &["treated x post".to_string()])?;
    Ok(TwfeFit {
        beta: est.coef[0],
        se_clustered: est.se[0],
        n_cells: sample.y.len(),
        n_clusters: sample.units.len(),
        intercept: est.intercept,
        alpha: est.alpha,
        delta: est.delta,
    })
}

/// One coefficient per month relative to onset, with month -1 as reference.
pub fn event_study(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
    weight_by_nobs: bool,
) -> Result<EventStudyFit> {
    let sample = build_sample(
        panel,
        |u| spec.is_treated(u) || spec.controls().contains(u),
        weight_by_nobs,
    )?;
    require_group_coverage(&sample, spec)?;
    let rel = |k: usize| sample.period_of(k).months_since(spec.onset());

    let mut ks: Vec<i64> = (0..sample.y.len())
        .filter(|&k| spec.is_treated(sample.unit_of(k)))
        .map(rel)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    if !ks.contains(&-1) {
        return Err(Error::NotIdentified(
            "reference month -1 has no treated cells".into(),
        ));
    }
    if ks.iter().filter(|&&k| k < 0).count() < 2 {
        return Err(Error::NotIdentified(
            "event study needs at least two pre-onset months".into(),
        ));
    }
    ks.retain(|&k| k != -1);

    let regressors: Vec<Vec<f64>> = ks
        .iter()
        .map(|&kk| {
            (0..sample.y.len())
                .map(|k| (spec.is_treated(sample.unit_of(k)) && rel(k) == kk) as u8 as f64)
                .collect()
        })
        .collect();
    let names: Vec<String> = ks.iter().map(|k| format!("k={k}")).collect();
    let est = estimate(&sample, regressors, &names)?;
    Ok(EventStudyFit {
        coefficients: ks
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                (
                    k,
                    EventCoefficient {
                        beta: est.coef[j],
                        se: est.se[j],
                    },
                )
            })
            .collect(),
        omitted_k: -1,
        n_cells: sample.y.len(),
        n_clusters: sample.units.len(),
    })
}

/// TWFE regression on exposure × post, using every panel unit.
pub fn continuous_did(
    panel: &PanelDataset,
    exposure: &BTreeMap<UnitId, f64>,
    onset: TimeIndex,
    weight_by_nobs: bool,
) -> Result<TwfeFit> {
    for u in panel.units() {
        if !exposure.contains_key(u) {
            return Err(Error::Invalid(format!("no exposure value for unit `{u}`")));
        }
    }
    let first = panel.periods().first().copied();
    let last = panel.periods().last().copied();
    if !(first.is_some_and(|p| p < onset) && last.is_some_and(|p| p >= onset)) {
        return Err(Error::Invalid(format!(
            "onset {onset} must leave at least one pre and one post period"
        )));
    }
    let values = panel.units().iter().map(|u| exposure[u]);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if !(hi > lo) {
        return Err(Error::NotIdentified("exposure has zero variance".into()));
    }

    let sample = build_sample(panel, |_| true, weight_by_nobs)?;
    let x: Vec<f64> = (0..sample.y.len())
        .map(|k| {
            if sample.period_of(k) >= onset {
                exposure[sample.unit_of(k)]
            } else {
                0.0
            }
        })
        .collect();
    let est = estimate(&sample, vec![x], &["exposure x post".to_string()])?;
    Ok(TwfeFit {
        beta: est.coef[0],
        se_clustered: est.se[0],
        n_cells: sample.y.len(),
        n_clusters: sample.units.len(),
        intercept: est.intercept,
        alpha: est.alpha,
        delta: est.delta,
    })
}
