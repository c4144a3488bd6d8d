//! Occupation exposure scores built from task-level prompt shares.
//!
//! An occupation's exposure is the fraction of its tasks with any associated
//! prompts. The automative and augmentative variants count only prompted tasks
//! carrying that classification, over the same task denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::UnitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Automative,
    Augmentative,
    Neither,
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "automative" => Ok(Classification::Automative),
            "augmentative" => Ok(Classification::Augmentative),
            "neither" => Ok(Classification::Neither),
            other => Err(Error::Invalid(format!(
                "classification `{other}` not in {{automative,augmentative,neither}}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub occupation: UnitId,
    pub task_id: String,
    pub prompt_share: f64,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureScore {
    pub occupation: UnitId,
    pub overall: f64,
    pub automative: f64,
    pub augmentative: f64,
    pub n_tasks: usize,
}

/// Which exposure measure drives a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureVariant {
    Overall,
    Automative,
    Augmentative,
}

impl ExposureVariant {
    pub const ALL: [ExposureVariant; 3] = [
        ExposureVariant::Overall,
        ExposureVariant::Automative,
        ExposureVariant::Augmentative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExposureVariant::Overall => "overall",
            ExposureVariant::Automative => "automative",
            ExposureVariant::Augmentative => "augmentative",
        }
    }
}

impl fmt::Display for ExposureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExposureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExposureVariant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::Invalid(format!("unknown exposure variant `{s}`")))
    }
}

impl ExposureScore {
    pub fn get(&self, variant: ExposureVariant) -> f64 {
        match variant {
            ExposureVariant::Overall => self.overall,
            ExposureVariant::Automative => self.automative,
            ExposureVariant::Augmentative => self.augmentative,
        }
    }
}

/// One score per occupation, in occupation order.
pub fn compute_exposure(tasks: &[TaskRecord]) -> Result<Vec<ExposureScore>> {
    #[derive(Default)]
    struct Counts {
        n: usize,
        prompted: usize,
        automative: usize,
        augmentative: usize,
    }

    let mut seen = BTreeSet::new();
    let mut by_occ: BTreeMap<&UnitId, Counts> = BTreeMap::new();
    for task in tasks {
        if !(task.prompt_share >= 0.0) || !task.prompt_share.is_finite() {
            return Err(Error::Invalid(format!(
                "task `{}` of `{}` has invalid prompt_share {}",
                task.task_id, task.occupation, task.prompt_share
            )));
        }
        if !seen.insert((&task.occupation, task.task_id.as_str())) {
            return Err(Error::Invalid(format!(
                "duplicate task `{}` for occupation `{}`",
                task.task_id, task.occupation
            )));
        }
        let c = by_occ.entry(&task.occupation).or_default();
        c.n += 1;
        if task.prompt_share > 0.0 {
            c.prompted += 1;
            match task.classification {
                Classification::Automative => c.automative += 1,
                Classification::Augmentative => c.augmentative += 1,
                Classification::Neither => {}
            }
        }
    }

    Ok(by_occ
        .into_iter()
        .map(|(occ, c)| {
            let n = c.n as f64;
            ExposureScore {
                occupation: occ.clone(),
                overall: c.prompted as f64 / n,
                automative: c.automative as f64 / n,
                augmentative: c.augmentative as f64 / n,
                n_tasks: c.n,
            }
        })
        .collect())
}

fn sorted_values(scores: &[ExposureScore], variant: ExposureVariant) -> Vec<f64> {
    let mut v: Vec<f64> = scores.iter().map(|s| s.get(variant)).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Linear-interpolation percentile over sorted data, `q` in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(scores: &[ExposureScore], variant: ExposureVariant) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("median of empty score list".into()));
    }
    Ok(percentile_sorted(&sorted_values(scores, variant), 0.5))
}

/// Treated = scores strictly above the median; controls = the rest.
pub fn binarize_above_median(
    scores: &[ExposureScore],
    variant: ExposureVariant,
) -> Result<(BTreeSet<UnitId>, BTreeSet<UnitId>)> {
    if scores.len() < 2 {
        return Err(Error::Invalid(
            "median split needs at least 2 occupations".into(),
        ));
    }
    let m = median(scores, variant)?;
    let (treated, controls): (Vec<_>, Vec<_>) = scores.iter().partition(|s| s.get(variant) > m);
    Ok((
        treated.into_iter().map(|s| s.occupation.clone()).collect(),
        controls.into_iter().map(|s| s.occupation.clone()).collect(),
    ))
}

/// Quartile 1..=4 per occupation; a score equal to a cutpoint goes to the lower bin.
pub fn quartile_bins(
    scores: &[ExposureScore],
    variant: ExposureVariant,
) -> Result<BTreeMap<UnitId, u8>> {
    if scores.len() < 4 {
        return Err(Error::Invalid(format!(
            "quartile bins need at least 4 occupations, got {}",
            scores.len()
        )));
    }
    let sorted = sorted_values(scores, variant);
    let cuts = [0.25, 0.5, 0.75].map(|q| percentile_sorted(&sorted, q));
    Ok(scores
        .iter()
        .map(|s| {
            let x = s.get(variant);
            let bin = 1 + cuts.iter().filter(|&&c| x > c).count() as u8;
            (s.occupation.clone(), bin)
        })
        .collect())
}
