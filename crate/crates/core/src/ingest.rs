//! Aggregation of person-month micro records into occupation-month panels.
//!
//! No survey sampling weights are applied. Each cell keeps the count of
//! records behind it in `n_obs`, which the estimators use as analytic weights.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{PanelCell, PanelDataset, TimeIndex, UnitId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EmpStat {
    Employed,
    Unemployed,
    Nilf,
}

impl FromStr for EmpStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "employed" => Ok(EmpStat::Employed),
            "unemployed" => Ok(EmpStat::Unemployed),
            "nilf" => Ok(EmpStat::Nilf),
            other => Err(Error::Invalid(format!(
                "empstat `{other}` not in {{employed,unemployed,nilf}}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroRecord {
    pub occupation: UnitId,
    pub period: TimeIndex,
    pub empstat: EmpStat,
    /// Nominal weekly earnings; present only for earnings-eligible records.
    pub weekly_earnings: Option<f64>,
}

/// Price index by month, normalized to 1 in January 2010.
#[derive(Debug, Clone)]
pub struct DeflatorSeries {
    index: BTreeMap<TimeIndex, f64>,
}

impl DeflatorSeries {
    pub fn base_period() -> TimeIndex {
        TimeIndex::new(2010, 1).unwrap()
    }

    pub fn new(index: BTreeMap<TimeIndex, f64>) -> Result<Self> {
        if let Some((t, v)) = index.iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "deflator value {v} at {t} must be positive"
            )));
        }
        match index.get(&Self::base_period()) {
            Some(v) if (v - 1.0).abs() <= 1e-9 => {}
            Some(v) => {
                return Err(Error::Invalid(format!(
                    "deflator base period {} must equal 1, found {v}",
                    Self::base_period()
                )))
            }
            None => {
                return Err(Error::Invalid(format!(
                    "deflator series missing base period {}",
                    Self::base_period()
                )))
            }
        }
        Ok(DeflatorSeries { index })
    }

    pub fn get(&self, period: TimeIndex) -> Result<f64> {
        self.index
            .get(&period)
            .copied()
            .ok_or(Error::MissingDeflator(period))
    }
}

/// Top-code rule: fixed threshold before the cutover, mass-point-at-maximum heuristic after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopcodeRegime {
    pub cutover: TimeIndex,
    pub fixed_threshold: f64,
}

impl Default for TopcodeRegime {
    fn default() -> Self {
        TopcodeRegime {
            cutover: TimeIndex::new(2024, 4).unwrap(),
            fixed_threshold: 2884.0,
        }
    }
}

type CellKey = (UnitId, TimeIndex);

/// Unemployed / labor force per cell. Cells with no labor-force records are omitted.
pub fn aggregate_unemployment(records: &[MicroRecord]) -> Result<PanelDataset> {
    let mut counts: BTreeMap<CellKey, (u32, u32)> = BTreeMap::new();
    for r in records {
        let slot = match r.empstat {
            EmpStat::Nilf => continue,
            _ => counts.entry((r.occupation.clone(), r.period)).or_default(),
        };
        match r.empstat {
            EmpStat::Employed => slot.0 += 1,
            EmpStat::Unemployed => slot.1 += 1,
            EmpStat::Nilf => unreachable!(),
        }
    }
    let cells = counts
        .into_iter()
        .map(|((unit, period), (emp, unemp))| {
            let lf = emp + unemp;
            PanelCell::new(unemp as f64 / lf as f64, lf).map(|c| (unit, period, c))
        })
        .collect::<Result<Vec<_>>>()?;
    PanelDataset::from_cells("unemployment_rate", cells)
}

/// Unweighted mean of deflated weekly earnings per cell.
pub fn aggregate_earnings(
    records: &[MicroRecord],
    deflator: &DeflatorSeries,
) -> Result<PanelDataset> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let Some(nominal) = r.weekly_earnings else {
            continue;
        };
        if !(nominal >= 0.0) || !nominal.is_finite() {
            return Err(Error::Invalid(format!(
                "negative or non-finite earnings {nominal} for ({}, {})",
                r.occupation, r.period
            )));
        }
        let idx = deflator.get(r.period)?;
        groups
            .entry((r.occupation.clone(), r.period))
            .or_default()
            .push(nominal / idx);
    }
    let cells = groups
        .into_iter()
        .map(|((unit, period), mut real)| {
            // summation order fixed so the mean does not depend on input order
            real.sort_by(f64::total_cmp);
            let mean = real.iter().sum::<f64>() / real.len() as f64;
            PanelCell::new(mean, real.len() as u32).map(|c| (unit, period, c))
        })
        .collect::<Result<Vec<_>>>()?;
    PanelDataset::from_cells("real_weekly_earnings", cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopcodeReport {
    /// One flag per input record, in input order.
    pub flags: Vec<bool>,
    /// Flagged share of earnings records per cell.
    pub cell_share: BTreeMap<(UnitId, TimeIndex), f64>,
}

/// Flags top-coded earnings records. Diagnostic only; values are never adjusted.
pub fn flag_topcoded(records: &[MicroRecord], regime: &TopcodeRegime) -> TopcodeReport {
    // post-cutover codes are a period-wide mean of top earners, so look for a
    // repeated maximum within each period
    let mut period_max: HashMap<TimeIndex, (f64, usize)> = HashMap::new();
    for r in records {
        if let Some(e) = r.weekly_earnings {
            if r.period >= regime.cutover {
                let entry = period_max.entry(r.period).or_insert((e, 0));
                if e > entry.0 {
                    *entry = (e, 1);
                } else if e == entry.0 {
                    entry.1 += 1;
                }
            }
        }
    }

    let mut tallies: BTreeMap<CellKey, (usize, usize)> = BTreeMap::new();
    let flags = records
        .iter()
        .map(|r| {
            let Some(e) = r.weekly_earnings else {
                return false;
            };
            let flagged = if r.period < regime.cutover {
                e >= regime.fixed_threshold
            } else {
                let (max, count) = period_max[&r.period];
                e == max && count >= 2
            };
            let t = tallies.entry((r.occupation.clone(), r.period)).or_default();
            t.0 += flagged as usize;
            t.1 += 1;
            flagged
        })
        .collect();

    TopcodeReport {
        flags,
        cell_share: tallies
            .into_iter()
            .map(|(k, (f, n))| (k, f as f64 / n as f64))
            .collect(),
    }
}
