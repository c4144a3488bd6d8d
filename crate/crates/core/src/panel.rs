//! Unit-by-period panels of outcome observations.
//!
//! A [`PanelDataset`] is a rectangular grid of units and calendar months in
//! which any cell may be absent. Absence means "no data", never zero. Units are
//! kept in lexicographic order and periods in calendar order so every
//! downstream estimator iterates the panel deterministically.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Opaque unit identifier (a Census occupation code in practice).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(String);

impl UnitId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let trimmed = code.trim();
        if trimmed.is_empty() {
            return Err(Error::Invalid("unit id must be non-empty".into()));
        }
        Ok(UnitId(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for UnitId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

/// Calendar month, ordered by `(year, month)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeIndex {
    year: i32,
    month: u8,
}

impl TimeIndex {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Invalid(format!("month {month} outside 1..12")));
        }
        Ok(TimeIndex {
            year,
            month: month as u8,
        })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month as u32
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    /// Signed number of months from `origin` to `self`.
    pub fn months_since(self, origin: TimeIndex) -> i64 {
        self.ordinal() - origin.ordinal()
    }

    pub fn add_months(self, n: i64) -> TimeIndex {
        let o = self.ordinal() + n;
        TimeIndex {
            year: o.div_euclid(12) as i32,
            month: (o.rem_euclid(12) + 1) as u8,
        }
    }

    /// First treated month: December 2022.
    pub fn default_onset() -> TimeIndex {
        TimeIndex {
            year: 2022,
            month: 12,
        }
    }
}

impl fmt::Display for TimeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for TimeIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u32>().map_err(|_| bad())?;
        TimeIndex::new(year, month)
    }
}

impl Serialize for TimeIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TimeIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One observed panel cell: the outcome and the number of micro records behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PanelCell {
    pub value: f64,
    pub n_obs: u32,
}

impl PanelCell {
    pub fn new(value: f64, n_obs: u32) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Invalid(format!("non-finite cell value {value}")));
        }
        if n_obs == 0 {
            return Err(Error::Invalid("present cell must have n_obs >= 1".into()));
        }
        Ok(PanelCell { value, n_obs })
    }
}

/// Possibly unbalanced unit × period grid.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    outcome_label: String,
    units: Vec<UnitId>,
    periods: Vec<TimeIndex>,
    unit_pos: HashMap<UnitId, usize>,
    // row-major: unit * n_periods + period
    cells: Vec<Option<PanelCell>>,
}

impl PanelDataset {
    /// Builds a panel whose units and periods are exactly those appearing in `cells`.
    pub fn from_cells<I>(outcome_label: impl Into<String>, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (UnitId, TimeIndex, PanelCell)>,
    {
        let cells: Vec<_> = cells.into_iter().collect();
        let units: BTreeSet<UnitId> = cells.iter().map(|(u, _, _)| u.clone()).collect();
        let periods: BTreeSet<TimeIndex> = cells.iter().map(|(_, t, _)| *t).collect();
        Self::with_grid(
            outcome_label,
            units.into_iter().collect(),
            periods.into_iter().collect(),
            cells,
        )
    }

    /// Builds a panel on an explicit grid; every cell key must reference a listed unit and period.
    pub fn with_grid<I>(
        outcome_label: impl Into<String>,
        mut units: Vec<UnitId>,
        mut periods: Vec<TimeIndex>,
        cells: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (UnitId, TimeIndex, PanelCell)>,
    {
        units.sort();
        let n_units = units.len();
        units.dedup();
        if units.len() != n_units {
            return Err(Error::Invalid("duplicate unit ids".into()));
        }
        periods.sort();
        let n_periods = periods.len();
        periods.dedup();
        if periods.len() != n_periods {
            return Err(Error::Invalid("duplicate periods".into()));
        }
        let unit_pos: HashMap<UnitId, usize> = units
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let mut grid = vec![None; n_units * n_periods];
        for (unit, period, cell) in cells {
            let ui = *unit_pos
                .get(&unit)
                .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
            let ti = periods
                .binary_search(&period)
                .map_err(|_| Error::Invalid(format!("cell period {period} not in panel")))?;
            let slot = &mut grid[ui * n_periods + ti];
            if slot.is_some() {
                return Err(Error::Invalid(format!("duplicate cell ({unit}, {period})")));
            }
            *slot = Some(cell);
        }
        Ok(PanelDataset {
            outcome_label: outcome_label.into(),
            units,
            periods,
            unit_pos,
            cells: grid,
        })
    }

    pub fn outcome_label(&self) -> &str {
        &self.outcome_label
    }

    pub fn units(&self) -> &[UnitId] {
        &self.units
    }

    pub fn periods(&self) -> &[TimeIndex] {
        &self.periods
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn unit_index(&self, unit: &UnitId) -> Option<usize> {
        self.unit_pos.get(unit).copied()
    }

    pub fn period_index(&self, period: TimeIndex) -> Option<usize> {
        self.periods.binary_search(&period).ok()
    }

    pub fn cell_at(&self, unit_idx: usize, period_idx: usize) -> Option<&PanelCell> {
        self.cells[unit_idx * self.periods.len() + period_idx].as_ref()
    }

    pub fn cell(&self, unit: &UnitId, period: TimeIndex) -> Option<&PanelCell> {
        let ui = self.unit_index(unit)?;
        let ti = self.period_index(period)?;
        self.cell_at(ui, ti)
    }

    /// Outcome value, or `MissingCell` if absent.
    pub fn value(&self, unit: &UnitId, period: TimeIndex) -> Result<f64> {
        self.cell(unit, period)
            .map(|c| c.value)
            .ok_or_else(|| Error::MissingCell {
                unit: unit.to_string(),
                period,
            })
    }

    /// All present cells in (unit, period) order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (&UnitId, TimeIndex, &PanelCell)> + '_ {
        let np = self.periods.len();
        self.cells.iter().enumerate().filter_map(move |(k, c)| {
            c.as_ref()
                .map(|cell| (&self.units[k / np], self.periods[k % np], cell))
        })
    }

    /// Periods in which `unit` has a cell.
    pub fn observed_periods(&self, unit: &UnitId) -> Result<Vec<TimeIndex>> {
        let ui = self
            .unit_index(unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
        Ok((0..self.periods.len())
            .filter(|&ti| self.cell_at(ui, ti).is_some())
            .map(|ti| self.periods[ti])
            .collect())
    }

    /// Same grid with every present cell passed through `f`.
    pub fn map_cells<F>(&self, mut f: F) -> Result<PanelDataset>
    where
        F: FnMut(&UnitId, TimeIndex, &PanelCell) -> PanelCell,
    {
        let cells: Vec<_> = self
            .iter_cells()
            .map(|(u, t, c)| {
                let c = f(u, t, c);
                PanelCell::new(c.value, c.n_obs).map(|c| (u.clone(), t, c))
            })
            .collect::<Result<_>>()?;
        PanelDataset::with_grid(
            self.outcome_label.clone(),
            self.units.clone(),
            self.periods.clone(),
            cells,
        )
    }

    fn require_unit(&self, unit: &UnitId) -> Result<usize> {
        self.unit_index(unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))
    }
}

/// Treated set, control set and the first treated period.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentSpec {
    treated: BTreeSet<UnitId>,
    controls: BTreeSet<UnitId>,
    onset: TimeIndex,
}

impl TreatmentSpec {
    pub fn new(
        panel: &PanelDataset,
        treated: BTreeSet<UnitId>,
        controls: BTreeSet<UnitId>,
        onset: TimeIndex,
    ) -> Result<Self> {
        if let Some(u) = treated.intersection(&controls).next() {
            return Err(Error::Invalid(format!(
                "unit `{u}` is both treated and control"
            )));
        }
        for u in treated.iter().chain(&controls) {
            panel.require_unit(u)?;
        }
        let periods = panel.periods();
        let has_pre = periods.first().is_some_and(|&p| p < onset);
        let has_post = periods.last().is_some_and(|&p| p >= onset);
        if !has_pre || !has_post {
            return Err(Error::Invalid(format!(
                "onset {onset} must leave at least one pre and one post period in the panel"
            )));
        }
        Ok(TreatmentSpec {
            treated,
            controls,
            onset,
        })
    }

    pub fn treated(&self) -> &BTreeSet<UnitId> {
        &self.treated
    }

    pub fn controls(&self) -> &BTreeSet<UnitId> {
        &self.controls
    }

    pub fn onset(&self) -> TimeIndex {
        self.onset
    }

    pub fn is_treated(&self, unit: &UnitId) -> bool {
        self.treated.contains(unit)
    }
}

/// True iff every listed unit has a cell in every panel period.
pub fn check_balanced<'a, I>(panel: &PanelDataset, units: I) -> Result<bool>
where
    I: IntoIterator<Item = &'a UnitId>,
{
    let mut balanced = true;
    for unit in units {
        let ui = panel.require_unit(unit)?;
        if balanced {
            balanced = (0..panel.n_periods()).all(|ti| panel.cell_at(ui, ti).is_some());
        }
    }
    Ok(balanced)
}

/// Controls observed in every period in which `treated_unit` is observed.
pub fn donor_pool_for(
    panel: &PanelDataset,
    treated_unit: &UnitId,
    spec: &TreatmentSpec,
) -> Result<Vec<UnitId>> {
    if !spec.is_treated(treated_unit) {
        return Err(Error::Invalid(format!(
            "unit `{treated_unit}` is not in the treated set"
        )));
    }
    let ti_observed: Vec<usize> = {
        let ui = panel.require_unit(treated_unit)?;
        (0..panel.n_periods())
            .filter(|&ti| panel.cell_at(ui, ti).is_some())
            .collect()
    };
    let n_pre = ti_observed
        .iter()
        .filter(|&&ti| panel.periods()[ti] < spec.onset())
        .count();
    if n_pre < 2 {
        return Err(Error::InsufficientPrePeriods {
            unit: treated_unit.to_string(),
            observed: n_pre,
        });
    }
    // controls are a BTreeSet, so output order is lexicographic
    Ok(spec
        .controls()
        .iter()
        .filter(|c| {
            let ci = panel.unit_index(c).expect("validated by TreatmentSpec");
            ti_observed
                .iter()
                .all(|&ti| panel.cell_at(ci, ti).is_some())
        })
        .cloned()
        .collect())
}

/// Splits the panel periods at the onset: pre is `t < onset`, post is `t >= onset`.
pub fn split_pre_post(
    panel: &PanelDataset,
    spec: &TreatmentSpec,
) -> (Vec<TimeIndex>, Vec<TimeIndex>) {
    panel.periods().iter().partition(|&&t| t < spec.onset())
}
