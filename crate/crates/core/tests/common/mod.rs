#![allow(dead_code)]

use std::collections::BTreeSet;

use llmpanel_core::{PanelCell, PanelDataset, TimeIndex, TreatmentSpec, UnitId};

pub fn u(s: &str) -> UnitId {
    UnitId::new(s).unwrap()
}

pub fn set(xs: &[&str]) -> BTreeSet<UnitId> {
    xs.iter().map(|s| u(s)).collect()
}

/// Balanced panel from rows of values starting at `start`, all n_obs = 1.
pub fn grid(rows: &[(&str, Vec<f64>)], start: TimeIndex) -> PanelDataset {
    let cells: Vec<_> = rows
        .iter()
        .flat_map(|(code, vals)| {
            vals.iter().enumerate().map(move |(k, &v)| {
                (
                    u(code),
                    start.add_months(k as i64),
                    PanelCell::new(v, 1).unwrap(),
                )
            })
        })
        .collect();
    PanelDataset::from_cells("y", cells).unwrap()
}

pub fn spec(
    p: &PanelDataset,
    treated: &[&str],
    controls: &[&str],
    onset: TimeIndex,
) -> TreatmentSpec {
    TreatmentSpec::new(p, set(treated), set(controls), onset).unwrap()
}
