//! CSV readers and writers for every on-disk format.
//!
//! Readers check the header exactly and report the line and column of the
//! first malformed field. Writers format floats with 6 significant digits and
//! emit rows in (unit, period) order so reruns are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exposure::{Classification, ExposureScore, ExposureVariant, TaskRecord};
use crate::ingest::{DeflatorSeries, EmpStat, MicroRecord};
use crate::panel::{PanelCell, PanelDataset, TimeIndex, UnitId};

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

struct Rows<R: Read> {
    reader: csv::Reader<R>,
    header: &'static [&'static str],
}

impl<R: Read> Rows<R> {
    fn new(input: R, header: &'static [&'static str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let found = reader.headers().map_err(Error::csv)?.clone();
        let found: Vec<&str> = found.iter().collect();
        if found != header {
            return Err(Error::Csv {
                line: 1,
                column: None,
                message: format!(
                    "expected header `{}`, found `{}`",
                    header.join(","),
                    found.join(",")
                ),
            });
        }
        Ok(Rows { reader, header })
    }

    fn for_each(mut self, mut f: impl FnMut(&Row<'_>) -> Result<()>) -> Result<()> {
        let mut rec = csv::StringRecord::new();
        while self.reader.read_record(&mut rec).map_err(Error::csv)? {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            f(&Row {
                rec: &rec,
                line,
                header: self.header,
            })?;
        }
        Ok(())
    }
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    line: u64,
    header: &'static [&'static str],
}

impl Row<'_> {
    fn raw(&self, col: usize) -> &str {
        self.rec.get(col).unwrap_or("")
    }

    fn err(&self, col: usize, message: impl Into<String>) -> Error {
        Error::Csv {
            line: self.line,
            column: Some(self.header[col].to_string()),
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self, col: usize) -> Result<T> {
        let s = self.raw(col);
        s.parse()
            .map_err(|_| self.err(col, format!("cannot parse `{s}`")))
    }

    fn unit(&self, col: usize) -> Result<UnitId> {
        UnitId::new(self.raw(col)).map_err(|e| self.err(col, e.to_string()))
    }

    fn period(&self, year_col: usize) -> Result<TimeIndex> {
        let year: i32 = self.parse(year_col)?;
        let month: u32 = self.parse(year_col + 1)?;
        TimeIndex::new(year, month).map_err(|e| self.err(year_col + 1, e.to_string()))
    }

    fn with<T>(&self, col: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            e @ Error::Csv { .. } => e,
            other => self.err(col, other.to_string()),
        })
    }
}

pub const PANEL_HEADER: &[&str] = &["unit", "year", "month", "value", "n_obs"];

pub fn read_panel_csv<R: Read>(input: R, outcome_label: &str) -> Result<PanelDataset> {
    let mut cells = vec![];
    let mut seen = BTreeSet::new();
    Rows::new(input, PANEL_HEADER)?.for_each(|row| {
        let unit = row.unit(0)?;
        let period = row.period(1)?;
        let value: f64 = row.parse(3)?;
        let n_obs: u32 = row.parse(4)?;
        let cell = row.with(3, PanelCell::new(value, n_obs))?;
        if !seen.insert((unit.clone(), period)) {
            return Err(row.err(0, format!("duplicate cell ({unit}, {period})")));
        }
        cells.push((unit, period, cell));
        Ok(())
    })?;
    PanelDataset::from_cells(outcome_label, cells)
}

pub fn write_panel_csv<W: Write>(out: W, panel: &PanelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PANEL_HEADER).map_err(Error::csv)?;
    for (u, t, c) in panel.iter_cells() {
        w.write_record([
            u.as_str(),
            &t.year().to_string(),
            &t.month().to_string(),
            &fmt_g6(c.value),
            &c.n_obs.to_string(),
        ])
        .map_err(Error::csv)?;
    }
    w.flush()?;
    Ok(())
}

pub const TASK_HEADER: &[&str] = &["occupation", "task_id", "prompt_share", "classification"];

pub fn read_tasks_csv<R: Read>(input: R) -> Result<Vec<TaskRecord>> {
    let mut out = vec![];
    Rows::new(input, TASK_HEADER)?.for_each(|row| {
        let prompt_share: f64 = row.parse(2)?;
        if !(prompt_share >= 0.0) {
            return Err(row.err(2, "prompt_share must be nonnegative"));
        }
        out.push(TaskRecord {
            occupation: row.unit(0)?,
            task_id: row.raw(1).to_string(),
            prompt_share,
            classification: row.with(3, Classification::from_str(row.raw(3)))?,
        });
        Ok(())
    })?;
    Ok(out)
}

pub const MICRO_HEADER: &[&str] = &["occupation", "year", "month", "empstat", "weekly_earnings"];

pub fn read_micro_csv<R: Read>(input: R) -> Result<Vec<MicroRecord>> {
    let mut out = vec![];
    Rows::new(input, MICRO_HEADER)?.for_each(|row| {
        let weekly_earnings = if row.raw(4).is_empty() {
            None
        } else {
            let e: f64 = row.parse(4)?;
            if !(e >= 0.0) {
                return Err(row.err(4, "earnings must be nonnegative"));
            }
            Some(e)
        };
        out.push(MicroRecord {
            occupation: row.unit(0)?,
            period: row.period(1)?,
            empstat: row.with(3, EmpStat::from_str(row.raw(3)))?,
            weekly_earnings,
        });
        Ok(())
    })?;
    Ok(out)
}

pub const DEFLATOR_HEADER: &[&str] = &["year", "month", "index"];

pub fn read_deflator_csv<R: Read>(input: R) -> Result<DeflatorSeries> {
    let mut map = BTreeMap::new();
    Rows::new(input, DEFLATOR_HEADER)?.for_each(|row| {
        let t = row.period(0)?;
        let v: f64 = row.parse(2)?;
        if map.insert(t, v).is_some() {
            return Err(row.err(0, format!("duplicate period {t}")));
        }
        Ok(())
    })?;
    DeflatorSeries::new(map)
}

pub const TREATMENT_HEADER: &[&str] = &["unit", "group"];

/// Treated and control sets from `unit,group` rows with group in {treated, control}.
pub fn read_treatment_csv<R: Read>(input: R) -> Result<(BTreeSet<UnitId>, BTreeSet<UnitId>)> {
    let (mut treated, mut controls) = (BTreeSet::new(), BTreeSet::new());
    Rows::new(input, TREATMENT_HEADER)?.for_each(|row| {
        let u = row.unit(0)?;
        let fresh = match row.raw(1) {
            "treated" => !controls.contains(&u) && treated.insert(u),
            "control" => !treated.contains(&u) && controls.insert(u),
            other => return Err(row.err(1, format!("group `{other}` not in {{treated,control}}"))),
        };
        if !fresh {
            return Err(row.err(0, "unit listed more than once"));
        }
        Ok(())
    })?;
    Ok((treated, controls))
}

pub fn write_treatment_csv<W: Write>(
    out: W,
    treated: &BTreeSet<UnitId>,
    controls: &BTreeSet<UnitId>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TREATMENT_HEADER).map_err(Error::csv)?;
    let mut rows: Vec<(&UnitId, &str)> = treated.iter().map(|u| (u, "treated")).collect();
    rows.extend(controls.iter().map(|u| (u, "control")));
    rows.sort();
    for (u, g) in rows {
        w.write_record([u.as_str(), g]).map_err(Error::csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Exposure table: scores, then a quartile and treated flag per variant.
pub fn write_exposure_csv<W: Write>(
    out: W,
    scores: &[ExposureScore],
    quartiles: &BTreeMap<ExposureVariant, BTreeMap<UnitId, u8>>,
    treated: &BTreeMap<ExposureVariant, BTreeSet<UnitId>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "occupation",
        "overall",
        "automative",
        "augmentative",
        "n_tasks",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for v in ExposureVariant::ALL {
        header.push(format!("quartile_{v}"));
        header.push(format!("treated_{v}"));
    }
    w.write_record(&header).map_err(Error::csv)?;
    for s in scores {
        let mut row = vec![
            s.occupation.to_string(),
            fmt_g6(s.overall),
            fmt_g6(s.automative),
            fmt_g6(s.augmentative),
            s.n_tasks.to_string(),
        ];
        for v in ExposureVariant::ALL {
            row.push(quartiles[&v][&s.occupation].to_string());
            row.push((treated[&v].contains(&s.occupation) as u8).to_string());
        }
        w.write_record(&row).map_err(Error::csv)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `unit,value` exposure map, as consumed by the continuous DiD.
pub fn read_exposure_map<R: Read>(
    input: R,
    variant: ExposureVariant,
) -> Result<BTreeMap<UnitId, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(Error::csv)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv {
                line: 1,
                column: Some(name.to_string()),
                message: "column missing".into(),
            })
    };
    let occ = col("occupation")?;
    let val = col(variant.name())?;
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(Error::csv)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let unit = UnitId::new(rec.get(occ).unwrap_or("")).map_err(|e| Error::Csv {
            line,
            column: Some("occupation".into()),
            message: e.to_string(),
        })?;
        let raw = rec.get(val).unwrap_or("");
        let x: f64 = raw.parse().map_err(|_| Error::Csv {
            line,
            column: Some(variant.name().into()),
            message: format!("cannot parse `{raw}`"),
        })?;
        out.insert(unit, x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(1500.0), "1500");
        assert_eq!(fmt_g6(0.05), "0.05");
        assert_eq!(fmt_g6(2.0 / 3.0), "0.666667");
        assert_eq!(fmt_g6(-95.6531), "-95.6531");
        assert_eq!(fmt_g6(123456789.0), "1.23457e+08");
        assert_eq!(fmt_g6(0.0000123), "1.23e-05");
        assert_eq!(fmt_g6(999999.5), "1e+06");
        assert_eq!(fmt_g6(100000.0), "100000");
    }

    #[test]
    fn panel_roundtrip() {
        let csv = "unit,year,month,value,n_obs\nb,2022,12,3.5,2\na,2022,11,1,4\na,2022,12,2,7\n";
        let p = read_panel_csv(csv.as_bytes(), "y").unwrap();
        assert_eq!(p.n_cells(), 3);
        let mut out = vec![];
        write_panel_csv(&mut out, &p).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "unit,year,month,value,n_obs\na,2022,11,1,4\na,2022,12,2,7\nb,2022,12,3.5,2\n"
        );
    }

    #[test]
    fn malformed_rows_report_position() {
        let bad = "unit,year,month,value,n_obs\na,2022,11,1,4\na,2022,13,2,7\n";
        let e = read_panel_csv(bad.as_bytes(), "y").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("month"), "{e}");

        let bad = "unit,year,month,value,n_obs\na,2022,11,abc,4\n";
        let e = read_panel_csv(bad.as_bytes(), "y").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("value"), "{e}");

        let e = read_panel_csv("unit,value\n".as_bytes(), "y")
            .unwrap_err()
            .to_string();
        assert!(e.contains("expected header"), "{e}");

        let e = read_micro_csv(
            "occupation,year,month,empstat,weekly_earnings\nx,2020,1,retired,\n".as_bytes(),
        )
        .unwrap_err()
        .to_string();
        assert!(e.contains("empstat"), "{e}");
    }

    #[test]
    fn micro_blank_earnings() {
        let csv = "occupation,year,month,empstat,weekly_earnings\nx,2020,1,employed,\nx,2020,1,employed,950.5\n";
        let r = read_micro_csv(csv.as_bytes()).unwrap();
        assert_eq!(r[0].weekly_earnings, None);
        assert_eq!(r[1].weekly_earnings, Some(950.5));
    }

    #[test]
    fn treatment_file() {
        let csv = "unit,group\nb,control\na,treated\n";
        let (t, c) = read_treatment_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(c.len(), 1);
        let mut out = vec![];
        write_treatment_csv(&mut out, &t, &c).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "unit,group\na,treated\nb,control\n"
        );
        assert!(read_treatment_csv("unit,group\na,treated\na,control\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn g6_keeps_six_significant_digits(x in -1e12f64..1e12) {
            let s = fmt_g6(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= 5e-6 * x.abs().max(1e-300));
        }
    }
}
