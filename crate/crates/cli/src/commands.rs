use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use llmpanel_core::exposure::{
    binarize_above_median, compute_exposure, quartile_bins, ExposureScore,
};
use llmpanel_core::ingest::{aggregate_earnings, aggregate_unemployment, flag_topcoded};
use llmpanel_core::io::{self, fmt_g6};
use llmpanel_core::sdid::BootstrapMode;
use llmpanel_core::simlab::{compare_rmse, monte_carlo, Estimator, McOptions};
use llmpanel_core::{
    continuous_did, event_study, sdid_per_unit, twfe_did, FactorDgpConfig, PanelDataset,
    SdidConfig, SolverOptions, TopcodeRegime, TreatmentSpec, TwfeFit,
};

use crate::manifest::Run;
use crate::{
    BootstrapArg, Cli, Command, DidArgs, EventStudyArgs, ExposureArgs, IngestArgs, PanelArgs,
    SdidArgs, SimulateArgs,
};

const Z95: f64 = 1.959963984540054;

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Ingest(a) => ingest(out, a),
        Command::Exposure(a) => exposure(out, a),
        Command::Did(a) => did(out, a),
        Command::EventStudy(a) => es(out, a),
        Command::Sdid(a) => sdid(out, a),
        Command::Simulate(a) => simulate(out, a),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("LLMPANEL_THREADS") {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .with_context(|| format!("LLMPANEL_THREADS=`{s}` is not a count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            bail!("thread count must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = vec![];
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header)?;
        fill(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

fn outcome_label(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "value".into(), |s| s.to_string_lossy().into_owned())
}

fn load_panel(run: &mut Run, path: &Path) -> Result<PanelDataset> {
    let bytes = run.read_input(path)?;
    io::read_panel_csv(bytes.as_slice(), &outcome_label(path))
        .with_context(|| format!("in {}", path.display()))
}

fn load_spec(
    run: &mut Run,
    panel: &PanelDataset,
    path: &Path,
    onset: llmpanel_core::TimeIndex,
) -> Result<TreatmentSpec> {
    let bytes = run.read_input(path)?;
    let (treated, controls) = io::read_treatment_csv(bytes.as_slice())
        .with_context(|| format!("in {}", path.display()))?;
    Ok(TreatmentSpec::new(panel, treated, controls, onset)?)
}

fn ingest(out: &Path, a: IngestArgs) -> Result<()> {
    let mut run = Run::new("ingest", out)?;
    run.param("topcode_cutover", a.topcode_cutover);
    run.param("topcode_threshold", a.topcode_threshold);
    let bytes = run.read_input(&a.micro)?;
    let records = io::read_micro_csv(bytes.as_slice())
        .with_context(|| format!("in {}", a.micro.display()))?;

    let mut buf = vec![];
    io::write_panel_csv(&mut buf, &aggregate_unemployment(&records)?)?;
    run.write_output("unemployment_rate.csv", &buf)?;

    if let Some(path) = &a.deflator {
        let bytes = run.read_input(path)?;
        let deflator = io::read_deflator_csv(bytes.as_slice())
            .with_context(|| format!("in {}", path.display()))?;
        let mut buf = vec![];
        io::write_panel_csv(&mut buf, &aggregate_earnings(&records, &deflator)?)?;
        run.write_output("real_weekly_earnings.csv", &buf)?;
    }

    let regime = TopcodeRegime {
        cutover: a.topcode_cutover,
        fixed_threshold: a.topcode_threshold,
    };
    let report = flag_topcoded(&records, &regime);
    let buf = csv_bytes(&["unit", "year", "month", "topcoded_share"], |w| {
        for ((unit, t), share) in &report.cell_share {
            w.write_record([
                unit.as_str(),
                &t.year().to_string(),
                &t.month().to_string(),
                &fmt_g6(*share),
            ])?;
        }
        Ok(())
    })?;
    run.write_output("topcode_cells.csv", &buf)?;
    run.finish()?;
    Ok(())
}

fn exposure(out: &Path, a: ExposureArgs) -> Result<()> {
    let mut run = Run::new("exposure", out)?;
    run.param("variant", a.variant.name());
    let bytes = run.read_input(&a.tasks)?;
    let tasks = io::read_tasks_csv(bytes.as_slice())
        .with_context(|| format!("in {}", a.tasks.display()))?;
    let scores = compute_exposure(&tasks)?;
    // medians and quartiles are taken over every occupation in the task file
    run.param("n_occupations", scores.len());

    let mut quartiles = BTreeMap::new();
    let mut treated = BTreeMap::new();
    let mut chosen = None;
    for v in llmpanel_core::ExposureVariant::ALL {
        quartiles.insert(v, quartile_bins(&scores, v)?);
        let (t, c) = binarize_above_median(&scores, v)?;
        if v == a.variant {
            chosen = Some((t.clone(), c));
        }
        treated.insert(v, t);
    }
    let mut buf = vec![];
    io::write_exposure_csv(&mut buf, &scores, &quartiles, &treated)?;
    run.write_output("exposure_scores.csv", &buf)?;

    let (t, c) = chosen.expect("variant is one of ALL");
    let mut buf = vec![];
    io::write_treatment_csv(&mut buf, &t, &c)?;
    run.write_output("treatment.csv", &buf)?;

    if let Some(path) = &a.panel {
        let panel = load_panel(&mut run, path)?;
        let bins = &quartiles[&a.variant];
        run.write_output(
            "quartile_trends.csv",
            &quartile_trends(&panel, &scores, bins)?,
        )?;
    }
    run.finish()?;
    Ok(())
}

/// n_obs-weighted mean outcome per exposure quartile and month.
fn quartile_trends(
    panel: &PanelDataset,
    scores: &[ExposureScore],
    bins: &BTreeMap<llmpanel_core::UnitId, u8>,
) -> Result<Vec<u8>> {
    let scored: BTreeSet<_> = scores.iter().map(|s| &s.occupation).collect();
    let mut acc: BTreeMap<(u8, llmpanel_core::TimeIndex), (f64, f64, usize)> = BTreeMap::new();
    for (unit, t, cell) in panel.iter_cells() {
        if !scored.contains(unit) {
            continue;
        }
        let e = acc.entry((bins[unit], t)).or_default();
        e.0 += cell.value * cell.n_obs as f64;
        e.1 += cell.n_obs as f64;
        e.2 += 1;
    }
    csv_bytes(&["quartile", "year", "month", "mean", "n_units"], |w| {
        for ((q, t), (num, den, n)) in &acc {
            w.write_record([
                q.to_string(),
                t.year().to_string(),
                t.month().to_string(),
                fmt_g6(num / den),
                n.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn panel_params(run: &mut Run, a: &PanelArgs) {
    run.param("onset", a.onset);
    run.param("weight_by_nobs", !a.unweighted);
}

fn fit_json(fit: &TwfeFit) -> serde_json::Value {
    json!({
        "beta": fit.beta,
        "se_clustered": fit.se_clustered,
        "ci_lo": fit.beta - Z95 * fit.se_clustered,
        "ci_hi": fit.beta + Z95 * fit.se_clustered,
        "n_cells": fit.n_cells,
        "n_clusters": fit.n_clusters,
    })
}

fn did(out: &Path, a: DidArgs) -> Result<()> {
    if a.treatment.is_none() && a.exposure.is_none() {
        bail!("did needs --treatment, --exposure, or both");
    }
    let mut run = Run::new("did", out)?;
    panel_params(&mut run, &a.panel);
    let weighted = !a.panel.unweighted;
    let panel = load_panel(&mut run, &a.panel.panel)?;
    let mut report = serde_json::Map::new();
    report.insert("outcome".into(), json!(panel.outcome_label()));
    if let Some(path) = &a.treatment {
        let spec = load_spec(&mut run, &panel, path, a.panel.onset)?;
        let fit = twfe_did(&panel, &spec, weighted)?;
        report.insert("binary".into(), fit_json(&fit));
    }
    if let Some(path) = &a.exposure {
        run.param("variant", a.variant.name());
        let bytes = run.read_input(path)?;
        let exposure = io::read_exposure_map(bytes.as_slice(), a.variant)
            .with_context(|| format!("in {}", path.display()))?;
        let fit = continuous_did(&panel, &exposure, a.panel.onset, weighted)?;
        report.insert("continuous".into(), fit_json(&fit));
    }
    run.write_json("did.json", &report)?;
    run.finish()?;
    Ok(())
}

fn es(out: &Path, a: EventStudyArgs) -> Result<()> {
    let mut run = Run::new("event-study", out)?;
    panel_params(&mut run, &a.panel);
    let panel = load_panel(&mut run, &a.panel.panel)?;
    let spec = load_spec(&mut run, &panel, &a.treatment, a.panel.onset)?;
    let fit = event_study(&panel, &spec, !a.panel.unweighted)?;

    // the reference month is included as an exact zero so plots show the anchor
    let mut rows: BTreeMap<i64, (f64, f64)> = fit
        .coefficients
        .iter()
        .map(|(&k, c)| (k, (c.beta, c.se)))
        .collect();
    rows.insert(fit.omitted_k, (0.0, 0.0));
    let table: Vec<_> = rows
        .iter()
        .map(|(&k, &(beta, se))| {
            json!({"k": k, "beta": beta, "se": se, "ci_lo": beta - Z95 * se, "ci_hi": beta + Z95 * se})
        })
        .collect();
    run.write_json(
        "event_study.json",
        &json!({
            "outcome": panel.outcome_label(),
            "omitted_k": fit.omitted_k,
            "n_cells": fit.n_cells,
            "n_clusters": fit.n_clusters,
            "coefficients": table,
        }),
    )?;
    let buf = csv_bytes(&["k", "beta", "se", "ci_lo", "ci_hi"], |w| {
        for (&k, &(beta, se)) in &rows {
            w.write_record([
                k.to_string(),
                fmt_g6(beta),
                fmt_g6(se),
                fmt_g6(beta - Z95 * se),
                fmt_g6(beta + Z95 * se),
            ])?;
        }
        Ok(())
    })?;
    run.write_output("event_study.csv", &buf)?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct SdidSummary {
    att: f64,
    se_bootstrap: f64,
    n_boot: usize,
    n_fitted: usize,
    n_skipped: usize,
}

fn histogram(taus: &[(f64, f64)], bins: usize) -> Vec<(f64, f64, usize, f64)> {
    let lo = taus.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
    let hi = taus.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let total: f64 = taus.iter().map(|t| t.1).sum();
    let mut out: Vec<_> = (0..bins)
        .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, 0, 0.0))
        .collect();
    for &(tau, w) in taus {
        let b = (((tau - lo) / width) as usize).min(bins - 1);
        out[b].2 += 1;
        out[b].3 += w / total;
    }
    out
}

fn sdid(out: &Path, a: SdidArgs) -> Result<()> {
    if a.bins == 0 {
        bail!("--bins must be >= 1");
    }
    let mut run = Run::new("sdid", out)?;
    run.param("onset", a.onset);
    run.param("n_boot", a.nboot);
    run.param("seed", a.seed);
    run.param("bootstrap", format!("{:?}", a.bootstrap).to_lowercase());
    run.param("ridge", a.ridge);
    run.param("intercept", a.intercept);
    let panel = load_panel(&mut run, &a.panel)?;
    let spec = load_spec(&mut run, &panel, &a.treatment, a.onset)?;
    let config = SdidConfig {
        unit_weights: SolverOptions {
            ridge: a.ridge,
            intercept: a.intercept,
            ..SolverOptions::default()
        },
        time_weights: SolverOptions {
            intercept: a.intercept,
            ..SolverOptions::default()
        },
        n_boot: a.nboot,
        seed: a.seed,
        bootstrap: match a.bootstrap {
            BootstrapArg::Unit => BootstrapMode::UnitResample,
            BootstrapArg::Refit => BootstrapMode::Refit,
        },
    };
    let fit = sdid_per_unit(&panel, &spec, &config)?;

    run.write_json(
        "sdid_summary.json",
        &SdidSummary {
            att: fit.att,
            se_bootstrap: fit.se_bootstrap,
            n_boot: fit.n_boot,
            n_fitted: fit.unit_fits.len(),
            n_skipped: fit.skipped.len(),
        },
    )?;

    let mut rows: BTreeMap<&str, [String; 6]> = BTreeMap::new();
    for f in &fit.unit_fits {
        rows.insert(
            f.treated_unit.as_str(),
            [
                fmt_g6(f.tau),
                f.donor_count.to_string(),
                fmt_g6(f.omega.entropy()),
                fmt_g6(f.omega.objective),
                fmt_g6(f.n_obs_weight),
                String::new(),
            ],
        );
    }
    for (unit, reason) in &fit.skipped {
        let blank = String::new;
        rows.insert(
            unit.as_str(),
            [
                blank(),
                blank(),
                blank(),
                blank(),
                blank(),
                reason.code().to_string(),
            ],
        );
    }
    let header = [
        "unit",
        "tau",
        "donor_count",
        "omega_entropy",
        "objective_pre",
        "n_obs_weight",
        "skip_reason",
    ];
    let buf = csv_bytes(&header, |w| {
        for (unit, cols) in &rows {
            w.write_field(unit)?;
            w.write_record(cols)?;
        }
        Ok(())
    })?;
    run.write_output("sdid_units.csv", &buf)?;

    let taus: Vec<(f64, f64)> = fit
        .unit_fits
        .iter()
        .map(|f| (f.tau, f.n_obs_weight))
        .collect();
    let buf = csv_bytes(&["bin_lo", "bin_hi", "count", "weight_share"], |w| {
        for (lo, hi, n, share) in histogram(&taus, a.bins) {
            w.write_record([fmt_g6(lo), fmt_g6(hi), n.to_string(), fmt_g6(share)])?;
        }
        Ok(())
    })?;
    run.write_output("sdid_tau_hist.csv", &buf)?;
    run.finish()?;
    Ok(())
}

fn parse_config(text: &str) -> Result<FactorDgpConfig> {
    let mut cfg = FactorDgpConfig::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got `{line}`", n + 1);
        };
        cfg.set(k, v)
            .with_context(|| format!("config line {}", n + 1))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(out: &Path, a: SimulateArgs) -> Result<()> {
    let mut run = Run::new("simulate", out)?;
    let text = String::from_utf8(run.read_input(&a.config)?).context("config is not UTF-8")?;
    let cfg = parse_config(&text).with_context(|| format!("in {}", a.config.display()))?;
    let estimators: BTreeSet<Estimator> = a.estimators.iter().copied().collect();
    run.param("config", cfg);
    run.param("n_reps", a.reps);
    run.param("n_boot", a.nboot);
    run.param("estimators", &estimators);

    let opts = McOptions {
        sdid: SdidConfig {
            n_boot: a.nboot,
            ..SdidConfig::default()
        },
        ..McOptions::default()
    };
    let est: Vec<_> = estimators.iter().copied().collect();
    let report = monte_carlo(&cfg, a.reps, &est, &opts)?;
    let comparison = if estimators.len() == 2 {
        compare_rmse(&report, Estimator::Did, Estimator::Sdid).ok()
    } else {
        None
    };
    run.write_json(
        "simulate_report.json",
        &json!({
            "n_reps": report.n_reps,
            "tau_true": report.tau_true,
            "config": report.config,
            "estimators": report.estimators.iter().map(|(e, s)| (e.to_string(), s)).collect::<BTreeMap<_, _>>(),
            "rmse_did_minus_sdid": comparison,
        }),
    )?;

    let buf = csv_bytes(
        &["rep", "seed", "estimator", "estimate", "se", "error"],
        |w| {
            for r in &report.replications {
                for (e, res) in &r.results {
                    let (est, se, err) = match res {
                        Ok(rec) => (fmt_g6(rec.estimate), fmt_g6(rec.se), String::new()),
                        Err(msg) => (String::new(), String::new(), msg.clone()),
                    };
                    w.write_record([
                        r.rep.to_string(),
                        r.seed.to_string(),
                        e.to_string(),
                        est,
                        se,
                        err,
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    run.write_output("simulate_replications.csv", &buf)?;
    run.finish()?;
    Ok(())
}
