mod common;

use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use common::{grid, spec, u};
use llmpanel_core::sdid::{fit_unit, solve_unit_weights, weighted_twfe_tau};
use llmpanel_core::simlab::generate;
use llmpanel_core::{
    continuous_did, event_study, sdid_per_unit, twfe_did, FactorDgpConfig, PanelCell, PanelDataset,
    SdidConfig, SimplexWeights, SolverOptions, TimeIndex,
};

fn start() -> TimeIndex {
    TimeIndex::new(2022, 6).unwrap()
}

fn onset() -> TimeIndex {
    TimeIndex::default_onset()
}

/// 2 treated and 3 control units over 2022-06..2023-03 with noise-like wiggles.
fn messy_panel(effect: f64) -> PanelDataset {
    let n = 10;
    let rows: Vec<(&str, Vec<f64>)> = ["c1", "c2", "c3", "t1", "t2"]
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let vals = (0..n)
                .map(|k| {
                    let wiggle = ((i * 7 + k * 3) % 5) as f64 * 0.3 - ((i + k) % 3) as f64 * 0.2;
                    let post = k >= 6 && code.starts_with('t');
                    i as f64 + 0.5 * k as f64 + wiggle + if post { effect } else { 0.0 }
                })
                .collect();
            (code, vals)
        })
        .collect();
    grid(&rows, start())
}

type Shift = Box<dyn Fn(&str, TimeIndex) -> f64>;

fn shifted(p: &PanelDataset, f: impl Fn(&str, TimeIndex) -> f64) -> PanelDataset {
    p.map_cells(|unit, t, c| PanelCell {
        value: c.value + f(unit.as_str(), t),
        n_obs: c.n_obs,
    })
    .unwrap()
}

#[test]
fn did_ignores_additive_constants() {
    let p = messy_panel(2.0);
    let s = spec(&p, &["t1", "t2"], &["c1", "c2", "c3"], onset());
    let base = twfe_did(&p, &s, false).unwrap();
    let shifts: [Shift; 3] = [
        Box::new(|_, _| 41.0),
        Box::new(|unit, _| unit.len() as f64 * 3.0 + if unit == "t2" { -9.0 } else { 0.0 }),
        Box::new(|_, t| t.month() as f64 * 1.7),
    ];
    for f in shifts {
        let fit = twfe_did(&shifted(&p, f), &s, false).unwrap();
        assert_abs_diff_eq!(fit.beta, base.beta, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.se_clustered, base.se_clustered, epsilon = 1e-9);
    }
}

#[test]
fn continuous_with_binary_exposure_is_twfe() {
    let p = messy_panel(1.5);
    let s = spec(&p, &["t1", "t2"], &["c1", "c2", "c3"], onset());
    let exposure: BTreeMap<_, _> = p
        .units()
        .iter()
        .map(|unit| (unit.clone(), if s.is_treated(unit) { 1.0 } else { 0.0 }))
        .collect();
    let a = twfe_did(&p, &s, true).unwrap();
    let b = continuous_did(&p, &exposure, onset(), true).unwrap();
    assert_abs_diff_eq!(a.beta, b.beta, epsilon = 1e-10);
    assert_abs_diff_eq!(a.se_clustered, b.se_clustered, epsilon = 1e-10);
}

#[test]
fn continuous_rejects_constant_exposure() {
    let p = messy_panel(0.0);
    let flat: BTreeMap<_, _> = p.units().iter().map(|unit| (unit.clone(), 0.4)).collect();
    assert!(continuous_did(&p, &flat, onset(), false).is_err());
}

#[test]
fn event_study_step_effect() {
    // parallel paths with a constant step of 3 from the onset
    let n = 10;
    let rows: Vec<(&str, Vec<f64>)> = [("c1", 0.0), ("c2", 2.0), ("t1", 5.0), ("t2", -1.0)]
        .iter()
        .map(|&(code, a)| {
            let vals = (0..n)
                .map(|k| {
                    a + (k as f64).sin() * 2.0
                        + if k >= 6 && code.starts_with('t') {
                            3.0
                        } else {
                            0.0
                        }
                })
                .collect();
            (code, vals)
        })
        .collect();
    let p = grid(&rows, start());
    let s = spec(&p, &["t1", "t2"], &["c1", "c2"], onset());
    let es = event_study(&p, &s, false).unwrap();
    assert_eq!(es.omitted_k, -1);
    assert!(!es.coefficients.contains_key(&-1));
    assert_eq!(es.coefficients.len(), n - 1);
    for (&k, c) in &es.coefficients {
        let want = if k >= 0 { 3.0 } else { 0.0 };
        assert_abs_diff_eq!(c.beta, want, epsilon = 1e-9);
    }
}

#[test]
fn event_study_averages_to_twfe() {
    let p = messy_panel(1.0);
    let s = spec(&p, &["t1", "t2"], &["c1", "c2", "c3"], onset());
    let es = event_study(&p, &s, false).unwrap();
    let did = twfe_did(&p, &s, false).unwrap();
    let (mut pre, mut post) = (vec![0.0], vec![]);
    for (&k, c) in &es.coefficients {
        if k >= 0 {
            post.push(c.beta)
        } else {
            pre.push(c.beta)
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert_abs_diff_eq!(did.beta, mean(&post) - mean(&pre), epsilon = 1e-9);
}

#[test]
fn event_study_flags_confounded_trends() {
    let cfg = FactorDgpConfig {
        n_treated: 30,
        n_control: 30,
        n_pre: 12,
        n_post: 4,
        tau_true: 0.0,
        factor_dim: 1,
        loading_treatment_corr: 0.9,
        noise_sd: 0.2,
        seed: 5,
    };
    let sim = generate(&cfg).unwrap();
    let es = event_study(&sim.panel, &sim.spec, false).unwrap();
    let flagged = es
        .coefficients
        .iter()
        .filter(|(&k, c)| k < -1 && c.beta.abs() > 2.0 * c.se)
        .count();
    assert!(flagged >= 1, "no pre-period coefficient flagged");
}

fn uniform<K: Clone>(keys: &[K]) -> SimplexWeights<K> {
    SimplexWeights {
        keys: keys.to_vec(),
        values: vec![1.0 / keys.len() as f64; keys.len()],
        objective: 0.0,
    }
}

#[test]
fn uniform_weights_reduce_to_did() {
    let p = messy_panel(2.5);
    let donors = [u("c1"), u("c2"), u("c3")];
    let pre: Vec<_> = p
        .periods()
        .iter()
        .copied()
        .filter(|&t| t < onset())
        .collect();
    let fit = weighted_twfe_tau(&p, &u("t1"), &uniform(&donors), &uniform(&pre), onset()).unwrap();

    let sub = PanelDataset::from_cells(
        "y",
        p.iter_cells()
            .filter(|(unit, _, _)| unit.as_str() != "t2")
            .map(|(unit, t, c)| (unit.clone(), t, *c)),
    )
    .unwrap();
    let s = spec(&sub, &["t1"], &["c1", "c2", "c3"], onset());
    let did = twfe_did(&sub, &s, false).unwrap();
    assert_abs_diff_eq!(fit.tau, did.beta, epsilon = 1e-9);
}

#[test]
fn single_donor_two_periods_is_simple_did() {
    let p = grid(
        &[("c", vec![1.0, 4.0]), ("t", vec![2.0, 9.0])],
        TimeIndex::new(2022, 11).unwrap(),
    );
    let s = spec(&p, &["t"], &["c"], onset());
    let fit = fit_unit(&p, &s, &u("t"), &SdidConfig::default());
    // one pre period is not enough for the per-unit estimator
    assert!(fit.is_err());
    let w = weighted_twfe_tau(
        &p,
        &u("t"),
        &uniform(&[u("c")]),
        &uniform(&[TimeIndex::new(2022, 11).unwrap()]),
        onset(),
    )
    .unwrap();
    assert_abs_diff_eq!(w.tau, (9.0 - 2.0) - (4.0 - 1.0), epsilon = 1e-12);
    assert_abs_diff_eq!(
        twfe_did(&p, &s, false).unwrap().beta,
        w.tau,
        epsilon = 1e-12
    );
}

#[test]
fn sdid_ignores_additive_constants() {
    let p = messy_panel(2.0);
    let s = spec(&p, &["t1", "t2"], &["c1", "c2", "c3"], onset());
    // constants are absorbed by the weight programs only when they carry intercepts
    let with_intercept = SolverOptions {
        intercept: true,
        ..SolverOptions::default()
    };
    let cfg = SdidConfig {
        unit_weights: with_intercept,
        time_weights: with_intercept,
        n_boot: 50,
        ..SdidConfig::default()
    };
    let base = sdid_per_unit(&p, &s, &cfg).unwrap();
    let unit_shift = shifted(&p, |unit, _| if unit == "t1" { 100.0 } else { -3.0 });
    let time_shift = shifted(&p, |_, t| t.month() as f64);
    for q in [unit_shift, time_shift] {
        let fit = sdid_per_unit(&q, &s, &cfg).unwrap();
        assert_abs_diff_eq!(fit.att, base.att, epsilon = 1e-6);
    }
    // a common constant needs no intercept at all
    let plain = SdidConfig {
        n_boot: 50,
        ..SdidConfig::default()
    };
    let a = sdid_per_unit(&p, &s, &plain).unwrap();
    let b = sdid_per_unit(&shifted(&p, |_, _| 12.5), &s, &plain).unwrap();
    assert_abs_diff_eq!(a.att, b.att, epsilon = 1e-6);
}

#[test]
fn identical_donor_gives_zero() {
    let path = vec![1.0, 3.0, 2.0, 5.0, 4.0, 6.0, 7.0, 6.5, 8.0, 9.0];
    let other: Vec<f64> = path
        .iter()
        .enumerate()
        .map(|(k, v)| v * 0.3 + (k % 4) as f64)
        .collect();
    let p = grid(
        &[("c1", path.clone()), ("c2", other), ("t1", path)],
        start(),
    );
    let s = spec(&p, &["t1"], &["c1", "c2"], onset());
    let fit = sdid_per_unit(
        &p,
        &s,
        &SdidConfig {
            n_boot: 20,
            ..SdidConfig::default()
        },
    )
    .unwrap();
    assert_abs_diff_eq!(fit.att, 0.0, epsilon = 1e-6);
    assert!(fit.unit_fits[0].omega.get(&u("c1")).unwrap() > 0.99);
}

#[test]
fn sdid_zero_effect_on_exact_combination() {
    // treated path is an exact convex mix of donors, so a zero effect is recovered
    let n = 10;
    let d1: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).sin() * 3.0).collect();
    let d2: Vec<f64> = (0..n).map(|k| k as f64 * 0.4 + 1.0).collect();
    let d3: Vec<f64> = (0..n).map(|k| ((k * k) % 7) as f64).collect();
    let t: Vec<f64> = (0..n)
        .map(|k| 0.2 * d1[k] + 0.5 * d2[k] + 0.3 * d3[k])
        .collect();
    let p = grid(&[("d1", d1), ("d2", d2), ("d3", d3), ("t", t)], start());
    let s = spec(&p, &["t"], &["d1", "d2", "d3"], onset());
    let fit = sdid_per_unit(
        &p,
        &s,
        &SdidConfig {
            n_boot: 10,
            ..SdidConfig::default()
        },
    )
    .unwrap();
    assert_abs_diff_eq!(fit.att, 0.0, epsilon = 1e-5);
}

#[test]
fn sdid_recovers_unconfounded_effect() {
    let cfg = FactorDgpConfig {
        n_treated: 10,
        n_control: 30,
        n_pre: 16,
        n_post: 6,
        tau_true: 5.0,
        factor_dim: 1,
        loading_treatment_corr: 0.0,
        noise_sd: 0.5,
        seed: 77,
    };
    let sim = generate(&cfg).unwrap();
    let fit = sdid_per_unit(
        &sim.panel,
        &sim.spec,
        &SdidConfig {
            n_boot: 400,
            ..SdidConfig::default()
        },
    )
    .unwrap();
    assert_eq!(fit.unit_fits.len(), 10);
    assert!(fit.se_bootstrap > 0.0);
    assert!(
        (fit.att - 5.0).abs() < 3.0 * fit.se_bootstrap + 0.05,
        "att {} se {}",
        fit.att,
        fit.se_bootstrap
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn more_donors_never_fit_worse(
        vals in proptest::collection::vec(-5.0f64..5.0, 5 * 8),
        k in 1usize..4,
    ) {
        let rows: Vec<(String, Vec<f64>)> = (0..5)
            .map(|i| (if i == 0 { "t".to_string() } else { format!("d{i}") }, vals[i * 8..(i + 1) * 8].to_vec()))
            .collect();
        let rows_ref: Vec<(&str, Vec<f64>)> = rows.iter().map(|(c, v)| (c.as_str(), v.clone())).collect();
        let p = grid(&rows_ref, TimeIndex::new(2022, 4).unwrap());
        let pre: Vec<_> = p.periods().iter().copied().filter(|&t| t < onset()).collect();
        let all: Vec<_> = (1..5).map(|i| u(&format!("d{i}"))).collect();
        let opts = SolverOptions::default();
        let small = solve_unit_weights(&p, &u("t"), &all[..k], &pre, &opts).unwrap();
        let big = solve_unit_weights(&p, &u("t"), &all, &pre, &opts).unwrap();
        prop_assert!(big.objective <= small.objective + 1e-8 * (1.0 + small.objective));
    }
}
