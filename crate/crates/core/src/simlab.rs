//! Synthetic panels from an interactive fixed-effects model, and a Monte Carlo
//! harness comparing DiD and SDiD on them.
//!
//! Untreated outcomes are `α_i + δ_t + γ_iᵀυ_t + ε_it`; treated cells from the
//! onset on add `tau_true`. All draws are normal. Loadings are correlated
//! with treatment by mixing in the standardized treatment indicator:
//! `γ_ir = ρ·d̃_i + √(1−ρ²)·z_ir`, so `corr(γ_ir, D_i) = ρ` over the sample.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::did::twfe_did;
use crate::error::{Error, Result};
use crate::panel::{PanelCell, PanelDataset, TimeIndex, TreatmentSpec, UnitId};
use crate::sdid::{sdid_per_unit, SdidConfig};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorDgpConfig {
    pub n_treated: usize,
    pub n_control: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub tau_true: f64,
    pub factor_dim: usize,
    pub loading_treatment_corr: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for FactorDgpConfig {
    fn default() -> Self {
        FactorDgpConfig {
            n_treated: 5,
            n_control: 20,
            n_pre: 20,
            n_post: 6,
            tau_true: 5.0,
            factor_dim: 1,
            loading_treatment_corr: 0.0,
            noise_sd: 1.0,
            seed: 1,
        }
    }
}

impl FactorDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_treated == 0 || self.n_control == 0 || self.n_pre == 0 || self.n_post == 0 {
            return Err(Error::Invalid("unit and period counts must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.loading_treatment_corr) {
            return Err(Error::Invalid(
                "loading_treatment_corr must lie in [-1, 1]".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() || !self.tau_true.is_finite() {
            return Err(Error::Invalid(
                "noise_sd must be >= 0 and tau_true finite".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad value `{v}` for `{key}`")))
        }
        match key.trim() {
            "n_treated" => self.n_treated = num(key, value)?,
            "n_control" => self.n_control = num(key, value)?,
            "n_pre" => self.n_pre = num(key, value)?,
            "n_post" => self.n_post = num(key, value)?,
            "tau_true" => self.tau_true = num(key, value)?,
            "factor_dim" => self.factor_dim = num(key, value)?,
            "loading_treatment_corr" => self.loading_treatment_corr = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimPanel {
    pub panel: PanelDataset,
    pub spec: TreatmentSpec,
    pub tau_true: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(config: &FactorDgpConfig) -> Result<SimPanel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_treated + config.n_control;
    let n_t = config.n_pre + config.n_post;
    let r = config.factor_dim;
    let onset = TimeIndex::default_onset();
    let periods: Vec<TimeIndex> = (0..n_t)
        .map(|k| onset.add_months(k as i64 - config.n_pre as i64))
        .collect();

    let share = config.n_treated as f64 / n as f64;
    let d_scale = (share * (1.0 - share)).sqrt();
    let rho = config.loading_treatment_corr;
    let mix = (1.0 - rho * rho).max(0.0).sqrt();

    let mut units = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        let treated = i < config.n_treated;
        units.push(if treated {
            UnitId::new(format!("t{:04}", i + 1))?
        } else {
            UnitId::new(format!("c{:04}", i - config.n_treated + 1))?
        });
        alpha.push(normal(&mut rng));
        let d_std = (treated as u8 as f64 - share) / d_scale;
        gamma.push(
            (0..r)
                .map(|_| rho * d_std + mix * normal(&mut rng))
                .collect::<Vec<f64>>(),
        );
    }
    let mut delta = Vec::with_capacity(n_t);
    let mut upsilon = Vec::with_capacity(n_t);
    for _ in 0..n_t {
        delta.push(normal(&mut rng));
        upsilon.push((0..r).map(|_| normal(&mut rng)).collect::<Vec<f64>>());
    }

    let mut cells = Vec::with_capacity(n * n_t);
    for i in 0..n {
        for t in 0..n_t {
            let factor: f64 = gamma[i].iter().zip(&upsilon[t]).map(|(g, v)| g * v).sum();
            let eps = config.noise_sd * normal(&mut rng);
            let effect = if i < config.n_treated && t >= config.n_pre {
                config.tau_true
            } else {
                0.0
            };
            let n_obs = rng.random_range(20..=200u32);
            let value = alpha[i] + delta[t] + factor + eps + effect;
            cells.push((units[i].clone(), periods[t], PanelCell::new(value, n_obs)?));
        }
    }
    let panel = PanelDataset::with_grid("simulated", units.clone(), periods, cells)?;
    let treated: BTreeSet<UnitId> = units[..config.n_treated].iter().cloned().collect();
    let controls: BTreeSet<UnitId> = units[config.n_treated..].iter().cloned().collect();
    let spec = TreatmentSpec::new(&panel, treated, controls, onset)?;
    Ok(SimPanel {
        panel,
        spec,
        tau_true: config.tau_true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Did,
    Sdid,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Did => "did",
            Estimator::Sdid => "sdid",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "did" => Ok(Estimator::Did),
            "sdid" => Ok(Estimator::Sdid),
            other => Err(Error::Invalid(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McOptions {
    pub weight_by_nobs: bool,
    pub sdid: SdidConfig,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            weight_by_nobs: true,
            sdid: SdidConfig {
                n_boot: 200,
                ..SdidConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub results: BTreeMap<Estimator, std::result::Result<EstimateRecord, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub mean_bias: f64,
    /// Monte Carlo standard error of `mean_bias`.
    pub mc_se_bias: f64,
    pub rmse: f64,
    /// Share of replications whose nominal 95% interval covers the truth.
    pub coverage: f64,
    pub n_success: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub n_reps: usize,
    pub tau_true: f64,
    pub config: FactorDgpConfig,
    pub estimators: BTreeMap<Estimator, EstimatorSummary>,
    pub replications: Vec<Replication>,
}

fn run_estimator(
    est: Estimator,
    sim: &SimPanel,
    opts: &McOptions,
    seed: u64,
) -> std::result::Result<EstimateRecord, String> {
    match est {
        Estimator::Did => {
            twfe_did(&sim.panel, &sim.spec, opts.weight_by_nobs).map(|f| EstimateRecord {
                estimate: f.beta,
                se: f.se_clustered,
            })
        }
        Estimator::Sdid => {
            let cfg = SdidConfig { seed, ..opts.sdid };
            sdid_per_unit(&sim.panel, &sim.spec, &cfg).map(|f| EstimateRecord {
                estimate: f.att,
                se: f.se_bootstrap,
            })
        }
    }
    .map_err(|e| e.to_string())
}

fn summarize(errors: &[(f64, f64)], n_failed: usize) -> EstimatorSummary {
    let n = errors.len() as f64;
    if errors.is_empty() {
        return EstimatorSummary {
            mean_bias: f64::NAN,
            mc_se_bias: f64::NAN,
            rmse: f64::NAN,
            coverage: f64::NAN,
            n_success: 0,
            n_failed,
        };
    }
    let mean = errors.iter().map(|(e, _)| e).sum::<f64>() / n;
    let var = if errors.len() > 1 {
        errors.iter().map(|(e, _)| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mse = errors.iter().map(|(e, _)| e * e).sum::<f64>() / n;
    let covered = errors.iter().filter(|(e, se)| e.abs() <= 1.96 * se).count();
    EstimatorSummary {
        mean_bias: mean,
        mc_se_bias: (var / n).sqrt(),
        rmse: mse.sqrt(),
        coverage: covered as f64 / n,
        n_success: errors.len(),
        n_failed,
    }
}

/// Runs `n_reps` independent replications; replication `r` uses `derive_seed(config.seed, r)`.
pub fn monte_carlo(
    config: &FactorDgpConfig,
    n_reps: usize,
    estimators: &[Estimator],
    opts: &McOptions,
) -> Result<McReport> {
    config.validate()?;
    if n_reps == 0 {
        return Err(Error::Invalid("n_reps must be >= 1".into()));
    }
    let estimators: BTreeSet<Estimator> = estimators.iter().copied().collect();
    let replications: Vec<Replication> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(config.seed, rep as u64);
            let results = match generate(&FactorDgpConfig { seed, ..*config }) {
                Ok(sim) => estimators
                    .iter()
                    .map(|&e| (e, run_estimator(e, &sim, opts, seed)))
                    .collect(),
                Err(err) => estimators
                    .iter()
                    .map(|&e| (e, Err(err.to_string())))
                    .collect(),
            };
            Replication { rep, seed, results }
        })
        .collect();

    let summaries = estimators
        .iter()
        .map(|&e| {
            let mut errs = vec![];
            let mut failed = 0;
            for r in &replications {
                match &r.results[&e] {
                    Ok(rec) => errs.push((rec.estimate - config.tau_true, rec.se)),
                    Err(_) => failed += 1,
                }
            }
            (e, summarize(&errs, failed))
        })
        .collect();

    Ok(McReport {
        n_reps,
        tau_true: config.tau_true,
        config: *config,
        estimators: summaries,
        replications,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RmseComparison {
    /// `RMSE(a) − RMSE(b)` over replications where both succeeded.
    pub difference: f64,
    /// Delta-method Monte Carlo standard error of the difference.
    pub mc_se: f64,
    pub n_paired: usize,
}

/// Paired RMSE comparison of two estimators in a report.
pub fn compare_rmse(report: &McReport, a: Estimator, b: Estimator) -> Result<RmseComparison> {
    let pairs: Vec<(f64, f64)> = report
        .replications
        .iter()
        .filter_map(|r| match (r.results.get(&a), r.results.get(&b)) {
            (Some(Ok(x)), Some(Ok(y))) => Some((
                (x.estimate - report.tau_true).powi(2),
                (y.estimate - report.tau_true).powi(2),
            )),
            _ => None,
        })
        .collect();
    if pairs.len() < 2 {
        return Err(Error::Invalid(
            "need at least two paired replications".into(),
        ));
    }
    let n = pairs.len() as f64;
    let rmse_a = (pairs.iter().map(|p| p.0).sum::<f64>() / n).sqrt();
    let rmse_b = (pairs.iter().map(|p| p.1).sum::<f64>() / n).sqrt();
    // influence of each replication on sqrt(mean sq error)
    let infl: Vec<f64> = pairs
        .iter()
        .map(|(sa, sb)| sa / (2.0 * rmse_a) - sb / (2.0 * rmse_b))
        .collect();
    let m = infl.iter().sum::<f64>() / n;
    let var = infl.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(RmseComparison {
        difference: rmse_a - rmse_b,
        mc_se: (var / n).sqrt(),
        n_paired: pairs.len(),
    })
}
