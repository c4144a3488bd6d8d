//! Weighted least squares with absorbed unit and time fixed effects.
//!
//! Regressors and outcome are swept by alternating weighted unit and time
//! demeaning until the unit means vanish; on balanced panels with equal or
//! product-form weights this terminates after one sweep.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DEMEAN_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;
// squared-norm share a regressor must keep after demeaning to count as identified
const IDENT_TOL: f64 = 1e-10;

/// Observation layout for a two-way FE problem. Indices are dense.
#[derive(Debug, Clone)]
pub(crate) struct FeSample {
    pub unit: Vec<usize>,
    pub time: Vec<usize>,
    pub weight: Vec<f64>,
    pub n_units: usize,
    pub n_times: usize,
    unit_wsum: Vec<f64>,
    time_wsum: Vec<f64>,
}

impl FeSample {
    pub fn new(unit: Vec<usize>, time: Vec<usize>, weight: Vec<f64>) -> Result<Self> {
        if unit.is_empty() {
            return Err(Error::NotIdentified("empty estimation sample".into()));
        }
        if weight.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(
                "observation weights must be positive".into(),
            ));
        }
        let n_units = unit.iter().max().map_or(0, |m| m + 1);
        let n_times = time.iter().max().map_or(0, |m| m + 1);
        let mut unit_wsum = vec![0.0; n_units];
        let mut time_wsum = vec![0.0; n_times];
        for ((&i, &t), &w) in unit.iter().zip(&time).zip(&weight) {
            unit_wsum[i] += w;
            time_wsum[t] += w;
        }
        Ok(FeSample {
            unit,
            time,
            weight,
            n_units,
            n_times,
            unit_wsum,
            time_wsum,
        })
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn units_present(&self) -> usize {
        self.unit_wsum.iter().filter(|w| **w > 0.0).count()
    }

    pub fn times_present(&self) -> usize {
        self.time_wsum.iter().filter(|w| **w > 0.0).count()
    }

    fn group_means(&self, v: &[f64], by_unit: bool, out: &mut [f64]) {
        out.iter_mut().for_each(|m| *m = 0.0);
        let (idx, wsum) = if by_unit {
            (&self.unit, &self.unit_wsum)
        } else {
            (&self.time, &self.time_wsum)
        };
        for ((&g, &w), &x) in idx.iter().zip(&self.weight).zip(v) {
            out[g] += w * x;
        }
        for (m, &ws) in out.iter_mut().zip(wsum) {
            if ws > 0.0 {
                *m /= ws;
            }
        }
    }

    /// Projects out both sets of fixed effects in place.
    pub fn demean(&self, v: &mut [f64]) -> Result<()> {
        let scale = v
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        let mut um = vec![0.0; self.n_units];
        let mut tm = vec![0.0; self.n_times];
        for sweep in 0..MAX_SWEEPS {
            self.group_means(v, true, &mut um);
            if sweep > 0 && um.iter().all(|m| m.abs() <= DEMEAN_TOL * scale) {
                return Ok(());
            }
            for (x, &i) in v.iter_mut().zip(&self.unit) {
                *x -= um[i];
            }
            self.group_means(v, false, &mut tm);
            for (x, &t) in v.iter_mut().zip(&self.time) {
                *x -= tm[t];
            }
        }
        Err(Error::NotConverged(MAX_SWEEPS))
    }

    /// Unit and time effects of `r` (unnormalized) by alternating weighted means.
    pub fn two_way_effects(&self, r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let scale = r
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(f64::MIN_POSITIVE);
        let mut alpha = vec![0.0; self.n_units];
        let mut delta = vec![0.0; self.n_times];
        let mut work = vec![0.0; r.len()];
        let mut next = vec![0.0; self.n_units];
        for _ in 0..MAX_SWEEPS {
            for (k, w) in work.iter_mut().enumerate() {
                *w = r[k] - delta[self.time[k]];
            }
            self.group_means(&work, true, &mut next);
            let change = next
                .iter()
                .zip(&alpha)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            alpha.copy_from_slice(&next);
            for (k, w) in work.iter_mut().enumerate() {
                *w = r[k] - alpha[self.unit[k]];
            }
            self.group_means(&work, false, &mut delta);
            if change <= DEMEAN_TOL * scale {
                return Ok((alpha, delta));
            }
        }
        Err(Error::NotConverged(MAX_SWEEPS))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WlsFit {
    pub coef: Vec<f64>,
    /// Residuals of the full two-way model, one per observation.
    pub resid: Vec<f64>,
    /// Demeaned regressors.
    pub regressors: Vec<Vec<f64>>,
    /// Inverse of the weighted normal matrix of demeaned regressors.
    pub bread: DMatrix<f64>,
}

/// Weighted within estimator. `names` label regressors in identification errors.
pub(crate) fn fit_wls(
    sample: &FeSample,
    y: &[f64],
    mut regressors: Vec<Vec<f64>>,
    names: &[String],
) -> Result<WlsFit> {
    let p = regressors.len();
    let w = &sample.weight;
    let raw_norms: Vec<f64> = regressors
        .iter()
        .map(|x| x.iter().zip(w).map(|(a, w)| w * a * a).sum())
        .collect();
    for x in regressors.iter_mut() {
        sample.demean(x)?;
    }
    for (j, x) in regressors.iter().enumerate() {
        let n: f64 = x.iter().zip(w).map(|(a, w)| w * a * a).sum();
        if !(n > IDENT_TOL * raw_norms[j]) {
            return Err(Error::NotIdentified(format!(
                "`{}` is collinear with the fixed effects",
                names[j]
            )));
        }
    }
    let mut yt = y.to_vec();
    sample.demean(&mut yt)?;

    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for a in 0..p {
        for b in a..p {
            let s: f64 = (0..y.len())
                .map(|k| w[k] * regressors[a][k] * regressors[b][k])
                .sum();
            xtwx[(a, b)] = s;
            xtwx[(b, a)] = s;
        }
        xtwy[a] = (0..y.len()).map(|k| w[k] * regressors[a][k] * yt[k]).sum();
    }
    let chol = xtwx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotIdentified("regressors are jointly collinear".into()))?;
    let l = chol.l_dirty();
    for j in 0..p {
        if !(l[(j, j)] * l[(j, j)] > IDENT_TOL * xtwx[(j, j)]) {
            return Err(Error::NotIdentified(format!(
                "`{}` is collinear with other regressors",
                names[j]
            )));
        }
    }
    let coef = chol.solve(&xtwy);
    let bread = chol.inverse();
    let resid = (0..y.len())
        .map(|k| yt[k] - (0..p).map(|j| regressors[j][k] * coef[j]).sum::<f64>())
        .collect();
    Ok(WlsFit {
        coef: coef.iter().copied().collect(),
        resid,
        regressors,
        bread,
    })
}

/// Cluster-robust covariance with clusters given by `sample.unit`.
///
/// Finite-sample factor is G/(G-1)·(N-1)/(N-K), with K counting the
/// regressors plus every absorbed unit and time dummy (one dropped).
pub(crate) fn cluster_vcov(sample: &FeSample, fit: &WlsFit) -> Result<DMatrix<f64>> {
    let p = fit.coef.len();
    let g = sample.units_present();
    if g < 2 {
        return Err(Error::NotIdentified(
            "clustered errors need at least 2 clusters".into(),
        ));
    }
    let mut scores = vec![DVector::<f64>::zeros(p); sample.n_units];
    for k in 0..sample.len() {
        let we = sample.weight[k] * fit.resid[k];
        let s = &mut scores[sample.unit[k]];
        for j in 0..p {
            s[j] += fit.regressors[j][k] * we;
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in &scores {
        meat += s * s.transpose();
    }
    let n = sample.len() as f64;
    let k_total = (p + sample.units_present() + sample.times_present() - 1) as f64;
    let gf = g as f64;
    let mut factor = gf / (gf - 1.0);
    // a saturated design has zero residuals; skip the dof term rather than divide by zero
    if n > k_total {
        factor *= (n - 1.0) / (n - k_total);
    }
    Ok(&fit.bread * meat * &fit.bread * factor)
}
