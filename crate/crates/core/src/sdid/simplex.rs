//! Least squares over the probability simplex.
//!
//! Minimizes `‖Aw − b‖² + ridge·‖w‖²` subject to `w ≥ 0`, `Σw = 1` with
//! accelerated projected gradient (FISTA with adaptive restart), cold-started
//! at uniform weights, then polishes the final support with an exact
//! equality-constrained solve.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Ridge penalty on the weights. Zero by default.
    pub ridge: f64,
    /// Allow a free constant offset (columns and target centered over rows).
    pub intercept: bool,
    /// Stop once an iteration decreases the objective by less than this,
    /// measured after rescaling the data to unit max-abs entry.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            ridge: 0.0,
            intercept: false,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub weights: Vec<f64>,
    /// Achieved objective on the caller's scale.
    pub objective: f64,
    pub iterations: usize,
}

/// Keyed simplex weights: over donors (unit weights) or pre-periods (time weights).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexWeights<K> {
    pub keys: Vec<K>,
    pub values: Vec<f64>,
    pub objective: f64,
}

impl<K: PartialEq> SimplexWeights<K> {
    pub fn get(&self, key: &K) -> Option<f64> {
        self.keys
            .iter()
            .position(|k| k == key)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, f64)> + '_ {
        self.keys.iter().zip(self.values.iter().copied())
    }

    /// Shannon entropy in nats; 0 for a point mass.
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

struct Quadratic {
    q: DMatrix<f64>,
    c: DVector<f64>,
    bb: f64,
}

impl Quadratic {
    fn value(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.q * w)) - 2.0 * self.c.dot(w) + self.bb).max(0.0)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.q * w - &self.c) * 2.0
    }
}

fn center_rows(a: &mut DMatrix<f64>, b: &mut DVector<f64>) {
    let n = a.nrows() as f64;
    for mut col in a.column_iter_mut() {
        let m = col.sum() / n;
        col.add_scalar_mut(-m);
    }
    let m = b.sum() / n;
    b.add_scalar_mut(-m);
}

/// Equality-constrained minimizer on `support`, if it is strictly positive there.
fn polish(quad: &Quadratic, support: &[usize], k: usize) -> Option<DVector<f64>> {
    let s = support.len();
    let mut kkt = DMatrix::<f64>::zeros(s + 1, s + 1);
    let mut rhs = DVector::<f64>::zeros(s + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            kkt[(a, b)] = 2.0 * quad.q[(i, j)];
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = 2.0 * quad.c[i];
    }
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let mut w = DVector::<f64>::zeros(k);
    for (a, &i) in support.iter().enumerate() {
        if !(sol[a] > 0.0) || !sol[a].is_finite() {
            return None;
        }
        w[i] = sol[a];
    }
    let total = w.sum();
    Some(w / total)
}

pub fn solve_simplex_ls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<SimplexSolution> {
    let k = a.ncols();
    if k == 0 {
        return Err(Error::Invalid(
            "simplex program has no weight columns".into(),
        ));
    }
    if a.nrows() != b.len() {
        return Err(Error::Invalid(format!(
            "design has {} rows but target has {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Invalid("non-finite entry in simplex program".into()));
    }

    let (mut a_c, mut b_c) = (a.clone(), b.clone());
    if opts.intercept && a.nrows() > 0 {
        center_rows(&mut a_c, &mut b_c);
    }
    let objective_of =
        |w: &DVector<f64>| (&a_c * w - &b_c).norm_squared() + opts.ridge * w.norm_squared();

    if k == 1 {
        let w = DVector::from_element(1, 1.0);
        return Ok(SimplexSolution {
            objective: objective_of(&w),
            weights: vec![1.0],
            iterations: 0,
        });
    }

    let scale = a_c
        .iter()
        .chain(b_c.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let a_s = &a_c / scale;
    let b_s = &b_c / scale;
    let mut q = a_s.tr_mul(&a_s);
    for i in 0..k {
        q[(i, i)] += opts.ridge / (scale * scale);
    }
    let quad = Quadratic {
        c: a_s.tr_mul(&b_s),
        bb: b_s.norm_squared(),
        q,
    };

    let uniform = DVector::from_element(k, 1.0 / k as f64);
    let lmax = quad
        .q
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, x| m.max(*x));
    let lipschitz = 2.0 * lmax;

    let mut x = uniform.clone();
    let mut iterations = 0;
    if lipschitz > 0.0 {
        let mut y = x.clone();
        let mut fx = quad.value(&x);
        let mut t = 1.0f64;
        while iterations < opts.max_iter {
            iterations += 1;
            let step = &y - quad.gradient(&y) / lipschitz;
            let x_new = DVector::from_vec(project_simplex(step.as_slice()));
            let f_new = quad.value(&x_new);
            if f_new > fx {
                // momentum overshot: restart from the last accepted iterate
                y = x.clone();
                t = 1.0;
                continue;
            }
            let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
            let decrease = fx - f_new;
            let moved = (&x_new - &x).amax();
            x = x_new;
            fx = f_new;
            t = t_new;
            if moved <= 1e-15 || (iterations > 10 && decrease <= opts.tol) {
                break;
            }
        }

        let support: Vec<usize> = (0..k).filter(|&i| x[i] > 1e-12).collect();
        if let Some(p) = polish(&quad, &support, k) {
            if quad.value(&p) <= fx {
                x = p;
            }
        }
        // flat objective: prefer uniform weights for determinism
        if quad.value(&x) >= quad.value(&uniform) - opts.tol {
            x = uniform;
        }
    }

    let objective = objective_of(&x);
    Ok(SimplexSolution {
        weights: x.iter().copied().collect(),
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_basics() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[1.0, 1.0, -3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn single_column_gets_full_weight() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![-4.0, 0.0, 9.0]);
        let s = solve_simplex_ls(&a, &b, &SolverOptions::default()).unwrap();
        assert_eq!(s.weights, vec![1.0]);
        assert!((s.objective - (25.0 + 4.0 + 36.0)).abs() < 1e-12);
    }

    #[test]
    fn exact_column_match() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 4.0, 2.0, 1.0, 1.0, 0.0, 3.0, 5.0]);
        let b = a.column(1).into_owned();
        let s = solve_simplex_ls(&a, &b, &SolverOptions::default()).unwrap();
        assert!((s.weights[1] - 1.0).abs() < 1e-9);
        assert!(s.objective < 1e-12);
    }

    #[test]
    fn empty_columns_rejected() {
        let a = DMatrix::<f64>::zeros(2, 0);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(solve_simplex_ls(&a, &b, &SolverOptions::default()).is_err());
    }

    #[test]
    fn ridge_spreads_mass() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.0, 0.1]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let plain = solve_simplex_ls(&a, &b, &SolverOptions::default()).unwrap();
        let ridged = solve_simplex_ls(
            &a,
            &b,
            &SolverOptions {
                ridge: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(plain.weights[0] > 0.99);
        assert!((ridged.weights[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn intercept_ignores_level_shift() {
        let a = DMatrix::from_row_slice(3, 2, &[0.0, 5.0, 1.0, 5.0, 2.0, 5.0]);
        // target is column 0 shifted by +10
        let b = DVector::from_vec(vec![10.0, 11.0, 12.0]);
        let s = solve_simplex_ls(
            &a,
            &b,
            &SolverOptions {
                intercept: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((s.weights[0] - 1.0).abs() < 1e-9);
        assert!(s.objective < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_always_feasible(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in proptest::collection::vec(-100.0f64..100.0, 64 + 8),
        ) {
            let a = DMatrix::from_fn(rows, cols, |i, j| seed[i * 8 + j]);
            let b = DVector::from_fn(rows, |i, _| seed[64 + i]);
            let s = solve_simplex_ls(&a, &b, &SolverOptions::default()).unwrap();
            prop_assert!(s.weights.iter().all(|w| *w >= 0.0));
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
