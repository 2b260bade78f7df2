//! Active-set (Lawson–Hanson) non-negative least squares.
//!
//! The solver works on the normal equations `(AᵀA + μI) x = Aᵀy` so that a
//! Tikhonov-augmented system `[A; √μ I]` costs the same as the plain one and
//! consecutive solves can warm-start from the previous passive set.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Dual-feasibility tolerance relative to `‖Aᵀy‖∞`.
const DUAL_TOL: f64 = 1e-12;
/// Cholesky pivots below this fraction of the diagonal mark a dependent column.
const PIVOT_TOL: f64 = 1e-13;

/// Minimizes `‖Ax − y‖²` subject to `x ≥ 0`.
pub fn nnls(a: ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return Err(Error::param("NNLS needs a non-empty matrix"));
    }
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {m} rows but y has {} entries",
            y.len()
        )));
    }
    if a.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::param("NNLS input contains non-finite values"));
    }
    let gram = gram_matrix(a);
    let aty = at_y(a, y);
    let mut x = vec![0.0; n];
    NnlsSolver::new(n).solve(&gram, &aty, 0.0, &mut x)?;
    Ok(x)
}

/// `AᵀA` as a dense row-major `n x n` matrix.
pub fn gram_matrix(a: ArrayView2<'_, f64>) -> Array2<f64> {
    a.t().dot(&a)
}

pub fn at_y(a: ArrayView2<'_, f64>, y: &[f64]) -> Vec<f64> {
    let (m, n) = a.dim();
    let mut out = vec![0.0; n];
    for (row, &yi) in a.rows().into_iter().zip(&y[..m]) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * yi;
        }
    }
    out
}

/// `‖Ax − y‖²`, skipping zero coefficients.
pub fn residual_sq(a: ArrayView2<'_, f64>, x: &[f64], y: &[f64]) -> f64 {
    let active: Vec<usize> = (0..x.len()).filter(|&j| x[j] != 0.0).collect();
    a.outer_iter()
        .zip(y)
        .map(|(row, &yi)| {
            let fit: f64 = active.iter().map(|&j| row[j] * x[j]).sum();
            (fit - yi).powi(2)
        })
        .sum()
}

/// Reusable workspace for repeated solves of the same size.
#[derive(Debug, Clone)]
pub struct NnlsSolver {
    n: usize,
    max_iterations: usize,
    passive: Vec<usize>,
    in_passive: Vec<bool>,
    banned: Vec<bool>,
    z: Vec<f64>,
    /// Lower Cholesky factor of the passive Gram block, row stride `n`.
    chol: Vec<f64>,
    /// Leading passive entries whose factor rows are current.
    factored: usize,
    rhs: Vec<f64>,
    dual: Vec<f64>,
}

enum Subproblem {
    Solved,
    Dependent,
}

impl NnlsSolver {
    pub fn new(n: usize) -> Self {
        NnlsSolver {
            n,
            max_iterations: 3 * n,
            passive: Vec::with_capacity(n),
            in_passive: vec![false; n],
            banned: vec![false; n],
            z: vec![0.0; n],
            chol: vec![0.0; n * n],
            factored: 0,
            rhs: vec![0.0; n],
            dual: vec![0.0; n],
        }
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    /// Solves `min ‖Ax − y‖² + μ‖x‖², x ≥ 0` given `gram = AᵀA` and `aty = Aᵀy`.
    ///
    /// `x` must be non-negative on entry and is used as the starting point.
    /// Returns the number of outer iterations taken.
    pub fn solve(&mut self, gram: &Array2<f64>, aty: &[f64], mu: f64, x: &mut [f64]) -> Result<usize> {
        let n = self.n;
        assert_eq!(gram.dim(), (n, n), "gram size");
        assert_eq!(aty.len(), n, "aty length");
        assert_eq!(x.len(), n, "x length");
        let g = gram.as_slice().expect("gram must be contiguous");

        let scale = aty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            x.fill(0.0);
            return Ok(0);
        }
        let tol = DUAL_TOL * scale;

        self.passive.clear();
        self.factored = 0;
        self.in_passive.fill(false);
        self.banned.fill(false);
        for (j, xj) in x[..n].iter_mut().enumerate() {
            if *xj > 0.0 {
                self.passive.push(j);
                self.in_passive[j] = true;
            } else {
                *xj = 0.0;
            }
        }
        if !self.passive.is_empty() {
            self.inner_loop(g, aty, mu, x);
        }

        let mut iterations = 0;
        loop {
            self.compute_dual(g, aty, mu, x);
            let mut best = None;
            let mut best_w = tol;
            for j in 0..n {
                if !self.in_passive[j] && !self.banned[j] && self.dual[j] > best_w {
                    best_w = self.dual[j];
                    best = Some(j);
                }
            }
            let Some(j) = best else {
                return Ok(iterations);
            };
            if iterations >= self.max_iterations {
                return Err(Error::NnlsConvergence {
                    iterations,
                    best: x.to_vec(),
                });
            }
            iterations += 1;

            self.passive.push(j);
            self.in_passive[j] = true;
            match self.solve_passive(g, aty, mu) {
                Subproblem::Dependent => {
                    self.drop_index(j);
                    self.banned[j] = true;
                    continue;
                }
                Subproblem::Solved => {}
            }
            let pos = self.passive.len() - 1;
            if self.z[pos] <= 0.0 {
                // Round-off made the entering variable non-positive; skip it this round.
                self.drop_index(j);
                self.banned[j] = true;
                continue;
            }
            self.banned.fill(false);
            self.finish_inner(g, aty, mu, x);
        }
    }

    fn compute_dual(&mut self, g: &[f64], aty: &[f64], mu: f64, x: &[f64]) {
        let n = self.n;
        for j in 0..n {
            let row = &g[j * n..(j + 1) * n];
            let gx: f64 = self.passive.iter().map(|&i| row[i] * x[i]).sum();
            self.dual[j] = aty[j] - gx - mu * x[j];
        }
    }

    fn drop_index(&mut self, j: usize) {
        if let Some(p) = self.passive.iter().position(|&i| i == j) {
            self.remove_at(p);
        }
    }

    /// Removes passive entry `p`; factor rows before `p` stay valid.
    fn remove_at(&mut self, p: usize) {
        let j = self.passive.remove(p);
        self.in_passive[j] = false;
        self.factored = self.factored.min(p);
    }

    /// Repeats subproblem solves from the current `x` until the passive solution is strictly positive.
    fn inner_loop(&mut self, g: &[f64], aty: &[f64], mu: f64, x: &mut [f64]) {
        loop {
            if self.passive.is_empty() {
                return;
            }
            if let Subproblem::Dependent = self.solve_passive(g, aty, mu) {
                // Drop the most recently added column until the system is solvable.
                let j = *self.passive.last().expect("non-empty");
                x[j] = 0.0;
                self.drop_index(j);
                continue;
            }
            if self.finish_step(x) {
                return;
            }
        }
    }

    /// Continues the inner loop after the first subproblem has already been solved into `z`.
    fn finish_inner(&mut self, g: &[f64], aty: &[f64], mu: f64, x: &mut [f64]) {
        if self.finish_step(x) {
            return;
        }
        self.inner_loop(g, aty, mu, x);
    }

    /// Applies one inner-loop step using `z`; returns true once `x = z` is feasible.
    fn finish_step(&mut self, x: &mut [f64]) -> bool {
        let k = self.passive.len();
        if self.z[..k].iter().all(|&v| v > 0.0) {
            for (p, &j) in self.passive.iter().enumerate() {
                x[j] = self.z[p];
            }
            return true;
        }
        let mut alpha = f64::INFINITY;
        let mut blocking = 0;
        for (p, &j) in self.passive.iter().enumerate() {
            let zj = self.z[p];
            if zj <= 0.0 {
                let denom = x[j] - zj;
                let a = if denom > 0.0 { x[j] / denom } else { 0.0 };
                if a < alpha {
                    alpha = a;
                    blocking = p;
                }
            }
        }
        let alpha = alpha.clamp(0.0, 1.0);
        let xmax = self.passive.iter().fold(0.0f64, |m, &j| m.max(x[j]));
        for (p, &j) in self.passive.iter().enumerate() {
            x[j] += alpha * (self.z[p] - x[j]);
        }
        x[self.passive[blocking]] = 0.0;
        // Remove variables that hit the boundary.
        let floor = f64::EPSILON * xmax;
        let mut p = 0;
        while p < self.passive.len() {
            let j = self.passive[p];
            if x[j] <= floor {
                x[j] = 0.0;
                self.remove_at(p);
            } else {
                p += 1;
            }
        }
        false
    }

    /// Solves `(G_PP + μI) z = aty_P` by Cholesky into `self.z[..k]`, extending
    /// the factor from the first stale row.
    fn solve_passive(&mut self, g: &[f64], aty: &[f64], mu: f64) -> Subproblem {
        let n = self.n;
        let k = self.passive.len();
        let l = &mut self.chol;
        for r in self.factored..k {
            let gr = self.passive[r];
            for c in 0..=r {
                let gc = self.passive[c];
                let mut s = g[gr * n + gc];
                if r == c {
                    s += mu;
                }
                let (lr, lc) = (&l[r * n..r * n + c], &l[c * n..c * n + c]);
                s -= lr.iter().zip(lc).map(|(a, b)| a * b).sum::<f64>();
                if r == c {
                    let diag = g[gr * n + gr] + mu;
                    if !(s > PIVOT_TOL * diag) {
                        self.factored = r;
                        return Subproblem::Dependent;
                    }
                    l[r * n + r] = s.sqrt();
                } else {
                    l[r * n + c] = s / l[c * n + c];
                }
            }
        }
        self.factored = k;
        for r in 0..k {
            let mut s = aty[self.passive[r]];
            for t in 0..r {
                s -= l[r * n + t] * self.rhs[t];
            }
            self.rhs[r] = s / l[r * n + r];
        }
        for r in (0..k).rev() {
            let mut s = self.rhs[r];
            for t in r + 1..k {
                s -= l[t * n + r] * self.z[t];
            }
            self.z[r] = s / l[r * n + r];
        }
        Subproblem::Solved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kkt_ok(a: ArrayView2<'_, f64>, y: &[f64], x: &[f64], tol: f64) -> bool {
        let aty = at_y(a, y);
        let scale = aty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gram = gram_matrix(a);
        (0..x.len()).all(|j| {
            let grad: f64 = (0..x.len()).map(|i| gram[[j, i]] * x[i]).sum::<f64>() - aty[j];
            x[j] >= 0.0
                && grad >= -tol * scale
                && (x[j] * grad).abs() <= tol * scale * x[j].max(1.0)
        })
    }

    #[test]
    fn identity_examples() {
        let eye = Array2::<f64>::eye(3);
        assert_eq!(nnls(eye.view(), &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let eye = Array2::<f64>::eye(2);
        assert_eq!(nnls(eye.view(), &[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(nnls(a.view(), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(nnls(a.view(), &[-1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let a = array![[1.0, f64::NAN]];
        assert!(nnls(a.view(), &[1.0]).is_err());
        let a = array![[1.0, 2.0]];
        assert!(nnls(a.view(), &[1.0, 2.0]).is_err());
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(nnls(empty.view(), &[]).is_err());
    }

    #[test]
    fn random_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (m, n) in [(6, 8), (32, 120), (10, 4), (40, 40)] {
            for _ in 0..20 {
                let a = Array2::from_shape_fn((m, n), |_| rng.random::<f64>());
                let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
                let x = nnls(a.view(), &y).unwrap();
                assert!(kkt_ok(a.view(), &y, &x, 1e-10), "m={m} n={n}");
            }
        }
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((20, 15), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let gram = gram_matrix(a.view());
        let aty = at_y(a.view(), &y);
        let mut solver = NnlsSolver::new(15);
        let mut cold = vec![0.0; 15];
        solver.solve(&gram, &aty, 0.3, &mut cold).unwrap();
        let mut warm: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        solver.solve(&gram, &aty, 0.3, &mut warm).unwrap();
        for (c, w) in cold.iter().zip(&warm) {
            assert!((c - w).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_shift_matches_augmented_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, n) = (12, 9);
        let mu: f64 = 0.7;
        let a = Array2::from_shape_fn((m, n), |_| rng.random::<f64>() - 0.3);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let mut aug = Array2::zeros((m + n, n));
        aug.slice_mut(ndarray::s![..m, ..]).assign(&a);
        for j in 0..n {
            aug[[m + j, j]] = mu.sqrt();
        }
        let mut y_aug = y.clone();
        y_aug.extend(std::iter::repeat_n(0.0, n));
        let direct = nnls(aug.view(), &y_aug).unwrap();
        let mut shifted = vec![0.0; n];
        NnlsSolver::new(n)
            .solve(&gram_matrix(a.view()), &at_y(a.view(), &y), mu, &mut shifted)
            .unwrap();
        for (d, s) in direct.iter().zip(&shifted) {
            assert!((d - s).abs() < 1e-10);
        }
    }
}
