//! Determinant-optimal row subset selection by best-swap exchange, with
//! rank-one inverse and log-determinant maintenance.

use crate::error::{Error, Result};
use crate::rng::{rng_from, sample_without_replacement};
use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

/// Subtracts the column means. Centering makes the selection criterion
/// favor spread rather than magnitude.
pub fn center_features(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n < 2 || p == 0 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 rows and 1 column to center, got {n}x{p}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite feature values".into()));
    }
    let mut centered = x.clone();
    for c in 0..p {
        let mean = x.column(c).sum() / n as f64;
        for r in 0..n {
            centered[(r, c)] -= mean;
        }
    }
    Ok(centered)
}

/// A selection task: pick `k` rows of `x` (the `fixed` rows are always
/// included) maximizing the log-determinant of the selected rows' scatter
/// matrix.
#[derive(Debug, Clone)]
pub struct SubsetProblem {
    x: DMatrix<f64>,
    fixed: Vec<usize>,
    k: usize,
}

impl SubsetProblem {
    /// `features` is raw (uncentered); rows are candidates, columns are
    /// feature components. Centering happens here.
    pub fn new(features: &DMatrix<f64>, fixed: Vec<usize>, k: usize) -> Result<Self> {
        let x = center_features(features)?;
        let n = x.nrows();
        let mut seen = std::collections::HashSet::new();
        for &f in &fixed {
            if f >= n {
                return Err(Error::argument(format!(
                    "fixed row {f} is out of range for {n} rows"
                )));
            }
            if !seen.insert(f) {
                return Err(Error::argument(format!("fixed row {f} appears twice")));
            }
        }
        if k < fixed.len() {
            return Err(Error::argument(format!(
                "k={k} is smaller than the {} fixed rows",
                fixed.len()
            )));
        }
        if k > n {
            return Err(Error::argument(format!("k={k} exceeds the {n} rows")));
        }
        Ok(SubsetProblem { x, fixed, k })
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn centered(&self) -> &DMatrix<f64> {
        &self.x
    }

    fn row_vec(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }
}

/// Applies a rank-one addition and/or removal to a maintained inverse and
/// log-determinant pair: the matrix goes from A to A + aa' - rr'. Removal
/// that would make the matrix (numerically) singular is rejected.
pub fn logdet_add_remove(
    inv: &DMatrix<f64>,
    logdet: f64,
    add: Option<&DVector<f64>>,
    remove: Option<&DVector<f64>>,
) -> Result<(DMatrix<f64>, f64)> {
    let mut inv = inv.clone();
    let mut logdet = logdet;
    if let Some(a) = add {
        let ia = &inv * a;
        let factor = 1.0 + a.dot(&ia);
        if factor <= 1e-12 {
            return Err(Error::ExchangeRejected);
        }
        logdet += factor.ln();
        let scale = 1.0 / factor;
        // inv <- inv - (inv a)(inv a)' / factor
        inv.ger(-scale, &ia, &ia, 1.0);
    }
    if let Some(r) = remove {
        let ir = &inv * r;
        let factor = 1.0 - r.dot(&ir);
        if factor <= 1e-12 {
            return Err(Error::ExchangeRejected);
        }
        logdet += factor.ln();
        let scale = 1.0 / factor;
        inv.ger(scale, &ir, &ir, 1.0);
    }
    Ok((inv, logdet))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    /// Chosen row indices, ascending, fixed rows included.
    pub selection: Vec<usize>,
    pub logdet: f64,
    /// Diagonal loading added when the initial scatter was singular.
    pub ridge: f64,
    pub swaps: usize,
}

fn scatter(problem: &SubsetProblem, rows: &[usize], ridge: f64) -> DMatrix<f64> {
    let p = problem.dim();
    let mut a = DMatrix::<f64>::identity(p, p) * ridge;
    for &i in rows {
        let r = problem.x.row(i);
        a.ger(1.0, &r.transpose(), &r.transpose(), 1.0);
    }
    a
}

/// Best-swap exchange search. The free part of the selection is seeded
/// from `seed`; each pass scans every (incoming, outgoing) pair, applies
/// the single best swap, and the search stops when no swap improves the
/// determinant or after `max_passes` swaps.
pub fn select_subset(problem: &SubsetProblem, max_passes: usize, seed: u64) -> Result<SubsetSolution> {
    let n = problem.rows();
    let p = problem.dim();
    let fixed_len = problem.fixed.len();
    let free_count = problem.k - fixed_len;

    let is_fixed = {
        let mut mask = vec![false; n];
        for &f in &problem.fixed {
            mask[f] = true;
        }
        mask
    };
    let candidates: Vec<usize> = (0..n).filter(|i| !is_fixed[*i]).collect();

    let mut rng = rng_from(&[0xd0b7, seed]);
    let free: Vec<usize> = sample_without_replacement(&mut rng, &candidates, free_count);
    let mut selection: Vec<usize> = problem.fixed.clone();
    selection.extend(free);

    let mut selected = vec![false; n];
    for &i in &selection {
        selected[i] = true;
    }

    // Initial factorization, with diagonal loading if the start is singular.
    let mut ridge = 0.0;
    let mut chol = Cholesky::new(scatter(problem, &selection, 0.0));
    if chol.is_none() {
        let trace: f64 = selection
            .iter()
            .map(|&i| problem.x.row(i).norm_squared())
            .sum();
        if trace <= 0.0 {
            return Err(Error::DegenerateData(
                "selected rows carry no feature signal".into(),
            ));
        }
        ridge = 1e-8 * trace / p as f64;
        log::warn!(
            "initial subset scatter is singular; loading the diagonal with {ridge:.3e}"
        );
        chol = Cholesky::new(scatter(problem, &selection, ridge));
    }
    let chol = chol.ok_or_else(|| {
        Error::DegenerateData("subset scatter is singular even after diagonal loading".into())
    })?;
    let mut logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut inv = chol.inverse();

    let mut swaps = 0;
    for _ in 0..max_passes {
        if free_count == 0 {
            break;
        }
        let outs: Vec<usize> = selection[fixed_len..].to_vec();
        let ins: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| !selected[i])
            .collect();
        if ins.is_empty() {
            break;
        }

        // Per outgoing row: inv*y and y'inv*y, shared across incoming rows.
        let out_proj: Vec<(DVector<f64>, f64)> = outs
            .iter()
            .map(|&o| {
                let y = problem.row_vec(o);
                let iy = &inv * &y;
                let yiy = y.dot(&iy);
                (iy, yiy)
            })
            .collect();

        // Determinant ratio for swapping one incoming row x against one
        // outgoing row y: (1 + x'A⁻¹x)(1 - y'A⁻¹y) + (x'A⁻¹y)².
        let per_in: Vec<(f64, usize)> = ins
            .par_iter()
            .map(|&i| {
                let x = problem.row_vec(i);
                let ix = &inv * &x;
                let xix = x.dot(&ix);
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (oi, (iy, yiy)) in out_proj.iter().enumerate() {
                    let cross = x.dot(iy);
                    let ratio = (1.0 + xix) * (1.0 - yiy) + cross * cross;
                    if ratio > best.0 {
                        best = (ratio, oi);
                    }
                }
                best
            })
            .collect();

        let mut best_ratio = 1.0 + 1e-10;
        let mut best_pair: Option<(usize, usize)> = None;
        for (pos, &(ratio, oi)) in per_in.iter().enumerate() {
            if ratio > best_ratio {
                best_ratio = ratio;
                best_pair = Some((pos, oi));
            }
        }
        let Some((in_pos, out_pos)) = best_pair else {
            break;
        };
        let row_in = ins[in_pos];
        let row_out = outs[out_pos];

        let x_in = problem.row_vec(row_in);
        let x_out = problem.row_vec(row_out);
        let (new_inv, new_logdet) =
            logdet_add_remove(&inv, logdet, Some(&x_in), Some(&x_out))?;
        inv = new_inv;
        logdet = new_logdet;
        selected[row_out] = false;
        selected[row_in] = true;
        let slot = selection[fixed_len..]
            .iter()
            .position(|&s| s == row_out)
            .expect("outgoing row is in the free part");
        selection[fixed_len + slot] = row_in;
        swaps += 1;
    }

    selection.sort_unstable();
    Ok(SubsetSolution {
        selection,
        logdet,
        ridge,
        swaps,
    })
}
