//! Dense two-phase primal simplex for small equality-form linear programs.
//!
//! Solves `min c'x  s.t.  A x = b, x >= 0`. The landing-phase programs have
//! at most 16 constraints over a few thousand completion masses, so a plain
//! tableau with Bland's anti-cycling rule is entirely adequate.

use ndarray::Array2;

use crate::{Error, Result};

const TOL: f64 = 1e-9;

pub fn solve_lp(a: &Array2<f64>, b: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    let m = a.nrows();
    let n = a.ncols();
    if b.len() != m || c.len() != n {
        return Err(Error::Argument(format!(
            "lp: {} constraints, {} rhs, {} vars, {} costs",
            m,
            b.len(),
            n,
            c.len()
        )));
    }

    // Tableau: m constraint rows + objective row; columns = n original vars,
    // m artificials, rhs.
    let ncols = n + m + 1;
    let mut t = Array2::<f64>::zeros((m + 1, ncols));
    for i in 0..m {
        let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = flip * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, ncols - 1)] = flip * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the sum of artificials. Reduced costs start as the
    // negated column sums so the artificial basis prices to zero.
    for j in 0..n {
        let col_sum: f64 = (0..m).map(|i| t[(i, j)]).sum();
        t[(m, j)] = -col_sum;
    }
    let rhs_sum: f64 = (0..m).map(|i| t[(i, ncols - 1)]).sum();
    t[(m, ncols - 1)] = -rhs_sum;

    run_simplex(&mut t, &mut basis, n, true)?;
    if t[(m, ncols - 1)].abs() > 1e-7 {
        return Err(Error::Numeric(format!(
            "lp infeasible: phase-1 objective {}",
            -t[(m, ncols - 1)]
        )));
    }

    // Phase 2: install the real objective and eliminate the basic columns.
    for j in 0..ncols {
        t[(m, j)] = 0.0;
    }
    for j in 0..n {
        t[(m, j)] = c[j];
    }
    for (row, &bv) in basis.iter().enumerate() {
        if bv < n && c[bv] != 0.0 {
            let factor = c[bv];
            for j in 0..ncols {
                let v = t[(row, j)];
                t[(m, j)] -= factor * v;
            }
        }
    }

    run_simplex(&mut t, &mut basis, n, false)?;

    let mut x = vec![0.0; n];
    for (row, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[(row, ncols - 1)];
        }
    }
    Ok(x)
}

/// Simplex iterations with Bland's rule. During phase 2 artificial columns
/// never enter the basis.
fn run_simplex(
    t: &mut Array2<f64>,
    basis: &mut [usize],
    n_orig: usize,
    allow_artificial: bool,
) -> Result<()> {
    let m = t.nrows() - 1;
    let ncols = t.ncols();
    let enter_limit = if allow_artificial { ncols - 1 } else { n_orig };

    let max_pivots = 50 * (m + 1) * (ncols + 1);
    for _ in 0..max_pivots {
        // Bland: the lowest-index column with a negative reduced cost.
        let Some(entering) = (0..enter_limit).find(|&j| t[(m, j)] < -TOL) else {
            return Ok(());
        };
        // Ratio test; ties broken by smallest basis variable index.
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            let coef = t[(i, entering)];
            if coef > TOL {
                let ratio = t[(i, ncols - 1)] / coef;
                let better = match leaving {
                    None => true,
                    Some((prev, prev_ratio)) => {
                        ratio < prev_ratio - TOL
                            || (ratio <= prev_ratio + TOL && basis[i] < basis[prev])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((pivot_row, _)) = leaving else {
            return Err(Error::Numeric("lp unbounded".into()));
        };

        let pivot = t[(pivot_row, entering)];
        for j in 0..ncols {
            t[(pivot_row, j)] /= pivot;
        }
        for i in 0..=m {
            if i == pivot_row {
                continue;
            }
            let factor = t[(i, entering)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..ncols {
                let v = t[(pivot_row, j)];
                t[(i, j)] -= factor * v;
            }
        }
        basis[pivot_row] = entering;
    }
    Err(Error::Numeric("lp pivot limit exceeded".into()))
}
