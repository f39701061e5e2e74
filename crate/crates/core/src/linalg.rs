//! Small dense linear algebra: Gaussian elimination with partial pivoting.
//!
//! All matrices in this crate are tiny (covariate and balancing dimensions
//! are single digits), so plain dense elimination is both adequate and easy
//! to audit.

use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Relative pivot tolerance used to declare rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let rhs = b.view().insert_axis(ndarray::Axis(1)).to_owned();
    let x = solve_multi(a, &rhs)?;
    Ok(x.column(0).to_owned())
}

/// Solves `a X = B` for a multi-column right-hand side.
pub fn solve_multi(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Argument(format!(
            "solve: shape mismatch ({}x{} vs {} rhs rows)",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let m = b.ncols();
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                lhs[(i, col)]
                    .abs()
                    .partial_cmp(&lhs[(j, col)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if lhs[(pivot_row, col)].abs() <= RANK_TOL * scale {
            return Err(Error::RankDeficient(format!(
                "pivot {} below tolerance in {}x{} system",
                col, n, n
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                lhs.swap((col, j), (pivot_row, j));
            }
            for j in 0..m {
                rhs.swap((col, j), (pivot_row, j));
            }
        }
        let pivot = lhs[(col, col)];
        for row in (col + 1)..n {
            let factor = lhs[(row, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                lhs[(row, j)] -= factor * lhs[(col, j)];
            }
            for j in 0..m {
                rhs[(row, j)] -= factor * rhs[(col, j)];
            }
        }
    }

    // Back substitution.
    let mut x = Array2::zeros((n, m));
    for j in 0..m {
        for row in (0..n).rev() {
            let mut acc = rhs[(row, j)];
            for col in (row + 1)..n {
                acc -= lhs[(row, col)] * x[(col, j)];
            }
            x[(row, j)] = acc / lhs[(row, row)];
        }
    }
    Ok(x)
}

/// Inverse of a square matrix.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    solve_multi(a, &Array2::eye(n))
}

/// Finds a nonzero vector in the null space of an `r x c` matrix, or `None`
/// when the columns are linearly independent to within [`RANK_TOL`].
///
/// The returned vector is normalized to unit max-absolute value with its
/// first nonzero component positive, so callers observe a scale-invariant
/// representative of the kernel direction.
pub fn null_vector(a: &Array2<f64>) -> Option<Vec<f64>> {
    let rows = a.nrows();
    let cols = a.ncols();
    if cols == 0 {
        return None;
    }
    let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = RANK_TOL * scale;

    let mut work = a.clone();
    let mut pivot_col_of_row: Vec<usize> = Vec::with_capacity(rows.min(cols));
    let mut is_pivot_col = vec![false; cols];
    let mut row = 0;

    for col in 0..cols {
        if row >= rows {
            break;
        }
        let pivot_row = (row..rows)
            .max_by(|&i, &j| {
                work[(i, col)]
                    .abs()
                    .partial_cmp(&work[(j, col)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if work[(pivot_row, col)].abs() <= tol {
            continue; // free column
        }
        if pivot_row != row {
            for j in 0..cols {
                work.swap((row, j), (pivot_row, j));
            }
        }
        let pivot = work[(row, col)];
        for r in 0..rows {
            if r == row {
                continue;
            }
            let factor = work[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..cols {
                work[(r, j)] -= factor * work[(row, j)];
            }
        }
        pivot_col_of_row.push(col);
        is_pivot_col[col] = true;
        row += 1;
    }

    let free_col = (0..cols).find(|&c| !is_pivot_col[c])?;

    // Back out the kernel vector: free variable 1, pivot variables from the
    // eliminated rows.
    let mut u = vec![0.0; cols];
    u[free_col] = 1.0;
    for (r, &pc) in pivot_col_of_row.iter().enumerate() {
        u[pc] = -work[(r, free_col)] / work[(r, pc)];
    }

    let max_abs = u.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if max_abs <= 0.0 {
        return None;
    }
    let first_nonzero_sign = u
        .iter()
        .find(|v| v.abs() > 0.0)
        .map(|v| v.signum())
        .unwrap_or(1.0);
    let factor = first_nonzero_sign / max_abs;
    for v in &mut u {
        *v *= factor;
    }
    Some(u)
}
