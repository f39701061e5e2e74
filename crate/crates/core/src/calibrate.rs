//! Linear (chi-square distance) calibration of design weights.
//!
//! The calibrated weights `w_i = d_i (1 + x_i' lambda)` minimize the
//! chi-square distance `sum_i (w_i - d_i)^2 / d_i` subject to the
//! benchmark constraints `sum_S w_i x_i = T_x`.

use ndarray::{Array1, Array2};

use crate::linalg;
use crate::{Error, Result};

/// Inputs for one calibration: design weights, the `n x q` matrix of
/// calibration variables on the sample, and the population totals.
#[derive(Debug, Clone)]
pub struct CalibrationSpec {
    pub design_weights: Vec<f64>,
    pub x_sample: Array2<f64>,
    pub targets: Vec<f64>,
}

impl CalibrationSpec {
    fn validate(&self) -> Result<()> {
        let n = self.design_weights.len();
        let q = self.x_sample.ncols();
        if self.x_sample.nrows() != n {
            return Err(Error::Argument(format!(
                "{} weights vs {} calibration rows",
                n,
                self.x_sample.nrows()
            )));
        }
        if self.targets.len() != q {
            return Err(Error::Argument(format!(
                "{} targets vs {} calibration columns",
                self.targets.len(),
                q
            )));
        }
        if n < q {
            return Err(Error::Argument(format!(
                "need at least {} sample units for {} calibration variables",
                q, q
            )));
        }
        if self.design_weights.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::Argument("design weights must be positive".into()));
        }
        Ok(())
    }
}

/// Calibrated weights plus diagnostics.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Some calibrated weight came out non-positive. Weights are returned
    /// unchanged; truncation is out of scope.
    pub has_nonpositive: bool,
}

/// Solves the calibration equations and returns the adjusted weights.
pub fn calibrate_weights(spec: &CalibrationSpec) -> Result<CalibrationResult> {
    spec.validate()?;
    let n = spec.design_weights.len();
    let q = spec.x_sample.ncols();

    let mut gram = Array2::<f64>::zeros((q, q));
    let mut rhs = Array1::<f64>::zeros(q);
    for i in 0..n {
        let d = spec.design_weights[i];
        for a in 0..q {
            let xa = spec.x_sample[(i, a)];
            rhs[a] += d * xa;
            for b in 0..q {
                gram[(a, b)] += d * xa * spec.x_sample[(i, b)];
            }
        }
    }
    for a in 0..q {
        rhs[a] = spec.targets[a] - rhs[a];
    }
    let lambda = linalg::solve(&gram, &rhs).map_err(|_| {
        Error::RankDeficient("singular calibration system (collinear calibration variables)".into())
    })?;

    let mut weights = Vec::with_capacity(n);
    let mut has_nonpositive = false;
    for i in 0..n {
        let adj: f64 = (0..q).map(|a| spec.x_sample[(i, a)] * lambda[a]).sum();
        let w = spec.design_weights[i] * (1.0 + adj);
        if w <= 0.0 {
            has_nonpositive = true;
        }
        weights.push(w);
    }
    Ok(CalibrationResult {
        weights,
        lambda: lambda.to_vec(),
        has_nonpositive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn calibrated_totals(spec: &CalibrationSpec, weights: &[f64]) -> Vec<f64> {
        (0..spec.x_sample.ncols())
            .map(|a| {
                (0..weights.len())
                    .map(|i| weights[i] * spec.x_sample[(i, a)])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn already_calibrated_weights_unchanged() {
        let spec = CalibrationSpec {
            design_weights: vec![2.0, 3.0],
            x_sample: array![[1.0], [2.0]],
            targets: vec![8.0], // 2*1 + 3*2 = 8 already
        };
        let res = calibrate_weights(&spec).unwrap();
        assert_abs_diff_eq!(res.lambda[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(res.weights[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(res.weights[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_hand_example() {
        let spec = CalibrationSpec {
            design_weights: vec![2.0, 2.0],
            x_sample: array![[1.0], [2.0]],
            targets: vec![8.0],
        };
        let res = calibrate_weights(&spec).unwrap();
        assert_abs_diff_eq!(res.lambda[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(res.weights[0], 2.4, epsilon = 1e-12);
        assert_abs_diff_eq!(res.weights[1], 2.8, epsilon = 1e-12);
        let totals = calibrated_totals(&spec, &res.weights);
        assert_abs_diff_eq!(totals[0], 8.0, epsilon = 1e-12);
    }

    /// QP oracle: solve the full KKT system
    /// `[2 diag(1/d), X; X', 0] [w; mu] = [2*1, T]` by Gauss-Jordan and
    /// compare. Minimizing `sum d_i (w_i/d_i - 1)^2` subject to the
    /// calibration constraints.
    fn qp_oracle(spec: &CalibrationSpec) -> Vec<f64> {
        let n = spec.design_weights.len();
        let q = spec.x_sample.ncols();
        let dim = n + q;
        let mut kkt = ndarray::Array2::<f64>::zeros((dim, dim));
        let mut rhs = ndarray::Array1::<f64>::zeros(dim);
        for i in 0..n {
            kkt[(i, i)] = 2.0 / spec.design_weights[i];
            for a in 0..q {
                kkt[(i, n + a)] = spec.x_sample[(i, a)];
                kkt[(n + a, i)] = spec.x_sample[(i, a)];
            }
            rhs[i] = 2.0;
        }
        for a in 0..q {
            rhs[n + a] = spec.targets[a];
        }
        let sol = crate::linalg::solve(&kkt, &rhs).unwrap();
        sol.iter().take(n).cloned().collect()
    }

    #[test]
    fn chi_square_optimality_matches_qp_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        for _ in 0..30 {
            let n = 4 + (rng.random::<u32>() % 17) as usize; // 4..=20
            let q = 1 + (rng.random::<u32>() % 3) as usize; // 1..=3
            let design_weights: Vec<f64> =
                (0..n).map(|_| 1.0 + rng.random::<f64>() * 9.0).collect();
            let mut x = ndarray::Array2::zeros((n, q));
            for i in 0..n {
                x[(i, 0)] = 1.0;
                for j in 1..q {
                    x[(i, j)] = rng.random::<f64>() * 4.0 - 2.0;
                }
            }
            let targets: Vec<f64> = (0..q)
                .map(|a| {
                    let ht: f64 = (0..n).map(|i| design_weights[i] * x[(i, a)]).sum();
                    ht * (0.9 + 0.2 * rng.random::<f64>())
                })
                .collect();
            let spec = CalibrationSpec {
                design_weights,
                x_sample: x,
                targets,
            };
            let res = calibrate_weights(&spec).unwrap();
            let oracle = qp_oracle(&spec);
            for (i, (got, want)) in res.weights.iter().zip(&oracle).enumerate() {
                assert!(
                    (got - want).abs() < 1e-6 * want.abs().max(1.0),
                    "weight {}: {} vs oracle {}",
                    i,
                    got,
                    want
                );
            }
        }
    }

    #[test]
    fn idempotent_on_recalibration() {
        let spec = CalibrationSpec {
            design_weights: vec![2.0, 2.0, 3.0],
            x_sample: array![[1.0, 0.5], [1.0, 1.5], [1.0, -0.5]],
            targets: vec![8.0, 2.0],
        };
        let first = calibrate_weights(&spec).unwrap();
        let again = calibrate_weights(&CalibrationSpec {
            design_weights: first.weights.clone(),
            x_sample: spec.x_sample.clone(),
            targets: spec.targets.clone(),
        })
        .unwrap();
        for (a, b) in first.weights.iter().zip(&again.weights) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn singular_system_rejected() {
        let spec = CalibrationSpec {
            design_weights: vec![1.0, 1.0],
            x_sample: array![[1.0, 2.0], [1.0, 2.0]],
            targets: vec![3.0, 6.0],
        };
        assert!(matches!(
            calibrate_weights(&spec),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn nonpositive_weights_flagged_not_truncated() {
        // An extreme shrinkage target drives one weight negative.
        let spec = CalibrationSpec {
            design_weights: vec![1.0, 1.0],
            x_sample: array![[1.0], [3.0]],
            targets: vec![0.5],
        };
        let res = calibrate_weights(&spec).unwrap();
        assert!(res.has_nonpositive);
        let totals = calibrated_totals(&spec, &res.weights);
        assert_abs_diff_eq!(totals[0], 0.5, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn calibration_is_exact(
            seed in 0u64..1000,
            n in 3usize..30,
            q in 1usize..3,
        ) {
            prop_assume!(n >= q + 2);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let design_weights: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>() * 5.0).collect();
            let mut x = ndarray::Array2::zeros((n, q));
            for i in 0..n {
                for j in 0..q {
                    x[(i, j)] = if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 };
                }
            }
            let targets: Vec<f64> = (0..q)
                .map(|a| {
                    let ht: f64 = (0..n).map(|i| design_weights[i] * x[(i, a)]).sum();
                    ht * (0.8 + 0.4 * rng.random::<f64>())
                })
                .collect();
            let spec = CalibrationSpec { design_weights, x_sample: x, targets: targets.clone() };
            let res = calibrate_weights(&spec).unwrap();
            let totals = calibrated_totals(&spec, &res.weights);
            let scale = targets.iter().fold(1.0_f64, |acc, t| acc.max(t.abs()));
            for (got, want) in totals.iter().zip(&targets) {
                prop_assert!((got - want).abs() / scale < 1e-8);
            }
        }
    }
}
