//! Balanced sampling via the cube method.
//!
//! The flight phase is the fast algorithm: a martingale random walk on a
//! sliding window of `p + 1` non-fixed units that conserves the balancing
//! constraints `sum_i (x_i / pi_i) probs_i` at every step and fixes at least
//! one indicator per step. The landing phase resolves the at-most-`p`
//! remaining fractional indicators through a linear program over candidate
//! completions (falling back to suppression of balancing variables when too
//! many remain). Simple random sampling without replacement is provided as
//! the baseline design.

mod lp;

use ndarray::Array2;
use rand::Rng;

use crate::linalg;
use crate::{Error, Result};

/// Coordinates this close to 0 or 1 are snapped and fixed.
const SNAP: f64 = 1e-9;
/// Largest fractional block handled by the landing LP; beyond this the
/// landing suppresses trailing balancing variables and resumes the flight.
const LANDING_MAX: usize = 15;

/// Inclusion probabilities plus the `N x p` balancing-variable matrix.
/// By convention the first column of `x` is `pi` itself, which pins the
/// realized sample size.
#[derive(Debug, Clone)]
pub struct BalancingProblem {
    pi: Vec<f64>,
    x: Array2<f64>,
}

impl BalancingProblem {
    pub fn new(pi: Vec<f64>, x: Array2<f64>) -> Result<Self> {
        if x.nrows() != pi.len() {
            return Err(Error::Argument(format!(
                "{} probabilities vs {} balancing rows",
                pi.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Argument("at least one balancing column".into()));
        }
        if pi.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Argument(
                "inclusion probabilities must lie in [0, 1]".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("balancing variables must be finite".into()));
        }
        Ok(BalancingProblem { pi, x })
    }

    /// Problem balancing on the inclusion probabilities alone (fixed size).
    pub fn size_only(pi: Vec<f64>) -> Result<Self> {
        let x = Array2::from_shape_fn((pi.len(), 1), |(i, _)| pi[i]);
        BalancingProblem::new(pi, x)
    }

    pub fn n_units(&self) -> usize {
        self.pi.len()
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    /// Population totals of the balancing columns.
    fn totals(&self) -> Vec<f64> {
        (0..self.x.ncols())
            .map(|j| self.x.column(j).sum())
            .collect()
    }
}

/// Relaxed indicator vector produced by the flight phase.
#[derive(Debug, Clone)]
pub struct FlightState {
    pub probs: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl FlightState {
    /// Indices still strictly between 0 and 1.
    pub fn fractional(&self) -> Vec<usize> {
        (0..self.probs.len()).filter(|&i| !self.fixed[i]).collect()
    }
}

/// Realized sample: indicators, inclusion probabilities, design weights.
#[derive(Debug, Clone)]
pub struct SampleSelection {
    pub indicators: Vec<bool>,
    pub pi: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SampleSelection {
    fn from_parts(pi: &[f64], indicators: Vec<bool>) -> Self {
        let weights = indicators
            .iter()
            .zip(pi)
            .map(|(&sel, &p)| if sel && p > 0.0 { 1.0 / p } else { 0.0 })
            .collect();
        SampleSelection {
            indicators,
            pi: pi.to_vec(),
            weights,
        }
    }

    pub fn n_selected(&self) -> usize {
        self.indicators.iter().filter(|&&s| s).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.indicators
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Sliding-window engine shared by the flight phase and the landing-phase
/// suppression fallback.
struct FlightEngine<'a> {
    problem: &'a BalancingProblem,
    /// Column scales (population root-mean-square of each balancing column)
    /// used to condition the kernel computations.
    scales: Vec<f64>,
    /// Number of balancing columns currently in force (suppression shrinks
    /// this).
    ncols: usize,
    probs: Vec<f64>,
    fixed: Vec<bool>,
    window: Vec<usize>,
    /// Random unit order; a deterministic scan would tie the support of the
    /// design to the population order.
    scan: Vec<usize>,
    cursor: usize,
}

impl<'a> FlightEngine<'a> {
    fn new(problem: &'a BalancingProblem, rng: &mut impl Rng) -> Self {
        let n = problem.n_units();
        let p = problem.n_columns();
        let mut scales = Vec::with_capacity(p);
        for j in 0..p {
            let ms: f64 =
                problem.x.column(j).iter().map(|v| v * v).sum::<f64>() / (n.max(1)) as f64;
            let rms = ms.sqrt();
            scales.push(if rms > 0.0 { rms } else { 1.0 });
        }
        let mut probs = problem.pi.clone();
        let mut fixed = vec![false; n];
        for i in 0..n {
            if probs[i] <= SNAP {
                probs[i] = 0.0;
                fixed[i] = true;
            } else if probs[i] >= 1.0 - SNAP {
                probs[i] = 1.0;
                fixed[i] = true;
            }
        }
        let mut scan: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        scan.shuffle(rng);
        FlightEngine {
            problem,
            scales,
            ncols: p,
            probs,
            fixed,
            window: Vec::with_capacity(p + 2),
            scan,
            cursor: 0,
        }
    }

    /// Resumes from an existing relaxed vector with a reduced column count.
    fn resume(
        problem: &'a BalancingProblem,
        probs: Vec<f64>,
        ncols: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut engine = FlightEngine::new(problem, rng);
        engine.ncols = ncols;
        engine.fixed = probs
            .iter()
            .map(|&v| v <= SNAP || v >= 1.0 - SNAP)
            .collect();
        engine.probs = probs;
        engine.cursor = 0;
        engine.window.clear();
        engine
    }

    fn adjusted(&self, unit: usize, col: usize) -> f64 {
        self.problem.x[(unit, col)] / (self.scales[col] * self.problem.pi[unit])
    }

    fn refill(&mut self, target: usize) {
        self.window.retain(|&i| !self.fixed[i]);
        while self.window.len() < target && self.cursor < self.scan.len() {
            let i = self.scan[self.cursor];
            self.cursor += 1;
            if !self.fixed[i] {
                self.window.push(i);
            }
        }
    }

    /// Kernel direction over the current window plus the largest step sizes
    /// keeping the window inside the unit cube. Returns `(u, lambda_up,
    /// lambda_down, argmin_up, argmin_down)`.
    fn propose(&self) -> Option<(Vec<f64>, f64, f64, usize, usize)> {
        let w = self.window.len();
        if w == 0 {
            return None;
        }
        let mut mat = Array2::<f64>::zeros((self.ncols, w));
        for (c, &unit) in self.window.iter().enumerate() {
            for r in 0..self.ncols {
                mat[(r, c)] = self.adjusted(unit, r);
            }
        }
        let u = linalg::null_vector(&mat)?;

        let mut lambda_up = f64::INFINITY;
        let mut lambda_down = f64::INFINITY;
        let mut arg_up = 0;
        let mut arg_down = 0;
        for (c, &unit) in self.window.iter().enumerate() {
            let uc = u[c];
            if uc.abs() < 1e-14 {
                continue;
            }
            let (room_up, room_down) = if uc > 0.0 {
                ((1.0 - self.probs[unit]) / uc, self.probs[unit] / uc)
            } else {
                (self.probs[unit] / (-uc), (1.0 - self.probs[unit]) / (-uc))
            };
            if room_up < lambda_up {
                lambda_up = room_up;
                arg_up = c;
            }
            if room_down < lambda_down {
                lambda_down = room_down;
                arg_down = c;
            }
        }
        if !lambda_up.is_finite() || !lambda_down.is_finite() {
            return None;
        }
        Some((u, lambda_up, lambda_down, arg_up, arg_down))
    }

    /// One randomized flight move; `false` when no kernel direction exists.
    fn step(&mut self, rng: &mut impl Rng) -> Result<bool> {
        let Some((u, lambda_up, lambda_down, arg_up, arg_down)) = self.propose() else {
            return Ok(false);
        };
        let total = lambda_up + lambda_down;
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::Numeric(
                "flight phase produced a degenerate step".into(),
            ));
        }
        let go_up = rng.random::<f64>() < lambda_down / total;
        let (lambda, argmin) = if go_up {
            (lambda_up, arg_up)
        } else {
            (-lambda_down, arg_down)
        };
        let mut fixed_any = false;
        for (c, &unit) in self.window.iter().enumerate() {
            let v = (self.probs[unit] + lambda * u[c]).clamp(0.0, 1.0);
            self.probs[unit] = v;
            if v <= SNAP {
                self.probs[unit] = 0.0;
                self.fixed[unit] = true;
                fixed_any = true;
            } else if v >= 1.0 - SNAP {
                self.probs[unit] = 1.0;
                self.fixed[unit] = true;
                fixed_any = true;
            }
        }
        if !fixed_any {
            // The binding coordinate must land on its bound; force it.
            let unit = self.window[argmin];
            let bound_one = (lambda > 0.0) == (u[argmin] > 0.0);
            self.probs[unit] = if bound_one { 1.0 } else { 0.0 };
            self.fixed[unit] = true;
        }
        Ok(true)
    }

    /// Runs the walk to exhaustion: full windows of `ncols + 1` units while
    /// they last, then progressively smaller windows for as long as a kernel
    /// direction survives.
    fn run(&mut self, rng: &mut impl Rng) -> Result<()> {
        loop {
            self.refill(self.ncols + 1);
            if self.window.len() == self.ncols + 1 {
                if !self.step(rng)? {
                    // A p x (p+1) block always has a kernel vector.
                    return Err(Error::Numeric(
                        "no kernel vector found for a full flight window".into(),
                    ));
                }
                continue;
            }
            // Drain: fewer than ncols + 1 units remain anywhere.
            if self.window.is_empty() || !self.step(rng)? {
                return Ok(());
            }
        }
    }

    fn into_state(self) -> FlightState {
        FlightState {
            probs: self.probs,
            fixed: self.fixed,
        }
    }
}

/// Fast flight phase. Terminates with at most `p` fractional coordinates
/// while conserving `A probs = A pi` for `A` with columns `x_i / pi_i`.
pub fn fast_flight(problem: &BalancingProblem, rng: &mut impl Rng) -> Result<FlightState> {
    let mut engine = FlightEngine::new(problem, rng);
    engine.run(rng)?;
    Ok(engine.into_state())
}

/// Per-column conservation error of a relaxed vector against the balancing
/// constraints, in the raw units of `x / pi`.
pub fn flight_imbalance(problem: &BalancingProblem, state: &FlightState) -> Vec<f64> {
    let p = problem.n_columns();
    let mut err = vec![0.0; p];
    for i in 0..problem.n_units() {
        let pi = problem.pi[i];
        if pi <= 0.0 {
            continue;
        }
        let diff = state.probs[i] - pi;
        if diff == 0.0 {
            continue;
        }
        for (j, e) in err.iter_mut().enumerate() {
            *e += problem.x[(i, j)] / pi * diff;
        }
    }
    err
}

/// Landing phase: randomized rounding of the remaining fractional block.
///
/// The rounding distribution solves a linear program over candidate
/// completions whose marginals reproduce the relaxed values exactly
/// (preserving inclusion probabilities) while minimizing the expected
/// squared relative balancing error. When the fractional block sums to an
/// integer, only completions of exactly that size are admitted, so a
/// balanced-on-`pi` problem realizes its target sample size in every draw.
pub fn landing_phase(
    state: &FlightState,
    problem: &BalancingProblem,
    rng: &mut impl Rng,
) -> Result<SampleSelection> {
    let mut probs = state.probs.clone();
    let mut ncols = problem.n_columns();

    loop {
        let frac: Vec<usize> = (0..probs.len())
            .filter(|&i| probs[i] > SNAP && probs[i] < 1.0 - SNAP)
            .collect();
        if frac.is_empty() {
            let indicators = probs.iter().map(|&v| v > 0.5).collect();
            return Ok(SampleSelection::from_parts(&problem.pi, indicators));
        }
        if frac.len() > LANDING_MAX {
            // Suppression of variables: drop the trailing balancing column
            // and resume the flight on the remaining block. Even a single
            // remaining column drains any oversized block to one fractional
            // coordinate, so this always makes progress.
            if ncols > 1 {
                ncols -= 1;
            }
            let mut engine = FlightEngine::resume(problem, probs, ncols, rng);
            engine.run(rng)?;
            probs = engine.probs;
            continue;
        }
        return land_by_lp(&probs, &frac, problem, rng);
    }
}

fn land_by_lp(
    probs: &[f64],
    frac: &[usize],
    problem: &BalancingProblem,
    rng: &mut impl Rng,
) -> Result<SampleSelection> {
    let r = frac.len();
    let p = problem.n_columns();
    let totals = problem.totals();

    // HT contribution of the already-selected units.
    let mut fixed_ht = vec![0.0; p];
    for (i, &prob) in probs.iter().enumerate() {
        if prob >= 1.0 - SNAP && problem.pi[i] > 0.0 {
            for (j, ht) in fixed_ht.iter_mut().enumerate() {
                *ht += problem.x[(i, j)] / problem.pi[i];
            }
        }
    }

    let frac_sum: f64 = frac.iter().map(|&i| probs[i]).sum();
    let rounded = frac_sum.round();
    let exact_size = (frac_sum - rounded).abs() < 1e-7 && rounded >= 0.0 && rounded <= r as f64;
    let want = rounded as usize;

    let masks: Vec<u32> = (0u32..(1 << r))
        .filter(|m| !exact_size || m.count_ones() as usize == want)
        .collect();

    // Expected squared relative balancing error of each completion.
    let mut costs = Vec::with_capacity(masks.len());
    for &mask in &masks {
        let mut cost = 0.0;
        for j in 0..p {
            let mut ht = fixed_ht[j];
            for (bit, &unit) in frac.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    ht += problem.x[(unit, j)] / problem.pi[unit];
                }
            }
            let denom = if totals[j].abs() > 1e-12 {
                totals[j].abs()
            } else {
                1.0
            };
            let rel = (ht - totals[j]) / denom;
            cost += rel * rel;
        }
        costs.push(cost);
    }

    // Mass distribution over completions: marginals match the relaxed
    // vector, masses sum to one.
    let mut a = Array2::<f64>::zeros((r + 1, masks.len()));
    let mut b = vec![0.0; r + 1];
    for (col, &mask) in masks.iter().enumerate() {
        a[(0, col)] = 1.0;
        for bit in 0..r {
            if mask >> bit & 1 == 1 {
                a[(bit + 1, col)] = 1.0;
            }
        }
    }
    b[0] = 1.0;
    for (bit, &unit) in frac.iter().enumerate() {
        b[bit + 1] = probs[unit];
    }
    let mut masses = lp::solve_lp(&a, &b, &costs)?;
    for m in &mut masses {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    let total: f64 = masses.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric("landing produced an empty distribution".into()));
    }

    let draw = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = masks[masks.len() - 1];
    for (idx, &mass) in masses.iter().enumerate() {
        acc += mass;
        if draw < acc {
            chosen = masks[idx];
            break;
        }
    }

    let mut indicators: Vec<bool> = probs.iter().map(|&v| v >= 1.0 - SNAP).collect();
    for (bit, &unit) in frac.iter().enumerate() {
        indicators[unit] = chosen >> bit & 1 == 1;
    }
    Ok(SampleSelection::from_parts(&problem.pi, indicators))
}

/// Full cube draw: fast flight followed by the landing phase. Inclusion
/// probabilities are respected: `E[xi_i] = pi_i`.
pub fn cube_sample(problem: &BalancingProblem, rng: &mut impl Rng) -> Result<SampleSelection> {
    let state = fast_flight(problem, rng)?;
    landing_phase(&state, problem, rng)
}

/// Simple random sampling without replacement; `pi_i = n_samp / n_pop`.
pub fn srs_sample(n_pop: usize, n_samp: usize, rng: &mut impl Rng) -> Result<SampleSelection> {
    if n_samp > n_pop {
        return Err(Error::Argument(format!(
            "cannot sample {} of {}",
            n_samp, n_pop
        )));
    }
    let pi = if n_pop == 0 {
        Vec::new()
    } else {
        vec![n_samp as f64 / n_pop as f64; n_pop]
    };
    let mut indicators = vec![false; n_pop];
    for idx in rand::seq::index::sample(rng, n_pop, n_samp) {
        indicators[idx] = true;
    }
    Ok(SampleSelection::from_parts(&pi, indicators))
}

/// Per-column relative balancing errors of a realized selection:
/// `(sum_S x_ij / pi_i - sum_U x_ij) / max(|sum_U x_ij|, 1)`.
pub fn check_balance(sel: &SampleSelection, problem: &BalancingProblem) -> Vec<f64> {
    let p = problem.n_columns();
    let totals = problem.totals();
    let mut errs = vec![0.0; p];
    for (j, err) in errs.iter_mut().enumerate() {
        let mut ht = 0.0;
        for i in 0..problem.n_units() {
            if sel.indicators[i] && problem.pi[i] > 0.0 {
                ht += problem.x[(i, j)] / problem.pi[i];
            }
        }
        *err = (ht - totals[j]) / totals[j].abs().max(1.0);
    }
    errs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    fn random_problem(rng: &mut impl Rng, n: usize, p: usize) -> BalancingProblem {
        let pi: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
        let mut x = Array2::zeros((n, p));
        for i in 0..n {
            x[(i, 0)] = pi[i];
            for j in 1..p {
                x[(i, j)] = rng.random::<f64>() * 4.0 - 1.0;
            }
        }
        BalancingProblem::new(pi, x).unwrap()
    }

    #[test]
    fn size_only_flight_terminates_with_integer_sum() {
        let n = 10;
        let pi = vec![0.3; n];
        let problem = BalancingProblem::size_only(pi).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let state = fast_flight(&problem, &mut rng).unwrap();
        assert!(state.fractional().len() <= 1);
        let sum: f64 = state.probs.iter().sum();
        assert_abs_diff_eq!(sum, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn flight_conserves_balance() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for trial in 0..50 {
            let n = 8 + (trial % 20);
            let p = 1 + (trial % 4);
            let problem = random_problem(&mut rng, n, p);
            let state = fast_flight(&problem, &mut rng).unwrap();
            assert!(state.fractional().len() <= p);
            let imbalance = flight_imbalance(&problem, &state);
            assert!(
                max_abs(&imbalance) < 1e-8,
                "imbalance {:?} on trial {}",
                imbalance,
                trial
            );
        }
    }

    #[test]
    fn flight_step_is_a_martingale_mixture() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let problem = random_problem(&mut rng, 12, 3);
        let mut engine = FlightEngine::new(&problem, &mut rng);
        engine.refill(engine.ncols + 1);
        let (u, l_up, l_down, _, _) = engine.propose().expect("kernel must exist");
        assert!(l_up > 0.0 && l_down > 0.0);
        let w_up = l_down / (l_up + l_down);
        for (c, &unit) in engine.window.iter().enumerate() {
            let cur = engine.probs[unit];
            let up = cur + l_up * u[c];
            let down = cur - l_down * u[c];
            assert!((-1e-12..=1.0 + 1e-12).contains(&up));
            assert!((-1e-12..=1.0 + 1e-12).contains(&down));
            let mixed = w_up * up + (1.0 - w_up) * down;
            assert_abs_diff_eq!(mixed, cur, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_certain_units_selected() {
        let problem = BalancingProblem::size_only(vec![1.0; 5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let sel = cube_sample(&problem, &mut rng).unwrap();
        assert_eq!(sel.n_selected(), 5);
        assert!(sel.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn fixed_size_draws_and_support_coverage() {
        // N=6, pi = 0.5, balance on pi only: every draw has exactly 3 units
        // and all 20 subsets show up.
        let problem = BalancingProblem::size_only(vec![0.5; 6]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut seen = std::collections::HashSet::new();
        let draws = 100_000;
        for _ in 0..draws {
            let sel = cube_sample(&problem, &mut rng).unwrap();
            assert_eq!(sel.n_selected(), 3);
            let key: Vec<usize> = sel.selected_indices();
            seen.insert(key);
        }
        assert_eq!(seen.len(), 20, "all C(6,3) subsets should appear");
    }

    #[test]
    fn inclusion_probabilities_respected() {
        // N=8, p=2: per-unit selection frequency within 3 binomial standard
        // errors of 0.5 over many draws.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let n = 8;
        let mut x = Array2::zeros((n, 2));
        for i in 0..n {
            x[(i, 0)] = 0.5;
            x[(i, 1)] = rng.random::<f64>() * 3.0;
        }
        let problem = BalancingProblem::new(vec![0.5; n], x).unwrap();
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            let sel = cube_sample(&problem, &mut rng).unwrap();
            for (i, &s) in sel.indicators.iter().enumerate() {
                if s {
                    counts[i] += 1;
                }
            }
        }
        let sigma = (0.25 / draws as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 0.5).abs() < 3.0 * sigma,
                "unit {} frequency {}",
                i,
                freq
            );
        }
    }

    #[test]
    fn ht_total_unbiased() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let problem = random_problem(&mut rng, 12, 2);
        let y: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 5.0).collect();
        let total: f64 = y.iter().sum();
        let draws = 20_000;
        let mut ht_values = Vec::with_capacity(draws);
        for _ in 0..draws {
            let sel = cube_sample(&problem, &mut rng).unwrap();
            let ht: f64 = (0..12)
                .filter(|&i| sel.indicators[i])
                .map(|i| y[i] / problem.pi[i])
                .sum();
            ht_values.push(ht);
        }
        let mean = ht_values.iter().sum::<f64>() / draws as f64;
        let var = ht_values
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (draws as f64 - 1.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - total).abs() < 3.0 * se.max(1e-9),
            "mean {} vs total {} (se {})",
            mean,
            total,
            se
        );
    }

    #[test]
    fn landing_single_fraction_bernoulli() {
        // Force a one-unit fractional state and check the marginal.
        let problem = BalancingProblem::size_only(vec![0.3; 3]).unwrap();
        let state = FlightState {
            probs: vec![1.0, 0.0, 0.4],
            fixed: vec![true, true, false],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let draws = 100_000;
        let mut count = 0;
        for _ in 0..draws {
            let sel = landing_phase(&state, &problem, &mut rng).unwrap();
            assert!(sel.indicators[0] && !sel.indicators[1]);
            if sel.indicators[2] {
                count += 1;
            }
        }
        let freq = count as f64 / draws as f64;
        let sigma = (0.4 * 0.6 / draws as f64).sqrt();
        assert!((freq - 0.4).abs() < 3.0 * sigma, "frequency {}", freq);
    }

    #[test]
    fn integer_size_constraint_holds_every_draw() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let n = 10 + (rng.random::<u32>() % 30) as usize;
            let target = 2 + (rng.random::<u32>() % 5) as usize;
            let mut x = Array2::zeros((n, 2));
            let pi = vec![target as f64 / n as f64; n];
            for i in 0..n {
                x[(i, 0)] = pi[i];
                x[(i, 1)] = rng.random::<f64>() * 10.0;
            }
            let problem = BalancingProblem::new(pi, x).unwrap();
            for _ in 0..20 {
                let sel = cube_sample(&problem, &mut rng).unwrap();
                assert_eq!(sel.n_selected(), target);
            }
        }
    }

    #[test]
    fn exact_landing_balance_when_no_fraction_remains() {
        let problem = BalancingProblem::size_only(vec![0.5; 6]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let sel = cube_sample(&problem, &mut rng).unwrap();
        let errs = check_balance(&sel, &problem);
        assert!(max_abs(&errs) < 1e-8);
    }

    #[test]
    fn census_selection_has_zero_balance_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let problem = random_problem(&mut rng, 10, 2);
        let sel = SampleSelection::from_parts(&[1.0; 10], vec![true; 10]);
        // HT with pi = 1 equals the census total only when pi is 1; build a
        // census problem instead.
        let census = BalancingProblem::new(vec![1.0; 10], problem.x.clone()).unwrap();
        let errs = check_balance(&sel, &census);
        assert!(max_abs(&errs) < 1e-12);
    }

    #[test]
    fn cube_beats_srs_on_skewed_column() {
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let n = 40;
        let mut x = Array2::zeros((n, 2));
        let pi = vec![0.25; n];
        for i in 0..n {
            x[(i, 0)] = pi[i];
            // Strongly skewed second column.
            x[(i, 1)] = (i as f64 / 4.0).exp();
        }
        let problem = BalancingProblem::new(pi, x).unwrap();
        let draws = 1000;
        let mut cube_errs = Vec::with_capacity(draws);
        let mut srs_errs = Vec::with_capacity(draws);
        for _ in 0..draws {
            let c = cube_sample(&problem, &mut rng).unwrap();
            cube_errs.push(check_balance(&c, &problem)[1].abs());
            let s = srs_sample(n, 10, &mut rng).unwrap();
            srs_errs.push(check_balance(&s, &problem)[1].abs());
        }
        cube_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        srs_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            srs_errs[draws / 2] > cube_errs[draws / 2],
            "srs median {} vs cube median {}",
            srs_errs[draws / 2],
            cube_errs[draws / 2]
        );
    }

    #[test]
    fn srs_bounds_and_edge_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let all = srs_sample(4, 4, &mut rng).unwrap();
        assert_eq!(all.n_selected(), 4);
        assert!(all.weights.iter().all(|&w| w == 1.0));
        let none = srs_sample(4, 0, &mut rng).unwrap();
        assert_eq!(none.n_selected(), 0);
        assert!(srs_sample(3, 4, &mut rng).is_err());
    }

    #[test]
    fn srs_uniform_inclusion() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let sel = srs_sample(6, 3, &mut rng).unwrap();
            for (i, &s) in sel.indicators.iter().enumerate() {
                if s {
                    counts[i] += 1;
                }
            }
        }
        let sigma = (0.25 / draws as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 3.0 * sigma, "frequency {}", freq);
        }
    }

    #[test]
    fn column_scaling_leaves_seeded_draw_unchanged() {
        // Power-of-two column scales keep the standardized matrix bit-equal,
        // so the whole seeded run coincides.
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        let problem = random_problem(&mut rng, 20, 3);
        let mut scaled_x = problem.x.clone();
        for i in 0..20 {
            scaled_x[(i, 1)] *= 4.0;
            scaled_x[(i, 2)] *= 0.5;
        }
        let scaled = BalancingProblem::new(problem.pi.clone(), scaled_x).unwrap();
        for seed in 0..20 {
            let a = cube_sample(&problem, &mut ChaCha12Rng::seed_from_u64(seed)).unwrap();
            let b = cube_sample(&scaled, &mut ChaCha12Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a.indicators, b.indicators);
        }
    }

    #[test]
    fn landing_drains_oversized_handmade_states() {
        // A state with more fractional coordinates than the LP accepts,
        // balanced on the size column only: the fallback must drain it.
        let n = 30;
        let problem = BalancingProblem::size_only(vec![0.5; n]).unwrap();
        let state = FlightState {
            probs: vec![0.5; n],
            fixed: vec![false; n],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let sel = landing_phase(&state, &problem, &mut rng).unwrap();
        assert_eq!(sel.n_selected(), 15);
    }

    #[test]
    fn landing_with_nothing_fractional_rounds_in_place() {
        let problem = BalancingProblem::size_only(vec![0.4; 4]).unwrap();
        let state = FlightState {
            probs: vec![1.0, 0.0, 0.0, 1.0],
            fixed: vec![true; 4],
        };
        let mut rng = ChaCha12Rng::seed_from_u64(59);
        let sel = landing_phase(&state, &problem, &mut rng).unwrap();
        assert_eq!(sel.indicators, vec![true, false, false, true]);
    }

    proptest::proptest! {
        /// Flight-phase conservation and the fractional-count bound hold for
        /// arbitrary problems.
        #[test]
        fn flight_conservation_property(
            seed in 0u64..500,
            n in 4usize..40,
            p in 1usize..5,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let problem = random_problem(&mut rng, n, p);
            let state = fast_flight(&problem, &mut rng).unwrap();
            proptest::prop_assert!(state.fractional().len() <= p);
            let imbalance = flight_imbalance(&problem, &state);
            proptest::prop_assert!(max_abs(&imbalance) < 1e-8);
            // Fixed coordinates are exactly 0 or 1, the rest strictly inside.
            for (i, &fixed) in state.fixed.iter().enumerate() {
                if fixed {
                    proptest::prop_assert!(state.probs[i] == 0.0 || state.probs[i] == 1.0);
                } else {
                    proptest::prop_assert!(state.probs[i] > 0.0 && state.probs[i] < 1.0);
                }
            }
        }
    }

    #[test]
    fn suppression_handles_many_columns() {
        // More balancing columns than the landing LP accepts: the fallback
        // must still deliver a valid fixed-size sample.
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let n = 40;
        let p = 18;
        let mut x = Array2::zeros((n, p));
        let pi = vec![0.5; n];
        for i in 0..n {
            x[(i, 0)] = pi[i];
            for j in 1..p {
                x[(i, j)] = rng.random::<f64>();
            }
        }
        let problem = BalancingProblem::new(pi, x).unwrap();
        let sel = cube_sample(&problem, &mut rng).unwrap();
        assert_eq!(sel.n_selected(), 20);
    }
}
