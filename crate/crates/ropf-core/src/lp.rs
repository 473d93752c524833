//! Linear programming by the two-phase revised simplex method with variable
//! bounds.
//!
//! Solves `min c'x` subject to `Ax = b` and `l <= x <= u`, where individual
//! bounds may be infinite. Inequalities are modeled by the caller via slack
//! variables or bounds on expression variables.
//!
//! The implementation favors auditability over speed: the basis matrix is
//! refactorized from scratch by dense LU with partial pivoting every
//! iteration, and the basic solution is recomputed fresh rather than updated
//! incrementally, so no error accumulates across pivots. Degeneracy is
//! handled by Bland's rule (smallest-index entering variable, smallest-index
//! tie-break on the ratio test), which guarantees finite termination, so the
//! iteration cap is a hard internal invariant and exceeding it panics.

/// A basic solution is accepted as feasible when the phase-1 objective is
/// below this tolerance (scaled by the right-hand-side magnitude).
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Reduced costs within this tolerance of zero are treated as zero.
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Pivot elements and direction components below this magnitude are treated
/// as zero.
pub const PIVOT_TOL: f64 = 1e-10;

/// `min c'x` s.t. `Ax = b`, `l <= x <= u`. Rows are stored sparsely.
#[derive(Debug, Clone)]
pub struct LpProblem {
    c: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
}

impl LpProblem {
    /// A problem over `c.len()` variables with the given bounds and no rows.
    ///
    /// Panics on length mismatch, NaN data, or an empty bound interval;
    /// those are caller bugs, not runtime conditions.
    pub fn new(c: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(c.len(), lower.len(), "cost/bound length mismatch");
        assert_eq!(c.len(), upper.len(), "cost/bound length mismatch");
        for j in 0..c.len() {
            assert!(c[j].is_finite(), "objective coefficient {j} is not finite");
            assert!(!lower[j].is_nan() && !upper[j].is_nan(), "NaN bound on variable {j}");
            assert!(lower[j] < f64::INFINITY, "lower bound of variable {j} is +inf");
            assert!(upper[j] > f64::NEG_INFINITY, "upper bound of variable {j} is -inf");
            assert!(
                lower[j] <= upper[j],
                "variable {j} has empty bound interval [{}, {}]",
                lower[j],
                upper[j]
            );
        }
        LpProblem {
            c,
            lower,
            upper,
            rows: Vec::new(),
            b: Vec::new(),
        }
    }

    /// Append the row `sum coeff_j x_j = rhs`. Duplicate indices accumulate.
    pub fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) {
        for &(j, v) in entries {
            assert!(j < self.c.len(), "row references variable {j} out of range");
            assert!(v.is_finite(), "row coefficient for variable {j} is not finite");
        }
        assert!(rhs.is_finite(), "row right-hand side is not finite");
        self.rows.push(entries.to_vec());
        self.b.push(rhs);
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }
}

/// Solver verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`solve_lp`]. `x` and `objective` are only meaningful when
/// `status` is [`LpStatus::Optimal`]; otherwise `x` is empty and the
/// objective is NaN.
#[derive(Debug, Clone)]
pub struct LpOutcome {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic with both bounds infinite; rests at zero.
    Free,
}

/// Value of a nonbasic variable.
fn nonbasic_value(j: usize, state: &[VarState], lower: &[f64], upper: &[f64]) -> f64 {
    match state[j] {
        VarState::AtLower => lower[j],
        VarState::AtUpper => upper[j],
        VarState::Free => 0.0,
        VarState::Basic => unreachable!("basic variable has no bound value"),
    }
}

/// Initial nonbasic state for a variable with the given bounds.
fn initial_state(lower: f64, upper: f64) -> VarState {
    if lower.is_finite() {
        VarState::AtLower
    } else if upper.is_finite() {
        VarState::AtUpper
    } else {
        VarState::Free
    }
}

/// Dense LU factorization with partial pivoting, PB = LU.
struct Lu {
    m: usize,
    /// Row-major combined factor: strict lower part of L (unit diagonal
    /// implied) and full upper part of U.
    f: Vec<f64>,
    /// Row permutation: row `p[i]` of B is row `i` of LU.
    p: Vec<usize>,
}

impl Lu {
    /// Factor the basis matrix whose columns are `cols[basis[k]]`.
    /// Panics if the matrix is singular; simplex pivoting keeps every basis
    /// nonsingular, so singularity means an internal invariant broke.
    fn factor(cols: &[Vec<f64>], basis: &[usize]) -> Lu {
        let m = basis.len();
        let mut f = vec![0.0; m * m];
        for (k, &j) in basis.iter().enumerate() {
            for i in 0..m {
                f[i * m + k] = cols[j][i];
            }
        }
        let mut p: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut pivot_row = k;
            let mut pivot_mag = f[k * m + k].abs();
            for i in (k + 1)..m {
                let mag = f[i * m + k].abs();
                if mag > pivot_mag {
                    pivot_row = i;
                    pivot_mag = mag;
                }
            }
            assert!(
                pivot_mag > PIVOT_TOL,
                "basis matrix is singular at elimination step {k} (pivot {pivot_mag:.3e})"
            );
            if pivot_row != k {
                for j in 0..m {
                    f.swap(k * m + j, pivot_row * m + j);
                }
                p.swap(k, pivot_row);
            }
            let diag = f[k * m + k];
            for i in (k + 1)..m {
                let factor = f[i * m + k] / diag;
                f[i * m + k] = factor;
                for j in (k + 1)..m {
                    f[i * m + j] -= factor * f[k * m + j];
                }
            }
        }
        Lu { m, f, p }
    }

    /// Solve `B x = rhs`.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut z: Vec<f64> = (0..m).map(|i| rhs[self.p[i]]).collect();
        for i in 0..m {
            for j in 0..i {
                z[i] -= self.f[i * m + j] * z[j];
            }
        }
        for i in (0..m).rev() {
            for j in (i + 1)..m {
                z[i] -= self.f[i * m + j] * z[j];
            }
            z[i] /= self.f[i * m + i];
        }
        z
    }

    /// Solve `B' y = rhs` (transpose system, used for the duals).
    fn solve_t(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.m;
        // B = P'LU, so B'y = rhs becomes U'z = rhs, L'w = z, y = P'w.
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut acc = rhs[i];
            for j in 0..i {
                acc -= self.f[j * m + i] * z[j];
            }
            z[i] = acc / self.f[i * m + i];
        }
        for i in (0..m).rev() {
            for j in (i + 1)..m {
                z[i] -= self.f[j * m + i] * z[j];
            }
        }
        let mut y = vec![0.0; m];
        for i in 0..m {
            y[self.p[i]] = z[i];
        }
        y
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

/// One simplex phase: pivot until `gamma` is minimized or a ray is found.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    cols: &[Vec<f64>],
    gamma: &[f64],
    lower: &[f64],
    upper: &[f64],
    b: &[f64],
    basis: &mut [usize],
    state: &mut [VarState],
    iterations: &mut usize,
    iteration_cap: usize,
) -> PhaseEnd {
    let m = b.len();
    let n_ext = cols.len();
    loop {
        assert!(
            *iterations < iteration_cap,
            "simplex iteration cap {iteration_cap} exceeded ({n_ext} variables, {m} rows); \
             Bland's rule should terminate, so this is a solver bug"
        );
        *iterations += 1;

        let lu = Lu::factor(cols, basis);

        // Fresh basic solution: B x_B = b - N x_N.
        let mut rhs = b.to_vec();
        for j in 0..n_ext {
            if state[j] == VarState::Basic {
                continue;
            }
            let v = nonbasic_value(j, state, lower, upper);
            if v != 0.0 {
                for i in 0..m {
                    rhs[i] -= cols[j][i] * v;
                }
            }
        }
        let xb = lu.solve(&rhs);

        // Duals and reduced costs.
        let gamma_b: Vec<f64> = basis.iter().map(|&j| gamma[j]).collect();
        let y = lu.solve_t(&gamma_b);

        // Entering variable: the smallest index with an improving direction.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..n_ext {
            if state[j] == VarState::Basic || upper[j] - lower[j] <= 0.0 {
                continue;
            }
            let mut d = gamma[j];
            for i in 0..m {
                d -= y[i] * cols[j][i];
            }
            let dir = match state[j] {
                VarState::AtLower if d < -OPTIMALITY_TOL => 1.0,
                VarState::AtUpper if d > OPTIMALITY_TOL => -1.0,
                VarState::Free if d < -OPTIMALITY_TOL => 1.0,
                VarState::Free if d > OPTIMALITY_TOL => -1.0,
                _ => continue,
            };
            entering = Some((j, dir));
            break;
        }
        let Some((q, dir)) = entering else {
            return PhaseEnd::Optimal;
        };

        // Step direction through the basis: B w = A_q, basic variable i
        // changes at rate -dir * w[i] per unit step of the entering variable.
        let w = lu.solve(&cols[q]);

        // Ratio test. The entering variable is limited by its own opposite
        // bound; each basic variable is limited by whichever of its bounds
        // it moves toward.
        let own_limit = upper[q] - lower[q]; // +inf when either bound is infinite
        let mut best_t = f64::INFINITY;
        let mut blocker: Option<(usize, bool)> = None; // (row, leaves_at_upper)
        for i in 0..m {
            let rate = -dir * w[i];
            let (t, hits_upper) = if rate > PIVOT_TOL {
                let u = upper[basis[i]];
                if !u.is_finite() {
                    continue;
                }
                (((u - xb[i]) / rate).max(0.0), true)
            } else if rate < -PIVOT_TOL {
                let l = lower[basis[i]];
                if !l.is_finite() {
                    continue;
                }
                (((l - xb[i]) / rate).max(0.0), false)
            } else {
                continue;
            };
            let tie = 1e-9 * (1.0 + best_t.min(t).abs());
            if t < best_t - tie {
                best_t = t;
                blocker = Some((i, hits_upper));
            } else if t <= best_t + tie {
                // Bland tie-break: keep the smallest leaving variable index.
                if let Some((r, _)) = blocker {
                    if basis[i] < basis[r] {
                        best_t = best_t.min(t);
                        blocker = Some((i, hits_upper));
                    }
                }
            }
        }

        if own_limit <= best_t {
            // The entering variable reaches its opposite bound first: a bound
            // flip, no basis change. `own_limit` is finite here because an
            // infinite own limit never compares <= a finite ratio, and if
            // both are infinite the problem is unbounded below.
            if !own_limit.is_finite() {
                return PhaseEnd::Unbounded;
            }
            state[q] = match state[q] {
                VarState::AtLower => VarState::AtUpper,
                VarState::AtUpper => VarState::AtLower,
                other => unreachable!("flip from state {other:?}"),
            };
            continue;
        }

        let Some((r, hits_upper)) = blocker else {
            return PhaseEnd::Unbounded;
        };
        let leaving = basis[r];
        state[leaving] = if hits_upper { VarState::AtUpper } else { VarState::AtLower };
        state[q] = VarState::Basic;
        basis[r] = q;
    }
}

/// Solve the problem. See the module documentation for the method.
pub fn solve_lp(problem: &LpProblem) -> LpOutcome {
    let n = problem.n_vars();
    let m = problem.n_rows();
    let n_ext = n + m;

    // Dense columns of [A | artificial identity], filled below.
    let mut cols = vec![vec![0.0; m]; n_ext];
    for (i, row) in problem.rows.iter().enumerate() {
        for &(j, v) in row {
            cols[j][i] += v;
        }
    }

    let mut lower = problem.lower.clone();
    let mut upper = problem.upper.clone();
    let mut state: Vec<VarState> = (0..n).map(|j| initial_state(lower[j], upper[j])).collect();

    // Phase-1 artificial variables: one per row, signed so each starts at
    // the nonnegative residual of the initial nonbasic point.
    let mut residual = problem.b.clone();
    for j in 0..n {
        let v = nonbasic_value(j, &state, &lower, &upper);
        if v != 0.0 {
            for (i, r) in residual.iter_mut().enumerate() {
                *r -= cols[j][i] * v;
            }
        }
    }
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    for (i, &r) in residual.iter().enumerate() {
        let sign = if r >= 0.0 { 1.0 } else { -1.0 };
        cols[n + i][i] = sign;
        lower.push(0.0);
        upper.push(f64::INFINITY);
        state.push(VarState::Basic);
        basis.push(n + i);
    }

    let iteration_cap = 1_000 + 200 * (n_ext + m);
    let mut iterations = 0usize;

    // Phase 1: minimize the sum of artificials.
    let mut gamma1 = vec![0.0; n_ext];
    for g in gamma1.iter_mut().skip(n) {
        *g = 1.0;
    }
    match run_phase(
        &cols, &gamma1, &lower, &upper, &problem.b, &mut basis, &mut state, &mut iterations,
        iteration_cap,
    ) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            unreachable!("phase-1 objective is bounded below by zero; ray indicates a solver bug")
        }
    }

    // Residual infeasibility is the phase-1 objective: artificials still
    // basic carry it, nonbasic ones sit at zero.
    let lu = Lu::factor(&cols, &basis);
    let mut rhs = problem.b.clone();
    for j in 0..n_ext {
        if state[j] == VarState::Basic {
            continue;
        }
        let v = nonbasic_value(j, &state, &lower, &upper);
        if v != 0.0 {
            for i in 0..m {
                rhs[i] -= cols[j][i] * v;
            }
        }
    }
    let xb = lu.solve(&rhs);
    let phase1_obj: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| xb[i])
        .sum();
    let scale = 1.0 + problem.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if phase1_obj > FEASIBILITY_TOL * scale {
        return LpOutcome {
            status: LpStatus::Infeasible,
            x: Vec::new(),
            objective: f64::NAN,
            iterations,
        };
    }

    // Phase 2: pin artificials to zero and minimize the true objective.
    // Basic artificials may remain at (numerical) zero; the ratio test
    // treats them as fixed and they leave on the first pivot that moves
    // their row.
    for j in n..n_ext {
        upper[j] = 0.0;
    }
    let mut gamma2 = vec![0.0; n_ext];
    gamma2[..n].copy_from_slice(&problem.c);
    match run_phase(
        &cols, &gamma2, &lower, &upper, &problem.b, &mut basis, &mut state, &mut iterations,
        iteration_cap,
    ) {
        PhaseEnd::Optimal => {}
        PhaseEnd::Unbounded => {
            return LpOutcome {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: f64::NAN,
                iterations,
            };
        }
    }

    // Assemble the optimal point from the final basis.
    let lu = Lu::factor(&cols, &basis);
    let mut rhs = problem.b.clone();
    for j in 0..n_ext {
        if state[j] == VarState::Basic {
            continue;
        }
        let v = nonbasic_value(j, &state, &lower, &upper);
        if v != 0.0 {
            for i in 0..m {
                rhs[i] -= cols[j][i] * v;
            }
        }
    }
    let xb = lu.solve(&rhs);
    let mut x = vec![0.0; n];
    for j in 0..n {
        if state[j] != VarState::Basic {
            x[j] = nonbasic_value(j, &state, &lower, &upper);
        }
    }
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = xb[i];
        }
    }
    let objective = problem.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpOutcome {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn assert_feasible(problem: &LpProblem, x: &[f64], tol: f64) {
        for (row, &rhs) in problem.rows.iter().zip(&problem.b) {
            let lhs: f64 = row.iter().map(|&(j, v)| v * x[j]).sum();
            assert!((lhs - rhs).abs() <= tol, "row residual {} for rhs {rhs}", lhs - rhs);
        }
        for j in 0..problem.n_vars() {
            assert!(x[j] >= problem.lower[j] - tol, "x[{j}]={} below {}", x[j], problem.lower[j]);
            assert!(x[j] <= problem.upper[j] + tol, "x[{j}]={} above {}", x[j], problem.upper[j]);
        }
    }

    #[test]
    fn box_only_minimum_sits_at_bounds() {
        // No rows at all: the optimum picks each variable's cheaper bound.
        let problem = LpProblem::new(
            vec![1.0, -1.0],
            vec![0.0, f64::NEG_INFINITY],
            vec![10.0, 2.0],
        );
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert_eq!(out.x, vec![0.0, 2.0]);
        assert!((out.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_equality_pins_variable() {
        let mut problem = LpProblem::new(vec![1.0], vec![0.0], vec![10.0]);
        problem.add_row(&[(0, 1.0)], 5.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn two_variable_vertex_optimum() {
        let mut problem = LpProblem::new(vec![-2.0, -1.0], vec![0.0, 0.0], vec![1.0, 1.0]);
        problem.add_row(&[(0, 1.0), (1, 1.0)], 1.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-9);
        assert!(out.x[1].abs() < 1e-9);
        assert!((out.objective + 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_row_detected() {
        let mut problem = LpProblem::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]);
        problem.add_row(&[(0, 1.0), (1, 1.0)], 5.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Infeasible);
        assert!(out.x.is_empty());
        assert!(out.objective.is_nan());
    }

    #[test]
    fn unbounded_ray_detected() {
        let mut problem = LpProblem::new(
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![f64::INFINITY, f64::INFINITY],
        );
        problem.add_row(&[(0, 1.0), (1, -1.0)], 0.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variable_absorbs_the_row() {
        // theta is free, x is costly: theta alone satisfies the row.
        let mut problem = LpProblem::new(
            vec![1.0, 0.0],
            vec![0.0, f64::NEG_INFINITY],
            vec![f64::INFINITY, f64::INFINITY],
        );
        problem.add_row(&[(0, 1.0), (1, 1.0)], 3.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!(out.x[0].abs() < 1e-9);
        assert!((out.x[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn bound_flip_without_pivot() {
        // x wants its upper bound long before the basic slack blocks.
        let mut problem = LpProblem::new(vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 10.0]);
        problem.add_row(&[(0, 1.0), (1, 1.0)], 10.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-9);
        assert!((out.x[1] - 9.0).abs() < 1e-9);
        assert!((out.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_system_with_unique_point() {
        // x + y = 3, x - y = 1 has the single point (2, 1); the objective
        // cannot matter.
        let mut problem = LpProblem::new(
            vec![7.0, -11.0],
            vec![f64::NEG_INFINITY; 2],
            vec![f64::INFINITY; 2],
        );
        problem.add_row(&[(0, 1.0), (1, 1.0)], 3.0);
        problem.add_row(&[(0, 1.0), (1, -1.0)], 1.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 2.0).abs() < 1e-9);
        assert!((out.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn beale_degenerate_example_terminates() {
        // Beale's classic cycling example (equality form with slacks).
        // Textbook pivoting cycles here; Bland's rule must terminate at the
        // optimum x = (1/25, 0, 1, 0) with objective -1/20.
        let mut problem = LpProblem::new(
            vec![-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0],
            vec![0.0; 7],
            vec![f64::INFINITY; 7],
        );
        problem.add_row(&[(0, 0.25), (1, -60.0), (2, -1.0 / 25.0), (3, 9.0), (4, 1.0)], 0.0);
        problem.add_row(&[(0, 0.5), (1, -90.0), (2, -1.0 / 50.0), (3, 3.0), (5, 1.0)], 0.0);
        problem.add_row(&[(2, 1.0), (6, 1.0)], 1.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective + 0.05).abs() < 1e-9, "objective {}", out.objective);
        assert!((out.x[0] - 0.04).abs() < 1e-9);
        assert!((out.x[2] - 1.0).abs() < 1e-9);
        assert_feasible(&problem, &out.x, 1e-9);
    }

    #[test]
    fn negative_rhs_rows_need_signed_artificials() {
        let mut problem = LpProblem::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![10.0, 10.0]);
        problem.add_row(&[(0, -1.0), (1, -1.0)], -4.0);
        problem.add_row(&[(0, 1.0), (1, -1.0)], 2.0);
        let out = solve_lp(&problem);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.x[0] - 3.0).abs() < 1e-9);
        assert!((out.x[1] - 1.0).abs() < 1e-9);
        assert_feasible(&problem, &out.x, 1e-9);
    }

    /// Brute-force reference for finite bounds: every vertex of the feasible
    /// set pins some variable subset at bounds and is the unique solution of
    /// the rows over the remaining variables, so enumerating all subsets and
    /// bound choices and keeping consistent, unique, in-bounds solves visits
    /// every vertex (rank-deficient row sets included). Returns the best
    /// objective, or None when infeasible.
    fn enumerate_optimum(problem: &LpProblem) -> Option<f64> {
        let n = problem.n_vars();
        let m = problem.n_rows();
        let dense: Vec<Vec<f64>> = problem
            .rows
            .iter()
            .map(|row| {
                let mut r = vec![0.0; n];
                for &(j, v) in row {
                    r[j] += v;
                }
                r
            })
            .collect();
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << n) {
            let fixed: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
            let solved: Vec<usize> = (0..n).filter(|j| mask & (1 << j) == 0).collect();
            for pick in 0u32..(1 << fixed.len()) {
                let mut x = vec![0.0; n];
                for (k, &j) in fixed.iter().enumerate() {
                    x[j] = if pick & (1 << k) != 0 { problem.upper[j] } else { problem.lower[j] };
                }
                let mut a: Vec<Vec<f64>> = (0..m)
                    .map(|i| {
                        let mut row: Vec<f64> = solved.iter().map(|&j| dense[i][j]).collect();
                        let offset: f64 = fixed.iter().map(|&j| dense[i][j] * x[j]).sum();
                        row.push(problem.b[i] - offset);
                        row
                    })
                    .collect();
                let Some(solution) = gauss_unique(&mut a, solved.len()) else {
                    continue;
                };
                let mut ok = true;
                for (k, &j) in solved.iter().enumerate() {
                    x[j] = solution[k];
                    if x[j] < problem.lower[j] - 1e-9 || x[j] > problem.upper[j] + 1e-9 {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                let obj: f64 = problem.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(match best {
                    Some(b) if b <= obj => b,
                    _ => obj,
                });
            }
        }
        best
    }

    /// Solve an m x s augmented system; None unless it is consistent with a
    /// unique solution.
    fn gauss_unique(a: &mut [Vec<f64>], s: usize) -> Option<Vec<f64>> {
        let m = a.len();
        let mut pivot_rows: Vec<usize> = Vec::with_capacity(s);
        let mut r = 0;
        for col in 0..s {
            let Some(pivot) = (r..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            else {
                return None; // ran out of rows: underdetermined
            };
            if a[pivot][col].abs() < 1e-9 {
                return None; // free column: not unique
            }
            a.swap(r, pivot);
            for i in (r + 1)..m {
                let f = a[i][col] / a[r][col];
                for j in col..=s {
                    a[i][j] -= f * a[r][j];
                }
            }
            pivot_rows.push(r);
            r += 1;
        }
        for row in a.iter().skip(r) {
            if row[s].abs() > 1e-9 {
                return None; // 0 = nonzero: inconsistent
            }
        }
        let mut solution = vec![0.0; s];
        for col in (0..s).rev() {
            let row = pivot_rows[col];
            let mut acc = a[row][s];
            for j in (col + 1)..s {
                acc -= a[row][j] * solution[j];
            }
            solution[col] = acc / a[row][col];
        }
        Some(solution)
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let n = rng.random_range(1..=4);
            let m = rng.random_range(0..=2.min(n));
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
            let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-2..=0) as f64).collect();
            let upper: Vec<f64> =
                lower.iter().map(|l| l + rng.random_range(1..=3) as f64).collect();
            let mut problem = LpProblem::new(c, lower.clone(), upper.clone());
            let feasible_by_construction = rng.random_bool(0.5);
            let x0: Vec<f64> = (0..n)
                .map(|j| {
                    let t: f64 = rng.random();
                    lower[j] + t * (upper[j] - lower[j])
                })
                .collect();
            for _ in 0..m {
                let row: Vec<(usize, f64)> =
                    (0..n).map(|j| (j, rng.random_range(-3..=3) as f64)).collect();
                let rhs = if feasible_by_construction {
                    row.iter().map(|&(j, v)| v * x0[j]).sum()
                } else {
                    rng.random_range(-6..=6) as f64
                };
                problem.add_row(&row, rhs);
            }
            let out = solve_lp(&problem);
            match enumerate_optimum(&problem) {
                Some(reference) => {
                    assert_eq!(out.status, LpStatus::Optimal, "trial {trial}");
                    assert!(
                        (out.objective - reference).abs() <= 1e-6 * (1.0 + reference.abs()),
                        "trial {trial}: solver {} vs reference {reference}",
                        out.objective
                    );
                    assert_feasible(&problem, &out.x, 1e-6);
                }
                None => {
                    assert_eq!(out.status, LpStatus::Infeasible, "trial {trial}");
                }
            }
        }
    }
}
