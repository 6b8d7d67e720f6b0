//! Step 2: projected descent on the smoothed convexified objective
//! `T'(r) + λ √(‖A r + b‖² + ε²)` over `{r ≥ m, Σ r ≤ R}`.
//!
//! The solve runs in budget-normalised coordinates `x = r / R` with the objective
//! divided by its value at the warm start, so tolerances are scale free. The
//! smoothing is reduced geometrically from a coarse value down to
//! `ε = smoothing · max(1, ‖b‖)` (in normalised units, and never below what the
//! stopping tolerance can resolve), each stage warm-started from the previous one.

use log::debug;

use crate::scalar::Scalar;

use super::{AllocError, AllocationProblem, AllocationResult, ConePenalty, SolverOptions};

/// Search direction used inside the projected line search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DescentDirection {
    /// Newton direction restricted to the budget face and the free coordinates.
    #[default]
    Newton,
    /// Negative gradient with a Barzilai-Borwein trial step.
    Gradient,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 80;
const STAGE_FACTOR: f64 = 0.1;

/// Euclidean projection onto `{x : x_i ≥ floor, Σ x_i ≤ total}`.
///
/// Ties in the sort are broken by coordinate index, so the result is deterministic.
pub fn project_capped_simplex<T: Scalar>(point: &[T], floor: T, total: T) -> Vec<T> {
    let n = point.len();
    let cap = total - floor * T::of_usize(n);
    let shifted: Vec<T> = point.iter().map(|&x| x - floor).collect();
    let clipped_sum = shifted.iter().fold(T::zero(), |a, &y| a + y.max(T::zero()));
    if clipped_sum <= cap {
        return shifted.iter().map(|&y| floor + y.max(T::zero())).collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| shifted[b].partial_cmp(&shifted[a]).expect("finite").then(a.cmp(&b)));
    let mut prefix = T::zero();
    let mut theta = T::zero();
    for (k, &idx) in order.iter().enumerate() {
        prefix = prefix + shifted[idx];
        let candidate = (prefix - cap) / T::of_usize(k + 1);
        if shifted[idx] - candidate > T::zero() {
            theta = candidate;
        } else {
            break;
        }
    }
    shifted.iter().map(|&y| floor + (y - theta).max(T::zero())).collect()
}

/// Normalised smoothed objective.
struct Objective<T> {
    kappa: Vec<T>,
    beta: Vec<T>,
    rows: Vec<(usize, usize, T, T, T)>,
    lambda: T,
    eps: T,
    /// `ÃᵀÃ`, dense row-major
    gram: Vec<T>,
}

impl<T: Scalar> Objective<T> {
    fn new(problem: &AllocationProblem<T>, penalty: &ConePenalty<T>, scale: T) -> Self {
        let budget = problem.budget();
        let frames = problem.frames();
        let n = frames.len();
        let kappa = frames
            .iter()
            .map(|(w, m)| *w * *w * m.alpha() * budget.powf(m.beta()) / scale)
            .collect();
        let beta = frames.iter().map(|(_, m)| m.beta()).collect();
        let rows: Vec<_> = penalty
            .rows()
            .iter()
            .map(|r| (r.i, r.j, r.a_i * budget / scale, r.a_j * budget / scale, r.rhs / scale))
            .collect();
        let mut gram = vec![T::zero(); n * n];
        for &(i, j, ai, aj, _) in &rows {
            gram[i * n + i] = gram[i * n + i] + ai * ai;
            gram[j * n + j] = gram[j * n + j] + aj * aj;
            gram[i * n + j] = gram[i * n + j] + ai * aj;
            gram[j * n + i] = gram[j * n + i] + ai * aj;
        }
        Self { kappa, beta, rows, lambda: problem.lambda(), eps: T::zero(), gram }
    }

    /// `smoothing · max(1, ‖b̃‖)`, but no smaller than the curvature `λ‖Ã‖²/ε` the
    /// stopping test can resolve in this precision.
    fn final_smoothing(&self, smoothing: T, rhs_norm: T, tolerance: T) -> T {
        let n = self.kappa.len();
        let trace = (0..n).fold(T::zero(), |acc, i| acc + self.gram[i * n + i]);
        let resolvable = T::of(100.0) * self.lambda * trace * T::epsilon() / tolerance;
        (smoothing * T::one().max(rhs_norm)).max(resolvable)
    }

    fn residual_sq(&self, x: &[T]) -> T {
        self.rows.iter().fold(T::zero(), |acc, &(i, j, ai, aj, b)| {
            let y = ai * x[i] + aj * x[j] + b;
            acc + y * y
        })
    }

    /// `F(x + step) − F(x)` without the cancellation of subtracting two values
    /// that agree to nearly every digit, as they do close to the kink of the norm.
    fn change(&self, x: &[T], step: &[T]) -> T {
        let distortion = (0..x.len()).fold(T::zero(), |acc, i| {
            let (k, b) = (self.kappa[i], self.beta[i]);
            acc + k * x[i].powf(b) * (b * (step[i] / x[i]).ln_1p()).exp_m1()
        });
        let (mut sq, mut grow) = (T::zero(), T::zero());
        for &(i, j, ai, aj, b) in &self.rows {
            let y = ai * x[i] + aj * x[j] + b;
            let dy = ai * step[i] + aj * step[j];
            sq = sq + y * y;
            grow = grow + dy * (y + y + dy);
        }
        let s = (sq + self.eps * self.eps).sqrt();
        let s_next = (s * s + grow).max(T::zero()).sqrt();
        let penalty = if s + s_next > T::zero() { grow / (s + s_next) } else { T::zero() };
        distortion + self.lambda * penalty
    }

    /// Returns `(value, gradient, Aᵀy, s)`.
    fn gradient(&self, x: &[T]) -> (T, Vec<T>, Vec<T>, T) {
        let n = x.len();
        let mut grad = vec![T::zero(); n];
        let mut value = T::zero();
        for i in 0..n {
            let p = x[i].powf(self.beta[i]);
            value = value + self.kappa[i] * p;
            grad[i] = self.kappa[i] * self.beta[i] * p / x[i];
        }
        let mut aty = vec![T::zero(); n];
        let mut sq = T::zero();
        for &(i, j, ai, aj, b) in &self.rows {
            let y = ai * x[i] + aj * x[j] + b;
            sq = sq + y * y;
            aty[i] = aty[i] + ai * y;
            aty[j] = aty[j] + aj * y;
        }
        let s = (sq + self.eps * self.eps).sqrt();
        value = value + self.lambda * s;
        if s > T::zero() {
            for i in 0..n {
                grad[i] = grad[i] + self.lambda * aty[i] / s;
            }
        }
        (value, grad, aty, s)
    }

    fn hessian(&self, x: &[T], aty: &[T], s: T) -> Vec<T> {
        let n = x.len();
        let mut h = vec![T::zero(); n * n];
        if s > T::zero() && self.lambda > T::zero() {
            let c1 = self.lambda / s;
            let c3 = self.lambda / (s * s * s);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = c1 * self.gram[i * n + j] - c3 * aty[i] * aty[j];
                }
            }
        }
        for i in 0..n {
            let b = self.beta[i];
            h[i * n + i] = h[i * n + i] + self.kappa[i] * b * (b - T::one()) * x[i].powf(b - T::of(2.0));
        }
        h
    }
}

/// In-place Cholesky of the `free`-restricted matrix; returns the factor or `None`.
fn cholesky<T: Scalar>(mut m: Vec<T>, k: usize) -> Option<Vec<T>> {
    for j in 0..k {
        let mut d = m[j * k + j];
        for p in 0..j {
            d = d - m[j * k + p] * m[j * k + p];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        m[j * k + j] = d;
        for i in j + 1..k {
            let mut v = m[i * k + j];
            for p in 0..j {
                v = v - m[i * k + p] * m[j * k + p];
            }
            m[i * k + j] = v / d;
        }
    }
    Some(m)
}

fn cholesky_solve<T: Scalar>(l: &[T], k: usize, rhs: &[T]) -> Vec<T> {
    let mut y = rhs.to_vec();
    for i in 0..k {
        for p in 0..i {
            y[i] = y[i] - l[i * k + p] * y[p];
        }
        y[i] = y[i] / l[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            y[i] = y[i] - l[p * k + i] * y[p];
        }
        y[i] = y[i] / l[i * k + i];
    }
    y
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

struct State<T> {
    x: Vec<T>,
    value: T,
    grad: Vec<T>,
    aty: Vec<T>,
    s: T,
}

struct Solver<'a, T> {
    objective: Objective<T>,
    floor: T,
    options: &'a SolverOptions,
    tolerance: T,
}

impl<T: Scalar> Solver<'_, T> {
    fn state(&self, x: Vec<T>) -> State<T> {
        let (value, grad, aty, s) = self.objective.gradient(&x);
        State { x, value, grad, aty, s }
    }

    fn project(&self, x: &[T]) -> Vec<T> {
        project_capped_simplex(x, self.floor, T::one())
    }

    /// `‖P(x − ∇F) − x‖_∞`
    fn residual(&self, st: &State<T>) -> T {
        let trial: Vec<T> = st.x.iter().zip(&st.grad).map(|(&x, &g)| x - g).collect();
        self.project(&trial)
            .iter()
            .zip(&st.x)
            .fold(T::zero(), |m, (&p, &x)| m.max((p - x).abs()))
    }

    fn converged(&self, st: &State<T>, residual: T) -> bool {
        residual <= self.tolerance * (T::one() + st.value.abs())
    }

    /// Backtracking along the projection arc `t ↦ P(x + t·d)`.
    fn line_search(&self, st: &State<T>, direction: &[T], initial: T) -> Option<State<T>> {
        let mut t = initial;
        let sigma = T::of(ARMIJO);
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<T> = st.x.iter().zip(direction).map(|(&x, &d)| x + t * d).collect();
            let candidate = self.project(&trial);
            let step: Vec<T> = candidate.iter().zip(&st.x).map(|(&c, &x)| c - x).collect();
            let decrease = dot(&st.grad, &step);
            if decrease < T::zero() {
                if self.objective.change(&st.x, &step) <= sigma * decrease {
                    return Some(self.state(candidate));
                }
            }
            t = t * T::of(0.5);
        }
        None
    }

    fn newton_direction(&self, st: &State<T>) -> Option<Vec<T>> {
        let n = st.x.len();
        let slack = T::of(1e-12);
        let interior: Vec<bool> = st.x.iter().map(|&x| x - self.floor > slack).collect();
        let (sum, count) = st
            .grad
            .iter()
            .zip(&interior)
            .filter(|(_, &i)| i)
            .fold((T::zero(), 0usize), |(s, c), (&g, _)| (s + g, c + 1));
        if count == 0 {
            return None;
        }
        let mean = sum / T::of_usize(count);
        // a floor coordinate stays fixed while it would rather shrink than grow
        let free: Vec<usize> = (0..n).filter(|&i| interior[i] || st.grad[i] < mean).collect();
        let k = free.len();
        if k < 2 {
            return None;
        }
        let h = self.objective.hessian(&st.x, &st.aty, st.s);
        let mut sub = vec![T::zero(); k * k];
        let mut diag_max = T::zero();
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                sub[a * k + b] = h[i * n + j];
            }
            diag_max = diag_max.max(h[i * n + i].abs());
        }
        let mut shift = diag_max * T::epsilon() * T::of(16.0);
        let factor = loop {
            let mut m = sub.clone();
            for a in 0..k {
                m[a * k + a] = m[a * k + a] + shift;
            }
            if let Some(l) = cholesky(m, k) {
                break l;
            }
            if shift > diag_max {
                return None;
            }
            shift = if shift > T::zero() { shift * T::of(100.0) } else { T::epsilon() };
        };
        let g_free: Vec<T> = free.iter().map(|&i| st.grad[i]).collect();
        let u = cholesky_solve(&factor, k, &g_free);
        let v = cholesky_solve(&factor, k, &vec![T::one(); k]);
        let nu = -u.iter().copied().sum::<T>() / v.iter().copied().sum::<T>();
        let mut d = vec![T::zero(); n];
        for (a, &i) in free.iter().enumerate() {
            d[i] = -(u[a] + nu * v[a]);
        }
        (dot(&d, &st.grad) < T::zero() && d.iter().all(|v| v.is_finite())).then_some(d)
    }

    fn gradient_step(&self, st: &State<T>, bb: T) -> Option<State<T>> {
        let d: Vec<T> = st.grad.iter().map(|&g| -g).collect();
        self.line_search(st, &d, bb)
    }
}

/// Barzilai-Borwein step length, clamped to a sane range.
fn bb_step<T: Scalar>(prev: &State<T>, next: &State<T>) -> T {
    let s: Vec<T> = next.x.iter().zip(&prev.x).map(|(&a, &b)| a - b).collect();
    let y: Vec<T> = next.grad.iter().zip(&prev.grad).map(|(&a, &b)| a - b).collect();
    let sy = dot(&s, &y);
    let step = if sy > T::zero() { dot(&s, &s) / sy } else { T::one() };
    step.max(T::of(1e-12)).min(T::of(1e12))
}

pub fn solve_step2<T: Scalar>(
    problem: &AllocationProblem<T>,
    r0: &[T],
    penalty: &ConePenalty<T>,
    options: &SolverOptions,
) -> Result<AllocationResult<T>, AllocError<T>> {
    let n = problem.len();
    if r0.len() != n {
        return Err(AllocError::InvalidProblem(format!("{} warm-start rates for {n} frames", r0.len())));
    }
    if r0.iter().any(|&r| !(r >= problem.min_rate())) {
        return Err(AllocError::InvalidProblem("warm start violates the rate floor".into()));
    }
    let budget = problem.budget();
    let start_value = problem.penalized_objective(penalty, r0);
    let finish = |rates: Vec<T>, residual: T, multiplier: T, iterations: usize, converged: bool| {
        let budget_used = rates.iter().fold(T::zero(), |a, &r| a + r);
        Ok::<_, AllocError<T>>(AllocationResult {
            coords: problem.grid().coding_order().to_vec(),
            intermediate: r0.to_vec(),
            objective: problem.cost_at(&rates)?,
            surrogate_objective: problem.penalized_objective(penalty, &rates),
            rates,
            kkt_residual: residual,
            multiplier,
            iterations,
            budget_used,
            converged,
        })
    };

    if problem.lambda() == T::zero() || penalty.rows().is_empty() || n == 1 {
        return finish(r0.to_vec(), T::zero(), T::zero(), 0, true);
    }

    let scale = start_value;
    let mut objective = Objective::new(problem, penalty, scale);
    let tolerance = T::tolerance(options.gradient_tolerance);
    let eps_final = objective.final_smoothing(T::of(options.smoothing), penalty.rhs_norm() / scale, tolerance);
    let solver_floor = problem.min_rate() / budget;
    let x0 = project_capped_simplex(&r0.iter().map(|&r| r / budget).collect::<Vec<_>>(), solver_floor, T::one());
    let start_residual = objective.residual_sq(&x0).sqrt();
    let mut eps = eps_final.max(start_residual * T::of(STAGE_FACTOR));
    objective.eps = eps;
    let mut solver = Solver { objective, floor: solver_floor, options, tolerance };

    let mut st = solver.state(x0);
    let mut iterations = 0;
    let mut bb = T::one();
    let mut residual;
    let mut converged = false;
    loop {
        let last_stage = eps <= eps_final;
        residual = solver.residual(&st);
        loop {
            if solver.converged(&st, residual) || iterations >= solver.options.max_iterations {
                break;
            }
            iterations += 1;
            let newton = match solver.options.direction {
                DescentDirection::Newton => solver
                    .newton_direction(&st)
                    .and_then(|d| solver.line_search(&st, &d, T::one())),
                DescentDirection::Gradient => None,
            };
            let next = match newton {
                Some(next) => next,
                None => match solver.gradient_step(&st, bb) {
                    Some(next) => next,
                    None => break,
                },
            };
            bb = bb_step(&st, &next);
            st = next;
            residual = solver.residual(&st);
        }
        if last_stage {
            converged = solver.converged(&st, residual);
            break;
        }
        if iterations >= solver.options.max_iterations {
            break;
        }
        eps = eps_final.max(eps * T::of(STAGE_FACTOR));
        solver.objective.eps = eps;
        st = solver.state(st.x);
        debug!("step 2: smoothing {eps} after {iterations} iterations");
    }

    let interior: Vec<T> = st
        .x
        .iter()
        .zip(&st.grad)
        .filter(|(&x, _)| x > solver.floor)
        .map(|(_, &g)| g)
        .collect();
    let multiplier = if interior.is_empty() {
        T::zero()
    } else {
        -interior.iter().copied().sum::<T>() / T::of_usize(interior.len()) * scale / budget
    };
    let mut rates: Vec<T> = st.x.iter().map(|&x| (x * budget).max(problem.min_rate())).collect();
    if problem.penalized_objective(penalty, &rates) > start_value {
        rates = r0.to_vec();
    }
    debug!("step 2: {iterations} iterations, residual {residual}, converged {converged}");
    let result = finish(rates, residual, multiplier, iterations, converged)?;
    if converged {
        Ok(result)
    } else {
        Err(AllocError::NotConverged {
            iterations,
            residual: residual.to_f64_lossy(),
            best: Box::new(result),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{problem, table1};
    use super::super::{build_cone_penalty, solve_step1};
    use super::*;
    use crate::rdmodel::RdModelParams;

    #[test]
    fn projection_examples() {
        assert_eq!(project_capped_simplex(&[0.2, 0.3], 0.0, 1.0), vec![0.2, 0.3]);
        assert_eq!(project_capped_simplex(&[-0.5, 0.3], 0.1, 1.0), vec![0.1, 0.3]);
        let p: Vec<f64> = project_capped_simplex(&[2.0, 1.0, 0.0], 0.0, 1.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0 && p[2] == 0.0);
        let p: Vec<f64> = project_capped_simplex(&[0.7, 0.7], 0.1, 1.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    fn solve_with(p: &AllocationProblem<f64>, direction: DescentDirection) -> (AllocationResult<f64>, f64, f64) {
        let opts = SolverOptions { direction, ..SolverOptions::default() };
        let s1 = solve_step1(p, &opts).unwrap();
        let pen = build_cone_penalty(p, s1.rates()).unwrap();
        let r = solve_step2(p, s1.rates(), &pen, &opts).or_else(AllocError::into_best).unwrap();
        let start = p.penalized_objective(&pen, s1.rates());
        let end = p.penalized_objective(&pen, r.rates());
        (r, start, end)
    }

    #[test]
    fn lambda_zero_returns_warm_start() {
        let p = problem(3, 1, &[1.0, 0.7, 0.2], &table1(), 3e6, 0.0, None);
        let opts = SolverOptions::default();
        let s1 = solve_step1(&p, &opts).unwrap();
        let pen = build_cone_penalty(&p, s1.rates()).unwrap();
        let r = solve_step2(&p, s1.rates(), &pen, &opts).unwrap();
        assert_eq!(r.rates(), s1.rates());
    }

    #[test]
    fn identical_pair_is_symmetric() {
        let m = [table1()[2]; 2];
        let p = problem(2, 1, &[1.0, 1.0], &m, 2e6, 5.0, None);
        let (r, _, _) = solve_with(&p, DescentDirection::Newton);
        assert!((r.rates()[0] - r.rates()[1]).abs() / 1e6 < 1e-9);
        assert!(r.objective.discontinuity.sqrt() < 1e-6 * r.objective.weighted_distortion);
    }

    #[test]
    fn newton_converges_and_descends() {
        let [a, b, c] = table1();
        let d = RdModelParams::new(1.0e8, -0.33).unwrap();
        let p = problem(2, 2, &[1.0; 4], &[a, b, c, d], 4e6, 5.0, None);
        let (r, start, end) = solve_with(&p, DescentDirection::Newton);
        assert!(r.converged, "residual {}", r.kkt_residual);
        assert!(end <= start + 1e-12);
        assert!((r.budget_used - 4e6).abs() / 4e6 < 1e-9);
    }

    #[test]
    fn gradient_direction_descends() {
        let [a, b, c] = table1();
        let p = problem(3, 1, &[1.0, 0.9, 0.6], &[a, b, c], 3e6, 5.0, None);
        let (_, start, end) = solve_with(&p, DescentDirection::Gradient);
        let (_, _, newton) = solve_with(&p, DescentDirection::Newton);
        assert!(end <= start);
        assert!((end - newton) / newton < 1e-3, "{end} vs {newton}");
    }
}
