//! Step 1: separable weighted-distortion minimisation by water-filling.
//!
//! Stationarity for a frame with positive weight reads
//! `w̃² α β r^(β-1) + μ = 0`, i.e. `r(μ) = (μ / (w̃² α |β|))^(1/(β-1))`, decreasing in `μ`.
//! The multiplier is found by bisection on `ln μ` so that the floored rates fill the budget.

use crate::scalar::Scalar;

use super::{AllocError, AllocationProblem, AllocationResult, SolverOptions};

const MAX_BISECTIONS: usize = 400;

struct Term<T> {
    /// `w̃² α |β|`
    scale: T,
    /// `1 / (β - 1)`
    exponent: T,
}

impl<T: Scalar> Term<T> {
    fn rate(&self, log_mu: T, floor: T) -> T {
        (self.exponent * (log_mu - self.scale.ln())).exp().max(floor)
    }

    /// `ln μ` at which the unconstrained rate equals `rate`.
    fn log_mu_for(&self, rate: T) -> T {
        self.scale.ln() + rate.ln() / self.exponent
    }
}

pub fn solve_step1<T: Scalar>(
    problem: &AllocationProblem<T>,
    options: &SolverOptions,
) -> Result<AllocationResult<T>, AllocError<T>> {
    let frames = problem.frames();
    let n = frames.len();
    let floor = problem.min_rate();
    let budget = problem.budget();
    if floor * T::of_usize(n) > budget {
        return Err(AllocError::InfeasibleBudget {
            budget: budget.to_f64_lossy(),
            frames: n,
            min_rate: floor.to_f64_lossy(),
        });
    }

    let terms: Vec<Option<Term<T>>> = frames
        .iter()
        .map(|(w, m)| {
            (*w > T::zero()).then(|| Term {
                scale: *w * *w * m.alpha() * m.beta().abs(),
                exponent: T::one() / (m.beta() - T::one()),
            })
        })
        .collect();
    let active = terms.iter().flatten().count();
    let pinned = n - active;
    // Budget left for positively weighted frames once zero-weight frames sit at the floor.
    let target = budget - floor * T::of_usize(pinned);
    let share = target / T::of_usize(active.max(1));

    let spend = |log_mu: T| -> T { terms.iter().flatten().fold(T::zero(), |acc, t| acc + t.rate(log_mu, floor)) };

    // At `lo` every frame gets at least `share`, at `hi` at most `share`.
    let (mut lo, mut hi) = terms.iter().flatten().fold((T::infinity(), T::neg_infinity()), |(lo, hi), t| {
        let x = t.log_mu_for(share);
        (lo.min(x), hi.max(x))
    });
    let tol = T::tolerance(options.bisection_tolerance.min(1e-13));
    let mut iterations = 0;
    let mut log_mu = (lo + hi) / T::of(2.0);
    if active > 0 && hi > lo {
        while iterations < MAX_BISECTIONS {
            iterations += 1;
            log_mu = (lo + hi) / T::of(2.0);
            if log_mu <= lo || log_mu >= hi {
                break;
            }
            let spent = spend(log_mu);
            if ((spent - target) / budget).abs() <= tol {
                break;
            }
            // spending falls as μ grows
            if spent > target {
                lo = log_mu;
            } else {
                hi = log_mu;
            }
        }
    }

    let rates: Vec<T> = terms
        .iter()
        .map(|t| t.as_ref().map_or(floor, |t| t.rate(log_mu, floor)))
        .collect();
    let mu = log_mu.exp();

    // Relative violation of stationarity (interior frames) or of the floor
    // condition `w̃² α |β| m^(β-1) ≤ μ` (frames held at the floor).
    let kkt_residual = frames
        .iter()
        .zip(&rates)
        .filter(|((w, _), _)| *w > T::zero())
        .map(|((w, m), &r)| {
            let marginal = -(*w * *w * m.derivative_unchecked(r));
            if r > floor {
                ((marginal - mu) / mu).abs()
            } else {
                ((marginal - mu) / mu).max(T::zero())
            }
        })
        .fold(T::zero(), T::max);

    let budget_used = rates.iter().fold(T::zero(), |a, &r| a + r);
    let objective = problem.cost_at(&rates)?;
    let surrogate_objective = problem.weighted_distortion_at(&rates);
    Ok(AllocationResult {
        coords: problem.grid().coding_order().to_vec(),
        intermediate: rates.clone(),
        rates,
        objective,
        surrogate_objective,
        kkt_residual,
        multiplier: mu,
        iterations,
        budget_used,
        converged: true,
    })
}
