//! Sparse linearised consistency penalty `‖A r + b‖₂`.
//!
//! Row `k` belongs to an ordered frame pair `(i, j)` and evaluates
//! `√δ · min(w̃_i, w̃_j) · (L_i(r_i) − L_j(r_j))`, where `L` is the tangent of the
//! frame's power law at the step-1 rate. Rows that are identically zero (self-pairs,
//! `δ = 0`, or a zero-weight endpoint) are not stored.

use crate::scalar::Scalar;

use super::{AllocError, AllocationProblem};

/// One stored row: `a_i · r_i + a_j · r_j + rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeRow<T> {
    /// Dense row index `i·N + j` of the conceptual `N² × N` matrix.
    pub pair_index: usize,
    pub i: usize,
    pub j: usize,
    pub a_i: T,
    pub a_j: T,
    pub rhs: T,
}

impl<T: Scalar> ConeRow<T> {
    #[inline]
    pub fn eval(&self, rates: &[T]) -> T {
        self.a_i * rates[self.i] + self.a_j * rates[self.j] + self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConePenalty<T> {
    rows: Vec<ConeRow<T>>,
    frames: usize,
}

impl<T: Scalar> ConePenalty<T> {
    pub fn rows(&self) -> &[ConeRow<T>] {
        &self.rows
    }

    /// Number of rows of the conceptual dense matrix, `N²`.
    pub fn row_count(&self) -> usize {
        self.frames * self.frames
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `A r + b` restricted to the stored rows.
    pub fn residual(&self, rates: &[T]) -> Vec<T> {
        self.rows.iter().map(|row| row.eval(rates)).collect()
    }

    pub fn residual_norm(&self, rates: &[T]) -> T {
        self.rows.iter().fold(T::zero(), |acc, row| {
            let y = row.eval(rates);
            acc + y * y
        }).sqrt()
    }

    /// `‖b‖₂`.
    pub fn rhs_norm(&self) -> T {
        self.rows.iter().fold(T::zero(), |acc, row| acc + row.rhs * row.rhs).sqrt()
    }
}

pub fn build_cone_penalty<T: Scalar>(problem: &AllocationProblem<T>, r0: &[T]) -> Result<ConePenalty<T>, AllocError<T>> {
    let frames = problem.frames();
    let n = frames.len();
    if r0.len() != n {
        return Err(AllocError::InvalidProblem(format!("{} expansion rates for {n} frames", r0.len())));
    }
    let tangents = frames
        .iter()
        .zip(r0)
        .map(|((_, m), &r)| m.linearize(r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, j, delta) in problem.grid().neighbor_pairs() {
        let coupling = frames[i].0.min(frames[j].0);
        if coupling <= T::zero() {
            continue;
        }
        let scale = T::of(f64::from(delta)).sqrt() * coupling;
        rows.push(ConeRow {
            pair_index: i * n + j,
            i,
            j,
            a_i: scale * tangents[i].slope,
            a_j: -scale * tangents[j].slope,
            rhs: scale * (tangents[i].intercept - tangents[j].intercept),
        });
    }
    Ok(ConePenalty { rows, frames: n })
}
