//! Linear programs with bounded variables and ranged rows, plus two solvers.
//!
//! [`DenseSimplex`] is a textbook two-phase tableau method for small problems.
//! [`InteriorPoint`] is a Mehrotra predictor-corrector method over a sparse
//! quasi-definite KKT system and handles the horizon-288 control problem.

mod ipm;
mod simplex;
mod sparse;

pub use ipm::InteriorPoint;
pub use simplex::DenseSimplex;
pub use sparse::{reverse_cuthill_mckee, EnvelopeLdl};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

/// One sparse constraint row `Σ coef·x[idx] (sense) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// minimize cᵀx subject to rows and `lower ≤ x ≤ upper` (bounds may be infinite).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, sense: RowSense, rhs: f64) -> usize {
        self.rows.push(Row { terms, sense, rhs });
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn row_activity(&self, row: &Row, x: &[f64]) -> f64 {
        row.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Largest bound or row violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let act = self.row_activity(row, x);
            let viol = match row.sense {
                RowSense::Le => act - row.rhs,
                RowSense::Ge => row.rhs - act,
                RowSense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed("bound vectors differ in length from cost".into()));
        }
        for j in 0..n {
            if !self.cost[j].is_finite() || self.lower[j] > self.upper[j] || self.lower[j].is_nan() {
                return Err(LpError::Malformed(format!("variable {j} has invalid cost or bounds")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() || row.terms.iter().any(|&(j, a)| j >= n || !a.is_finite()) {
                return Err(LpError::Malformed(format!("row {i} is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("solver failed after {iterations} iterations: {reason}")]
    SolverFailure { iterations: usize, reason: String },
}

pub trait LpSolver {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, LpError>;
}
