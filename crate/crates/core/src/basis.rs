//! The fixed nine-function time basis, trajectory reconstruction and a
//! closed-form least-squares fit used as an oracle for learned coefficients.
//!
//! A trajectory is modelled as `y(t) = phi(t) . beta` where `phi(t)` is
//!
//! ```text
//! [1, t, t^2, 1/(t+1), sin(2 pi t), cos(2 pi t), t sin(2 pi t), t cos(2 pi t), ln(t + delta)]
//! ```
//!
//! The logarithmic term is shifted by `delta` so the basis stays finite at
//! `t = 0`, where every trajectory starts.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of component functions.
pub const BASIS_SIZE: usize = 9;

/// Default shift applied inside the logarithmic component.
pub const DEFAULT_LOG_OFFSET: f64 = 0.01;

/// Gram matrices above this condition number trigger a warning.
pub const CONDITION_WARN_THRESHOLD: f64 = 1e10;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("time {0} lies outside [0, 1]")]
    OutOfDomain(f64),
    #[error(
        "least-squares system is rank deficient: {distinct} distinct time points for {BASIS_SIZE} basis functions"
    )]
    RankDeficient { distinct: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("coefficient vector must hold {BASIS_SIZE} finite values, got {0}")]
    BadCoefficients(String),
}

/// Basis settings shared by fitting and training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisConfig {
    /// Shift inside the logarithmic component.
    pub delta: f64,
    /// Ridge added to the normal equations of least-squares fits.
    pub ridge: f64,
    /// Optional L1 penalty on predicted coefficients during training.
    pub l1_weight: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_LOG_OFFSET,
            ridge: 0.0,
            l1_weight: 0.0,
        }
    }
}

impl BasisConfig {
    pub fn basis(&self) -> ComponentBasis {
        ComponentBasis::new(self.delta)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if !(self.l1_weight.is_finite() && self.l1_weight >= 0.0) {
            return Err(format!("l1_weight must be non-negative, got {}", self.l1_weight));
        }
        Ok(())
    }
}

/// Values of the nine component functions at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisVector(pub [f64; BASIS_SIZE]);

impl BasisVector {
    pub fn values(&self) -> &[f64; BASIS_SIZE] {
        &self.0
    }

    pub fn dot(&self, beta: &CoefficientVector) -> f64 {
        self.0.iter().zip(beta.0.iter()).map(|(p, b)| p * b).sum()
    }
}

/// Weights of the component functions; serialized as a JSON array of nine numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CoefficientVector(pub [f64; BASIS_SIZE]);

impl CoefficientVector {
    pub fn new(beta: [f64; BASIS_SIZE]) -> Result<Self, BasisError> {
        if beta.iter().all(|b| b.is_finite()) {
            Ok(Self(beta))
        } else {
            Err(BasisError::BadCoefficients(format!("{beta:?}")))
        }
    }

    pub fn zeros() -> Self {
        Self([0.0; BASIS_SIZE])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for CoefficientVector {
    type Error = BasisError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; BASIS_SIZE] = v
            .as_slice()
            .try_into()
            .map_err(|_| BasisError::BadCoefficients(format!("length {}", v.len())))?;
        Self::new(arr)
    }
}

impl From<CoefficientVector> for Vec<f64> {
    fn from(c: CoefficientVector) -> Self {
        c.0.to_vec()
    }
}

/// A normalized-time series of color differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory, checking equal lengths, `len >= 2` and strictly
    /// increasing times inside `[0, 1]`.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, BasisError> {
        if times.len() != values.len() {
            return Err(BasisError::InvalidTrajectory(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(BasisError::InvalidTrajectory("at least two points are required".into()));
        }
        for (i, &t) in times.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(BasisError::OutOfDomain(t));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(BasisError::InvalidTrajectory(format!(
                    "time at index {i} ({t}) does not exceed the previous one ({})",
                    times[i - 1]
                )));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BasisError::InvalidTrajectory(format!("non-finite value at index {i}")));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same time grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, BasisError> {
        Self::new(self.times.clone(), values)
    }
}

/// `n` evenly spaced points covering `[0, 1]` inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// The component-function basis with its log-term offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentBasis {
    pub log_offset: f64,
}

impl Default for ComponentBasis {
    fn default() -> Self {
        Self {
            log_offset: DEFAULT_LOG_OFFSET,
        }
    }
}

impl ComponentBasis {
    pub fn new(log_offset: f64) -> Self {
        Self { log_offset }
    }

    pub fn eval(&self, t: f64) -> Result<BasisVector, BasisError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(BasisError::OutOfDomain(t));
        }
        let (s, c) = (2.0 * PI * t).sin_cos();
        Ok(BasisVector([
            1.0,
            t,
            t * t,
            1.0 / (t + 1.0),
            s,
            c,
            t * s,
            t * c,
            (t + self.log_offset).ln(),
        ]))
    }

    /// Row-major `times.len() x 9` design matrix.
    pub fn design_matrix(&self, times: &[f64]) -> Result<Vec<[f64; BASIS_SIZE]>, BasisError> {
        times.iter().map(|&t| self.eval(t).map(|v| v.0)).collect()
    }

    pub fn reconstruct(&self, beta: &CoefficientVector, times: &[f64]) -> Result<Trajectory, BasisError> {
        let values = times
            .iter()
            .map(|&t| self.eval(t).map(|phi| phi.dot(beta)))
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::new(times.to_vec(), values)
    }

    /// Ridge-regularized least squares over the full basis.
    pub fn fit_least_squares(&self, traj: &Trajectory, ridge: f64) -> Result<CoefficientVector, BasisError> {
        let coef = self.fit_prefix(traj, BASIS_SIZE, ridge)?;
        let mut beta = [0.0; BASIS_SIZE];
        beta.copy_from_slice(&coef);
        CoefficientVector::new(beta)
    }

    /// Least squares restricted to the first `k` component functions.
    /// Solved through the normal equations with `ridge` added to the diagonal,
    /// followed by iterative refinement.
    pub fn fit_prefix(&self, traj: &Trajectory, k: usize, ridge: f64) -> Result<Vec<f64>, BasisError> {
        assert!((1..=BASIS_SIZE).contains(&k), "basis prefix out of range");
        let distinct = count_distinct(traj.times());
        if ridge <= 0.0 && distinct < k {
            return Err(BasisError::RankDeficient { distinct });
        }
        let rows = self.design_matrix(traj.times())?;
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for (row, &y) in rows.iter().zip(traj.values()) {
            for i in 0..k {
                rhs[i] += row[i] * y;
                for j in 0..k {
                    gram[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..k {
            gram[(i, i)] += ridge.max(0.0);
        }

        let cond = condition_number(&gram);
        log::debug!("normal-equation Gram matrix condition number {cond:.3e}");
        if cond > CONDITION_WARN_THRESHOLD {
            log::warn!(
                "ill-conditioned normal equations (condition number {cond:.3e} > {CONDITION_WARN_THRESHOLD:.0e})"
            );
        }

        let lu = gram.lu();
        let mut solution = lu.solve(&rhs).ok_or(BasisError::RankDeficient { distinct })?;
        // Refine against the residual of the original problem. The Gram
        // matrix squares the conditioning of the design, so a single solve
        // loses digits that these corrections recover.
        for _ in 0..REFINEMENT_STEPS {
            let mut grad = DVector::<f64>::zeros(k);
            for (row, &y) in rows.iter().zip(traj.values()) {
                let r = y - (0..k).map(|i| row[i] * solution[i]).sum::<f64>();
                for i in 0..k {
                    grad[i] += row[i] * r;
                }
            }
            grad -= &solution * ridge.max(0.0);
            match lu.solve(&grad) {
                Some(step) => solution += step,
                None => break,
            }
        }
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(BasisError::RankDeficient { distinct });
        }
        Ok(solution.iter().copied().collect())
    }

    /// Condition number of the 9x9 Gram matrix on the given grid.
    pub fn gram_condition(&self, times: &[f64]) -> Result<f64, BasisError> {
        let rows = self.design_matrix(times)?;
        let mut gram = SMatrix::<f64, BASIS_SIZE, BASIS_SIZE>::zeros();
        for row in &rows {
            let v = SVector::<f64, BASIS_SIZE>::from_row_slice(row);
            gram += v * v.transpose();
        }
        Ok(condition_number(&DMatrix::from_iterator(
            BASIS_SIZE,
            BASIS_SIZE,
            gram.iter().copied(),
        )))
    }
}

fn count_distinct(times: &[f64]) -> usize {
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.len()
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
fn condition_number(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `eval` with the default log offset.
pub fn eval_basis(t: f64) -> Result<BasisVector, BasisError> {
    ComponentBasis::default().eval(t)
}

/// `reconstruct` with the default log offset.
pub fn reconstruct(beta: &CoefficientVector, times: &[f64]) -> Result<Trajectory, BasisError> {
    ComponentBasis::default().reconstruct(beta, times)
}

/// `fit_least_squares` with the default log offset.
pub fn fit_least_squares(traj: &Trajectory, ridge: f64) -> Result<CoefficientVector, BasisError> {
    ComponentBasis::default().fit_least_squares(traj, ridge)
}
