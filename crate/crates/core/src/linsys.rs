//! Discrete-time LTI plant models, disturbance generators, and LQR/DARE synthesis.
//!
//! Sign convention: gains returned by [`solve_dare`] close the loop as `A + B*K`,
//! i.e. `K = -(R + B'PB)^-1 B'PA`. Control texts differ on this; everything in
//! this crate (tube construction, error recursion, feedback law) assumes `A + BK`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::polytope::HPolytope;

#[derive(Debug, Error)]
pub enum LinSysError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("DARE iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    DareNoConvergence { iterations: usize, residual: f64 },
    #[error("R must be symmetric positive definite")]
    BadWeight,
    #[error("disturbance sampler exhausted {0} rejection attempts")]
    SamplerExhausted(usize),
    #[error("scripted disturbance sequence exhausted at step {0}")]
    ScriptExhausted(usize),
}

/// Discrete-time plant `x[k+1] = A x[k] + B u[k] + w[k]`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Sample time in scenario units (seconds for the cart pole, hours for the CSTR).
    pub ts: f64,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, ts: f64) -> Result<Self, LinSysError> {
        if !a.is_square() {
            return Err(LinSysError::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(LinSysError::Dimension(format!(
                "B has {} rows, A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(LinSysError::Dimension("n and m must be >= 1".into()));
        }
        if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(LinSysError::NonFinite);
        }
        Ok(Self { a, b, ts })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check_dims(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), LinSysError> {
        if x.len() != self.state_dim() {
            return Err(LinSysError::Dimension(format!(
                "state has length {}, expected {}",
                x.len(),
                self.state_dim()
            )));
        }
        if u.len() != self.input_dim() {
            return Err(LinSysError::Dimension(format!(
                "input has length {}, expected {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// One disturbed step `A x + B u + w`.
pub fn step(
    plant: &LinearPlant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>, LinSysError> {
    plant.check_dims(x, u)?;
    if w.len() != plant.state_dim() {
        return Err(LinSysError::Dimension(format!(
            "disturbance has length {}, expected {}",
            w.len(),
            plant.state_dim()
        )));
    }
    Ok(&plant.a * x + &plant.b * u + w)
}

/// One nominal step `A z + B v`.
pub fn step_nominal(
    plant: &LinearPlant,
    z: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>, LinSysError> {
    plant.check_dims(z, v)?;
    Ok(&plant.a * z + &plant.b * v)
}

/// Repeated [`step`]: returns the state sequence of length `inputs.len() + 1`.
pub fn rollout(
    plant: &LinearPlant,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    disturbances: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, LinSysError> {
    if inputs.len() != disturbances.len() {
        return Err(LinSysError::Dimension(format!(
            "{} inputs vs {} disturbances",
            inputs.len(),
            disturbances.len()
        )));
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (u, w) in inputs.iter().zip(disturbances) {
        let next = step(plant, states.last().unwrap(), u, w)?;
        states.push(next);
    }
    Ok(states)
}

/// Spectral radius via complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Stabilizing LQR gain and terminal weight from the DARE.
#[derive(Debug, Clone)]
pub struct LqrSolution {
    /// Gain with `A + B*K` stable.
    pub k: DMatrix<f64>,
    /// Symmetric PSD fixed point of the DARE.
    pub p: DMatrix<f64>,
    /// Frobenius residual of the DARE at the returned `P`.
    pub residual: f64,
}

const DARE_MAX_ITER: usize = 10_000;

/// Solve `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q` by backward iteration from `P = Q`.
///
/// Residual contract: `||dare(P)||_F <= 1e-8 * (1 + ||P||_F)`.
pub fn solve_dare(
    plant: &LinearPlant,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrSolution, LinSysError> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if q.nrows() != n || q.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(LinSysError::Dimension("Q must be n x n and R m x m".into()));
    }
    let a = &plant.a;
    let b = &plant.b;
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or(LinSysError::BadWeight)?;
        let gain_term = chol.solve(&(&btp * a));
        let next = a.transpose() * &p * a - (a.transpose() * &p * b) * &gain_term + q;
        // enforce symmetry against drift
        let next = (&next + next.transpose()) * 0.5;
        residual = dare_residual(a, b, q, r, &next);
        let done = residual <= 1e-9 * (1.0 + next.norm());
        p = next;
        if done {
            break;
        }
    }
    if residual > 1e-8 * (1.0 + p.norm()) {
        return Err(LinSysError::DareNoConvergence {
            iterations: DARE_MAX_ITER,
            residual,
        });
    }
    let btp = b.transpose() * &p;
    let gram = r + &btp * b;
    let chol = gram.cholesky().ok_or(LinSysError::BadWeight)?;
    let k = -chol.solve(&(&btp * a));
    Ok(LqrSolution { k, p, residual })
}

fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let btp = b.transpose() * p;
    let gram = r + &btp * b;
    let chol = match gram.cholesky() {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    let gain_term = chol.solve(&(&btp * a));
    let rhs = a.transpose() * p * a - (a.transpose() * p * b) * gain_term + q;
    (&rhs - p).norm()
}

/// How disturbance samples are produced each plant step.
#[derive(Debug, Clone)]
pub enum DisturbanceGenerator {
    Zero,
    /// Rejection sampling from the bounding box of `W`.
    UniformOverW,
    /// Fixed sequence, one vector per step.
    Scripted(Vec<DVector<f64>>),
    /// `w = g * d` with `d` uniform on `[-1, 1]`.
    ScalarChannel { g: DVector<f64> },
}

/// Bounded disturbance model: every sample lies in `W`.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    pub w_set: HPolytope,
    pub generator: DisturbanceGenerator,
    step: usize,
}

const REJECTION_CAP: usize = 10_000;

impl DisturbanceModel {
    pub fn new(w_set: HPolytope, generator: DisturbanceGenerator) -> Self {
        Self { w_set, generator, step: 0 }
    }

    /// Draw the next disturbance. `rng` is owned by the simulation run.
    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> Result<DVector<f64>, LinSysError> {
        let n = self.w_set.dim();
        let k = self.step;
        self.step += 1;
        match &self.generator {
            DisturbanceGenerator::Zero => Ok(DVector::zeros(n)),
            DisturbanceGenerator::ScalarChannel { g } => {
                let d: f64 = rng.gen_range(-1.0..=1.0);
                Ok(g * d)
            }
            DisturbanceGenerator::Scripted(seq) => {
                seq.get(k).cloned().ok_or(LinSysError::ScriptExhausted(k))
            }
            DisturbanceGenerator::UniformOverW => {
                let (lo, hi) = self
                    .w_set
                    .bounding_box()
                    .map_err(|_| LinSysError::SamplerExhausted(0))?;
                for _ in 0..REJECTION_CAP {
                    let cand = DVector::from_fn(n, |i, _| {
                        if hi[i] > lo[i] {
                            rng.gen_range(lo[i]..=hi[i])
                        } else {
                            lo[i]
                        }
                    });
                    if self.w_set.contains(&cand) {
                        return Ok(cand);
                    }
                }
                Err(LinSysError::SamplerExhausted(REJECTION_CAP))
            }
        }
    }
}
