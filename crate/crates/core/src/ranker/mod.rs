//! Online pairwise logistic-regression ranker with confidence intervals on
//! pairwise order predictions.
//!
//! The model scores a document by `θᵀx`. After each round the parameter is
//! re-fitted on every pair observed so far by minimising the L2-regularised
//! cross-entropy
//!
//! ```text
//! L(θ) = Σ −y·log σ(x_mnᵀθ) − (1 − y)·log(1 − σ(x_mnᵀθ)) + λ/2·‖θ‖²
//! ```
//!
//! and the information matrix `M = λI + Σ x_mn x_mnᵀ` is accumulated so that
//! `α·‖x_ij‖_{M⁻¹}` bounds the error of the predicted pairwise probability.

mod checkpoint;
mod feedback;
mod order;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use feedback::{infer_pair_positions, infer_pairs};
pub use order::{
    classify_interval, classify_pairs, coarsen_partition, partition_blocks, permute_block,
    BlockPartition, CertainOrder, PairOrder, PairOrderSets,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Gradient-norm tolerance for the Newton solve.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_NEWTON_ITERATIONS: usize = 100;

/// Logistic link, computed so that `sigmoid(z) + sigmoid(-z) == 1.0` exactly.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - 1.0 / (1.0 + z.exp())
    }
}

/// `ln(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One preference observation: `diff = x_m − x_n`, `label = 1` when `m` was
/// preferred.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub diff: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateReport {
    pub iterations: usize,
    pub initial_loss: f64,
    pub loss: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RankerState {
    theta: Vec<f64>,
    info_matrix: DMatrix<f64>,
    /// Inverse Cholesky factor of the information matrix, `L⁻¹` with `M = LLᵀ`.
    whitening: DMatrix<f64>,
    pair_diffs: Vec<f64>,
    pair_labels: Vec<bool>,
    lambda: f64,
    norm_bound: f64,
    round: u64,
}

impl RankerState {
    /// Fresh state with `θ = 0` and `M = λI`. `norm_bound` is the constant Q.
    pub fn new(dimension: usize, lambda: f64, norm_bound: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Validation("ranker dimension must be positive".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Validation(format!("lambda must be positive, got {lambda}")));
        }
        let info_matrix = DMatrix::identity(dimension, dimension) * lambda;
        let whitening = DMatrix::identity(dimension, dimension) / lambda.sqrt();
        Ok(RankerState {
            theta: vec![0.0; dimension],
            info_matrix,
            whitening,
            pair_diffs: Vec::new(),
            pair_labels: Vec::new(),
            lambda,
            norm_bound,
            round: 0,
        })
    }

    pub fn dimension(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_labels.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], bool)> {
        self.pair_diffs
            .chunks_exact(self.dimension())
            .zip(self.pair_labels.iter().copied())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(dot(&self.theta, x))
    }

    /// Predicted probability that `x_i` is preferred over `x_j`.
    pub fn pairwise_prob(&self, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
        self.check_dim(x_i)?;
        self.check_dim(x_j)?;
        let diff: Vec<f64> = x_i.iter().zip(x_j).map(|(a, b)| a - b).collect();
        Ok(sigmoid(dot(&diff, &self.theta)))
    }

    /// `α·sqrt(x_ijᵀ M⁻¹ x_ij)` with `x_ij = x_i − x_j`.
    pub fn confidence_width(&self, x_i: &[f64], x_j: &[f64], alpha: f64) -> Result<f64> {
        self.check_dim(x_i)?;
        self.check_dim(x_j)?;
        let diff: Vec<f64> = x_i.iter().zip(x_j).map(|(a, b)| a - b).collect();
        Ok(alpha * self.mahalanobis(&diff))
    }

    /// `‖x‖_{M⁻¹}`.
    pub fn mahalanobis(&self, x: &[f64]) -> f64 {
        self.whiten(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `L⁻¹x`, so that `‖L⁻¹(x_i − x_j)‖ = ‖x_ij‖_{M⁻¹}`.
    pub(crate) fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dimension();
        let mut out = vec![0.0; d];
        for (r, o) in out.iter_mut().enumerate() {
            // lower triangular
            let mut s = 0.0;
            for c in 0..=r {
                s += self.whitening[(r, c)] * x[c];
            }
            *o = s;
        }
        out
    }

    /// `ln det M − d·ln λ`, the log-determinant ratio appearing in the
    /// closed-form exploration coefficient.
    pub fn log_det_ratio(&self) -> f64 {
        let d = self.dimension();
        let mut logdet = 0.0;
        for i in 0..d {
            // whitening is L⁻¹ so its diagonal is 1/L_ii
            logdet -= 2.0 * self.whitening[(i, i)].ln();
        }
        logdet - d as f64 * self.lambda.ln()
    }

    /// Theoretical exploration coefficient
    /// `α_t = (2k_μ/c_μ)·(sqrt(R²·ln(det M / (δ²·det λI))) + sqrt(λ)·Q)`.
    ///
    /// The constants are rarely known in practice; the harness tunes α
    /// directly and reports this value only as a diagnostic.
    pub fn closed_form_alpha(&self, k_mu: f64, c_mu: f64, r: f64, delta: f64) -> f64 {
        let log_term = (self.log_det_ratio() - 2.0 * delta.ln()).max(0.0);
        (2.0 * k_mu / c_mu) * ((r * r * log_term).sqrt() + self.lambda.sqrt() * self.norm_bound)
    }

    /// Regularised cross-entropy over the whole pair buffer at `theta`.
    pub fn loss_at(&self, theta: &[f64]) -> f64 {
        let mut loss = 0.5 * self.lambda * dot(theta, theta);
        for (x, y) in self.pairs() {
            let z = dot(x, theta);
            loss += if y { softplus(-z) } else { softplus(z) };
        }
        loss
    }

    pub fn gradient_at(&self, theta: &[f64]) -> Vec<f64> {
        let mut grad: Vec<f64> = theta.iter().map(|t| self.lambda * t).collect();
        for (x, y) in self.pairs() {
            let r = sigmoid(dot(x, theta)) - if y { 1.0 } else { 0.0 };
            for (g, xv) in grad.iter_mut().zip(x) {
                *g += r * xv;
            }
        }
        grad
    }

    fn hessian_at(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dimension();
        let mut h = DMatrix::identity(d, d) * self.lambda;
        for (x, _) in self.pairs() {
            let p = sigmoid(dot(x, theta));
            let w = p * (1.0 - p);
            if w == 0.0 {
                continue;
            }
            for r in 0..d {
                let wr = w * x[r];
                for c in 0..=r {
                    h[(r, c)] += wr * x[c];
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                h[(c, r)] = h[(r, c)];
            }
        }
        h
    }

    /// Appends new pairs, grows the information matrix and re-fits θ by
    /// damped Newton iterations warm-started at the current θ.
    pub fn update(&mut self, new_pairs: &[TrainingPair]) -> Result<UpdateReport> {
        let d = self.dimension();
        for p in new_pairs {
            self.check_dim(&p.diff)?;
            if p.diff.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite pair difference vector".into()));
            }
        }
        for p in new_pairs {
            self.pair_diffs.extend_from_slice(&p.diff);
            self.pair_labels.push(p.label);
            for r in 0..d {
                for c in 0..d {
                    self.info_matrix[(r, c)] += p.diff[r] * p.diff[c];
                }
            }
        }
        if !new_pairs.is_empty() {
            self.refresh_whitening()?;
        }
        self.round += 1;

        let mut theta = self.theta.clone();
        let mut loss = self.loss_at(&theta);
        let initial_loss = loss;
        let mut iterations = 0;
        let mut grad = self.gradient_at(&theta);
        let mut gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !gnorm.is_finite() {
            return Err(Error::Numeric(format!(
                "loss {loss} / gradient norm {gnorm} not finite at warm start ({} pairs)",
                self.num_pairs()
            )));
        }

        while gnorm > GRADIENT_TOLERANCE && iterations < MAX_NEWTON_ITERATIONS {
            iterations += 1;
            let hess = self.hessian_at(&theta);
            let chol = hess.cholesky().ok_or_else(|| {
                Error::Numeric(format!("Hessian not positive definite at iteration {iterations}"))
            })?;
            let step = chol.solve(&DVector::from_column_slice(&grad));
            let decrease: f64 = grad.iter().zip(step.iter()).map(|(g, s)| g * s).sum();

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let candidate: Vec<f64> =
                    theta.iter().zip(step.iter()).map(|(th, s)| th - t * s).collect();
                let cand_loss = self.loss_at(&candidate);
                if cand_loss.is_finite() && cand_loss <= loss - 1e-4 * t * decrease {
                    accepted = Some((candidate, cand_loss));
                    break;
                }
                t *= 0.5;
            }
            let Some((candidate, cand_loss)) = accepted else {
                // no further decrease representable in floating point
                break;
            };
            theta = candidate;
            loss = cand_loss;
            grad = self.gradient_at(&theta);
            gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss {loss} / gradient norm {gnorm} not finite after iteration {iterations}"
                )));
            }
        }

        self.theta = theta;
        Ok(UpdateReport {
            iterations,
            initial_loss,
            loss,
            gradient_norm: gnorm,
        })
    }

    fn refresh_whitening(&mut self) -> Result<()> {
        let chol = self
            .info_matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("information matrix lost positive definiteness".into()))?;
        let l = chol.l();
        let d = self.dimension();
        self.whitening = l
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok(())
    }

    /// Rebuilds a state from checkpointed parts; the information matrix is
    /// validated for symmetric positive definiteness.
    pub(crate) fn from_parts(
        theta: Vec<f64>,
        info_matrix: DMatrix<f64>,
        pairs: Vec<TrainingPair>,
        lambda: f64,
        norm_bound: f64,
        round: u64,
    ) -> Result<Self> {
        let d = theta.len();
        let mut state = RankerState::new(d, lambda, norm_bound)?;
        if info_matrix.nrows() != d || info_matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: info_matrix.nrows(),
            });
        }
        for p in &pairs {
            state.check_dim(&p.diff)?;
            state.pair_diffs.extend_from_slice(&p.diff);
            state.pair_labels.push(p.label);
        }
        state.theta = theta;
        state.info_matrix = info_matrix;
        state.round = round;
        state.refresh_whitening()?;
        Ok(state)
    }
}
