//! Equilibrium policy synthesis for strategic communication: recover the
//! idempotent extreme-point structure from the solved SDP, build the
//! memoryless linear sender weights whose posterior covariances reproduce
//! the optimal chain, and evaluate both players' expected costs in closed
//! form.
//!
//! The stage optimizers satisfy
//!
//! ```text
//! S_k = A S_{k-1} A' + W_k^{1/2} P_k W_k^{1/2},   W_k = Sigma_k - A S_{k-1} A'
//! ```
//!
//! with `P_k` an orthogonal projector, and the sender weights
//! `L_k = W_k^{-1/2} U_k Lambda_k` (eigenvectors and 0/1 eigenvalues of
//! `P_k`) make the receiver's posterior covariance land exactly on `S_k`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matops::{
    nearest_idempotent, psd_inv_sqrt, psd_sqrt, trace_dot, SymMatrix,
};
use crate::model::{
    comm_objective_matrices, comm_receiver_matrices, covariance_schedule, CommCosts,
    CovarianceSchedule, ProcessModel,
};
use crate::posterior::posterior_cov_schedule;
use crate::sdp::{build_sdp, solve, SdpProblem, SdpSolution, SolveOptions};

/// Idempotents recovered from a solved chain, with rounding diagnostics.
#[derive(Debug, Clone)]
pub struct ExtremePoint {
    /// Orthogonal projectors `P_k`.
    pub projectors: Vec<SymMatrix>,
    /// `rank(P_k) = tr(P_k)` rounded to the nearest integer.
    pub ranks: Vec<usize>,
    /// `||P_k^2 - P_k||_F` before rounding residual, per stage.
    pub rounding_residuals: Vec<f64>,
    /// Pre-rounding eigenvalues inside the ambiguous band `[0.35, 0.65]`;
    /// non-empty entries flag that the SDP optimum may not be extreme.
    pub ambiguous: Vec<Vec<f64>>,
    /// The chain rebuilt from the rounded projectors through the
    /// extreme-point recursion; exactly feasible.
    pub rebuilt: Vec<SymMatrix>,
}

impl ExtremePoint {
    pub fn any_ambiguous(&self) -> bool {
        self.ambiguous.iter().any(|a| !a.is_empty())
    }
}

/// Which state the sender weights apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Messages are linear in the exogenous state `x_k`.
    Communication,
    /// Messages are linear in the virtual state `x^o_k`.
    Control,
}

/// Per-stage sender weights `L_k`; messages are `y_k = L_k' x_k` (or
/// `L_k' x^o_k` in control mode). Columns beyond `rank(P_k)` are zero.
#[derive(Debug, Clone)]
pub struct SignalingPolicy {
    pub weights: Vec<DMatrix<f64>>,
    pub mode: PolicyMode,
}

impl SignalingPolicy {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }
}

/// Receiver best response in communication mode: `u_k = G_k xhat_k` with
/// `G_k = -(R_{R,k}'R_{R,k})^{-1} R_{R,k}' Q_{R,k}`.
#[derive(Debug, Clone)]
pub struct ReceiverGain {
    pub gains: Vec<DMatrix<f64>>,
}

/// Inverts the extreme-point recursion stage by stage and rounds each
/// whitened increment onto the idempotent manifold. The inversion runs
/// against the rebuilt chain so the recovered projectors and the chain they
/// regenerate stay exactly consistent.
pub fn recover_idempotents(
    solution: &SdpSolution,
    cov: &CovarianceSchedule,
    a: &DMatrix<f64>,
) -> Result<ExtremePoint> {
    let n = solution.s.len();
    let p = a.nrows();
    let mut projectors = Vec::with_capacity(n);
    let mut ranks = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut ambiguous = Vec::with_capacity(n);
    let mut rebuilt: Vec<SymMatrix> = Vec::with_capacity(n);
    for k in 0..n {
        let floor = if k == 0 {
            SymMatrix::zeros(p)
        } else {
            rebuilt[k - 1].congruence(a)
        };
        let gap = SymMatrix::symmetrize(cov.at(k).as_matrix() - floor.as_matrix());
        let root = psd_sqrt(&gap)?;
        let inv_root = psd_inv_sqrt(&gap)?;
        let increment = SymMatrix::symmetrize(solution.s[k].as_matrix() - floor.as_matrix());
        let whitened = increment.congruence(inv_root.as_matrix());
        let rounding = nearest_idempotent(&whitened);
        let s_k = SymMatrix::symmetrize(
            floor.as_matrix() + rounding.matrix.congruence(root.as_matrix()).as_matrix(),
        );
        projectors.push(rounding.matrix);
        ranks.push(rounding.rank);
        residuals.push(rounding.residual);
        ambiguous.push(rounding.ambiguous);
        rebuilt.push(s_k);
    }
    Ok(ExtremePoint {
        projectors,
        ranks,
        rounding_residuals: residuals,
        ambiguous,
        rebuilt,
    })
}

/// Builds the sender weights `L_k = W_k^{-1/2} U_k Lambda_k` from the
/// recovered projectors.
///
/// Eigenvalue-1 eigenvectors are placed first, ordered by descending
/// magnitude of their first coordinate with the first nonzero entry made
/// positive, so repeated runs emit bit-identical policies.
pub fn synthesize_policy(
    extreme: &ExtremePoint,
    cov: &CovarianceSchedule,
    a: &DMatrix<f64>,
    mode: PolicyMode,
) -> Result<SignalingPolicy> {
    let n = extreme.projectors.len();
    let p = a.nrows();
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        let floor = if k == 0 {
            SymMatrix::zeros(p)
        } else {
            extreme.rebuilt[k - 1].congruence(a)
        };
        let gap = SymMatrix::symmetrize(cov.at(k).as_matrix() - floor.as_matrix());
        let inv_root = psd_inv_sqrt(&gap)?;
        let basis = projector_basis(&extreme.projectors[k]);
        let mut l_k = DMatrix::zeros(p, p);
        for (col, u) in basis.iter().enumerate() {
            l_k.set_column(col, &(inv_root.as_matrix() * u));
        }
        weights.push(l_k);
    }
    Ok(SignalingPolicy { weights, mode })
}

/// Orthonormal eigenvalue-1 eigenvectors of a projector, in the emission
/// order convention.
fn projector_basis(projector: &SymMatrix) -> Vec<nalgebra::DVector<f64>> {
    let eig = projector.eigen();
    let mut cols: Vec<nalgebra::DVector<f64>> = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= 0.5)
        .map(|(i, _)| eig.vectors.column(i).clone_owned())
        .collect();
    for u in cols.iter_mut() {
        if let Some(lead) = u.iter().find(|x| x.abs() > 1e-12) {
            if *lead < 0.0 {
                *u = -&*u;
            }
        }
    }
    cols.sort_by(|x, y| y[0].abs().total_cmp(&x[0].abs()));
    cols
}

/// Receiver best-response gains (communication mode).
pub fn receiver_gains_comm(costs: &CommCosts) -> Result<ReceiverGain> {
    let mut gains = Vec::with_capacity(costs.q_r.len());
    for k in 0..costs.q_r.len() {
        let gram = SymMatrix::symmetrize(costs.r_r[k].transpose() * &costs.r_r[k]);
        let min_eig = gram.min_eigenvalue();
        let inv = gram
            .as_matrix()
            .clone()
            .try_inverse()
            .ok_or(Error::SingularRr { min_eig })?;
        gains.push(-(inv * costs.r_r[k].transpose() * &costs.q_r[k]));
    }
    Ok(ReceiverGain { gains })
}

/// Expected costs of an arbitrary linear sender policy under the receiver
/// best response:
///
/// ```text
/// J_S = sum_k tr{Q_{S,k}'Q_{S,k} Sigma_k} + tr{V_k H_k}
/// J_R = sum_k tr{Q_{R,k}'Q_{R,k} Sigma_k} + tr{V^R_k H_k}
/// ```
pub fn analytic_costs_comm(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    costs: &CommCosts,
    weights: &[DMatrix<f64>],
) -> Result<(f64, f64)> {
    let v_s = comm_objective_matrices(costs)?;
    let v_r = comm_receiver_matrices(costs)?;
    let posts = posterior_cov_schedule(model, cov, weights)?;
    let mut j_s = 0.0;
    let mut j_r = 0.0;
    for k in 0..cov.len() {
        let qs_gram = SymMatrix::symmetrize(costs.q_s[k].transpose() * &costs.q_s[k]);
        let qr_gram = SymMatrix::symmetrize(costs.q_r[k].transpose() * &costs.q_r[k]);
        j_s += trace_dot(&qs_gram, cov.at(k)) + trace_dot(&v_s[k], posts.at(k));
        j_r += trace_dot(&qr_gram, cov.at(k)) + trace_dot(&v_r[k], posts.at(k));
    }
    Ok((j_s, j_r))
}

/// Constant (signaling-independent) part of the sender cost,
/// `sum_k tr{Q_{S,k}'Q_{S,k} Sigma_k}`.
pub fn comm_sender_constant(costs: &CommCosts, cov: &CovarianceSchedule) -> f64 {
    (0..cov.len())
        .map(|k| {
            let gram = SymMatrix::symmetrize(costs.q_s[k].transpose() * &costs.q_s[k]);
            trace_dot(&gram, cov.at(k))
        })
        .sum()
}

/// Scalar weight on the second coordinate of a rank-1 stage message
/// normalized so the first coordinate has weight 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaValue {
    Value(f64),
    /// The informative direction has (numerically) no first-coordinate
    /// component, so the normalization is undefined.
    Undefined,
}

/// Extracts the normalized bias weight `alpha_k` from a stage weight matrix.
/// Errors with [`Error::RankNotOne`] when the stage sends more (or less)
/// than one informative direction.
pub fn extract_alpha(weight: &DMatrix<f64>, stage: usize) -> Result<AlphaValue> {
    let scale = weight.norm();
    let rank = weight.rank(1e-9 * (1.0 + scale));
    if rank != 1 {
        return Err(Error::RankNotOne { stage, rank });
    }
    let lead = (0..weight.ncols())
        .max_by(|&i, &j| {
            weight
                .column(i)
                .norm()
                .total_cmp(&weight.column(j).norm())
        })
        .expect("weight matrix has columns");
    let col = weight.column(lead);
    if col[0].abs() < 1e-9 * (1.0 + scale) {
        return Ok(AlphaValue::Undefined);
    }
    Ok(AlphaValue::Value(col[1] / col[0]))
}

/// Everything produced by the strategic-communication pipeline.
#[derive(Debug, Clone)]
pub struct CommEquilibrium {
    pub problem: SdpProblem,
    pub solution: SdpSolution,
    pub extreme: ExtremePoint,
    pub policy: SignalingPolicy,
    pub receiver: ReceiverGain,
    /// Sender cost at equilibrium (constant + SDP objective).
    pub sender_cost: f64,
    /// Receiver cost under best response to the equilibrium policy.
    pub receiver_cost: f64,
}

/// End-to-end strategic communication: fold the receiver best response into
/// stage matrices, solve the chained SDP, purify, and synthesize policies.
pub fn solve_communication_game(
    model: &ProcessModel,
    costs: &CommCosts,
    opts: &SolveOptions,
) -> Result<CommEquilibrium> {
    let cov = covariance_schedule(model);
    let v = comm_objective_matrices(costs)?;
    let problem = build_sdp(&cov, v, model.a().clone())?;
    let solution = solve(&problem, opts)?;
    let extreme = recover_idempotents(&solution, &cov, model.a())?;
    let policy = synthesize_policy(&extreme, &cov, model.a(), PolicyMode::Communication)?;
    let receiver = receiver_gains_comm(costs)?;
    let (sender_cost, receiver_cost) = analytic_costs_comm(model, &cov, costs, &policy.weights)?;
    Ok(CommEquilibrium {
        problem,
        solution,
        extreme,
        policy,
        receiver,
        sender_cost,
        receiver_cost,
    })
}
