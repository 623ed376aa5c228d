//! Strategic control: reduce the sensor-versus-controller game over the
//! controlled process to a strategic-communication game over the virtual
//! (uncontrolled) state, then reconstruct the equilibrium control law.
//!
//! Completing the squares turns each side's cost into
//! `sum_k ||u_k + K_k x_k||^2_{Delta_k} + Delta_0`; a change of variables
//! moves the quadratic onto the virtual state, and stacking the stages
//! (stage `n` first, matching the block-triangular structure of the input
//! history) gives stage objective matrices `V^o_k` for the same chained SDP
//! solved in communication mode.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{trace_dot, SymMatrix};
use crate::model::{covariance_schedule, ControlCosts, CovarianceSchedule, ProcessModel};
use crate::policy::{
    recover_idempotents, synthesize_policy, ExtremePoint, PolicyMode, SignalingPolicy,
};
use crate::sdp::{build_sdp, solve, SdpProblem, SdpSolution, SolveOptions};

/// Which player's cost a completion-of-squares pass refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Sender,
    Receiver,
}

/// Backward Riccati quantities for both sides: gains `K_{.,k}`, curvature
/// `Delta_{.,k}`, cost-to-go `Qtilde_{.,k}`, and the policy-independent
/// constants `Delta_{.,0}`.
#[derive(Debug, Clone)]
pub struct RiccatiTransform {
    /// `K_{S,k}` (t x p), stage order `k = 1..n`.
    pub k_s: Vec<DMatrix<f64>>,
    pub k_r: Vec<DMatrix<f64>>,
    /// `Delta_{S,k}` (t x t, positive definite), stage order.
    pub delta_s: Vec<SymMatrix>,
    pub delta_r: Vec<SymMatrix>,
    /// `Qtilde_{S,k}` for `k = 1..n+1` (index `k-1`).
    pub q_tilde_s: Vec<SymMatrix>,
    pub q_tilde_r: Vec<SymMatrix>,
    pub delta_s0: f64,
    pub delta_r0: f64,
}

impl RiccatiTransform {
    pub fn gains(&self, side: Side) -> &[DMatrix<f64>] {
        match side {
            Side::Sender => &self.k_s,
            Side::Receiver => &self.k_r,
        }
    }

    pub fn curvatures(&self, side: Side) -> &[SymMatrix] {
        match side {
            Side::Sender => &self.delta_s,
            Side::Receiver => &self.delta_r,
        }
    }

    pub fn constant(&self, side: Side) -> f64 {
        match side {
            Side::Sender => self.delta_s0,
            Side::Receiver => self.delta_r0,
        }
    }
}

/// Completes the squares for both sides:
///
/// ```text
/// Delta_k  = B' Qtilde_{k+1} B + R_k
/// K_k      = Delta_k^{-1} B' Qtilde_{k+1} A
/// Qtilde_k = Q_k + A'(Qtilde_{k+1} - Qtilde_{k+1} B Delta_k^{-1} B' Qtilde_{k+1}) A
/// ```
///
/// backwards from `Qtilde_{n+1} = Q_{n+1}`, with `Q_1 = O`, and
/// `Delta_0 = tr{Qtilde_1 Sigma_1} + sum_k tr{Qtilde_{k+1} SigmaW}`.
pub fn complete_squares(model: &ProcessModel, costs: &ControlCosts) -> Result<RiccatiTransform> {
    let n = model.horizon();
    let side = |q: &[SymMatrix], r: &[SymMatrix]| -> Result<(Vec<DMatrix<f64>>, Vec<SymMatrix>, Vec<SymMatrix>, f64)> {
        let a = model.a();
        let b = model.b();
        let mut q_tilde = vec![SymMatrix::zeros(model.state_dim()); n + 1];
        q_tilde[n] = q[n].clone();
        let mut gains = vec![DMatrix::zeros(model.input_dim(), model.state_dim()); n];
        let mut deltas = vec![SymMatrix::zeros(model.input_dim()); n];
        for k in (0..n).rev() {
            let next = &q_tilde[k + 1];
            let delta =
                SymMatrix::symmetrize(b.transpose() * next.as_matrix() * b + r[k].as_matrix());
            let min_eig = delta.min_eigenvalue();
            if min_eig <= 0.0 {
                return Err(Error::NotPd {
                    context: "completion-of-squares curvature",
                    min_eig,
                });
            }
            let delta_inv = delta
                .as_matrix()
                .clone()
                .try_inverse()
                .ok_or(Error::NotPd {
                    context: "completion-of-squares curvature",
                    min_eig,
                })?;
            let gain = &delta_inv * b.transpose() * next.as_matrix() * a;
            let correction =
                next.as_matrix() * b * &delta_inv * b.transpose() * next.as_matrix();
            let inner = SymMatrix::symmetrize(next.as_matrix() - correction);
            let q_k = if k == 0 {
                SymMatrix::zeros(model.state_dim())
            } else {
                q[k].clone()
            };
            q_tilde[k] = SymMatrix::symmetrize(
                q_k.as_matrix() + inner.congruence(&a.transpose()).as_matrix(),
            );
            gains[k] = gain;
            deltas[k] = delta;
        }
        let mut constant = trace_dot(&q_tilde[0], model.sigma1());
        for k in 0..n {
            constant += trace_dot(&q_tilde[k + 1], model.sigma_w());
        }
        Ok((gains, deltas, q_tilde, constant))
    };

    let (k_s, delta_s, q_tilde_s, delta_s0) = side(&costs.q_s, &costs.r_s)?;
    let (k_r, delta_r, q_tilde_r, delta_r0) = side(&costs.q_r, &costs.r_r)?;
    Ok(RiccatiTransform {
        k_s,
        k_r,
        delta_s,
        delta_r,
        q_tilde_s,
        q_tilde_r,
        delta_s0,
        delta_r0,
    })
}

/// Stacked objects follow the input-history display: block row `r`
/// corresponds to stage `n - r`, so stage `n` comes first.
pub fn block_of_stage(n: usize, stage: usize) -> usize {
    debug_assert!((1..=n).contains(&stage));
    n - stage
}

pub fn stage_of_block(n: usize, block: usize) -> usize {
    debug_assert!(block < n);
    n - block
}

/// Stacked reduction artifacts of the control game.
#[derive(Debug, Clone)]
pub struct ControlTransform {
    /// Horizon and per-stage dimensions of the stacked objects.
    pub n: usize,
    pub p: usize,
    pub t: usize,
    /// Unit block-upper-triangular input mixers (nt x nt).
    pub phi_s: DMatrix<f64>,
    pub phi_r: DMatrix<f64>,
    /// Block-diagonal receiver gain stack (nt x np).
    pub k_r_block: DMatrix<f64>,
    /// `T_S = Phi_S Phi_R^{-1} K_R` (nt x np, block upper triangular).
    pub t_s: DMatrix<f64>,
    /// Sender-side quadratic form over the stacked posterior (np x np).
    pub xi: SymMatrix,
    /// Policy-independent constant `tr{Sigma^o K_S' Delta_S K_S} + Delta_{S,0}`.
    pub xi0: f64,
    /// Stage objective matrices fed to the chained SDP.
    pub v_o: Vec<SymMatrix>,
    /// Backward Riccati data the stacks were built from.
    pub riccati: RiccatiTransform,
}

/// Builds the stacked transform and the virtual-state stage objectives
/// `V^o_k` from the completed squares.
pub fn build_control_transform(
    riccati: RiccatiTransform,
    model: &ProcessModel,
) -> Result<ControlTransform> {
    let n = model.horizon();
    let p = model.state_dim();
    let t = model.input_dim();
    let a = model.a();
    let b = model.b();

    // Powers of A up to n-1 for the off-diagonal blocks.
    let mut a_pow: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    a_pow.push(DMatrix::identity(p, p));
    for _ in 1..n {
        a_pow.push(a * a_pow.last().expect("non-empty"));
    }

    let phi = |gains: &[DMatrix<f64>]| -> DMatrix<f64> {
        let mut m = DMatrix::identity(n * t, n * t);
        for r in 0..n {
            let stage = stage_of_block(n, r);
            for c in (r + 1)..n {
                let block = &gains[stage - 1] * &a_pow[c - r - 1] * b;
                m.view_mut((r * t, c * t), (t, t)).copy_from(&block);
            }
        }
        m
    };
    let phi_s = phi(&riccati.k_s);
    let phi_r = phi(&riccati.k_r);

    let block_diag_gain = |gains: &[DMatrix<f64>]| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n * t, n * p);
        for r in 0..n {
            let stage = stage_of_block(n, r);
            m.view_mut((r * t, r * p), (t, p)).copy_from(&gains[stage - 1]);
        }
        m
    };
    let k_r_block = block_diag_gain(&riccati.k_r);
    let k_s_block = block_diag_gain(&riccati.k_s);

    let mut delta_s_block = DMatrix::zeros(n * t, n * t);
    for r in 0..n {
        let stage = stage_of_block(n, r);
        delta_s_block
            .view_mut((r * t, r * t), (t, t))
            .copy_from(riccati.delta_s[stage - 1].as_matrix());
    }

    // X = Phi_R^{-1} K_R by block back-substitution (unit diagonal).
    let mut x = k_r_block.clone();
    for r in (0..n).rev() {
        for c in (r + 1)..n {
            let coupling = phi_r.view((r * t, c * t), (t, t)).clone_owned();
            let below = x.view((c * t, 0), (t, n * p)).clone_owned();
            let mut row = x.view_mut((r * t, 0), (t, n * p));
            row -= coupling * below;
        }
    }
    let t_s = &phi_s * &x;

    let xi = SymMatrix::symmetrize(
        t_s.transpose() * &delta_s_block * &t_s
            - t_s.transpose() * &delta_s_block * &k_s_block
            - k_s_block.transpose() * &delta_s_block * &t_s,
    );

    // Stacked virtual-state covariance: block (r, c) holds
    // E{x^o_i (x^o_j)'} = A^{i-j} Sigma^o_j for stages i >= j.
    let cov = covariance_schedule(model);
    let mut sigma_stack = DMatrix::zeros(n * p, n * p);
    for r in 0..n {
        let i = stage_of_block(n, r);
        for c in 0..n {
            let j = stage_of_block(n, c);
            let block = if i >= j {
                &a_pow[i - j] * cov.at(j - 1).as_matrix()
            } else {
                cov.at(i - 1).as_matrix() * a_pow[j - i].transpose()
            };
            sigma_stack.view_mut((r * p, c * p), (p, p)).copy_from(&block);
        }
    }
    let weighted = k_s_block.transpose() * &delta_s_block * &k_s_block;
    let xi0 = (sigma_stack * weighted).trace() + riccati.delta_s0;

    // V^o_k folds the cross-stage blocks of Xi onto stage k through the
    // deterministic propagation E{xhat^o_l (xhat^o_k)'} = H^o_l (A^{k-l})'.
    let mut v_o = Vec::with_capacity(n);
    for stage in 1..=n {
        let rk = block_of_stage(n, stage);
        let mut v = xi
            .as_matrix()
            .view((rk * p, rk * p), (p, p))
            .clone_owned();
        for l in (stage + 1)..=n {
            let rl = block_of_stage(n, l);
            let xi_kl = xi.as_matrix().view((rk * p, rl * p), (p, p)).clone_owned();
            let xi_lk = xi.as_matrix().view((rl * p, rk * p), (p, p)).clone_owned();
            v += &xi_kl * &a_pow[l - stage] + a_pow[l - stage].transpose() * &xi_lk;
        }
        v_o.push(SymMatrix::symmetrize(v));
    }

    Ok(ControlTransform {
        n,
        p,
        t,
        phi_s,
        phi_r,
        k_r_block,
        t_s,
        xi,
        xi0,
        v_o,
        riccati,
    })
}

impl ControlTransform {
    /// Worst block strictly below the block diagonal of `T_S`; zero (to
    /// rounding) because causal inputs only see past posteriors.
    pub fn lower_triangular_defect(&self) -> f64 {
        let (n, p, t) = (self.n, self.p, self.t);
        let mut worst = 0.0f64;
        for r in 0..n {
            for c in 0..r {
                worst = worst.max(self.t_s.view((r * t, c * p), (t, p)).norm());
            }
        }
        worst
    }

    /// Causal stage update of the equilibrium control:
    /// `u_k = -K_{R,k} xhat^o_k - sum_{j<k} K_{R,k} A^{k-1-j} B u_j`.
    pub fn control_step(
        &self,
        stage: usize,
        xhat_o: &DVector<f64>,
        u_history: &[DVector<f64>],
        model: &ProcessModel,
    ) -> DVector<f64> {
        debug_assert_eq!(u_history.len(), stage - 1);
        let gain = &self.riccati.k_r[stage - 1];
        let mut u = -(gain * xhat_o);
        let mut a_pow = DMatrix::identity(self.p, self.p);
        for j in (1..stage).rev() {
            u -= gain * &a_pow * model.b() * &u_history[j - 1];
            a_pow = model.a() * a_pow;
        }
        u
    }
}

/// Transformed inputs `u^sigma_k = u_k + K_k B u_{k-1} + ... + K_k A^{k-2} B u_1`.
pub fn transformed_inputs(
    riccati: &RiccatiTransform,
    model: &ProcessModel,
    u_history: &[DVector<f64>],
    side: Side,
) -> Vec<DVector<f64>> {
    let gains = riccati.gains(side);
    let mut out = Vec::with_capacity(u_history.len());
    for (k, u_k) in u_history.iter().enumerate() {
        let mut u = u_k.clone();
        let mut a_pow = DMatrix::identity(model.state_dim(), model.state_dim());
        for j in (0..k).rev() {
            u += &gains[k] * &a_pow * model.b() * &u_history[j];
            a_pow = model.a() * a_pow;
        }
        out.push(u);
    }
    out
}

/// Solves the stacked relation `Phi_R u = -K_R xhat^o` by block
/// back-substitution; `posterior_means` are `xhat^o_1..xhat^o_n` in natural
/// stage order and the result is returned in natural order too.
pub fn reconstruct_controls(
    transform: &ControlTransform,
    posterior_means: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let (n, p, t) = (transform.n, transform.p, transform.t);
    debug_assert_eq!(posterior_means.len(), n);
    let mut stacked = DVector::zeros(n * p);
    for (r, _) in (0..n).map(|r| (r, ())) {
        let stage = stage_of_block(n, r);
        stacked
            .rows_mut(r * p, p)
            .copy_from(&posterior_means[stage - 1]);
    }
    let rhs = -(&transform.k_r_block * stacked);
    let mut u = rhs.clone();
    for r in (0..n).rev() {
        for c in (r + 1)..n {
            let coupling = transform.phi_r.view((r * t, c * t), (t, t)).clone_owned();
            let below = u.rows(c * t, t).clone_owned();
            let mut row = u.rows_mut(r * t, t);
            row -= coupling * below;
        }
    }
    (1..=n)
        .map(|stage| {
            let r = block_of_stage(n, stage);
            u.rows(r * t, t).clone_owned()
        })
        .collect()
}

/// Everything produced by the strategic-control pipeline.
#[derive(Debug, Clone)]
pub struct ControlEquilibrium {
    pub problem: SdpProblem,
    pub solution: SdpSolution,
    pub extreme: ExtremePoint,
    /// Sender weights over the virtual state.
    pub policy: SignalingPolicy,
    pub transform: ControlTransform,
    /// `Xi_o + sum_k tr{V^o_k H^o_k}`.
    pub sender_cost: f64,
    /// `Delta_{R,0} + sum_k tr{K_{R,k}' Delta_{R,k} K_{R,k} (Sigma^o_k - H^o_k)}`.
    pub receiver_cost: f64,
}

/// End-to-end strategic control (Algorithm 2): complete the squares, build
/// the stacked transform, solve the induced communication game over the
/// virtual state, and price both sides.
pub fn solve_control_game(
    model: &ProcessModel,
    costs: &ControlCosts,
    opts: &SolveOptions,
) -> Result<ControlEquilibrium> {
    let cov = covariance_schedule(model);
    let riccati = complete_squares(model, costs)?;
    let transform = build_control_transform(riccati, model)?;
    let problem = build_sdp(&cov, transform.v_o.clone(), model.a().clone())?;
    let solution = solve(&problem, opts)?;
    let extreme = recover_idempotents(&solution, &cov, model.a())?;
    let policy = synthesize_policy(&extreme, &cov, model.a(), PolicyMode::Control)?;

    let sender_cost = transform.xi0
        + transform
            .v_o
            .iter()
            .zip(extreme.rebuilt.iter())
            .map(|(v, h)| trace_dot(v, h))
            .sum::<f64>();
    let receiver_cost = receiver_cost_at(&transform.riccati, &cov, &extreme.rebuilt);

    Ok(ControlEquilibrium {
        problem,
        solution,
        extreme,
        policy,
        transform,
        sender_cost,
        receiver_cost,
    })
}

/// Receiver equilibrium cost for given virtual-state posterior covariances:
/// under `u^R_k = -K_{R,k} xhat^o_k` the stage error is the estimation
/// residual, so the cost prices `Sigma^o_k - H^o_k`.
pub fn receiver_cost_at(
    riccati: &RiccatiTransform,
    cov: &CovarianceSchedule,
    posteriors: &[SymMatrix],
) -> f64 {
    let mut cost = riccati.delta_r0;
    for k in 0..cov.len() {
        let weighted = SymMatrix::symmetrize(
            riccati.k_r[k].transpose() * riccati.delta_r[k].as_matrix() * &riccati.k_r[k],
        );
        let slack = SymMatrix::symmetrize(cov.at(k).as_matrix() - posteriors[k].as_matrix());
        cost += trace_dot(&weighted, &slack);
    }
    cost
}
