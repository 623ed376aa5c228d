//! Exact second moments of linear-policy closed loops.
//!
//! Every signal in the game (virtual state, messages, posterior means,
//! inputs, controlled state) is linear in the primitive noise vector
//! `xi = (x_1, w_1, ..., w_n)`, so its exact covariance follows from one
//! coefficient matrix per signal. Costs are then quadratic forms evaluated
//! without sampling error, which is what the algebraic identities
//! (completion of squares, change of variables, receiver optimality) are
//! tested against.

use nalgebra::DMatrix;

use crate::control::{ControlTransform, RiccatiTransform, Side};
use crate::error::Result;
use crate::matops::{trace_dot, SymMatrix};
use crate::model::{covariance_schedule, CommCosts, ControlCosts, ProcessModel};
use crate::posterior::Filter;

/// The receiver's input rule, as a linear map of what the receiver knows.
pub enum ReceiverLaw<'a> {
    /// `u_k = Theta_k xhat_k`: any rule linear in the stage posterior mean,
    /// including the communication best response.
    PosteriorLinear(&'a [DMatrix<f64>]),
    /// The equilibrium control law `Phi_R u = -K_R xhat^o`.
    Stacked(&'a ControlTransform),
    /// `u_k = sum_{j<=k} Theta[k][j] y_j`: an arbitrary causal linear rule
    /// over raw messages.
    MessageLinear(&'a [Vec<DMatrix<f64>>]),
}

/// Coefficient matrices of every closed-loop signal over the primitive
/// noise basis.
pub struct SignalFlow {
    n: usize,
    noise_cov: DMatrix<f64>,
    /// Virtual state `x^o_k`, stages `1..n`.
    pub x_o: Vec<DMatrix<f64>>,
    /// Messages `y_k = L_k' x^o_k`.
    pub y: Vec<DMatrix<f64>>,
    /// Posterior means `xhat^o_k`.
    pub xhat_o: Vec<DMatrix<f64>>,
    /// Inputs `u_k`.
    pub u: Vec<DMatrix<f64>>,
    /// Controlled state `x_k`, stages `1..n+1`.
    pub x: Vec<DMatrix<f64>>,
}

/// Builds the closed-loop coefficient matrices for sender weights
/// `weights`, receiver rule `law`, and an optional additive message-linear
/// input perturbation.
pub fn flow(
    model: &ProcessModel,
    weights: &[DMatrix<f64>],
    law: ReceiverLaw<'_>,
    perturbation: Option<&[Vec<DMatrix<f64>>]>,
) -> Result<SignalFlow> {
    let n = model.horizon();
    let p = model.state_dim();
    let t = model.input_dim();
    let a = model.a();
    let b = model.b();
    let dim = p * (n + 1);

    let mut noise_cov = DMatrix::zeros(dim, dim);
    noise_cov
        .view_mut((0, 0), (p, p))
        .copy_from(model.sigma1().as_matrix());
    for k in 1..=n {
        noise_cov
            .view_mut((k * p, k * p), (p, p))
            .copy_from(model.sigma_w().as_matrix());
    }

    // Virtual state: x^o_1 picks the first block, then A x^o_k + w_k.
    let mut x_o: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut first = DMatrix::zeros(p, dim);
    first.view_mut((0, 0), (p, p)).copy_from(&DMatrix::identity(p, p));
    x_o.push(first);
    for k in 1..n {
        let mut next = a * &x_o[k - 1];
        next.view_mut((0, k * p), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        x_o.push(next);
    }

    let y: Vec<DMatrix<f64>> = (0..n).map(|k| weights[k].transpose() * &x_o[k]).collect();

    // Posterior means through the precomputed filter gains.
    let cov = covariance_schedule(model);
    let filter = Filter::new(model, &cov, weights)?;
    let mut xhat_o: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let predicted = if k == 0 {
            DMatrix::zeros(p, dim)
        } else {
            a * &xhat_o[k - 1]
        };
        let innovation = &y[k] - weights[k].transpose() * &predicted;
        xhat_o.push(&predicted + filter.gain(k) * innovation);
    }

    // Inputs. The stacked law unrolls causally so u_k only reads
    // xhat^o_{[1,k]}.
    let mut u: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut u_k = match &law {
            ReceiverLaw::PosteriorLinear(gains) => &gains[k] * &xhat_o[k],
            ReceiverLaw::Stacked(transform) => {
                let gain = &transform.riccati.k_r[k];
                let mut coeff = -(gain * &xhat_o[k]);
                let mut a_pow = DMatrix::identity(p, p);
                for j in (0..k).rev() {
                    coeff -= gain * &a_pow * b * &u[j];
                    a_pow = a * a_pow;
                }
                coeff
            }
            ReceiverLaw::MessageLinear(theta) => {
                let mut coeff = DMatrix::zeros(t, dim);
                for (j, theta_kj) in theta[k].iter().enumerate() {
                    coeff += theta_kj * &y[j];
                }
                coeff
            }
        };
        if let Some(extra) = perturbation {
            for (j, theta_kj) in extra[k].iter().enumerate() {
                u_k += theta_kj * &y[j];
            }
        }
        u.push(u_k);
    }

    // Controlled state, one stage past the horizon.
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(n + 1);
    x.push(x_o[0].clone());
    for k in 0..n {
        let mut next = a * &x[k] + b * &u[k];
        next.view_mut((0, (k + 1) * p), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        x.push(next);
    }

    Ok(SignalFlow {
        n,
        noise_cov,
        x_o,
        y,
        xhat_o,
        u,
        x,
    })
}

impl SignalFlow {
    pub fn horizon(&self) -> usize {
        self.n
    }

    /// Cross-covariance `E{v1 v2'}` of two signals from their coefficients.
    pub fn covariance(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> DMatrix<f64> {
        c1 * &self.noise_cov * c2.transpose()
    }

    /// `E{v v'}`.
    pub fn second_moment(&self, c: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(self.covariance(c, c))
    }

    /// `E{v' M v}` for a symmetric weight.
    pub fn quad(&self, c: &DMatrix<f64>, m: &SymMatrix) -> f64 {
        trace_dot(m, &self.second_moment(c))
    }

    /// `E{||v||^2}`.
    pub fn sq_norm(&self, c: &DMatrix<f64>) -> f64 {
        self.second_moment(c).trace()
    }
}

/// Exact communication costs `sum_k E||Q_k x_k + R_k u_k||^2` for both
/// players under the flow's input rule.
pub fn comm_costs(costs: &CommCosts, flow: &SignalFlow) -> (f64, f64) {
    let mut j_s = 0.0;
    let mut j_r = 0.0;
    for k in 0..flow.n {
        let sender = &costs.q_s[k] * &flow.x_o[k] + &costs.r_s[k] * &flow.u[k];
        let receiver = &costs.q_r[k] * &flow.x_o[k] + &costs.r_r[k] * &flow.u[k];
        j_s += flow.sq_norm(&sender);
        j_r += flow.sq_norm(&receiver);
    }
    (j_s, j_r)
}

/// Exact control costs
/// `sum_k E{x_{k+1}' Q_{k+1} x_{k+1} + u_k' R_k u_k}` for both players.
pub fn control_costs(costs: &ControlCosts, flow: &SignalFlow) -> (f64, f64) {
    let mut j_s = 0.0;
    let mut j_r = 0.0;
    for k in 0..flow.n {
        j_s += flow.quad(&flow.x[k + 1], &costs.q_s[k + 1]) + flow.quad(&flow.u[k], &costs.r_s[k]);
        j_r += flow.quad(&flow.x[k + 1], &costs.q_r[k + 1]) + flow.quad(&flow.u[k], &costs.r_r[k]);
    }
    (j_s, j_r)
}

/// Right-hand side of the completion of squares:
/// `sum_k E||u_k + K_k x_k||^2_{Delta_k} + Delta_0`.
pub fn completed_square_cost(
    riccati: &RiccatiTransform,
    side: Side,
    flow: &SignalFlow,
) -> f64 {
    let gains = riccati.gains(side);
    let deltas = riccati.curvatures(side);
    let mut cost = riccati.constant(side);
    for k in 0..flow.n {
        let err = &flow.u[k] + &gains[k] * &flow.x[k];
        cost += flow.quad(&err, &deltas[k]);
    }
    cost
}

/// The same square after the change of variables onto the virtual state:
/// `sum_k E||u^sigma_k + K_k x^o_k||^2_{Delta_k} + Delta_0`, with the
/// transformed inputs built on coefficient matrices.
pub fn transformed_square_cost(
    riccati: &RiccatiTransform,
    side: Side,
    model: &ProcessModel,
    flow: &SignalFlow,
) -> f64 {
    let gains = riccati.gains(side);
    let deltas = riccati.curvatures(side);
    let p = model.state_dim();
    let mut cost = riccati.constant(side);
    for k in 0..flow.n {
        let mut u_t = flow.u[k].clone();
        let mut a_pow = DMatrix::identity(p, p);
        for j in (0..k).rev() {
            u_t += &gains[k] * &a_pow * model.b() * &flow.u[j];
            a_pow = model.a() * a_pow;
        }
        let err = u_t + &gains[k] * &flow.x_o[k];
        cost += flow.quad(&err, &deltas[k]);
    }
    cost
}
