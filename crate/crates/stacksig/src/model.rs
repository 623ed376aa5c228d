//! Process model, cost structure, and covariance schedules for the
//! multi-stage signaling game.
//!
//! The underlying state follows the first-order Gauss-Markov recursion
//! `x_{k+1} = A x_k + B u_k + w_k` with `x_1 ~ N(0, Sigma1)` and
//! `w_k ~ N(0, SigmaW)`. Sender and receiver pay per-stage quadratic costs,
//! in one of two forms:
//!
//! * communication: `sum_k ||Q_k x_k + R_k u_k||^2` with the state exogenous
//!   (`B` ignored), or
//! * control: `sum_k x_{k+1}' Q_{k+1} x_{k+1} + u_k' R_k u_k` over the
//!   controlled process.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::SymMatrix;

/// The Gauss-Markov process `x_{k+1} = A x_k + B u_k + w_k` over a finite
/// horizon of `n` stages.
#[derive(Debug, Clone)]
pub struct ProcessModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma1: SymMatrix,
    sigma_w: SymMatrix,
    horizon: usize,
}

impl ProcessModel {
    /// Validates and builds a model.
    ///
    /// `A` must be non-singular and `Sigma1`, `SigmaW` positive definite.
    /// `B` may be all zeros (exogenous state).
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma1: SymMatrix,
        sigma_w: SymMatrix,
        horizon: usize,
    ) -> Result<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return Err(Error::InvalidModel("A must be square".to_string()));
        }
        if b.nrows() != p {
            return Err(Error::DimensionMismatch(format!(
                "B has {} rows, state dimension is {}",
                b.nrows(),
                p
            )));
        }
        if sigma1.dim() != p || sigma_w.dim() != p {
            return Err(Error::DimensionMismatch(
                "Sigma1/SigmaW must match the state dimension".to_string(),
            ));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be >= 1".to_string()));
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("A/B have non-finite entries".to_string()));
        }
        let norm_a = a.norm();
        let det = a.clone().determinant();
        if det.abs() <= 1e-12 * norm_a.powi(p as i32).max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidModel(format!(
                "A is singular at working precision (|det| = {:.3e})",
                det.abs()
            )));
        }
        for (name, m) in [("Sigma1", &sigma1), ("SigmaW", &sigma_w)] {
            let min_eig = m.min_eigenvalue();
            if min_eig <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "{name} must be positive definite (min eigenvalue {min_eig:.3e})"
                )));
            }
        }
        Ok(ProcessModel {
            a,
            b,
            sigma1,
            sigma_w,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma1(&self) -> &SymMatrix {
        &self.sigma1
    }

    pub fn sigma_w(&self) -> &SymMatrix {
        &self.sigma_w
    }

    pub fn has_input(&self) -> bool {
        self.b.iter().any(|&x| x != 0.0)
    }

    /// Same model with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        ProcessModel::new(
            self.a.clone(),
            self.b.clone(),
            self.sigma1.clone(),
            self.sigma_w.clone(),
            horizon,
        )
    }
}

/// One step of the uncontrolled companion process `x^o_{k+1} = A x^o_k + w_k`.
pub fn virtual_state_step(x_o: &DVector<f64>, w: &DVector<f64>, a: &DMatrix<f64>) -> DVector<f64> {
    a * x_o + w
}

/// Per-stage communication costs `||Q_{.,k} x_k + R_{.,k} u_k||^2`.
///
/// All lists have length `n`; `Q` matrices are `r x p` and `R` matrices
/// `r x t`, where `r` is the cost output dimension.
#[derive(Debug, Clone)]
pub struct CommCosts {
    pub q_s: Vec<DMatrix<f64>>,
    pub r_s: Vec<DMatrix<f64>>,
    pub q_r: Vec<DMatrix<f64>>,
    pub r_r: Vec<DMatrix<f64>>,
}

/// Per-stage control costs `x_{k+1}' Q_{.,k+1} x_{k+1} + u_k' R_{.,k} u_k`.
///
/// `q_s`/`q_r` have length `n + 1` and are indexed by stage (`q_s[k-1]` is
/// `Q_{S,k}`); the stage-1 entry participates only through the convention
/// `Q_{.,1} = O` in the cost recursion. `r_s`/`r_r` have length `n`.
#[derive(Debug, Clone)]
pub struct ControlCosts {
    pub q_s: Vec<SymMatrix>,
    pub r_s: Vec<SymMatrix>,
    pub q_r: Vec<SymMatrix>,
    pub r_r: Vec<SymMatrix>,
}

/// Cost structure of the game, in communication or control form.
#[derive(Debug, Clone)]
pub enum CostSpec {
    Communication(CommCosts),
    Control(ControlCosts),
}

impl CostSpec {
    /// Builds communication-mode costs, checking shapes and that
    /// `R_{R,k}' R_{R,k}` is positive definite at every stage.
    pub fn communication(
        q_s: Vec<DMatrix<f64>>,
        r_s: Vec<DMatrix<f64>>,
        q_r: Vec<DMatrix<f64>>,
        r_r: Vec<DMatrix<f64>>,
        model: &ProcessModel,
    ) -> Result<Self> {
        let n = model.horizon();
        let p = model.state_dim();
        let t = model.input_dim();
        for (name, list) in [("Q_S", &q_s), ("R_S", &r_s), ("Q_R", &q_r), ("R_R", &r_r)] {
            if list.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} must have one matrix per stage ({} given, horizon {n})",
                    list.len()
                )));
            }
        }
        for k in 0..n {
            let r = q_s[k].nrows();
            if q_r[k].nrows() != r || r_s[k].nrows() != r || r_r[k].nrows() != r {
                return Err(Error::DimensionMismatch(format!(
                    "stage {}: cost matrices disagree on output dimension",
                    k + 1
                )));
            }
            if q_s[k].ncols() != p || q_r[k].ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "stage {}: Q matrices must have {p} columns",
                    k + 1
                )));
            }
            if r_s[k].ncols() != t || r_r[k].ncols() != t {
                return Err(Error::DimensionMismatch(format!(
                    "stage {}: R matrices must have {t} columns",
                    k + 1
                )));
            }
            let gram = SymMatrix::symmetrize(r_r[k].transpose() * &r_r[k]);
            let min_eig = gram.min_eigenvalue();
            if min_eig <= 1e-12 * (1.0 + gram.spectral_norm()) {
                return Err(Error::SingularRr { min_eig });
            }
        }
        Ok(CostSpec::Communication(CommCosts { q_s, r_s, q_r, r_r }))
    }

    /// Builds control-mode costs. `q_s`/`q_r` are given for stages
    /// `2..=n+1` (length `n`, or padded to `n + 1` including a stage-1
    /// placeholder); `r_s`/`r_r` for stages `1..=n`.
    pub fn control(
        q_s: Vec<SymMatrix>,
        r_s: Vec<SymMatrix>,
        q_r: Vec<SymMatrix>,
        r_r: Vec<SymMatrix>,
        model: &ProcessModel,
    ) -> Result<Self> {
        let n = model.horizon();
        let p = model.state_dim();
        let t = model.input_dim();
        let pad = |mut list: Vec<SymMatrix>, name: &str| -> Result<Vec<SymMatrix>> {
            if list.len() == n {
                let mut full = Vec::with_capacity(n + 1);
                full.push(SymMatrix::zeros(p));
                full.append(&mut list);
                Ok(full)
            } else if list.len() == n + 1 {
                list[0] = SymMatrix::zeros(p);
                Ok(list)
            } else {
                Err(Error::DimensionMismatch(format!(
                    "{name} must have n or n+1 matrices ({} given, horizon {n})",
                    list.len()
                )))
            }
        };
        let q_s = pad(q_s, "Q_S")?;
        let q_r = pad(q_r, "Q_R")?;
        if r_s.len() != n || r_r.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "R_S/R_R must have one matrix per stage (horizon {n})"
            )));
        }
        for k in 0..=n {
            if q_s[k].dim() != p || q_r[k].dim() != p {
                return Err(Error::DimensionMismatch(format!(
                    "stage {}: Q matrices must be {p}x{p}",
                    k + 1
                )));
            }
        }
        for (k, q) in q_s.iter().enumerate().skip(1) {
            if q.min_eigenvalue() < -1e-10 * (1.0 + q.spectral_norm()) {
                return Err(Error::InvalidModel(format!(
                    "Q_S at stage {} is not positive semi-definite",
                    k + 1
                )));
            }
        }
        for (k, q) in q_r.iter().enumerate().skip(1) {
            if q.min_eigenvalue() < -1e-10 * (1.0 + q.spectral_norm()) {
                return Err(Error::InvalidModel(format!(
                    "Q_R at stage {} is not positive semi-definite",
                    k + 1
                )));
            }
        }
        for (name, list) in [("R_S", &r_s), ("R_R", &r_r)] {
            for (k, r) in list.iter().enumerate() {
                if r.dim() != t {
                    return Err(Error::DimensionMismatch(format!(
                        "stage {}: {name} must be {t}x{t}",
                        k + 1
                    )));
                }
                let min_eig = r.min_eigenvalue();
                if min_eig <= 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "{name} at stage {} must be positive definite (min eigenvalue {min_eig:.3e})",
                        k + 1
                    )));
                }
            }
        }
        Ok(CostSpec::Control(ControlCosts { q_s, r_s, q_r, r_r }))
    }

    pub fn as_communication(&self) -> Option<&CommCosts> {
        match self {
            CostSpec::Communication(c) => Some(c),
            CostSpec::Control(_) => None,
        }
    }

    pub fn as_control(&self) -> Option<&ControlCosts> {
        match self {
            CostSpec::Control(c) => Some(c),
            CostSpec::Communication(_) => None,
        }
    }
}

/// Prior covariances `Sigma_k` of the (virtual) state at each stage.
#[derive(Debug, Clone)]
pub struct CovarianceSchedule {
    sigma: Vec<SymMatrix>,
}

impl CovarianceSchedule {
    pub fn stages(&self) -> &[SymMatrix] {
        &self.sigma
    }

    pub fn at(&self, k: usize) -> &SymMatrix {
        &self.sigma[k]
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Runs the prior-covariance recursion `Sigma_k = A Sigma_{k-1} A' + SigmaW`
/// starting from `Sigma_1`. The control input does not enter: this is also
/// the covariance schedule of the virtual state.
pub fn covariance_schedule(model: &ProcessModel) -> CovarianceSchedule {
    let mut sigma = Vec::with_capacity(model.horizon());
    sigma.push(model.sigma1().clone());
    for _ in 1..model.horizon() {
        let prev = sigma.last().expect("schedule starts non-empty");
        let next = SymMatrix::symmetrize(
            prev.congruence(model.a()).into_inner() + model.sigma_w().as_matrix(),
        );
        sigma.push(next);
    }
    CovarianceSchedule { sigma }
}

/// Sender objective matrices `V_k = L_k'L_k - L_k'Q_{S,k} - Q_{S,k}'L_k`
/// where `L_k = R_{S,k} (R_{R,k}'R_{R,k})^{-1} R_{R,k}' Q_{R,k}` folds the
/// receiver best response into the sender's stage cost.
pub fn comm_objective_matrices(costs: &CommCosts) -> Result<Vec<SymMatrix>> {
    let n = costs.q_s.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let gram = SymMatrix::symmetrize(costs.r_r[k].transpose() * &costs.r_r[k]);
        let min_eig = gram.min_eigenvalue();
        if min_eig <= 1e-12 * (1.0 + gram.spectral_norm()) {
            return Err(Error::SingularRr { min_eig });
        }
        let gram_inv = gram
            .as_matrix()
            .clone()
            .try_inverse()
            .ok_or(Error::SingularRr { min_eig })?;
        let lambda = &costs.r_s[k] * gram_inv * costs.r_r[k].transpose() * &costs.q_r[k];
        let v = lambda.transpose() * &lambda
            - lambda.transpose() * &costs.q_s[k]
            - costs.q_s[k].transpose() * &lambda;
        out.push(SymMatrix::symmetrize(v));
    }
    Ok(out)
}

/// Receiver-side analogue of [`comm_objective_matrices`]: with the receiver's
/// own loss folded in, the stage matrix reduces to
/// `-Q_{R,k}' R_{R,k} (R_{R,k}'R_{R,k})^{-1} R_{R,k}' Q_{R,k}`.
pub fn comm_receiver_matrices(costs: &CommCosts) -> Result<Vec<SymMatrix>> {
    let mirrored = CommCosts {
        q_s: costs.q_r.clone(),
        r_s: costs.r_r.clone(),
        q_r: costs.q_r.clone(),
        r_r: costs.r_r.clone(),
    };
    comm_objective_matrices(&mirrored)
}
