//! Receiver-side filtering under memoryless linear signaling: the posterior
//! mean recursion and the map from sender weights `L_k` to posterior
//! covariances `H_k`.
//!
//! For `y_k = L_k' x_k` the posterior covariance obeys
//!
//! ```text
//! H_1 = Sigma_1^{1/2} C_1 (C_1'C_1)^+ C_1' Sigma_1^{1/2},   C_1 = Sigma_1^{1/2} L_1
//! H_k = A H_{k-1} A' + M_k^{1/2} C_k (C_k'C_k)^+ C_k' M_k^{1/2},
//!        M_k = Sigma_k - A H_{k-1} A',   C_k = M_k^{1/2} L_k
//! ```
//!
//! so the innovation-to-posterior map is an orthogonal projector in the
//! whitened coordinates. That projector structure is what ties the filter to
//! the semidefinite relaxation: every reachable `H` chain satisfies
//! `Sigma_k >= H_k >= A H_{k-1} A'`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::matops::{pinv, psd_sqrt, SymMatrix};
use crate::model::{CovarianceSchedule, ProcessModel};

/// Posterior covariances `H_k = E{xhat_k xhat_k'}` for each stage.
#[derive(Debug, Clone)]
pub struct PosteriorSchedule {
    h: Vec<SymMatrix>,
}

impl PosteriorSchedule {
    pub fn stages(&self) -> &[SymMatrix] {
        &self.h
    }

    pub fn at(&self, k: usize) -> &SymMatrix {
        &self.h[k]
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Posterior covariance schedule induced by the sender weights `weights`
/// (one `p x p` matrix per stage, any rank).
pub fn posterior_cov_schedule(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    weights: &[DMatrix<f64>],
) -> Result<PosteriorSchedule> {
    let filter = Filter::new(model, cov, weights)?;
    Ok(PosteriorSchedule { h: filter.h })
}

/// Precomputed filter for one set of sender weights: per-stage innovation
/// covariances, gains, and the posterior covariance schedule.
#[derive(Debug, Clone)]
pub struct Filter {
    a: DMatrix<f64>,
    weights: Vec<DMatrix<f64>>,
    /// Posterior covariances H_k.
    h: Vec<SymMatrix>,
    /// Gain applied to the stage innovation `y_k - L_k' A xhat_{k-1}`.
    gains: Vec<DMatrix<f64>>,
}

impl Filter {
    pub fn new(
        model: &ProcessModel,
        cov: &CovarianceSchedule,
        weights: &[DMatrix<f64>],
    ) -> Result<Self> {
        let n = model.horizon();
        let p = model.state_dim();
        assert_eq!(weights.len(), n, "one weight matrix per stage");
        assert_eq!(cov.len(), n, "covariance schedule must cover the horizon");

        let a = model.a().clone();
        let mut h: Vec<SymMatrix> = Vec::with_capacity(n);
        let mut gains = Vec::with_capacity(n);
        for k in 0..n {
            // Innovation covariance M_k = Sigma_k - A H_{k-1} A'  (Sigma_1 at k=0).
            let m_k = if k == 0 {
                cov.at(0).clone()
            } else {
                SymMatrix::symmetrize(cov.at(k).as_matrix() - h[k - 1].congruence(&a).as_matrix())
            };
            let root = psd_sqrt(&m_k)?;
            let c_k = root.as_matrix() * &weights[k];
            let gram_pinv = pinv(&SymMatrix::symmetrize(c_k.transpose() * &c_k));
            let projector = &c_k * gram_pinv.as_matrix() * c_k.transpose();
            let update = SymMatrix::symmetrize(root.as_matrix() * projector * root.as_matrix());

            // Gain in original coordinates: M_k L_k (L_k' M_k L_k)^+.
            let ml = m_k.as_matrix() * &weights[k];
            let gram = SymMatrix::symmetrize(weights[k].transpose() * &ml);
            let gain = &ml * pinv(&gram).as_matrix();

            let h_k = if k == 0 {
                update
            } else {
                SymMatrix::symmetrize(h[k - 1].congruence(&a).into_inner() + update.into_inner())
            };
            debug_assert_eq!(h_k.dim(), p);
            h.push(h_k);
            gains.push(gain);
        }
        Ok(Filter {
            a,
            weights: weights.to_vec(),
            h,
            gains,
        })
    }

    pub fn posteriors(&self) -> &[SymMatrix] {
        &self.h
    }

    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.gains[k]
    }

    /// One measurement update: `xhat_k = A xhat_{k-1} + G_k (y_k - L_k' A xhat_{k-1})`.
    /// At `k = 0` the predicted mean is zero.
    pub fn step(&self, k: usize, xhat_prev: &DVector<f64>, y_k: &DVector<f64>) -> DVector<f64> {
        let predicted = if k == 0 {
            DVector::zeros(self.a.nrows())
        } else {
            &self.a * xhat_prev
        };
        let innovation = y_k - self.weights[k].transpose() * &predicted;
        predicted + &self.gains[k] * innovation
    }

    /// Conditional expectation of `y_k` given the message history, i.e. the
    /// subtrahend of the whitening transform.
    pub fn predicted_message(&self, k: usize, xhat_prev: &DVector<f64>) -> DVector<f64> {
        if k == 0 {
            DVector::zeros(self.weights[0].ncols())
        } else {
            self.weights[k].transpose() * (&self.a * xhat_prev)
        }
    }

    /// Runs the filter over a full message history.
    pub fn means(&self, messages: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(messages.len());
        let mut prev = DVector::zeros(self.a.nrows());
        for (k, y) in messages.iter().enumerate() {
            let xhat = self.step(k, &prev, y);
            out.push(xhat.clone());
            prev = xhat;
        }
        out
    }
}

/// Single posterior-mean update from explicit state, for callers that do not
/// hold a [`Filter`]. `h_prev` is `H_{k-1}` (`O` at the first stage) and
/// `sigma_k` the stage prior covariance.
#[allow(clippy::too_many_arguments)]
pub fn posterior_mean_step(
    model: &ProcessModel,
    h_prev: &SymMatrix,
    sigma_k: &SymMatrix,
    weight: &DMatrix<f64>,
    xhat_prev: &DVector<f64>,
    y_k: &DVector<f64>,
    k: usize,
) -> DVector<f64> {
    let a = model.a();
    let m_k = if k == 0 {
        sigma_k.clone()
    } else {
        SymMatrix::symmetrize(sigma_k.as_matrix() - h_prev.congruence(a).as_matrix())
    };
    let ml = m_k.as_matrix() * weight;
    let gram = SymMatrix::symmetrize(weight.transpose() * &ml);
    let gain = &ml * pinv(&gram).as_matrix();
    let predicted = if k == 0 {
        DVector::zeros(a.nrows())
    } else {
        a * xhat_prev
    };
    let innovation = y_k - weight.transpose() * &predicted;
    predicted + gain * innovation
}

/// Whitens a message history: `ytilde_1 = y_1`,
/// `ytilde_k = y_k - E{y_k | y_{[1,k-1]}}`.
pub fn whiten_messages(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    weights: &[DMatrix<f64>],
    messages: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let filter = Filter::new(model, cov, weights)?;
    let mut out = Vec::with_capacity(messages.len());
    let mut prev = DVector::zeros(model.state_dim());
    for (k, y) in messages.iter().enumerate() {
        out.push(y - filter.predicted_message(k, &prev));
        prev = filter.step(k, &prev, y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::covariance_schedule;
    use crate::model::ProcessModel;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_model(n: usize) -> ProcessModel {
        let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.9]);
        ProcessModel::new(
            a,
            DMatrix::zeros(2, 1),
            SymMatrix::from_diagonal(&[1.5, 2.0]),
            SymMatrix::identity(2),
            n,
        )
        .unwrap()
    }

    #[test]
    fn full_disclosure_reaches_prior() {
        let model = test_model(4);
        let cov = covariance_schedule(&model);
        let weights = vec![DMatrix::identity(2, 2); 4];
        let post = posterior_cov_schedule(&model, &cov, &weights).unwrap();
        for k in 0..4 {
            let err = (post.at(k).as_matrix() - cov.at(k).as_matrix()).norm();
            assert!(err <= 1e-10, "stage {k}: {err:.3e}");
        }
    }

    #[test]
    fn no_disclosure_stays_zero() {
        let model = test_model(4);
        let cov = covariance_schedule(&model);
        let weights = vec![DMatrix::zeros(2, 2); 4];
        let post = posterior_cov_schedule(&model, &cov, &weights).unwrap();
        for k in 0..4 {
            assert!(post.at(k).norm() <= 1e-14, "stage {k}");
        }
    }

    #[test]
    fn first_stage_only_propagates_through_dynamics() {
        let model = test_model(4);
        let cov = covariance_schedule(&model);
        let mut weights = vec![DMatrix::zeros(2, 2); 4];
        weights[0] = DMatrix::identity(2, 2);
        let post = posterior_cov_schedule(&model, &cov, &weights).unwrap();
        // H_k = A^{k-1} Sigma_1 (A^{k-1})' once the sender goes silent.
        let mut expected = model.sigma1().clone();
        for k in 0..4 {
            if k > 0 {
                expected = expected.congruence(model.a());
            }
            let err = (post.at(k).as_matrix() - expected.as_matrix()).norm();
            assert!(err <= 1e-10, "stage {k}: {err:.3e}");
        }
    }

    #[test]
    fn posterior_chain_invariants_hold_for_random_weights() {
        let model = test_model(6);
        let cov = covariance_schedule(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let weights: Vec<DMatrix<f64>> = (0..6)
                .map(|_| {
                    // Mix of full-rank, rank-1, and zero stages.
                    match rng.random_range(0..3) {
                        0 => DMatrix::zeros(2, 2),
                        1 => {
                            let u = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                            let v = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                            &u * v.transpose()
                        }
                        _ => DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0),
                    }
                })
                .collect();
            let post = posterior_cov_schedule(&model, &cov, &weights).unwrap();
            for k in 0..6 {
                let h_k = post.at(k);
                let slack = SymMatrix::symmetrize(cov.at(k).as_matrix() - h_k.as_matrix());
                assert!(
                    slack.min_eigenvalue() >= -1e-8,
                    "trial {trial} stage {k}: Sigma_k - H_k has min eig {:.3e}",
                    slack.min_eigenvalue()
                );
                let floor = if k == 0 {
                    SymMatrix::zeros(2)
                } else {
                    post.at(k - 1).congruence(model.a())
                };
                let gap = SymMatrix::symmetrize(h_k.as_matrix() - floor.as_matrix());
                assert!(
                    gap.min_eigenvalue() >= -1e-8,
                    "trial {trial} stage {k}: H_k - A H A' has min eig {:.3e}",
                    gap.min_eigenvalue()
                );

                // Whitened update is an orthogonal projector.
                let m_k = if k == 0 {
                    cov.at(0).clone()
                } else {
                    SymMatrix::symmetrize(
                        cov.at(k).as_matrix() - post.at(k - 1).congruence(model.a()).as_matrix(),
                    )
                };
                let inv_root = crate::matops::psd_inv_sqrt(&m_k).unwrap();
                let diff = SymMatrix::symmetrize(h_k.as_matrix() - floor.as_matrix());
                let f = diff.congruence(inv_root.as_matrix());
                let fm = f.as_matrix();
                let resid = (fm * fm - fm).norm();
                assert!(resid <= 1e-8, "trial {trial} stage {k}: projector residual {resid:.3e}");
            }
        }
    }

    #[test]
    fn mean_step_trivial_cases() {
        let model = test_model(2);
        let cov = covariance_schedule(&model);
        // L = O: pure prediction.
        let xhat_prev = DVector::from_row_slice(&[0.4, -0.2]);
        let y = DVector::zeros(2);
        let out = posterior_mean_step(
            &model,
            &SymMatrix::zeros(2),
            cov.at(1),
            &DMatrix::zeros(2, 2),
            &xhat_prev,
            &y,
            1,
        );
        let expected = model.a() * &xhat_prev;
        assert!((out - expected).norm() <= 1e-14);

        // L = I at the first stage: perfect observation.
        let y1 = DVector::from_row_slice(&[1.3, -0.5]);
        let out = posterior_mean_step(
            &model,
            &SymMatrix::zeros(2),
            cov.at(0),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            &y1,
            0,
        );
        assert!((out - y1).norm() <= 1e-10);
    }

    #[test]
    fn whitening_preserves_posteriors_pathwise() {
        let model = test_model(5);
        let cov = covariance_schedule(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights: Vec<DMatrix<f64>> = (0..5)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let filter = Filter::new(&model, &cov, &weights).unwrap();

        // Sample one trajectory of the exogenous state and its messages.
        let root1 = psd_sqrt(model.sigma1()).unwrap();
        let root_w = psd_sqrt(model.sigma_w()).unwrap();
        let mut x = root1.as_matrix()
            * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mut messages = Vec::new();
        for k in 0..5 {
            if k > 0 {
                let w = root_w.as_matrix()
                    * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                x = model.a() * x + w;
            }
            messages.push(weights[k].transpose() * &x);
        }

        let raw_means = filter.means(&messages);
        let whitened = whiten_messages(&model, &cov, &weights, &messages).unwrap();

        // Reconstruct the means from whitened messages: the whitened message
        // IS the innovation, so the update skips the prediction subtraction.
        let mut prev = DVector::zeros(2);
        for k in 0..5 {
            let predicted = if k == 0 {
                DVector::zeros(2)
            } else {
                model.a() * &prev
            };
            let xhat = &predicted + filter.gain(k) * &whitened[k];
            let err = (&xhat - &raw_means[k]).norm();
            assert!(err <= 1e-10, "stage {k}: {err:.3e}");
            prev = xhat;
        }

        // n = 1 and L = O whitening trivia.
        let model1 = test_model(1);
        let cov1 = covariance_schedule(&model1);
        let one = whiten_messages(&model1, &cov1, &weights[..1], &messages[..1]).unwrap();
        assert_eq!(one[0], messages[0]);
        let silent = vec![DMatrix::zeros(2, 2); 5];
        let silent_msgs = vec![DVector::zeros(2); 5];
        let wh = whiten_messages(&model, &cov, &silent, &silent_msgs).unwrap();
        for y in wh {
            assert!(y.norm() == 0.0);
        }
    }
}
