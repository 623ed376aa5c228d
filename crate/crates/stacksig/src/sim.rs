//! Monte Carlo trajectory engine: samples state and noise paths, applies
//! signaling and control policies, and estimates costs and second moments as
//! statistical oracles for every analytic quantity in the pipeline.
//!
//! Each trajectory draws from its own counter-derived RNG stream, so results
//! do not depend on evaluation order and a report is reproducible from
//! `(master seed, path count)` alone.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::control::ControlTransform;
use crate::error::Result;
use crate::matops::{psd_sqrt, SymMatrix};
use crate::model::{covariance_schedule, CommCosts, ControlCosts, CostSpec, ProcessModel};
use crate::policy::{ReceiverGain, SignalingPolicy};
use crate::posterior::Filter;

/// Colors standard normal draws with a fixed PSD square root.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(cov: &SymMatrix) -> Result<Self> {
        Ok(GaussianSampler {
            root: psd_sqrt(cov)?.into_inner(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.root.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.root * z
    }
}

/// RNG for one trajectory: the master seed keys the cipher, the trajectory
/// index selects the stream.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// One sampled play of the game.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Controlled state, stages `1..n+1`.
    pub x: Vec<DVector<f64>>,
    /// Virtual state, stages `1..n`.
    pub x_o: Vec<DVector<f64>>,
    /// Process noise `w_k`, stages `1..n`.
    pub w: Vec<DVector<f64>>,
    /// Messages.
    pub y: Vec<DVector<f64>>,
    /// Posterior means of the (virtual) state.
    pub xhat: Vec<DVector<f64>>,
    /// Receiver inputs.
    pub u: Vec<DVector<f64>>,
    /// Realized quadratic costs of this path.
    pub cost_s: f64,
    pub cost_r: f64,
}

/// The receiver side of a simulation run.
pub enum ReceiverRule<'a> {
    /// Communication: `u_k = G_k xhat_k`, state exogenous.
    Gains(&'a ReceiverGain),
    /// Control: the stacked equilibrium law over virtual-state posteriors.
    Control(&'a ControlTransform),
}

/// Point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// |mean - reference| in units of the standard error, with an absolute
    /// floor so exact-zero quantities do not divide rounding noise by a
    /// vanishing error bar.
    pub fn sigmas_from(&self, reference: f64) -> f64 {
        let diff = (self.mean - reference).abs();
        if diff <= 1e-12 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            diff / self.std_error
        }
    }
}

/// Aggregated Monte Carlo output.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub n_paths: usize,
    pub seed: u64,
    pub j_s: Estimate,
    pub j_r: Estimate,
    /// Empirical posterior second moments per stage.
    pub posterior_moments: Vec<DMatrix<f64>>,
    /// Entry-wise standard errors of the moments.
    pub posterior_moment_se: Vec<DMatrix<f64>>,
}

/// Runs `n_paths` seeded trajectories and aggregates costs and posterior
/// moments. Deterministic for a fixed `(seed, n_paths)` pair.
pub fn run(
    model: &ProcessModel,
    costs: &CostSpec,
    policy: &SignalingPolicy,
    rule: &ReceiverRule<'_>,
    n_paths: usize,
    seed: u64,
) -> Result<SimReport> {
    let n = model.horizon();
    let p = model.state_dim();
    let mut sum_s = 0.0;
    let mut sum_sq_s = 0.0;
    let mut sum_r = 0.0;
    let mut sum_sq_r = 0.0;
    let mut moment_sum = vec![DMatrix::<f64>::zeros(p, p); n];
    let mut moment_sq_sum = vec![DMatrix::<f64>::zeros(p, p); n];

    for_each_path(model, costs, policy, rule, n_paths, seed, |_, traj| {
        sum_s += traj.cost_s;
        sum_sq_s += traj.cost_s * traj.cost_s;
        sum_r += traj.cost_r;
        sum_sq_r += traj.cost_r * traj.cost_r;
        for k in 0..n {
            let outer = &traj.xhat[k] * traj.xhat[k].transpose();
            moment_sum[k] += &outer;
            moment_sq_sum[k] += outer.map(|v| v * v);
        }
    })?;

    let n_f = n_paths as f64;
    let estimate = |sum: f64, sum_sq: f64| -> Estimate {
        let mean = sum / n_f;
        let var = ((sum_sq - n_f * mean * mean) / (n_f - 1.0).max(1.0)).max(0.0);
        Estimate {
            mean,
            std_error: (var / n_f).sqrt(),
        }
    };
    let j_s = estimate(sum_s, sum_sq_s);
    let j_r = estimate(sum_r, sum_sq_r);

    let mut posterior_moments = Vec::with_capacity(n);
    let mut posterior_moment_se = Vec::with_capacity(n);
    for k in 0..n {
        let mean = &moment_sum[k] / n_f;
        let se = DMatrix::from_fn(p, p, |i, j| {
            let m = mean[(i, j)];
            let var = ((moment_sq_sum[k][(i, j)] - n_f * m * m) / (n_f - 1.0).max(1.0)).max(0.0);
            (var / n_f).sqrt()
        });
        posterior_moments.push(mean);
        posterior_moment_se.push(se);
    }

    Ok(SimReport {
        n_paths,
        seed,
        j_s,
        j_r,
        posterior_moments,
        posterior_moment_se,
    })
}

/// Samples trajectories one by one, invoking `visit(path_index, trajectory)`
/// in index order.
pub fn for_each_path<F>(
    model: &ProcessModel,
    costs: &CostSpec,
    policy: &SignalingPolicy,
    rule: &ReceiverRule<'_>,
    n_paths: usize,
    seed: u64,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Trajectory),
{
    let cov = covariance_schedule(model);
    let filter = Filter::new(model, &cov, &policy.weights)?;
    let init_sampler = GaussianSampler::new(model.sigma1())?;
    let noise_sampler = GaussianSampler::new(model.sigma_w())?;

    for path in 0..n_paths {
        let mut rng = trajectory_rng(seed, path as u64);
        let traj = sample_path(
            model,
            costs,
            policy,
            rule,
            &filter,
            &init_sampler,
            &noise_sampler,
            &mut rng,
        );
        visit(path, &traj);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample_path(
    model: &ProcessModel,
    costs: &CostSpec,
    policy: &SignalingPolicy,
    rule: &ReceiverRule<'_>,
    filter: &Filter,
    init_sampler: &GaussianSampler,
    noise_sampler: &GaussianSampler,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let n = model.horizon();
    let p = model.state_dim();
    let a = model.a();
    let b = model.b();

    let x1 = init_sampler.sample(rng);
    let mut x = Vec::with_capacity(n + 1);
    let mut x_o = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut xhat = Vec::with_capacity(n);
    let mut u: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut cost_s = 0.0;
    let mut cost_r = 0.0;

    x.push(x1.clone());
    x_o.push(x1);
    let mut xhat_prev = DVector::zeros(p);

    for k in 0..n {
        let y_k = policy.weights[k].transpose() * &x_o[k];
        let xhat_k = filter.step(k, &xhat_prev, &y_k);
        let u_k = match rule {
            ReceiverRule::Gains(g) => &g.gains[k] * &xhat_k,
            ReceiverRule::Control(t) => t.control_step(k + 1, &xhat_k, &u, model),
        };

        match costs {
            CostSpec::Communication(c) => {
                cost_s += (&c.q_s[k] * &x_o[k] + &c.r_s[k] * &u_k).norm_squared();
                cost_r += (&c.q_r[k] * &x_o[k] + &c.r_r[k] * &u_k).norm_squared();
            }
            CostSpec::Control(_) => {}
        }

        let w_k = noise_sampler.sample(rng);
        let x_next = a * &x[k] + b * &u_k + &w_k;
        if k + 1 < n {
            x_o.push(a * &x_o[k] + &w_k);
        }
        x.push(x_next);
        w.push(w_k);
        y.push(y_k);
        xhat.push(xhat_k.clone());
        u.push(u_k);
        xhat_prev = xhat_k;
    }

    if let CostSpec::Control(c) = costs {
        for k in 0..n {
            cost_s += (x[k + 1].transpose() * c.q_s[k + 1].as_matrix() * &x[k + 1])[(0, 0)]
                + (u[k].transpose() * c.r_s[k].as_matrix() * &u[k])[(0, 0)];
            cost_r += (x[k + 1].transpose() * c.q_r[k + 1].as_matrix() * &x[k + 1])[(0, 0)]
                + (u[k].transpose() * c.r_r[k].as_matrix() * &u[k])[(0, 0)];
        }
    }

    Trajectory {
        x,
        x_o,
        w,
        y,
        xhat,
        u,
        cost_s,
        cost_r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::trace_dot;
    use crate::model::CostSpec;
    use crate::policy::{
        analytic_costs_comm, receiver_gains_comm, PolicyMode, SignalingPolicy,
    };
    use crate::posterior::posterior_cov_schedule;
    use rand_chacha::ChaCha8Rng;

    fn comm_model(n: usize) -> ProcessModel {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0 / 3.0f64.sqrt(),
            1.0 / 2.0f64.sqrt(),
        ]));
        ProcessModel::new(
            a,
            DMatrix::zeros(2, 1),
            SymMatrix::from_diagonal(&[1.5, 2.0]),
            SymMatrix::identity(2),
            n,
        )
        .unwrap()
    }

    fn comm_costs(n: usize, model: &ProcessModel) -> CostSpec {
        let q_s = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let q_r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = DMatrix::from_row_slice(1, 1, &[-1.0]);
        CostSpec::communication(vec![q_s; n], vec![r.clone(); n], vec![q_r; n], vec![r; n], model)
            .unwrap()
    }

    #[test]
    fn sampler_covariance_statistics() {
        let zero = GaussianSampler::new(&SymMatrix::zeros(2)).unwrap();
        let mut rng = trajectory_rng(1, 0);
        assert!(zero.sample(&mut rng).norm() == 0.0);

        // Sample covariance of Scenario 1's prior within 3 standard errors.
        let cov = SymMatrix::from_diagonal(&[1.5, 2.0]);
        let sampler = GaussianSampler::new(&cov).unwrap();
        let n = 100_000usize;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sum_sq = DMatrix::<f64>::zeros(2, 2);
        for i in 0..n {
            let mut rng = trajectory_rng(7, i as u64);
            let v = sampler.sample(&mut rng);
            let outer = &v * v.transpose();
            sum += &outer;
            sum_sq += outer.map(|x| x * x);
        }
        let n_f = n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let mean = sum[(i, j)] / n_f;
                let var = (sum_sq[(i, j)] / n_f - mean * mean).max(0.0);
                let se = (var / n_f).sqrt();
                let target = cov[(i, j)];
                assert!(
                    (mean - target).abs() <= 3.0 * se + 1e-12,
                    "entry ({i},{j}): {mean} vs {target} (se {se:.2e})"
                );
            }
        }
    }

    #[test]
    fn fixed_seed_reports_are_identical() {
        let model = comm_model(4);
        let costs = comm_costs(4, &model);
        let policy = SignalingPolicy {
            weights: vec![DMatrix::identity(2, 2); 4],
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);
        let r1 = run(&model, &costs, &policy, &rule, 500, 42).unwrap();
        let r2 = run(&model, &costs, &policy, &rule, 500, 42).unwrap();
        assert_eq!(r1, r2);
        let r3 = run(&model, &costs, &policy, &rule, 500, 43).unwrap();
        assert!(r1.j_s.mean != r3.j_s.mean);
    }

    #[test]
    fn silent_policy_receiver_cost_is_state_only() {
        let model = comm_model(3);
        let costs = comm_costs(3, &model);
        let policy = SignalingPolicy {
            weights: vec![DMatrix::zeros(2, 2); 3],
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);
        let report = run(&model, &costs, &policy, &rule, 40_000, 9).unwrap();
        let cov = covariance_schedule(&model);
        let expected: f64 = (0..3)
            .map(|k| {
                let c = costs.as_communication().unwrap();
                let gram = SymMatrix::symmetrize(c.q_r[k].transpose() * &c.q_r[k]);
                trace_dot(&gram, cov.at(k))
            })
            .sum();
        assert!(
            report.j_r.sigmas_from(expected) <= 3.0,
            "J_R {} vs {expected} ({} sigma)",
            report.j_r.mean,
            report.j_r.sigmas_from(expected)
        );
    }

    #[test]
    fn empirical_posterior_moments_match_schedule() {
        let model = comm_model(4);
        let costs = comm_costs(4, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights: Vec<DMatrix<f64>> = (0..4)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let policy = SignalingPolicy {
            weights: weights.clone(),
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);
        let report = run(&model, &costs, &policy, &rule, 60_000, 11).unwrap();

        let cov = covariance_schedule(&model);
        let posts = posterior_cov_schedule(&model, &cov, &weights).unwrap();
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    let mean = report.posterior_moments[k][(i, j)];
                    let se = report.posterior_moment_se[k][(i, j)];
                    let target = posts.at(k)[(i, j)];
                    assert!(
                        (mean - target).abs() <= 3.0 * se + 1e-12,
                        "stage {k} entry ({i},{j}): {mean} vs {target}"
                    );
                }
            }
        }

        // Analytic costs sit inside the Monte Carlo bands too.
        let (j_s, j_r) =
            analytic_costs_comm(&model, &cov, costs.as_communication().unwrap(), &weights)
                .unwrap();
        assert!(report.j_s.sigmas_from(j_s) <= 3.0);
        assert!(report.j_r.sigmas_from(j_r) <= 3.0);
    }

    #[test]
    fn iterated_expectation_identity_empirically() {
        // E{xhat' D x} = E{xhat' D xhat} for an arbitrary fixed matrix D.
        let model = comm_model(3);
        let costs = comm_costs(3, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let weights: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let delta = DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let policy = SignalingPolicy {
            weights,
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);

        let n_paths = 60_000usize;
        let mut diff_sum = vec![0.0f64; 3];
        let mut diff_sq = vec![0.0f64; 3];
        for_each_path(&model, &costs, &policy, &rule, n_paths, 21, |_, traj| {
            for k in 0..3 {
                let with_state = (traj.xhat[k].transpose() * &delta * &traj.x_o[k])[(0, 0)];
                let with_post = (traj.xhat[k].transpose() * &delta * &traj.xhat[k])[(0, 0)];
                let d = with_state - with_post;
                diff_sum[k] += d;
                diff_sq[k] += d * d;
            }
        })
        .unwrap();
        let n_f = n_paths as f64;
        for k in 0..3 {
            let mean = diff_sum[k] / n_f;
            let var = ((diff_sq[k] - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
            let se = (var / n_f).sqrt();
            assert!(
                mean.abs() <= 3.0 * se + 1e-12,
                "stage {k}: difference {mean} exceeds 3 se ({se:.2e})"
            );
        }
    }

    #[test]
    fn whitened_messages_are_empirically_uncorrelated() {
        let model = comm_model(3);
        let costs = comm_costs(3, &model);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let weights: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let policy = SignalingPolicy {
            weights: weights.clone(),
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);
        let cov = covariance_schedule(&model);

        let n_paths = 100_000usize;
        // Cross moments between whitened stages (0,1), (0,2), (1,2).
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        let mut sums = vec![DMatrix::<f64>::zeros(2, 2); 3];
        let mut sq_sums = vec![DMatrix::<f64>::zeros(2, 2); 3];
        for_each_path(&model, &costs, &policy, &rule, n_paths, 77, |_, traj| {
            let tilde =
                crate::posterior::whiten_messages(&model, &cov, &weights, &traj.y).unwrap();
            for (idx, (i, j)) in pairs.iter().enumerate() {
                let outer = &tilde[*i] * tilde[*j].transpose();
                sums[idx] += &outer;
                sq_sums[idx] += outer.map(|v| v * v);
            }
        })
        .unwrap();
        let n_f = n_paths as f64;
        for idx in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    let mean = sums[idx][(i, j)] / n_f;
                    let var = (sq_sums[idx][(i, j)] / n_f - mean * mean).max(0.0);
                    let se = (var / n_f).sqrt();
                    assert!(
                        mean.abs() <= 3.0 * se + 1e-12,
                        "pair {idx} entry ({i},{j}): {mean} vs se {se:.2e}"
                    );
                }
            }
        }
    }

    #[test]
    fn dynamics_residual_is_exact() {
        let model = comm_model(3);
        let costs = comm_costs(3, &model);
        let policy = SignalingPolicy {
            weights: vec![DMatrix::identity(2, 2); 3],
            mode: PolicyMode::Communication,
        };
        let gains = receiver_gains_comm(costs.as_communication().unwrap()).unwrap();
        let rule = ReceiverRule::Gains(&gains);
        for_each_path(&model, &costs, &policy, &rule, 50, 5, |_, traj| {
            for k in 0..3 {
                // Identical expression order as the sampler, so the stored
                // noise reproduces the transition bit for bit.
                let recomputed =
                    model.a() * &traj.x[k] + model.b() * &traj.u[k] + &traj.w[k];
                assert_eq!(recomputed, traj.x[k + 1]);
            }
        })
        .unwrap();
    }
}
