//! Seeded random instances, costs, and policies for verification runs.
//!
//! Everything is driven by an explicit ChaCha stream so a reported failure
//! reproduces from its seed alone.

use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::matops::SymMatrix;
use crate::model::{CommCosts, ControlCosts, ProcessModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Symmetric positive definite with smallest eigenvalue at least `floor`.
pub fn spd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> SymMatrix {
    let g = matrix(rng, dim, dim);
    SymMatrix::symmetrize(&g * g.transpose() + DMatrix::identity(dim, dim) * floor)
}

/// Symmetric with eigenvalues of both signs (generically).
pub fn symmetric(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
    SymMatrix::symmetrize(matrix(rng, dim, dim))
}

/// Random stable-ish dynamics: spectral radius drawn from
/// `[0.4, 0.95]`, resampled until comfortably non-singular.
pub fn dynamics(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    loop {
        let g = matrix(rng, p, p);
        let radius = g
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0f64, f64::max);
        if radius < 1e-3 {
            continue;
        }
        let target = 0.4 + 0.55 * rng.random::<f64>();
        let a = g * (target / radius);
        if a.clone().determinant().abs() > 1e-6 {
            return a;
        }
    }
}

/// Random process model with PD covariances.
pub fn model(rng: &mut ChaCha8Rng, p: usize, t: usize, horizon: usize) -> ProcessModel {
    let a = dynamics(rng, p);
    let b = matrix(rng, p, t);
    let sigma1 = spd(rng, p, 0.3);
    let sigma_w = spd(rng, p, 0.3);
    ProcessModel::new(a, b, sigma1, sigma_w, horizon).expect("generated model is valid")
}

/// Same dynamics with the input channel removed (communication setting).
pub fn exogenous_model(rng: &mut ChaCha8Rng, p: usize, horizon: usize) -> ProcessModel {
    let a = dynamics(rng, p);
    let sigma1 = spd(rng, p, 0.3);
    let sigma_w = spd(rng, p, 0.3);
    ProcessModel::new(a, DMatrix::zeros(p, 1), sigma1, sigma_w, horizon)
        .expect("generated model is valid")
}

/// Random communication costs with `R_R'R_R` kept well conditioned.
pub fn comm_costs(rng: &mut ChaCha8Rng, model: &ProcessModel, r_dim: usize) -> CommCosts {
    let n = model.horizon();
    let p = model.state_dim();
    let t = model.input_dim();
    let mut r_r = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let cand = matrix(rng, r_dim, t);
            let gram = SymMatrix::symmetrize(cand.transpose() * &cand);
            if gram.min_eigenvalue() > 0.05 {
                r_r.push(cand);
                break;
            }
        }
    }
    CommCosts {
        q_s: (0..n).map(|_| matrix(rng, r_dim, p)).collect(),
        r_s: (0..n).map(|_| matrix(rng, r_dim, t)).collect(),
        q_r: (0..n).map(|_| matrix(rng, r_dim, p)).collect(),
        r_r,
    }
}

/// Random control costs: PSD state weights (possibly rank deficient), PD
/// input weights, including the terminal stage.
pub fn control_costs(rng: &mut ChaCha8Rng, model: &ProcessModel) -> ControlCosts {
    let n = model.horizon();
    let p = model.state_dim();
    let t = model.input_dim();
    let psd = |rng: &mut ChaCha8Rng| {
        let rank = 1 + rng.random_range(0..p);
        let g = matrix(rng, p, rank);
        SymMatrix::symmetrize(&g * g.transpose())
    };
    let mut q_s: Vec<SymMatrix> = vec![SymMatrix::zeros(p)];
    let mut q_r: Vec<SymMatrix> = vec![SymMatrix::zeros(p)];
    for _ in 1..=n {
        q_s.push(psd(rng));
        q_r.push(psd(rng));
    }
    ControlCosts {
        q_s,
        r_s: (0..n).map(|_| spd(rng, t, 0.2)).collect(),
        q_r,
        r_r: (0..n).map(|_| spd(rng, t, 0.2)).collect(),
    }
}

/// Random sender weights mixing zero, rank-1, and full-rank stages.
pub fn weights(rng: &mut ChaCha8Rng, p: usize, horizon: usize) -> Vec<DMatrix<f64>> {
    (0..horizon)
        .map(|_| match rng.random_range(0..4) {
            0 => DMatrix::zeros(p, p),
            1 => {
                let u = matrix(rng, p, 1);
                let v = matrix(rng, p, 1);
                u * v.transpose()
            }
            _ => matrix(rng, p, p),
        })
        .collect()
}
