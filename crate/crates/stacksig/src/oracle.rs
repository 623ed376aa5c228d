//! Independent brute-force optimizer for desk-scale instances (`p = 2`,
//! `n <= 3`), used to certify the SDP solver.
//!
//! The optimum of the chained SDP is attained on extreme points, which at
//! every stage are parameterized by a symmetric idempotent: rank 0 (`O`),
//! rank 2 (`I`), or rank 1 (`u u'` with `u = (cos t, sin t)`, `t` in
//! `[0, pi)` since `u u'` is even in `u`). The oracle enumerates that
//! parameterization on an angle grid, rebuilds each chain through the
//! extreme-point recursion, and refines the grid around the best cell with
//! the step halved each round.

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::sdp::SdpProblem;

/// Evaluation budget: an enumeration larger than this errors out instead of
/// running for hours.
pub const EVAL_BUDGET: f64 = 1e8;

/// Per-stage idempotent choice of the best chain found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdempotentChoice {
    Zero,
    Full,
    Angle(f64),
}

impl IdempotentChoice {
    pub fn rank(&self) -> usize {
        match self {
            IdempotentChoice::Zero => 0,
            IdempotentChoice::Full => 2,
            IdempotentChoice::Angle(_) => 1,
        }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        match self {
            IdempotentChoice::Zero => Matrix2::zeros(),
            IdempotentChoice::Full => Matrix2::identity(),
            IdempotentChoice::Angle(t) => {
                let u = Vector2::new(t.cos(), t.sin());
                u * u.transpose()
            }
        }
    }
}

/// Best chain found by enumeration.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub objective: f64,
    pub choices: Vec<IdempotentChoice>,
    /// Objective after each refinement round, coarse pass first.
    pub refinement_trace: Vec<f64>,
}

/// How the stage increment is whitened along the chain.
enum ChainKind {
    /// Extreme points of the full constraint set: the increment base is
    /// `Sigma_k - A S_{k-1} A'`, recomputed along each prefix.
    Equilibrium,
    /// Innovation signaling `y_k = K_k' w_{k-1}`: the base is the fixed
    /// innovation covariance (`Sigma_1` at the first stage, `SigmaW` after).
    Innovation { roots: Vec<Matrix2<f64>> },
}

/// Brute-force minimum of the chained SDP over extreme-point chains.
pub fn grid_search(prob: &SdpProblem, coarse: usize, refine_iters: usize) -> Result<GridSearchResult> {
    search_impl(prob, coarse, refine_iters, ChainKind::Equilibrium)
}

/// Brute-force minimum over innovation-signaling rules, whose posterior
/// chains whiten against the noise covariance instead of the chain residual.
/// Used by the multi-stage counterexample.
pub fn innovation_grid_search(
    prob: &SdpProblem,
    sigma_w: &DMatrix<f64>,
    coarse: usize,
    refine_iters: usize,
) -> Result<GridSearchResult> {
    let n = prob.horizon();
    let mut roots = Vec::with_capacity(n);
    roots.push(sqrt_spd2(&to2(prob.sigma(0).as_matrix())));
    let w2 = to2(sigma_w);
    for _ in 1..n {
        roots.push(sqrt_spd2(&w2));
    }
    search_impl(prob, coarse, refine_iters, ChainKind::Innovation { roots })
}

fn search_impl(
    prob: &SdpProblem,
    coarse: usize,
    refine_iters: usize,
    kind: ChainKind,
) -> Result<GridSearchResult> {
    let n = prob.horizon();
    let p = prob.dim();
    if p != 2 || n > 3 {
        return Err(Error::UnsupportedDimension { p, n });
    }
    let evals: f64 = (1..=n)
        .map(|k| ((coarse + 2) as f64).powi(k as i32))
        .sum();
    if evals > EVAL_BUDGET {
        return Err(Error::BudgetExceeded {
            evals,
            cap: EVAL_BUDGET,
        });
    }

    let a = to2(prob.dynamics());
    let sigma: Vec<Matrix2<f64>> = (0..n).map(|k| to2(prob.sigma(k).as_matrix())).collect();
    let v: Vec<Matrix2<f64>> = prob
        .objective_matrices()
        .iter()
        .map(|m| to2(m.as_matrix()))
        .collect();

    // Coarse pass: every stage scans the full candidate set.
    let step = std::f64::consts::PI / coarse as f64;
    let coarse_set: Vec<IdempotentChoice> = [IdempotentChoice::Zero, IdempotentChoice::Full]
        .into_iter()
        .chain((0..coarse).map(|i| IdempotentChoice::Angle(i as f64 * step)))
        .collect();
    let sets: Vec<&[IdempotentChoice]> = vec![&coarse_set; n];
    let (mut best_obj, mut best) = enumerate(&a, &sigma, &v, &kind, &sets);
    let mut trace = vec![best_obj];

    // Refinement: shrink an angle window around the incumbent, halving the
    // step each round. Rank-0/2 stages are already exact and stay pinned.
    let mut window = step;
    for _ in 0..refine_iters {
        let refined: Vec<Vec<IdempotentChoice>> = best
            .iter()
            .map(|choice| match choice {
                IdempotentChoice::Angle(t) => (-4i32..=4)
                    .map(|j| IdempotentChoice::Angle(t + j as f64 * window / 4.0))
                    .collect(),
                other => vec![*other],
            })
            .collect();
        let sets: Vec<&[IdempotentChoice]> = refined.iter().map(|v| v.as_slice()).collect();
        let (obj, choices) = enumerate(&a, &sigma, &v, &kind, &sets);
        if obj <= best_obj {
            best_obj = obj;
            best = choices;
        }
        trace.push(best_obj);
        window /= 2.0;
    }

    Ok(GridSearchResult {
        objective: best_obj,
        choices: best,
        refinement_trace: trace,
    })
}

/// Joint enumeration over per-stage candidate sets, depth first so each
/// prefix chain is computed once.
fn enumerate(
    a: &Matrix2<f64>,
    sigma: &[Matrix2<f64>],
    v: &[Matrix2<f64>],
    kind: &ChainKind,
    sets: &[&[IdempotentChoice]],
) -> (f64, Vec<IdempotentChoice>) {
    let n = sigma.len();
    let mut best_obj = f64::INFINITY;
    let mut best = vec![IdempotentChoice::Zero; n];
    let mut current = vec![IdempotentChoice::Zero; n];
    recurse(
        0,
        &Matrix2::zeros(),
        0.0,
        a,
        sigma,
        v,
        kind,
        sets,
        &mut current,
        &mut best_obj,
        &mut best,
    );
    (best_obj, best)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    k: usize,
    s_prev: &Matrix2<f64>,
    obj_prefix: f64,
    a: &Matrix2<f64>,
    sigma: &[Matrix2<f64>],
    v: &[Matrix2<f64>],
    kind: &ChainKind,
    sets: &[&[IdempotentChoice]],
    current: &mut Vec<IdempotentChoice>,
    best_obj: &mut f64,
    best: &mut Vec<IdempotentChoice>,
) {
    let n = sigma.len();
    let floor = if k == 0 {
        Matrix2::zeros()
    } else {
        a * s_prev * a.transpose()
    };
    let root = match kind {
        ChainKind::Equilibrium => sqrt_spd2(&(sigma[k] - floor)),
        ChainKind::Innovation { roots } => roots[k],
    };
    for &choice in sets[k] {
        let s_k = match choice {
            IdempotentChoice::Zero => floor,
            IdempotentChoice::Full => floor + root * root,
            IdempotentChoice::Angle(t) => {
                let ru = root * Vector2::new(t.cos(), t.sin());
                floor + ru * ru.transpose()
            }
        };
        let obj = obj_prefix + (v[k] * s_k).trace();
        current[k] = choice;
        if k + 1 == n {
            if obj < *best_obj {
                *best_obj = obj;
                best.copy_from_slice(current);
            }
        } else {
            recurse(
                k + 1, &s_k, obj, a, sigma, v, kind, sets, current, best_obj, best,
            );
        }
    }
}

fn to2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

/// Closed-form principal square root of a symmetric PSD 2x2 matrix.
fn sqrt_spd2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let det = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).max(0.0);
    let s = det.sqrt();
    let t_sq = m.trace() + 2.0 * s;
    if t_sq <= 0.0 {
        return Matrix2::zeros();
    }
    (m + Matrix2::identity() * s) / t_sq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::SymMatrix;
    use crate::model::{covariance_schedule, ProcessModel};
    use crate::sdp::{build_sdp, feasibility_violation, solve_single_stage_closed_form, SolveOptions};
    use nalgebra::DVector;

    fn scenario1_prob(n: usize) -> SdpProblem {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0 / 3.0f64.sqrt(),
            1.0 / 2.0f64.sqrt(),
        ]));
        let model = ProcessModel::new(
            a,
            DMatrix::zeros(2, 1),
            SymMatrix::from_diagonal(&[1.5, 2.0]),
            SymMatrix::identity(2),
            n,
        )
        .unwrap();
        let cov = covariance_schedule(&model);
        let v = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, 0.0])).unwrap();
        build_sdp(&cov, vec![v; n], model.a().clone()).unwrap()
    }

    #[test]
    fn sqrt_spd2_squares_back() {
        let m = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let r = sqrt_spd2(&m);
        assert!((r * r - m).norm() <= 1e-12);
        assert!(sqrt_spd2(&Matrix2::zeros()).norm() == 0.0);
    }

    #[test]
    fn rejects_unsupported_sizes() {
        let model = ProcessModel::new(
            DMatrix::identity(3, 3),
            DMatrix::zeros(3, 1),
            SymMatrix::identity(3),
            SymMatrix::identity(3),
            2,
        )
        .unwrap();
        let cov = covariance_schedule(&model);
        let prob = build_sdp(&cov, vec![SymMatrix::zeros(3); 2], model.a().clone()).unwrap();
        assert!(matches!(
            grid_search(&prob, 16, 1),
            Err(Error::UnsupportedDimension { p: 3, n: 2 })
        ));

        let big = scenario1_prob(3);
        assert!(matches!(
            grid_search(&big, 10_000, 1),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn zero_objective_is_zero() {
        let a = DMatrix::identity(2, 2);
        let model = ProcessModel::new(
            a,
            DMatrix::zeros(2, 1),
            SymMatrix::identity(2),
            SymMatrix::identity(2),
            2,
        )
        .unwrap();
        let cov = covariance_schedule(&model);
        let prob = build_sdp(&cov, vec![SymMatrix::zeros(2); 2], model.a().clone()).unwrap();
        let res = grid_search(&prob, 32, 1).unwrap();
        assert!(res.objective.abs() <= 1e-12);
    }

    #[test]
    fn single_stage_matches_closed_form() {
        let prob = scenario1_prob(1);
        let res = grid_search(&prob, 256, 3).unwrap();
        let s = solve_single_stage_closed_form(prob.sigma(0), &prob.objective_matrices()[0]).unwrap();
        let expected = crate::matops::trace_dot(&prob.objective_matrices()[0], &s);
        assert!(
            (res.objective - expected).abs() <= 1e-4,
            "grid {} vs closed {expected}",
            res.objective
        );
        assert_eq!(res.choices[0].rank(), 1);
    }

    #[test]
    fn matches_sdp_solver_on_scenario1() {
        for n in [2usize, 3] {
            let prob = scenario1_prob(n);
            let grid = grid_search(&prob, 128, 3).unwrap();
            let sdp = crate::sdp::solve(&prob, &SolveOptions::default()).unwrap();
            let rel = (grid.objective - sdp.objective).abs() / (1.0 + sdp.objective.abs());
            assert!(
                rel <= 1e-2,
                "n={n}: grid {} vs sdp {}",
                grid.objective,
                sdp.objective
            );
            for c in &grid.choices {
                assert_eq!(c.rank(), 1, "scenario 1 optimum is rank 1 per stage");
            }
        }
    }

    #[test]
    fn refinement_monotone_and_chains_feasible() {
        let prob = scenario1_prob(3);
        let res = grid_search(&prob, 64, 4).unwrap();
        for pair in res.refinement_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-15);
        }

        // Rebuild the winning chain and check feasibility residuals.
        let a = prob.dynamics().clone();
        let mut s_prev = SymMatrix::zeros(2);
        let mut chain = Vec::new();
        for (k, choice) in res.choices.iter().enumerate() {
            let floor = s_prev.congruence(&a);
            let gap = SymMatrix::symmetrize(prob.sigma(k).as_matrix() - floor.as_matrix());
            let root = crate::matops::psd_sqrt(&gap).unwrap();
            let pm = choice.matrix();
            let p_dyn = DMatrix::from_row_slice(2, 2, &[pm[(0, 0)], pm[(0, 1)], pm[(1, 0)], pm[(1, 1)]]);
            let p_sym = SymMatrix::new(p_dyn).unwrap();
            let s_k = SymMatrix::symmetrize(
                floor.as_matrix() + p_sym.congruence(root.as_matrix()).as_matrix(),
            );
            chain.push(s_k.clone());
            s_prev = s_k;
        }
        assert!(feasibility_violation(&prob, &chain) <= 1e-10);
    }
}
