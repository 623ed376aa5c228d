//! Bundled verification checks: oracle comparison, tightness, structural
//! invariants, cost identities, and Monte Carlo agreement for a scenario.
//!
//! Each check reports its measured residual so a failure is directly
//! actionable from the text output.

use crate::control::{solve_control_game, ControlEquilibrium};
use crate::error::Result;
use crate::matops::trace_dot;
use crate::model::{
    comm_objective_matrices, covariance_schedule, CostSpec, CovarianceSchedule, ProcessModel,
};
use crate::moments::{self, ReceiverLaw};
use crate::oracle;
use crate::policy::{solve_communication_game, CommEquilibrium};
use crate::posterior::posterior_cov_schedule;
use crate::randgen;
use crate::sdp::{feasibility_violation, solve_single_stage_closed_form, SolveOptions};
use crate::sim::{self, ReceiverRule};
use nalgebra::DMatrix;

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn measure(name: &'static str, value: f64, limit: f64) -> Self {
        Check {
            name,
            passed: value <= limit,
            detail: format!("measured {value:.3e}, limit {limit:.3e}"),
        }
    }
}

/// Full verification report for one scenario.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Either mode's solved pipeline, as needed by the checks.
pub enum Solved {
    Communication(CommEquilibrium),
    Control(ControlEquilibrium),
}

impl Solved {
    fn objective(&self) -> f64 {
        match self {
            Solved::Communication(e) => e.solution.objective,
            Solved::Control(e) => e.solution.objective,
        }
    }

    fn stage_matrices(&self) -> &[crate::matops::SymMatrix] {
        match self {
            Solved::Communication(e) => e.problem.objective_matrices(),
            Solved::Control(e) => e.problem.objective_matrices(),
        }
    }

    fn weights(&self) -> &[DMatrix<f64>] {
        match self {
            Solved::Communication(e) => &e.policy.weights,
            Solved::Control(e) => &e.policy.weights,
        }
    }
}

/// Solves the scenario and runs every applicable check. `paths`/`seed`
/// control the Monte Carlo comparison.
pub fn verify_scenario(
    model: &ProcessModel,
    costs: &CostSpec,
    opts: &SolveOptions,
    paths: usize,
    seed: u64,
) -> Result<VerifyReport> {
    let cov = covariance_schedule(model);
    let solved = match costs {
        CostSpec::Communication(c) => Solved::Communication(solve_communication_game(model, c, opts)?),
        CostSpec::Control(c) => Solved::Control(solve_control_game(model, c, opts)?),
    };

    let mut checks = Vec::new();
    checks.extend(oracle_check(model, &solved, opts)?);
    checks.push(closed_form_check(model, &solved, opts)?);
    checks.push(tightness_check(model, &cov, &solved)?);
    checks.push(purification_check(&solved));
    checks.push(rank_bound_check(&solved));
    checks.push(feasibility_check(&solved));
    checks.push(lower_bound_check(model, &cov, &solved, seed)?);
    match (&solved, costs) {
        (Solved::Communication(eq), CostSpec::Communication(c)) => {
            checks.push(mc_check_comm(model, c, eq, paths, seed)?);
        }
        (Solved::Control(eq), CostSpec::Control(c)) => {
            checks.push(triangularity_check(eq));
            checks.push(cost_identity_check(model, c, eq, seed)?);
            checks.push(receiver_optimality_check(model, c, eq, seed)?);
            checks.push(mc_check_control(model, c, eq, paths, seed)?);
        }
        _ => unreachable!("solved mode follows the cost mode"),
    }
    Ok(VerifyReport { checks })
}

fn oracle_check(
    model: &ProcessModel,
    solved: &Solved,
    opts: &SolveOptions,
) -> Result<Vec<Check>> {
    let (p, n) = (model.state_dim(), model.horizon());
    if p != 2 || n > 3 {
        return Ok(vec![]);
    }
    let problem = match solved {
        Solved::Communication(e) => &e.problem,
        Solved::Control(e) => &e.problem,
    };
    let _ = opts;
    let grid = oracle::grid_search(problem, 256, 3)?;
    let rel = (grid.objective - solved.objective()).abs() / (1.0 + solved.objective().abs());
    Ok(vec![Check::measure("sdp-oracle-agreement", rel, 1e-2)])
}

fn closed_form_check(
    model: &ProcessModel,
    solved: &Solved,
    opts: &SolveOptions,
) -> Result<Check> {
    // Single-stage subproblem over (Sigma_1, V_1), solved both ways.
    let sub_model = model.with_horizon(1)?;
    let cov = covariance_schedule(&sub_model);
    let v1 = solved.stage_matrices()[0].clone();
    let prob = crate::sdp::build_sdp(&cov, vec![v1.clone()], sub_model.a().clone())?;
    let sol = crate::sdp::solve(&prob, opts)?;
    let s_star = solve_single_stage_closed_form(cov.at(0), &v1)?;
    let expected = trace_dot(&v1, &s_star);
    Ok(Check::measure(
        "single-stage-closed-form",
        (sol.objective - expected).abs(),
        1e-5,
    ))
}

/// Worst relative gap between the posterior schedule induced by `weights`
/// and the chain `s`; public so negative controls can probe it directly.
pub fn tightness_gap(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    weights: &[DMatrix<f64>],
    s: &[crate::matops::SymMatrix],
) -> Result<f64> {
    let posts = posterior_cov_schedule(model, cov, weights)?;
    let mut worst = 0.0f64;
    for k in 0..s.len() {
        let err = (posts.at(k).as_matrix() - s[k].as_matrix()).norm() / (1.0 + s[k].norm());
        worst = worst.max(err);
    }
    Ok(worst)
}

fn tightness_check(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    solved: &Solved,
) -> Result<Check> {
    let s = match solved {
        Solved::Communication(e) => &e.solution.s,
        Solved::Control(e) => &e.solution.s,
    };
    let gap = tightness_gap(model, cov, solved.weights(), s)?;
    Ok(Check::measure("theorem2-tightness", gap, 1e-5))
}

fn purification_check(solved: &Solved) -> Check {
    let extreme = match solved {
        Solved::Communication(e) => &e.extreme,
        Solved::Control(e) => &e.extreme,
    };
    let worst = extreme
        .projectors
        .iter()
        .map(|p| (p.as_matrix() * p.as_matrix() - p.as_matrix()).norm())
        .fold(0.0f64, f64::max);
    let mut check = Check::measure("idempotent-purification", worst, 1e-10);
    if extreme.any_ambiguous() {
        check.detail.push_str(" (ambiguous rounding flagged)");
    }
    check
}

fn rank_bound_check(solved: &Solved) -> Check {
    let v = solved.stage_matrices();
    let weights = solved.weights();
    let mut violations = 0usize;
    for k in 0..weights.len() {
        let negatives = v[k].eigen().values.iter().filter(|&&l| l < 0.0).count();
        let rank = weights[k].rank(1e-9 * (1.0 + weights[k].norm()));
        if rank > negatives {
            violations += 1;
        }
    }
    Check {
        name: "sylvester-rank-bound",
        passed: violations == 0,
        detail: format!("{violations} stage(s) violate rank(L) <= #neg eig(V)"),
    }
}

fn feasibility_check(solved: &Solved) -> Check {
    let (problem, s) = match solved {
        Solved::Communication(e) => (&e.problem, &e.solution.s),
        Solved::Control(e) => (&e.problem, &e.solution.s),
    };
    Check::measure(
        "psd-chain-feasibility",
        feasibility_violation(problem, s),
        1e-6,
    )
}

fn lower_bound_check(
    model: &ProcessModel,
    cov: &CovarianceSchedule,
    solved: &Solved,
    seed: u64,
) -> Result<Check> {
    let v = solved.stage_matrices();
    let objective = solved.objective();
    let mut rng = randgen::rng(seed ^ 0x10ba1);
    let mut worst_gap = f64::INFINITY;
    for _ in 0..20 {
        let weights = randgen::weights(&mut rng, model.state_dim(), model.horizon());
        let posts = posterior_cov_schedule(model, cov, &weights)?;
        let value: f64 = (0..cov.len())
            .map(|k| trace_dot(&v[k], posts.at(k)))
            .sum();
        worst_gap = worst_gap.min(value - objective);
    }
    Ok(Check {
        name: "lemma1-lower-bound",
        passed: worst_gap >= -1e-6,
        detail: format!("smallest margin over SDP objective {worst_gap:.3e}"),
    })
}

fn triangularity_check(eq: &ControlEquilibrium) -> Check {
    Check::measure(
        "ts-block-triangularity",
        eq.transform.lower_triangular_defect(),
        1e-12,
    )
}

fn cost_identity_check(
    model: &ProcessModel,
    costs: &crate::model::ControlCosts,
    eq: &ControlEquilibrium,
    seed: u64,
) -> Result<Check> {
    let mut rng = randgen::rng(seed ^ 0xc057);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let weights = randgen::weights(&mut rng, model.state_dim(), model.horizon());
        let thetas: Vec<DMatrix<f64>> = (0..model.horizon())
            .map(|_| randgen::matrix(&mut rng, model.input_dim(), model.state_dim()))
            .collect();
        let flow = moments::flow(model, &weights, ReceiverLaw::PosteriorLinear(&thetas), None)?;
        let (lhs_s, lhs_r) = moments::control_costs(costs, &flow);
        let rhs_s =
            moments::completed_square_cost(&eq.transform.riccati, crate::control::Side::Sender, &flow);
        let rhs_r = moments::completed_square_cost(
            &eq.transform.riccati,
            crate::control::Side::Receiver,
            &flow,
        );
        worst = worst.max((lhs_s - rhs_s).abs() / (1.0 + lhs_s.abs()));
        worst = worst.max((lhs_r - rhs_r).abs() / (1.0 + lhs_r.abs()));
    }
    Ok(Check::measure("completion-of-squares-identity", worst, 1e-8))
}

fn receiver_optimality_check(
    model: &ProcessModel,
    costs: &crate::model::ControlCosts,
    eq: &ControlEquilibrium,
    seed: u64,
) -> Result<Check> {
    let base = moments::flow(
        model,
        &eq.policy.weights,
        ReceiverLaw::Stacked(&eq.transform),
        None,
    )?;
    let (_, j_r_star) = moments::control_costs(costs, &base);
    let mut rng = randgen::rng(seed ^ 0x0b7);
    let mut worst_drop = 0.0f64;
    for _ in 0..10 {
        let perturbation: Vec<Vec<DMatrix<f64>>> = (0..model.horizon())
            .map(|k| {
                (0..=k)
                    .map(|_| randgen::matrix(&mut rng, model.input_dim(), model.state_dim()) * 0.2)
                    .collect()
            })
            .collect();
        let flow = moments::flow(
            model,
            &eq.policy.weights,
            ReceiverLaw::Stacked(&eq.transform),
            Some(&perturbation),
        )?;
        let (_, j_r) = moments::control_costs(costs, &flow);
        worst_drop = worst_drop.max(j_r_star - j_r);
    }
    Ok(Check::measure("receiver-optimality", worst_drop, 1e-6))
}

fn mc_check_comm(
    model: &ProcessModel,
    costs: &crate::model::CommCosts,
    eq: &CommEquilibrium,
    paths: usize,
    seed: u64,
) -> Result<Check> {
    let spec = CostSpec::Communication(costs.clone());
    let rule = ReceiverRule::Gains(&eq.receiver);
    let report = sim::run(model, &spec, &eq.policy, &rule, paths, seed)?;
    let sig = report
        .j_s
        .sigmas_from(eq.sender_cost)
        .max(report.j_r.sigmas_from(eq.receiver_cost));
    Ok(Check::measure("monte-carlo-agreement", sig, 3.0))
}

fn mc_check_control(
    model: &ProcessModel,
    costs: &crate::model::ControlCosts,
    eq: &ControlEquilibrium,
    paths: usize,
    seed: u64,
) -> Result<Check> {
    let spec = CostSpec::Control(costs.clone());
    let rule = ReceiverRule::Control(&eq.transform);
    let report = sim::run(model, &spec, &eq.policy, &rule, paths, seed)?;
    let sig = report
        .j_s
        .sigmas_from(eq.sender_cost)
        .max(report.j_r.sigmas_from(eq.receiver_cost));
    Ok(Check::measure("monte-carlo-agreement", sig, 3.0))
}

/// Residual of the innovation-signaling reduction: whether the whitened
/// equilibrium increment at the third stage is itself a projector. A large
/// residual witnesses that per-stage innovation rules cannot reach the
/// multi-stage equilibrium posteriors.
pub fn innovation_counterexample_residual(
    model: &ProcessModel,
    costs: &crate::model::CommCosts,
    opts: &SolveOptions,
) -> Result<f64> {
    let eq = solve_communication_game(model, costs, opts)?;
    let cov = covariance_schedule(model);
    let s = &eq.solution.s;
    let n = s.len();
    assert!(n >= 3, "counterexample needs at least three stages");
    // M = SigmaW^{-1/2} (Sigma_3 - A S_2 A')^{1/2} P_3 (...)^{1/2} SigmaW^{-1/2}
    let gap = crate::matops::SymMatrix::symmetrize(
        cov.at(2).as_matrix() - s[1].congruence(model.a()).as_matrix(),
    );
    let root = crate::matops::psd_sqrt(&gap)?;
    let w_inv_root = crate::matops::psd_inv_sqrt(model.sigma_w())?;
    let inner = eq.extreme.projectors[2].congruence(root.as_matrix());
    let m = inner.congruence(w_inv_root.as_matrix());
    let mm = m.as_matrix();
    Ok((mm * mm - mm).norm())
}

/// Best innovation-signaling cost on the same instance, for the cost-gap
/// side of the counterexample. Requires `p = 2`, `n <= 3`.
pub fn best_innovation_objective(
    model: &ProcessModel,
    costs: &crate::model::CommCosts,
) -> Result<f64> {
    let cov = covariance_schedule(model);
    let v = comm_objective_matrices(costs)?;
    let problem = crate::sdp::build_sdp(&cov, v, model.a().clone())?;
    let res = oracle::innovation_grid_search(&problem, model.sigma_w().as_matrix(), 256, 3)?;
    Ok(res.objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::SymMatrix;
    use nalgebra::DVector;

    fn scenario1(n: usize) -> (ProcessModel, CostSpec) {
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
        let q_s = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let q_r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let costs = CostSpec::communication(
            vec![q_s; n],
            vec![r.clone(); n],
            vec![q_r; n],
            vec![r; n],
            &model,
        )
        .unwrap();
        (model, costs)
    }

    #[test]
    fn scenario1_verification_passes() {
        let (model, costs) = scenario1(2);
        let report =
            verify_scenario(&model, &costs, &SolveOptions::default(), 20_000, 99).unwrap();
        for check in &report.checks {
            assert!(check.passed, "{}: {}", check.name, check.detail);
        }
        assert!(report.all_passed());
    }

    #[test]
    fn perturbed_policy_fails_tightness() {
        // Negative control: corrupting the synthesized weights must trip
        // the tightness check.
        let (model, costs) = scenario1(3);
        let eq = solve_communication_game(
            &model,
            costs.as_communication().unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let cov = covariance_schedule(&model);
        let mut weights = eq.policy.weights.clone();
        weights[1] = &weights[1] + DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.3]);
        let gap = tightness_gap(&model, &cov, &weights, &eq.solution.s).unwrap();
        assert!(gap > 1e-5, "perturbation went undetected (gap {gap:.3e})");
    }

    #[test]
    fn innovation_counterexample_on_derived_instance() {
        // Sigma_1 ~ 0 with Scenario 1 dynamics and costs: per-stage
        // innovation disclosure cannot reproduce the equilibrium.
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[
            1.0 / 3.0f64.sqrt(),
            1.0 / 2.0f64.sqrt(),
        ]));
        let model = ProcessModel::new(
            a,
            DMatrix::zeros(2, 1),
            SymMatrix::from_diagonal(&[1e-6, 1e-6]),
            SymMatrix::identity(2),
            3,
        )
        .unwrap();
        let q_s = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let q_r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let r = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let costs = CostSpec::communication(
            vec![q_s; 3],
            vec![r.clone(); 3],
            vec![q_r; 3],
            vec![r; 3],
            &model,
        )
        .unwrap();
        let comm = costs.as_communication().unwrap();

        // Measures ~4.5e-3 on this instance: decisively nonzero.
        let residual =
            innovation_counterexample_residual(&model, comm, &SolveOptions::default()).unwrap();
        assert!(residual > 1e-3, "idempotency residual {residual:.3e}");

        let eq = solve_communication_game(&model, comm, &SolveOptions::default()).unwrap();
        let innovation = best_innovation_objective(&model, comm).unwrap();
        assert!(
            innovation > eq.solution.objective + 1e-6,
            "innovation rules should cost strictly more: {innovation} vs {}",
            eq.solution.objective
        );
    }
}
