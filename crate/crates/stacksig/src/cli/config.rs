//! Scenario configuration: JSON schema, shorthand expansion, validation.
//!
//! Matrices are row-major nested arrays. Cost fields accept either a single
//! matrix (broadcast across stages) or a per-stage list. The `tracking`
//! block is the two-process shorthand: a tracked process `z` and a bias
//! process `theta` with block-diagonal dynamics, expanded on load into full
//! cost matrices so the emitted bundle shows exactly what was solved.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::SymMatrix;
use crate::model::{CostSpec, ProcessModel};
use crate::sdp::SolveOptions;

/// Game mode selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Communication,
    Control,
}

/// Row-major matrix literal.
pub type Rows = Vec<Vec<f64>>;

/// A matrix field that broadcasts: one matrix for every stage, or an
/// explicit per-stage list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerStage {
    Single(Rows),
    List(Vec<Rows>),
}

impl PerStage {
    fn expand(&self, stages: usize, field: &str) -> Result<Vec<Rows>> {
        match self {
            PerStage::Single(m) => Ok(vec![m.clone(); stages]),
            PerStage::List(list) => {
                if list.len() == stages {
                    Ok(list.clone())
                } else {
                    Err(Error::Config(format!(
                        "{field}: expected {stages} per-stage matrices, got {}",
                        list.len()
                    )))
                }
            }
        }
    }
}

/// Explicit cost matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostsConfig {
    pub q_s: PerStage,
    pub r_s: PerStage,
    pub q_r: PerStage,
    pub r_r: PerStage,
}

/// Two-process (tracked `z` plus bias `theta`) shorthand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingConfig {
    pub a_z: Rows,
    pub a_theta: Rows,
    /// Bias weight `D_k`; broadcast or per stage.
    pub d: PerStage,
    /// Control mode only: input blocks of the two processes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_z: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_theta: Option<Rows>,
    /// Control mode only: tracking weights and input penalties.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_z: Option<PerStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_theta: Option<PerStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_s: Option<PerStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_r: Option<PerStage>,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    50_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

fn default_paths() -> usize {
    100_000
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            paths: default_paths(),
            seed: default_seed(),
        }
    }
}

/// Top-level scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    pub sigma1: Rows,
    pub sigma_w: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sim: SimConfig,
}

/// A loaded scenario: validated model, expanded costs, settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mode: Mode,
    pub model: ProcessModel,
    pub costs: CostSpec,
    pub solver: SolveOptions,
    pub sim: SimConfig,
}

pub const PRESETS: [(&str, &str); 4] = [
    ("scenario1", include_str!("../../presets/scenario1.json")),
    ("scenario2", include_str!("../../presets/scenario2.json")),
    ("scenario3", include_str!("../../presets/scenario3.json")),
    ("scenario4", include_str!("../../presets/scenario4.json")),
];

/// Loads a scenario from a file path, or from the shipped presets when the
/// argument names one (`scenario1` .. `scenario4`).
pub fn load_scenario(arg: &str) -> Result<ScenarioConfig> {
    let text = if std::path::Path::new(arg).exists() {
        std::fs::read_to_string(arg)?
    } else {
        let key = arg.strip_suffix(".json").unwrap_or(arg);
        match PRESETS.iter().find(|(name, _)| *name == key) {
            Some((_, body)) => body.to_string(),
            None => {
                return Err(Error::Config(format!(
                    "scenario '{arg}' is neither a file nor a preset (presets: scenario1..scenario4)"
                )))
            }
        }
    };
    let config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{arg}: {e}")))?;
    Ok(config)
}

pub fn to_matrix(rows: &Rows, field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{field}: empty matrix")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{field}: ragged or empty rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{field}: non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn to_sym(rows: &Rows, field: &str) -> Result<SymMatrix> {
    let m = to_matrix(rows, field)?;
    if m.nrows() != m.ncols() {
        return Err(Error::Config(format!("{field}: must be square")));
    }
    SymMatrix::new(m).map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

impl ScenarioConfig {
    /// Validates and expands into a runnable scenario. `horizon_override`
    /// and `tol_override` come from the command line.
    pub fn build(
        &self,
        horizon_override: Option<usize>,
        tol_override: Option<f64>,
    ) -> Result<Scenario> {
        let n = horizon_override.unwrap_or(self.horizon);
        if n == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let sigma1 = to_sym(&self.sigma1, "sigma1")?;
        let sigma_w = to_sym(&self.sigma_w, "sigma_w")?;

        let (a, b, costs) = match (&self.tracking, &self.costs) {
            (Some(t), None) => self.expand_tracking(t, n, sigma1.dim())?,
            (None, Some(c)) => {
                let a = to_matrix(
                    self.a.as_ref().ok_or(Error::Config(
                        "field 'a' is required without the tracking shorthand".into(),
                    ))?,
                    "a",
                )?;
                let b = match &self.b {
                    Some(rows) => to_matrix(rows, "b")?,
                    None => DMatrix::zeros(a.nrows(), 1),
                };
                (a, b, self.expand_costs(c, n)?)
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either 'costs' or the 'tracking' shorthand, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of 'costs' or 'tracking' is required".into(),
                ))
            }
        };

        if self.mode == Mode::Communication && b.iter().any(|&x| x != 0.0) {
            return Err(Error::Config(
                "communication mode requires an all-zero input matrix 'b'".into(),
            ));
        }

        let model = ProcessModel::new(a, b, sigma1, sigma_w, n)
            .map_err(|e| Error::Config(e.to_string()))?;
        let costs = self.validate_costs(costs, &model)?;

        if self.solver.tol <= 0.0 || !self.solver.tol.is_finite() {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        Ok(Scenario {
            mode: self.mode,
            model,
            costs,
            solver: SolveOptions {
                tol: tol_override.unwrap_or(self.solver.tol),
                max_iter: self.solver.max_iter,
            },
            sim: self.sim.clone(),
        })
    }

    /// Raw per-stage cost matrices before mode validation.
    #[allow(clippy::type_complexity)]
    fn expand_costs(
        &self,
        c: &CostsConfig,
        n: usize,
    ) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let stages = match self.mode {
            Mode::Communication => n,
            // Control-mode Q lists carry the terminal stage; R lists do not.
            Mode::Control => n,
        };
        let mats = |ps: &PerStage, field: &str, count: usize| -> Result<Vec<DMatrix<f64>>> {
            ps.expand(count, field)?
                .iter()
                .map(|rows| to_matrix(rows, field))
                .collect()
        };
        Ok((
            mats(&c.q_s, "costs.q_s", stages)?,
            mats(&c.r_s, "costs.r_s", n)?,
            mats(&c.q_r, "costs.q_r", stages)?,
            mats(&c.r_r, "costs.r_r", n)?,
        ))
    }

    /// Expands the two-process shorthand into dynamics and cost matrices.
    #[allow(clippy::type_complexity)]
    fn expand_tracking(
        &self,
        t: &TrackingConfig,
        n: usize,
        p_expected: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>))> {
        if self.a.is_some() || self.b.is_some() {
            return Err(Error::Config(
                "'a'/'b' may not be combined with the tracking shorthand".into(),
            ));
        }
        let a_z = to_matrix(&t.a_z, "tracking.a_z")?;
        let a_theta = to_matrix(&t.a_theta, "tracking.a_theta")?;
        let dz = a_z.nrows();
        let dt = a_theta.nrows();
        if a_z.ncols() != dz || a_theta.ncols() != dt {
            return Err(Error::Config("tracking blocks must be square".into()));
        }
        let p = dz + dt;
        if p != p_expected {
            return Err(Error::Config(format!(
                "tracking blocks give state dimension {p}, but sigma1 is {p_expected}x{p_expected}"
            )));
        }
        let a = block_diag(&a_z, &a_theta);
        let d_list = t.d.expand(n, "tracking.d")?;
        let d_mats: Vec<DMatrix<f64>> = d_list
            .iter()
            .map(|rows| to_matrix(rows, "tracking.d"))
            .collect::<Result<_>>()?;
        for d in &d_mats {
            if d.nrows() != dz || d.ncols() != dt {
                return Err(Error::Config(format!(
                    "tracking.d must be {dz}x{dt} (z rows, theta columns)"
                )));
            }
        }

        match self.mode {
            Mode::Communication => {
                for field in [&t.b_z, &t.b_theta] {
                    if field.is_some() {
                        return Err(Error::Config(
                            "tracking.b_z/b_theta only apply in control mode".into(),
                        ));
                    }
                }
                // Sender tracks z + D theta, receiver tracks z, both through
                // the action u: Q_S = [I D], Q_R = [I O], R_S = R_R = -I.
                let eye = DMatrix::<f64>::identity(dz, dz);
                let q_r = {
                    let mut m = DMatrix::zeros(dz, p);
                    m.view_mut((0, 0), (dz, dz)).copy_from(&eye);
                    m
                };
                let q_s: Vec<DMatrix<f64>> = d_mats
                    .iter()
                    .map(|d| {
                        let mut m = q_r.clone();
                        m.view_mut((0, dz), (dz, dt)).copy_from(d);
                        m
                    })
                    .collect();
                let neg_eye = -eye;
                let b = DMatrix::zeros(p, dz);
                Ok((
                    a,
                    b,
                    (
                        q_s,
                        vec![neg_eye.clone(); n],
                        vec![q_r; n],
                        vec![neg_eye; n],
                    ),
                ))
            }
            Mode::Control => {
                let b_z = to_matrix(
                    t.b_z
                        .as_ref()
                        .ok_or(Error::Config("tracking.b_z is required in control mode".into()))?,
                    "tracking.b_z",
                )?;
                let t_dim = b_z.ncols();
                let b_theta = match &t.b_theta {
                    Some(rows) => to_matrix(rows, "tracking.b_theta")?,
                    None => DMatrix::zeros(dt, t_dim),
                };
                if b_z.nrows() != dz || b_theta.nrows() != dt || b_theta.ncols() != t_dim {
                    return Err(Error::Config("tracking input blocks have mismatched shapes".into()));
                }
                let mut b = DMatrix::zeros(p, t_dim);
                b.view_mut((0, 0), (dz, t_dim)).copy_from(&b_z);
                b.view_mut((dz, 0), (dt, t_dim)).copy_from(&b_theta);

                let expand_opt = |ps: &Option<PerStage>, field: &str, dim: usize| -> Result<Vec<DMatrix<f64>>> {
                    match ps {
                        Some(ps) => ps
                            .expand(n, field)?
                            .iter()
                            .map(|rows| to_matrix(rows, field))
                            .collect(),
                        None => Ok(vec![DMatrix::identity(dim, dim); n]),
                    }
                };
                let q_theta = expand_opt(&t.q_theta, "tracking.q_theta", dz)?;
                let q_z = expand_opt(&t.q_z, "tracking.q_z", dz)?;
                let r_s = expand_opt(&t.r_s, "tracking.r_s", t_dim)?;
                let r_r = expand_opt(&t.r_r, "tracking.r_r", t_dim)?;

                // Sender: (z - D theta)' Q_theta (z - D theta), so
                // Q_S = [I -D]' Q_theta [I -D]; receiver regulates z.
                let q_s: Vec<DMatrix<f64>> = d_mats
                    .iter()
                    .zip(q_theta.iter())
                    .map(|(d, q)| {
                        let mut sel = DMatrix::zeros(dz, p);
                        sel.view_mut((0, 0), (dz, dz))
                            .copy_from(&DMatrix::identity(dz, dz));
                        sel.view_mut((0, dz), (dz, dt)).copy_from(&(-d));
                        sel.transpose() * q * sel
                    })
                    .collect();
                let q_r: Vec<DMatrix<f64>> = q_z
                    .iter()
                    .map(|q| block_diag(q, &DMatrix::zeros(dt, dt)))
                    .collect();
                Ok((a, b, (q_s, r_s, q_r, r_r)))
            }
        }
    }

    fn validate_costs(
        &self,
        raw: (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>),
        model: &ProcessModel,
    ) -> Result<CostSpec> {
        let (q_s, r_s, q_r, r_r) = raw;
        let spec = match self.mode {
            Mode::Communication => CostSpec::communication(q_s, r_s, q_r, r_r, model),
            Mode::Control => {
                let sym = |list: Vec<DMatrix<f64>>, field: &str| -> Result<Vec<SymMatrix>> {
                    list.into_iter()
                        .map(|m| {
                            SymMatrix::new(m).map_err(|e| Error::Config(format!("{field}: {e}")))
                        })
                        .collect()
                };
                CostSpec::control(
                    sym(q_s, "costs.q_s")?,
                    sym(r_s, "costs.r_s")?,
                    sym(q_r, "costs.q_r")?,
                    sym(r_r, "costs.r_r")?,
                    model,
                )
            }
        };
        spec.map_err(|e| Error::Config(e.to_string()))
    }

    /// Fully expanded view of the scenario for the output bundle.
    pub fn expanded_json(&self, scenario: &Scenario) -> serde_json::Value {
        let model = &scenario.model;
        let mat = |m: &DMatrix<f64>| serde_json::json!(matrix_rows(m));
        let costs_json = match &scenario.costs {
            CostSpec::Communication(c) => serde_json::json!({
                "q_s": c.q_s.iter().map(|m| matrix_rows(m)).collect::<Vec<_>>(),
                "r_s": c.r_s.iter().map(|m| matrix_rows(m)).collect::<Vec<_>>(),
                "q_r": c.q_r.iter().map(|m| matrix_rows(m)).collect::<Vec<_>>(),
                "r_r": c.r_r.iter().map(|m| matrix_rows(m)).collect::<Vec<_>>(),
            }),
            CostSpec::Control(c) => serde_json::json!({
                "q_s": c.q_s.iter().map(|m| matrix_rows(m.as_matrix())).collect::<Vec<_>>(),
                "r_s": c.r_s.iter().map(|m| matrix_rows(m.as_matrix())).collect::<Vec<_>>(),
                "q_r": c.q_r.iter().map(|m| matrix_rows(m.as_matrix())).collect::<Vec<_>>(),
                "r_r": c.r_r.iter().map(|m| matrix_rows(m.as_matrix())).collect::<Vec<_>>(),
            }),
        };
        serde_json::json!({
            "mode": match scenario.mode { Mode::Communication => "communication", Mode::Control => "control" },
            "horizon": model.horizon(),
            "a": mat(model.a()),
            "b": mat(model.b()),
            "sigma1": mat(model.sigma1().as_matrix()),
            "sigma_w": mat(model.sigma_w().as_matrix()),
            "costs": costs_json,
            "solver": {"tol": scenario.solver.tol, "max_iter": scenario.solver.max_iter},
            "sim": {"paths": scenario.sim.paths, "seed": scenario.sim.seed},
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::covariance_schedule;

    #[test]
    fn presets_load_and_are_stationary() {
        for (name, _) in PRESETS {
            let cfg = load_scenario(name).unwrap();
            let scenario = cfg.build(None, None).unwrap();
            let cov = covariance_schedule(&scenario.model);
            let sigma1 = scenario.model.sigma1().clone();
            for sigma in cov.stages() {
                assert!(
                    (sigma.as_matrix() - sigma1.as_matrix()).norm() <= 1e-12,
                    "{name}: schedule drifts from the stationary point"
                );
            }
        }
    }

    #[test]
    fn preset_modes_match() {
        assert_eq!(load_scenario("scenario1").unwrap().mode, Mode::Communication);
        assert_eq!(load_scenario("scenario2").unwrap().mode, Mode::Communication);
        assert_eq!(load_scenario("scenario3").unwrap().mode, Mode::Control);
        assert_eq!(load_scenario("scenario4").unwrap().mode, Mode::Control);
        assert!(load_scenario("scenario9").is_err());
    }

    #[test]
    fn scenario3_expansion_matches_hand_matrices() {
        let cfg = load_scenario("scenario3").unwrap();
        let s = cfg.build(Some(4), None).unwrap();
        let c = s.costs.as_control().unwrap();
        let expected_qs = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let expected_qr = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        for k in 1..=4 {
            assert!((c.q_s[k].as_matrix() - &expected_qs).norm() <= 1e-15);
            assert!((c.q_r[k].as_matrix() - &expected_qr).norm() <= 1e-15);
        }
        assert_eq!(s.model.input_dim(), 1);
        assert!((s.model.b()[(0, 0)] - 2.0).abs() <= 1e-15);
        assert!((s.model.b()[(1, 0)] + 0.5).abs() <= 1e-15);
    }

    #[test]
    fn scenario1_expansion_matches_hand_matrices() {
        let cfg = load_scenario("scenario1").unwrap();
        let s = cfg.build(Some(3), None).unwrap();
        let c = s.costs.as_communication().unwrap();
        let expected_qs = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let expected_qr = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        for k in 0..3 {
            assert!((&c.q_s[k] - &expected_qs).norm() <= 1e-15);
            assert!((&c.q_r[k] - &expected_qr).norm() <= 1e-15);
            assert!((c.r_s[k][(0, 0)] + 1.0).abs() <= 1e-15);
        }
        assert!(!s.model.has_input());
    }

    #[test]
    fn config_errors_are_loud() {
        // Nonzero b in communication mode.
        let bad = r#"{
            "mode": "communication", "horizon": 2,
            "a": [[0.5, 0.0], [0.0, 0.5]], "b": [[1.0], [0.0]],
            "sigma1": [[1.0, 0.0], [0.0, 1.0]], "sigma_w": [[1.0, 0.0], [0.0, 1.0]],
            "costs": {"q_s": [[1.0, 1.0]], "r_s": [[-1.0]], "q_r": [[1.0, 0.0]], "r_r": [[-1.0]]}
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(bad).unwrap();
        let err = cfg.build(None, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        // Unknown field is rejected at parse time with a located message.
        let unknown = r#"{"mode": "communication", "horizon": 2, "sigmaX": []}"#;
        assert!(serde_json::from_str::<ScenarioConfig>(unknown).is_err());

        // Ragged matrix.
        let ragged = r#"{
            "mode": "communication", "horizon": 1,
            "a": [[0.5, 0.0], [0.0]],
            "sigma1": [[1.0, 0.0], [0.0, 1.0]], "sigma_w": [[1.0, 0.0], [0.0, 1.0]],
            "costs": {"q_s": [[1.0, 1.0]], "r_s": [[-1.0]], "q_r": [[1.0, 0.0]], "r_r": [[-1.0]]}
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(ragged).unwrap();
        assert!(cfg.build(None, None).is_err());
    }

    #[test]
    fn horizon_override_applies() {
        let cfg = load_scenario("scenario1").unwrap();
        let s = cfg.build(Some(7), None).unwrap();
        assert_eq!(s.model.horizon(), 7);
        let s = cfg.build(None, Some(1e-8)).unwrap();
        assert!((s.solver.tol - 1e-8).abs() < 1e-20);
    }
}
