//! Oracle verification suite for tiny scalar instances.

use serde::Serialize;

use crate::design::Design;
use crate::oracle::{self, OracleError, TinyInstance};
use crate::voidp::{self, GridSpec, Integration, VoiError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub horizon: usize,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub quad_order: usize,
    pub points: usize,
    pub half_width: f64,
    pub episodes: u64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quad_order: oracle::DEFAULT_ORACLE_ORDER,
            points: 1025,
            half_width: 8.0,
            episodes: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Voi(#[from] VoiError),
}

/// DP against exhaustive enumeration at every stage-0 grid node, symmetry
/// and threshold shape of the enumerated optimum, terminal degeneracy, and
/// Monte Carlo rollouts of the exact table.
pub fn verify_tiny(design: &Design, opts: &VerifyOptions) -> Result<VerificationReport, VerifyError> {
    let tiny = TinyInstance::new(design.clone(), opts.quad_order)?;
    let quadrature_grid = GridSpec {
        half_width: opts.half_width,
        points: opts.points,
        quad_nodes: opts.quad_order,
        integration: Integration::GaussHermite,
    };
    let table = voidp::backward_induction(design, &quadrature_grid)?;
    let stage = table.stage(0)?;
    let optima = oracle::enumerate_policies(&tiny, &stage.nodes)?;
    let mut checks = Vec::new();

    let worst = optima
        .iter()
        .zip(&stage.values)
        .map(|(o, v)| (o.value - v).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "dp_equals_enumeration",
        worst < 1e-6,
        format!("max |V_0 - enumeration| = {worst:.3e} over {} nodes", optima.len()),
    ));

    let p = optima.len();
    let asym = (0..p)
        .map(|i| (optima[i].value - optima[p - 1 - i].value).abs())
        .fold(0.0, f64::max);
    let first: Vec<bool> = optima.iter().map(|o| o.labeling.first).collect();
    let mirrored = (0..p).all(|i| first[i] == first[p - 1 - i]);
    checks.push(Check::new(
        "optimal_labeling_even",
        asym <= 1e-9 && mirrored,
        format!("max value asymmetry {asym:.3e}, first-stage decisions mirrored: {mirrored}"),
    ));

    let stage0_threshold = oracle::threshold_in_magnitude(&stage.nodes, &first);
    let later_threshold = optima.iter().all(|o| o.is_threshold_type(&tiny));
    checks.push(Check::new(
        "optimal_labeling_threshold_type",
        stage0_threshold && later_threshold,
        format!("stage 0: {stage0_threshold}, later stages: {later_threshold}"),
    ));

    let dp_agrees = optima
        .iter()
        .enumerate()
        .filter(|(i, o)| (o.value_by_first[0] - o.value_by_first[1]).abs() > 1e-9 && stage.voi_at_node(*i).abs() > 1e-9)
        .all(|(i, o)| o.labeling.first == (stage.voi_at_node(i) >= 0.0));
    checks.push(Check::new(
        "dp_decision_matches_enumeration",
        dp_agrees,
        "stage-0 decisions agree wherever the optimum is strict".to_string(),
    ));

    let horizon = design.horizon();
    let last = table.stage(horizon)?;
    let silent = design.riccati.price(horizon) <= 0.0 || (0..last.nodes.len()).all(|i| last.voi_at_node(i) < 0.0);
    checks.push(Check::new(
        "no_transmission_at_last_stage",
        silent,
        format!("theta_N = {}", design.riccati.price(horizon)),
    ));

    let exact = voidp::backward_induction(
        design,
        &GridSpec {
            integration: Integration::ExactGaussian,
            ..quadrature_grid
        },
    )?;
    let sigma = exact.stage(0)?.sigma;
    let mut mc_ok = true;
    let mut details = Vec::new();
    for (j, e) in [0.0, 0.5 * sigma, 1.5 * sigma].into_iter().enumerate() {
        let check = oracle::mc_value_check(&exact, design, e, 0, opts.episodes, opts.seed.wrapping_add(j as u64));
        mc_ok &= check.consistent;
        details.push(format!(
            "e={e:.3}: rollout {:.6} ± {:.2e} vs table {:.6}",
            check.rollout.mean, check.rollout.se, check.table_value
        ));
    }
    checks.push(Check::new("monte_carlo_value", mc_ok, details.join("; ")));

    Ok(VerificationReport { horizon, checks })
}
