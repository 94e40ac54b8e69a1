//! Subcommand bodies. Each returns CSV artifacts plus a JSON summary.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde_json::{json, Value};
use voi_control::policies::TriggerPolicy;
use voi_control::sim::{self, MonteCarlo};
use voi_control::verify::{verify_tiny, VerifyOptions};
use voi_control::voidp::{self, VoiSource};
use voi_control::Design;

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct Output {
    /// `(file name, contents)`; the first is the primary table.
    pub tables: Vec<(&'static str, String)>,
    pub summary: Value,
    /// Names of failed verification checks.
    pub failing: Vec<String>,
}

impl Output {
    fn new(summary: Value) -> Self {
        Self {
            tables: Vec::new(),
            summary,
            failing: Vec::new(),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn run_error(e: impl ToString) -> CliError {
    CliError::Run(e.to_string())
}

fn header(cfg: &ExperimentConfig, command: &str) -> Value {
    json!({ "command": command, "seed": cfg.seed, "config": cfg })
}

fn column_names(out: &mut Vec<String>, name: &str, rows: usize, cols: usize) {
    for c in 0..cols {
        for r in 0..rows {
            out.push(format!("{name}_r{r}_c{c}"));
        }
    }
}

fn push_matrix(row: &mut Vec<String>, m: Option<&DMatrix<f64>>, rows: usize, cols: usize) {
    match m {
        Some(m) => row.extend(m.iter().map(|x| num(*x))),
        None => row.extend(std::iter::repeat_n(String::new(), rows * cols)),
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let mut summary = header(cfg, "validate");
    summary["valid"] = json!(true);
    summary["state_dim"] = json!(design.state_dim());
    summary["input_dim"] = json!(design.model.input_dim());
    summary["output_dims"] = json!(design.model.output_dims());
    summary["horizon"] = json!(design.horizon());
    summary["kappa"] = json!(design.riccati.kappa);
    Ok(Output::new(summary))
}

/// One row per stage `k = 0..=N+1`; matrices flattened column-major, so
/// `S_r1_c0` precedes `S_r0_c1`. `L` and `theta` are empty at `N+1`.
pub fn riccati(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let sol = &design.riccati;
    let (n, m) = (design.state_dim(), design.model.input_dim());
    let mut names = vec!["k".to_string()];
    column_names(&mut names, "S", n, n);
    column_names(&mut names, "L", m, n);
    column_names(&mut names, "Gamma", n, n);
    names.push("theta".into());
    let mut csv = names.join(",") + "\n";
    for k in 0..sol.s.len() {
        let mut row = vec![k.to_string()];
        push_matrix(&mut row, Some(&sol.s[k]), n, n);
        push_matrix(&mut row, sol.gain.get(k), m, n);
        push_matrix(&mut row, Some(sol.gamma(k)), n, n);
        row.push(sol.price.get(k).map(|t| num(*t)).unwrap_or_default());
        csv += &(row.join(",") + "\n");
    }
    let mut out = Output::new(header(cfg, "riccati"));
    out.summary["kappa"] = json!(sol.kappa);
    out.tables.push(("riccati.csv", csv));
    Ok(out)
}

fn thresholds(design: &Design, source: VoiSource<'_>) -> Result<Vec<f64>, CliError> {
    (0..design.model.stages())
        .map(|k| voidp::extract_threshold(source, design, k).map_err(run_error))
        .collect()
}

fn threshold_json(values: &[f64]) -> Value {
    // JSON has no infinity
    values
        .iter()
        .map(|t| if t.is_finite() { json!(t) } else { json!("inf") })
        .collect()
}

pub fn dp(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let table = voidp::backward_induction(&design, &cfg.grid).map_err(run_error)?;
    let mut csv = String::from("stage,e,V,rho,voi,delta\n");
    for k in 0..design.model.stages() {
        let stage = table.stage(k).map_err(run_error)?;
        for (i, e) in stage.nodes.iter().enumerate() {
            let voi = stage.voi_at_node(i);
            writeln!(
                csv,
                "{k},{},{},{},{},{}",
                num(*e),
                num(stage.values[i]),
                num(stage.residual_at_node(i)),
                num(voi),
                u8::from(voi >= 0.0)
            )
            .expect("writing to a String");
        }
    }
    let exact = thresholds(&design, VoiSource::Exact(&table))?;
    let myopic = thresholds(&design, VoiSource::Myopic)?;
    let mut tcsv = String::from("stage,theta,threshold_exact,threshold_myopic\n");
    for k in 0..exact.len() {
        writeln!(tcsv, "{k},{},{},{}", num(design.riccati.price(k)), num(exact[k]), num(myopic[k]))
            .expect("writing to a String");
    }
    let mut out = Output::new(header(cfg, "dp"));
    out.summary["thresholds_exact"] = threshold_json(&exact);
    out.summary["thresholds_myopic"] = threshold_json(&myopic);
    out.tables.push(("dp.csv", csv));
    out.tables.push(("thresholds.csv", tcsv));
    Ok(out)
}

fn trigger(cfg: &ExperimentConfig, design: &Design) -> Result<TriggerPolicy, CliError> {
    TriggerPolicy::new(cfg.policy, design, &cfg.grid).map_err(run_error)
}

pub fn simulate(cfg: &ExperimentConfig, traces: bool) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let policy = trigger(cfg, &design)?;
    let mc = MonteCarlo {
        seed: cfg.seed,
        episodes: cfg.episodes,
    };
    log::info!("simulating {} episodes of {} / {:?}", cfg.episodes, cfg.policy, cfg.control);
    let report = sim::monte_carlo(&design, &policy, cfg.control, mc).map_err(run_error)?;

    let n = design.state_dim();
    let mut names = vec!["k".to_string(), "transmit_frequency".into(), "silent_episodes".into()];
    for i in 0..n {
        names.push(format!("silent_bias_mean_{i}"));
        names.push(format!("silent_bias_se_{i}"));
    }
    let mut csv = names.join(",") + "\n";
    for (k, bias) in report.silent_bias.iter().enumerate() {
        let mut row = vec![k.to_string(), num(report.transmit_frequency[k]), bias.episodes.to_string()];
        for i in 0..n {
            row.push(num(bias.mean[i]));
            row.push(num(bias.se[i]));
        }
        csv += &(row.join(",") + "\n");
    }

    let mut out = Output::new(header(cfg, "simulate"));
    out.summary["report"] = serde_json::to_value(&report).map_err(run_error)?;
    out.tables.push(("simulate.csv", csv));
    if traces {
        let mut text = Vec::new();
        for episode in 0..cfg.episodes {
            let trace = sim::run_episode(&design, &policy, cfg.control, cfg.seed, episode);
            let mut chunk = Vec::new();
            trace.write_csv(&mut chunk).map_err(run_error)?;
            // keep a single header line
            let skip = if episode == 0 { 0 } else { chunk.iter().position(|b| *b == b'\n').map_or(0, |p| p + 1) };
            text.extend_from_slice(&chunk[skip..]);
        }
        out.tables.push(("traces.csv", String::from_utf8(text).map_err(run_error)?));
    }
    Ok(out)
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let mc = MonteCarlo {
        seed: cfg.seed,
        episodes: cfg.episodes,
    };
    let rows = sim::sweep_lambda(
        &design,
        &cfg.lambdas,
        |d| TriggerPolicy::new(cfg.policy, d, &cfg.grid),
        cfg.control,
        mc,
    )
    .map_err(run_error)?;
    let stages = design.model.stages();
    let mut names: Vec<String> = ["lambda", "R", "R_se", "J", "J_se", "Phi", "Phi_se"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..stages).map(|k| format!("threshold_{k}")));
    let mut csv = names.join(",") + "\n";
    for row in &rows {
        let r = &row.report;
        let mut cells = vec![
            num(row.lambda),
            num(r.rate.mean),
            num(r.rate.se),
            num(r.regulation.mean),
            num(r.regulation.se),
            num(r.phi.mean),
            num(r.phi.se),
        ];
        match &row.thresholds {
            Some(t) => cells.extend(t.iter().map(|x| num(*x))),
            None => cells.extend(std::iter::repeat_n(String::new(), stages)),
        }
        csv += &(cells.join(",") + "\n");
    }
    let mut out = Output::new(header(cfg, "sweep"));
    out.summary["rows"] = rows
        .iter()
        .map(|row| {
            json!({
                "lambda": row.lambda,
                "rate": row.report.rate,
                "regulation": row.report.regulation,
                "phi": row.report.phi,
                "thresholds": row.thresholds.as_deref().map(threshold_json),
            })
        })
        .collect();
    out.tables.push(("sweep.csv", csv));
    Ok(out)
}

pub fn verify(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let design = cfg.design()?;
    let opts = VerifyOptions {
        quad_order: cfg.quad_order,
        points: cfg.grid.points,
        half_width: cfg.grid.half_width,
        episodes: cfg.episodes,
        seed: cfg.seed,
    };
    let report = verify_tiny(&design, &opts).map_err(run_error)?;
    let mut out = Output::new(header(cfg, "verify"));
    out.summary["horizon"] = json!(report.horizon);
    out.summary["passed"] = json!(report.passed());
    out.summary["checks"] = report
        .checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "status": if c.passed { "pass" } else { "fail" },
                "detail": c.detail,
            })
        })
        .collect();
    out.failing = report.failing().into_iter().map(String::from).collect();
    Ok(out)
}
