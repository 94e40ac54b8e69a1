//! Closed-loop episodes, loss evaluation and Monte Carlo batches.
//!
//! Stage order at every `k`: sensors emit `y_k`, the encoder updates `x̌_k`,
//! the trigger sees `ẽ_k = x̌_k − x̂_k` (from the encoder's mirror of the
//! decoder) and picks `δ_k`, the controller applies `u_k = act(x̂_k)`, the
//! process steps, and a payload sent at `k` lands in `x̂_{k+1}`.
//!
//! Noise is drawn from the episode stream in a fixed order (`x_0`, then per
//! stage all sensor noises followed by the process noise) that does not
//! depend on the policy, so two policies run with the same seed see the same
//! disturbances.

use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::design::{Design, DesignError};
use crate::estimation::{self, DecoderState, EncoderState};
use crate::linalg;
use crate::lqr;
use crate::policies::{self, ControlPolicy, PolicyError, TriggerPolicy};
use crate::voidp::{self, VoiError, VoiSource};
use crate::rng::{episode_rng, policy_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("need at least 2 episodes, got {0}")]
    TooFewEpisodes(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Voi(#[from] VoiError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One stage of a recorded episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub delta: bool,
    /// Stacked sensor output.
    pub y: DVector<f64>,
    pub innovation: DVector<f64>,
    /// `x̌_k`.
    pub encoder: DVector<f64>,
    /// `x̂_k`.
    pub decoder: DVector<f64>,
    /// `ẽ_k` as seen by the trigger.
    pub mismatch: DVector<f64>,
    /// `ê_k = x_k − x̂_k`.
    pub decoder_error: DVector<f64>,
    /// `ς_k`.
    pub control_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub episode: u64,
    pub stages: Vec<StageRecord>,
    /// `x_{N+1}`.
    pub terminal: DVector<f64>,
}

/// Runs one episode with noise from `(seed, episode)`.
pub fn run_episode(
    design: &Design,
    trigger: &TriggerPolicy,
    control: ControlPolicy,
    seed: u64,
    episode: u64,
) -> Trace {
    let model = &design.model;
    let mut noise = episode_rng(seed, episode);
    let mut coin = policy_rng(seed, episode);
    let mut trigger_state = trigger.start_episode(design);

    let mut x = model.sample_initial(&mut noise);
    let mut decoder = DecoderState::initial(model);
    let mut mirror = DecoderState::initial(model);
    let mut encoder: Option<EncoderState> = None;
    let mut last_u = DVector::zeros(model.input_dim());
    let mut stages = Vec::with_capacity(model.stages());

    for k in 0..model.stages() {
        let y = design.sensors.stack(&model.observe(k, &x, &mut noise));
        let (next_encoder, nu) = match &encoder {
            None => (
                EncoderState::initial(model, &design.schedule, &y),
                estimation::initial_innovation(model, &design.sensors, &y),
            ),
            Some(prev) => (
                estimation::encoder_update(prev, model, &design.schedule, &y, &last_u),
                estimation::innovation(prev, model, &design.sensors, &y, &last_u),
            ),
        };
        let enc = encoder.insert(next_encoder);

        let mismatch = &enc.estimate - &mirror.estimate;
        let delta = trigger.decide(design, &mut trigger_state, k, &mismatch, &mut coin);
        let u = policies::act(control, design, &decoder.estimate, k);
        let control_gap = lqr::stage_cost_terms(&design.riccati, &x, &u, k);

        let x_hat = decoder.estimate.clone();
        let payload = delta.then_some(&enc.estimate);
        decoder = estimation::decoder_step(&decoder, model, &u, delta, payload).expect("payload present iff delta");
        mirror = estimation::decoder_step(&mirror, model, &u, delta, payload).expect("payload present iff delta");

        let x_next = model.step_process(k, &x, &u, &mut noise);
        stages.push(StageRecord {
            decoder_error: &x - &x_hat,
            decoder: x_hat,
            x,
            u: u.clone(),
            delta,
            y,
            innovation: nu,
            encoder: enc.estimate.clone(),
            mismatch,
            control_gap,
        });
        x = x_next;
        last_u = u;
    }

    Trace {
        seed,
        episode,
        stages,
        terminal: x,
    }
}

impl Trace {
    /// Per-stage CSV; the terminal row only fills `x`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let first = &self.stages[0];
        let (n, m, p) = (first.x.len(), first.u.len(), first.y.len());
        let mut header = vec!["episode".to_string(), "k".to_string()];
        let vector = |name: &str, len: usize, header: &mut Vec<String>| {
            header.extend((0..len).map(|i| format!("{name}{i}")));
        };
        vector("x", n, &mut header);
        vector("u", m, &mut header);
        header.push("delta".into());
        vector("y", p, &mut header);
        vector("nu", p, &mut header);
        vector("x_check", n, &mut header);
        vector("x_hat", n, &mut header);
        vector("e_tilde", n, &mut header);
        vector("e_hat", n, &mut header);
        header.push("varsigma".into());
        writeln!(out, "{}", header.join(","))?;

        let fmt = |v: &DVector<f64>| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>();
        for (k, s) in self.stages.iter().enumerate() {
            let mut row = vec![self.episode.to_string(), k.to_string()];
            row.extend(fmt(&s.x));
            row.extend(fmt(&s.u));
            row.push(u8::from(s.delta).to_string());
            for v in [&s.y, &s.innovation, &s.encoder, &s.decoder, &s.mismatch, &s.decoder_error] {
                row.extend(fmt(v));
            }
            row.push(format!("{:.16e}", s.control_gap));
            writeln!(out, "{}", row.join(","))?;
        }
        let mut row = vec![self.episode.to_string(), self.stages.len().to_string()];
        row.extend(fmt(&self.terminal));
        row.resize(header.len(), String::new());
        writeln!(out, "{}", row.join(","))
    }
}

/// Per-episode losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// `R = Σ ℓ_k δ_k / (N+1)`.
    pub rate: f64,
    /// `J = Σ (x_{k+1}ᵀQ_{k+1}x_{k+1} + u_kᵀR_ku_k) / (N+1)`.
    pub regulation: f64,
    /// `Φ = (1 − λ)R + λJ`.
    pub phi: f64,
    /// `Ψ = Σ (θ_kδ_k + ς_k)`.
    pub psi: f64,
    /// `(N+1)Φ − λ(Ψ + κ)`; zero in expectation.
    pub residual: f64,
    pub deltas: Vec<bool>,
    /// `ê_k` for the leading stages with `δ_0 = … = δ_k = 0`.
    pub silent_errors: Vec<DVector<f64>>,
}

impl EpisodeOutcome {
    pub fn from_trace(trace: &Trace, design: &Design) -> Self {
        let model = &design.model;
        let stages = model.stages() as f64;
        let lambda = model.lambda();
        let mut rate_sum = 0.0;
        let mut regulation_sum = 0.0;
        let mut psi = 0.0;
        for (k, s) in trace.stages.iter().enumerate() {
            let x_next = trace.stages.get(k + 1).map_or(&trace.terminal, |n| &n.x);
            regulation_sum += linalg::quad_form(model.q(k + 1), x_next) + linalg::quad_form(model.r(k), &s.u);
            if s.delta {
                rate_sum += model.rate_weight(k);
                psi += design.riccati.price(k);
            }
            psi += s.control_gap;
        }
        let rate = rate_sum / stages;
        let regulation = regulation_sum / stages;
        let phi = (1.0 - lambda) * rate + lambda * regulation;
        let silent_errors = trace
            .stages
            .iter()
            .take_while(|s| !s.delta)
            .map(|s| s.decoder_error.clone())
            .collect();
        Self {
            rate,
            regulation,
            phi,
            psi,
            residual: stages * phi - lambda * (psi + design.riccati.kappa),
            deltas: trace.stages.iter().map(|s| s.delta).collect(),
            silent_errors,
        }
    }
}

/// Running mean and spread, mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0.0 {
            return *other;
        }
        if other.count == 0.0 {
            return *self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2.0 {
            return f64::NAN;
        }
        self.m2 / (self.count - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.count).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            se: self.se(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// `|mean| ≤ z·se`.
    pub fn consistent_with_zero(&self, z: f64) -> bool {
        self.mean.abs() <= z * self.se
    }
}

/// Mergeable summary of a batch of episodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Accumulator {
    pub rate: Moments,
    pub regulation: Moments,
    pub phi: Moments,
    pub psi: Moments,
    pub residual: Moments,
    pub transmissions: Vec<Moments>,
    /// Per stage and coordinate, over episodes still silent at that stage.
    pub silent_errors: Vec<Vec<Moments>>,
}

impl Accumulator {
    fn new(stages: usize, n: usize) -> Self {
        Self {
            transmissions: vec![Moments::default(); stages],
            silent_errors: vec![vec![Moments::default(); n]; stages],
            ..Self::default()
        }
    }

    pub fn push(&mut self, o: &EpisodeOutcome) {
        self.rate.push(o.rate);
        self.regulation.push(o.regulation);
        self.phi.push(o.phi);
        self.psi.push(o.psi);
        self.residual.push(o.residual);
        for (m, &d) in self.transmissions.iter_mut().zip(&o.deltas) {
            m.push(f64::from(u8::from(d)));
        }
        for (ms, e) in self.silent_errors.iter_mut().zip(&o.silent_errors) {
            for (m, &v) in ms.iter_mut().zip(e.iter()) {
                m.push(v);
            }
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        let zip = |a: &[Moments], b: &[Moments]| a.iter().zip(b).map(|(x, y)| x.merge(y)).collect::<Vec<_>>();
        Self {
            rate: self.rate.merge(&other.rate),
            regulation: self.regulation.merge(&other.regulation),
            phi: self.phi.merge(&other.phi),
            psi: self.psi.merge(&other.psi),
            residual: self.residual.merge(&other.residual),
            transmissions: zip(&self.transmissions, &other.transmissions),
            silent_errors: self
                .silent_errors
                .iter()
                .zip(&other.silent_errors)
                .map(|(a, b)| zip(a, b))
                .collect(),
        }
    }

    pub fn report(&self, design: &Design) -> LossReport {
        LossReport {
            episodes: self.rate.count as usize,
            lambda: design.model.lambda(),
            kappa: design.riccati.kappa,
            rate: self.rate.estimate(),
            regulation: self.regulation.estimate(),
            phi: self.phi.estimate(),
            psi: self.psi.estimate(),
            identity_residual: self.residual.estimate(),
            transmit_frequency: self.transmissions.iter().map(|m| m.mean).collect(),
            silent_bias: self
                .silent_errors
                .iter()
                .enumerate()
                .map(|(k, ms)| SilentBias {
                    stage: k,
                    episodes: ms.first().map_or(0, |m| m.count as usize),
                    mean: ms.iter().map(|m| m.mean).collect(),
                    se: ms.iter().map(Moments::se).collect(),
                })
                .collect(),
        }
    }
}

/// Mean decoder error over episodes with no transmission through stage `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilentBias {
    pub stage: usize,
    pub episodes: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl SilentBias {
    /// Every coordinate within `z` standard errors of zero.
    pub fn consistent_with_zero(&self, z: f64) -> bool {
        self.mean.iter().zip(&self.se).all(|(m, s)| m.abs() <= z * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub episodes: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub rate: Estimate,
    pub regulation: Estimate,
    pub phi: Estimate,
    pub psi: Estimate,
    /// `(N+1)Φ − λ(Ψ + κ)` per episode; the SE is that of the paired residual.
    pub identity_residual: Estimate,
    pub transmit_frequency: Vec<f64>,
    pub silent_bias: Vec<SilentBias>,
}

/// Loss report from stored traces.
pub fn evaluate(traces: &[Trace], design: &Design) -> Result<LossReport, SimError> {
    if traces.len() < 2 {
        return Err(SimError::TooFewEpisodes(traces.len()));
    }
    let mut acc = Accumulator::new(design.model.stages(), design.state_dim());
    for t in traces {
        acc.push(&EpisodeOutcome::from_trace(t, design));
    }
    Ok(acc.report(design))
}

/// Episodes per sequential chunk; fixes the reduction tree.
const CHUNK: u64 = 1024;

/// Maps `f` over episodes `0..episodes` in parallel and folds the results
/// with a reduction order independent of the thread count.
pub fn map_episodes<T, F, G, M>(episodes: u64, init: G, f: F, merge: M) -> T
where
    T: Send,
    G: Fn() -> T + Sync,
    F: Fn(&mut T, u64) + Sync,
    M: Fn(&T, &T) -> T + Sync,
{
    let chunks: Vec<T> = (0..episodes.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(episodes) {
                f(&mut acc, i);
            }
            acc
        })
        .collect();
    pairwise(chunks, &init, &merge)
}

fn pairwise<T, G: Fn() -> T, M: Fn(&T, &T) -> T>(mut items: Vec<T>, init: &G, merge: &M) -> T {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => merge(&a, &b),
                None => a,
            });
        }
        items = next;
    }
    items.pop().unwrap_or_else(init)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonteCarlo {
    pub seed: u64,
    pub episodes: u64,
}

/// Streams `episodes` closed-loop runs into a loss report.
pub fn monte_carlo(
    design: &Design,
    trigger: &TriggerPolicy,
    control: ControlPolicy,
    mc: MonteCarlo,
) -> Result<LossReport, SimError> {
    if mc.episodes < 2 {
        return Err(SimError::TooFewEpisodes(mc.episodes as usize));
    }
    let (stages, n) = (design.model.stages(), design.state_dim());
    let acc = map_episodes(
        mc.episodes,
        || Accumulator::new(stages, n),
        |acc, i| {
            let trace = run_episode(design, trigger, control, mc.seed, i);
            acc.push(&EpisodeOutcome::from_trace(&trace, design));
        },
        Accumulator::merge,
    );
    Ok(acc.report(design))
}

/// `Φ(a) − Φ(b)` per episode under common random numbers.
pub fn paired_phi_difference(
    design: &Design,
    a: &TriggerPolicy,
    b: &TriggerPolicy,
    control: ControlPolicy,
    mc: MonteCarlo,
) -> Result<Estimate, SimError> {
    if mc.episodes < 2 {
        return Err(SimError::TooFewEpisodes(mc.episodes as usize));
    }
    let phi = |p: &TriggerPolicy, i: u64| EpisodeOutcome::from_trace(&run_episode(design, p, control, mc.seed, i), design).phi;
    let diff = map_episodes(
        mc.episodes,
        Moments::default,
        |m, i| m.push(phi(a, i) - phi(b, i)),
        Moments::merge,
    );
    Ok(diff.estimate())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Exact-DP thresholds per stage when the trigger has a table.
    pub thresholds: Option<Vec<f64>>,
    pub report: LossReport,
}

/// Rebuilds prices, tables and policy for each `λ` and runs a batch.
pub fn sweep_lambda<F>(
    design: &Design,
    lambdas: &[f64],
    build: F,
    control: ControlPolicy,
    mc: MonteCarlo,
) -> Result<Vec<SweepRow>, SweepError>
where
    F: Fn(&Design) -> Result<TriggerPolicy, PolicyError>,
{
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|lambda| {
            let d = design.with_lambda(lambda)?;
            let trigger = build(&d)?;
            let thresholds = match trigger.table() {
                Some(table) => Some(
                    (0..d.model.stages())
                        .map(|k| voidp::extract_threshold(VoiSource::Exact(table), &d, k))
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                None => None,
            };
            let report = monte_carlo(&d, &trigger, control, mc)?;
            Ok(SweepRow {
                lambda,
                thresholds,
                report,
            })
        })
        .collect()
}
