//! Monte Carlo sweeps over memory size `n` (and `k`) that compare empirical
//! retrieval statistics with their closed-form large-sample targets.
//!
//! Each `(n, replicate)` pair is an independent task: it samples one memory
//! store from a seed derived from `(master_seed, replicate, stream)` and
//! queries it at every evaluation point. Tasks run on the current rayon pool
//! and results are collected in task order, so reports do not depend on the
//! schedule.

mod report;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discordance::{asymptotic_target, realized_delta_h, Regime};
use crate::error::{Error, Result};
use crate::gating::GateInputs;
use crate::memory::MemoryStore;
use crate::retrieval::RetrievalView;
use crate::scenario::{support_distance, Scenario};
use crate::seed::{derive_seed, tag};
use crate::simplex::{modal_label, ProbVec};

pub use report::{
    aggregate, reports_to_csv, reports_to_json, Cell, CellSummary, ExperimentReport, Observation,
    ReportMetadata, CSV_COLUMNS, REPORT_SCHEMA_VERSION,
};

/// Minimum `|ell_bayes - ell0|` for a query to enter a gate-limit sweep.
pub const GATE_LIMIT_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ModeStability,
    GateLimit,
    TrustLimit,
    RetrieverLimit,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ModeStability => "mode_stability",
            ExperimentKind::GateLimit => "gate_limit",
            ExperimentKind::TrustLimit => "trust_limit",
            ExperimentKind::RetrieverLimit => "retriever_limit",
        }
    }

    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::ModeStability,
        ExperimentKind::GateLimit,
        ExperimentKind::TrustLimit,
        ExperimentKind::RetrieverLimit,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    /// Report column that the cell `target` refers to.
    pub fn headline_metric(self) -> &'static str {
        match self {
            ExperimentKind::ModeStability => "mode_error_rate",
            ExperimentKind::GateLimit => "delta_h_mean",
            ExperimentKind::TrustLimit => "w_fact_mean",
            ExperimentKind::RetrieverLimit => "l1_mean",
        }
    }

    fn stream(self) -> u64 {
        match self {
            ExperimentKind::ModeStability => tag(b"mode"),
            ExperimentKind::GateLimit => tag(b"gate"),
            ExperimentKind::TrustLimit => tag(b"trust"),
            ExperimentKind::RetrieverLimit => tag(b"retr"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KRule {
    /// `k = ceil(n^beta)`.
    Power { beta: f64 },
    /// One `k` per grid entry.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuerySet {
    Explicit(Vec<Vec<f64>>),
    /// Drawn with [`Scenario::make_query`].
    Sampled { count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub scenario: Scenario,
    pub n_grid: Vec<usize>,
    pub k_rule: KRule,
    pub reps: u32,
    pub queries: QuerySet,
    pub zeta: f64,
    pub delta: f64,
    pub bandwidth: f64,
    pub master_seed: u64,
}

/// `ceil(n^beta)`, at least 1.
pub fn k_for(n: usize, beta: f64) -> usize {
    let raw = (n as f64).powf(beta);
    // powf can land a few ulps above an exact integer power.
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= 1e-9 * nearest { nearest } else { raw.ceil() };
    (k as usize).max(1)
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("sweep `{}`: {msg}", self.name)));
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if let KRule::Power { beta } = self.k_rule {
            if !(beta > 0.0 && beta < 1.0) {
                return bad(format!("beta = {beta} must lie in (0, 1)"));
            }
        }
        if let KRule::Explicit(ks) = &self.k_rule {
            if ks.len() != self.n_grid.len() {
                return bad(format!("k has {} entries but n_grid has {}", ks.len(), self.n_grid.len()));
            }
        }
        for (i, &n) in self.n_grid.iter().enumerate() {
            let k = self.k_at(i);
            if k == 0 || k >= n {
                return bad(format!("k = {k} at n = {n} violates 1 <= k < n"));
            }
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return bad(format!("zeta = {} must be finite and >= 0", self.zeta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad(format!("bandwidth = {} must be positive", self.bandwidth));
        }
        match &self.queries {
            QuerySet::Explicit(qs) if qs.is_empty() => return bad("no queries".into()),
            QuerySet::Sampled { count: 0 } => return bad("sample_queries must be >= 1".into()),
            _ => {}
        }
        Ok(())
    }

    pub fn k_at(&self, grid_index: usize) -> usize {
        match &self.k_rule {
            KRule::Power { beta } => k_for(self.n_grid[grid_index], *beta),
            KRule::Explicit(ks) => ks[grid_index],
        }
    }

    /// Query points with their true conditionals.
    pub fn resolve_queries(&self) -> Result<Vec<(Vec<f64>, ProbVec)>> {
        match &self.queries {
            QuerySet::Explicit(points) => points
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let p = self.scenario.conditional_at(x).map_err(|e| Error::InvalidQuery {
                        index: i,
                        reason: e.to_string(),
                    })?;
                    Ok((x.clone(), p))
                })
                .collect(),
            QuerySet::Sampled { count } => (0..*count)
                .map(|i| self.scenario.make_query(derive_seed(self.master_seed, i as u64, tag(b"query"))))
                .collect(),
        }
    }

    fn memory_seed(&self, grid_index: usize, replicate: u32) -> u64 {
        let stream = self.experiment.stream() ^ ((grid_index as u64 + 1) << 40);
        derive_seed(self.master_seed, u64::from(replicate), stream)
    }
}

/// `2 C exp(-2 k (delta / 2)^2) + radius_tail`.
pub fn hoeffding_bound(delta: f64, k: usize, num_labels: usize, radius_tail: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter { name: "delta", reason: format!("{delta} is outside (0, 1)") });
    }
    if !(0.0..=1.0).contains(&radius_tail) {
        return Err(Error::InvalidParameter {
            name: "radius_tail",
            reason: format!("{radius_tail} is outside [0, 1]"),
        });
    }
    let half = delta / 2.0;
    Ok(2.0 * num_labels as f64 * (-2.0 * k as f64 * half * half).exp() + radius_tail)
}

/// Per-query data fixed for the whole sweep.
struct QueryContext {
    x: Vec<f64>,
    p_true: ProbVec,
    y_star: usize,
    q0: Option<ProbVec>,
    /// `P(y*|x) - q0(y*|x)`.
    structural_gap: f64,
    limit: Option<ProbVec>,
    target: Option<f64>,
}

fn prepare(config: &SweepConfig) -> Result<Vec<QueryContext>> {
    config.validate()?;
    let scenario = &config.scenario;
    let kind = config.experiment;
    let needs_alignment = matches!(kind, ExperimentKind::ModeStability | ExperimentKind::GateLimit);
    if needs_alignment && !scenario.is_aligned() {
        return Err(Error::InvalidConfig(format!(
            "sweep `{}`: {} requires an aligned scenario (no deformation, corruption_rate = 0)",
            config.name,
            kind.as_str()
        )));
    }

    let mut contexts = Vec::new();
    for (index, (x, p_true)) in config.resolve_queries()?.into_iter().enumerate() {
        let reject = |reason: String| Error::InvalidQuery { index, reason };
        let y_star = modal_label(&p_true);
        let mut ctx = QueryContext {
            y_star,
            q0: None,
            structural_gap: 0.0,
            limit: None,
            target: None,
            x,
            p_true,
        };
        match kind {
            ExperimentKind::ModeStability => {
                let proj = support_distance(&scenario.support(), &ctx.x);
                if proj.distance > 0.0 {
                    return Err(reject(format!("lies off the support (distance {})", proj.distance)));
                }
                let runner_up = (0..ctx.p_true.num_labels())
                    .filter(|&y| y != y_star)
                    .map(|y| ctx.p_true[y])
                    .fold(0.0, f64::max);
                if ctx.p_true[y_star] - runner_up <= 0.0 {
                    return Err(reject("Bayes label is not unique (margin is zero)".into()));
                }
            }
            ExperimentKind::GateLimit => {
                let q0 = scenario.q0_at(&ctx.x)?;
                let target = asymptotic_target(&ctx.p_true, &q0).map_err(|e| reject(e.to_string()))?;
                let gap = target.ell0.value() - target.ell_bayes.value();
                if gap.abs() <= GATE_LIMIT_SEPARATION {
                    return Err(reject(format!("|ell_bayes - ell0| = {gap:e} is degenerate")));
                }
                ctx.structural_gap = ctx.p_true[y_star] - q0[y_star];
                ctx.target = Some(target.limit_value);
                ctx.q0 = Some(q0);
            }
            ExperimentKind::TrustLimit => {
                let d = support_distance(&scenario.support(), &ctx.x).distance / config.bandwidth;
                ctx.target = Some((-d * d).exp());
            }
            ExperimentKind::RetrieverLimit => {
                let limit = scenario.limiting_retriever(&ctx.x).map_err(|e| reject(e.to_string()))?;
                ctx.limit = Some(limit);
                ctx.target = Some(0.0);
            }
        }
        contexts.push(ctx);
    }
    Ok(contexts)
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn observe(
    config: &SweepConfig,
    store: &MemoryStore,
    ctx: &QueryContext,
    k: usize,
    replicate: u32,
) -> Result<Observation> {
    let view = RetrievalView::query(store, &ctx.x, k, config.bandwidth)?;
    let mut obs = Observation::new(replicate, view.w_fact, view.radius);
    match config.experiment {
        ExperimentKind::ModeStability => {
            let deviation = (0..ctx.p_true.num_labels())
                .map(|y| (view.rhat[y] - ctx.p_true[y]).abs())
                .fold(0.0, f64::max);
            let lipschitz = config.scenario.lipschitz();
            let radius_threshold = if lipschitz > 0.0 {
                config.delta / (2.0 * lipschitz)
            } else {
                f64::INFINITY
            };
            obs.deviation = Some(deviation);
            obs.deviation_exceeds = Some(deviation > config.delta);
            obs.mode_error = Some(modal_label(&view.rhat) != ctx.y_star);
            obs.radius_exceeds = Some(view.radius > radius_threshold);
        }
        ExperimentKind::GateLimit => {
            let q0 = ctx.q0.clone().expect("prepared for gate sweeps");
            let inputs = GateInputs::new(ctx.p_true.clone(), q0, view.rhat, view.w_fact, config.zeta)?;
            let rec = realized_delta_h(&inputs);
            obs.delta_h = Some(rec.delta_h);
            obs.delta_x = Some(rec.delta_x);
            obs.sign_agrees = Some(sign(rec.delta_x) == sign(ctx.structural_gap));
            obs.regime = Some(rec.regime);
        }
        ExperimentKind::TrustLimit => {}
        ExperimentKind::RetrieverLimit => {
            let limit = ctx.limit.as_ref().expect("prepared for retriever sweeps");
            obs.l1 = Some(crate::simplex::l1_distance(&view.rhat, limit)?);
        }
    }
    Ok(obs)
}

/// Runs the sweep for replicates `0..reps`.
pub fn run_sweep(config: &SweepConfig) -> Result<ExperimentReport> {
    run_replicates(config, 0..config.reps)
}

/// Runs the sweep for a subset of replicate indices. Reports over disjoint
/// ranges [`aggregate`] to the report over their union.
pub fn run_replicates(config: &SweepConfig, replicates: Range<u32>) -> Result<ExperimentReport> {
    let contexts = prepare(config)?;
    let tasks: Vec<(usize, u32)> = (0..config.n_grid.len())
        .flat_map(|g| replicates.clone().map(move |r| (g, r)))
        .collect();

    let results: Vec<Vec<Observation>> = tasks
        .par_iter()
        .map(|&(g, rep)| {
            let n = config.n_grid[g];
            let k = config.k_at(g);
            let store = config.scenario.sample_memory(n, config.memory_seed(g, rep))?;
            contexts.iter().map(|ctx| observe(config, &store, ctx, k, rep)).collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(config.n_grid.len() * contexts.len());
    for (g, &n) in config.n_grid.iter().enumerate() {
        for (q, ctx) in contexts.iter().enumerate() {
            cells.push(Cell {
                n,
                k: config.k_at(g),
                query: q,
                point: ctx.x.clone(),
                target: ctx.target,
                observations: Vec::new(),
            });
        }
    }
    let per_n = contexts.len();
    for ((g, _), observations) in tasks.iter().zip(results) {
        for (q, obs) in observations.into_iter().enumerate() {
            cells[g * per_n + q].observations.push(obs);
        }
    }

    Ok(ExperimentReport {
        sweep: config.name.clone(),
        experiment: config.experiment,
        metadata: ReportMetadata::for_config(config),
        cells,
    })
}

pub fn run_mode_stability(config: &SweepConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::ModeStability)?;
    run_sweep(config)
}

pub fn run_gate_limit(config: &SweepConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::GateLimit)?;
    run_sweep(config)
}

pub fn run_trust_limit(config: &SweepConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::TrustLimit)?;
    run_sweep(config)
}

pub fn run_retriever_limit(config: &SweepConfig) -> Result<ExperimentReport> {
    expect_kind(config, ExperimentKind::RetrieverLimit)?;
    run_sweep(config)
}

fn expect_kind(config: &SweepConfig, kind: ExperimentKind) -> Result<()> {
    if config.experiment != kind {
        return Err(Error::InvalidConfig(format!(
            "sweep `{}` is a {} sweep, not {}",
            config.name,
            config.experiment.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

/// Number of observations in each regime, as `(A, B, C)`.
pub(crate) fn regime_counts(observations: &[Observation]) -> Option<[usize; 3]> {
    let mut counts = [0usize; 3];
    for obs in observations {
        match obs.regime? {
            Regime::A => counts[0] += 1,
            Regime::B => counts[1] += 1,
            Regime::C => counts[2] += 1,
        }
    }
    Some(counts)
}
