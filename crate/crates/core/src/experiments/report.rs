use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{hoeffding_bound, regime_counts, ExperimentKind, SweepConfig};
use crate::error::{Error, Result};

/// Version of the CSV/JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 26] = [
    "sweep",
    "experiment",
    "n",
    "k",
    "query",
    "reps",
    "target",
    "w_fact_mean",
    "w_fact_std",
    "radius_mean",
    "dev_mean",
    "dev_std",
    "mode_error_rate",
    "dev_exceed_rate",
    "radius_tail_rate",
    "hoeffding_bound",
    "delta_h_mean",
    "delta_h_std",
    "delta_h_se",
    "delta_x_mean",
    "sign_agreement_rate",
    "regime_a_rate",
    "regime_b_rate",
    "regime_c_rate",
    "l1_mean",
    "l1_std",
];

/// One replicate's measurements at one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub replicate: u32,
    pub w_fact: f64,
    pub radius: f64,
    pub deviation: Option<f64>,
    pub deviation_exceeds: Option<bool>,
    pub mode_error: Option<bool>,
    pub radius_exceeds: Option<bool>,
    pub delta_h: Option<f64>,
    pub delta_x: Option<f64>,
    pub sign_agrees: Option<bool>,
    pub regime: Option<crate::discordance::Regime>,
    pub l1: Option<f64>,
}

impl Observation {
    pub fn new(replicate: u32, w_fact: f64, radius: f64) -> Self {
        Self {
            replicate,
            w_fact,
            radius,
            deviation: None,
            deviation_exceeds: None,
            mode_error: None,
            radius_exceeds: None,
            delta_h: None,
            delta_x: None,
            sign_agrees: None,
            regime: None,
            l1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub n: usize,
    pub k: usize,
    /// Index into the sweep's query list.
    pub query: usize,
    pub point: Vec<f64>,
    /// Closed-form large-sample value of the cell's headline metric.
    pub target: Option<f64>,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub scenario_hash: String,
    pub num_labels: usize,
    pub lipschitz: f64,
    pub zeta: f64,
    pub delta: f64,
    pub bandwidth: f64,
}

impl ReportMetadata {
    pub fn for_config(config: &SweepConfig) -> Self {
        let spec = serde_json::to_vec(config.scenario.spec()).expect("scenario specs serialize");
        let digest = Sha256::digest(&spec);
        let scenario_hash = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        Self {
            master_seed: config.master_seed,
            scenario_hash,
            num_labels: config.scenario.num_labels(),
            lipschitz: config.scenario.lipschitz(),
            zeta: config.zeta,
            delta: config.delta,
            bandwidth: config.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub sweep: String,
    pub experiment: ExperimentKind,
    pub metadata: ReportMetadata,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CellSummary {
    pub reps: usize,
    pub target: Option<f64>,
    pub w_fact_mean: f64,
    pub w_fact_std: f64,
    pub radius_mean: f64,
    pub dev_mean: Option<f64>,
    pub dev_std: Option<f64>,
    pub mode_error_rate: Option<f64>,
    pub dev_exceed_rate: Option<f64>,
    pub radius_tail_rate: Option<f64>,
    pub hoeffding_bound: Option<f64>,
    pub delta_h_mean: Option<f64>,
    pub delta_h_std: Option<f64>,
    pub delta_h_se: Option<f64>,
    pub delta_x_mean: Option<f64>,
    pub sign_agreement_rate: Option<f64>,
    pub regime_a_rate: Option<f64>,
    pub regime_b_rate: Option<f64>,
    pub regime_c_rate: Option<f64>,
    pub l1_mean: Option<f64>,
    pub l1_std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn collect<T: Copy>(obs: &[Observation], f: impl Fn(&Observation) -> Option<T>) -> Option<Vec<T>> {
    obs.iter().map(f).collect()
}

fn rate(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&b| b).count() as f64 / flags.len() as f64
}

impl Cell {
    pub fn summary(&self, metadata: &ReportMetadata) -> CellSummary {
        let obs = &self.observations;
        if obs.is_empty() {
            return CellSummary { target: self.target, ..CellSummary::default() };
        }
        let reps = obs.len();
        let (w_fact_mean, w_fact_std) = mean_std(&obs.iter().map(|o| o.w_fact).collect::<Vec<_>>());
        let (radius_mean, _) = mean_std(&obs.iter().map(|o| o.radius).collect::<Vec<_>>());
        let dev = collect(obs, |o| o.deviation).map(|v| mean_std(&v));
        let radius_tail_rate = collect(obs, |o| o.radius_exceeds).map(|v| rate(&v));
        let delta_h = collect(obs, |o| o.delta_h).map(|v| mean_std(&v));
        let l1 = collect(obs, |o| o.l1).map(|v| mean_std(&v));
        let regimes = regime_counts(obs);
        let regime_rate = |i: usize| regimes.map(|c| c[i] as f64 / reps as f64);
        CellSummary {
            reps,
            target: self.target,
            w_fact_mean,
            w_fact_std,
            radius_mean,
            dev_mean: dev.map(|d| d.0),
            dev_std: dev.map(|d| d.1),
            mode_error_rate: collect(obs, |o| o.mode_error).map(|v| rate(&v)),
            dev_exceed_rate: collect(obs, |o| o.deviation_exceeds).map(|v| rate(&v)),
            radius_tail_rate,
            hoeffding_bound: radius_tail_rate
                .and_then(|t| hoeffding_bound(metadata.delta, self.k, metadata.num_labels, t).ok()),
            delta_h_mean: delta_h.map(|d| d.0),
            delta_h_std: delta_h.map(|d| d.1),
            delta_h_se: delta_h.map(|d| d.1 / (reps as f64).sqrt()),
            delta_x_mean: collect(obs, |o| o.delta_x).map(|v| mean_std(&v).0),
            sign_agreement_rate: collect(obs, |o| o.sign_agrees).map(|v| rate(&v)),
            regime_a_rate: regime_rate(0),
            regime_b_rate: regime_rate(1),
            regime_c_rate: regime_rate(2),
            l1_mean: l1.map(|d| d.0),
            l1_std: l1.map(|d| d.1),
        }
    }
}

/// 17 significant digits.
fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl ExperimentReport {
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells.iter().map(|c| c.summary(&self.metadata)).collect()
    }

    /// Finds the cell for memory size `n` and query index `query`.
    pub fn cell(&self, n: usize, query: usize) -> Option<&Cell> {
        self.cells.iter().find(|c| c.n == n && c.query == query)
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|cell| {
                let s = cell.summary(&self.metadata);
                vec![
                    self.sweep.clone(),
                    self.experiment.as_str().to_string(),
                    cell.n.to_string(),
                    cell.k.to_string(),
                    cell.query.to_string(),
                    s.reps.to_string(),
                    fmt_opt(s.target),
                    fmt_float(s.w_fact_mean),
                    fmt_float(s.w_fact_std),
                    fmt_float(s.radius_mean),
                    fmt_opt(s.dev_mean),
                    fmt_opt(s.dev_std),
                    fmt_opt(s.mode_error_rate),
                    fmt_opt(s.dev_exceed_rate),
                    fmt_opt(s.radius_tail_rate),
                    fmt_opt(s.hoeffding_bound),
                    fmt_opt(s.delta_h_mean),
                    fmt_opt(s.delta_h_std),
                    fmt_opt(s.delta_h_se),
                    fmt_opt(s.delta_x_mean),
                    fmt_opt(s.sign_agreement_rate),
                    fmt_opt(s.regime_a_rate),
                    fmt_opt(s.regime_b_rate),
                    fmt_opt(s.regime_c_rate),
                    fmt_opt(s.l1_mean),
                    fmt_opt(s.l1_std),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        reports_to_csv(std::slice::from_ref(self))
    }

    fn to_json_value(&self) -> serde_json::Value {
        let cells: Vec<_> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "n": c.n,
                    "k": c.k,
                    "query": c.query,
                    "point": c.point,
                    "summary": c.summary(&self.metadata),
                })
            })
            .collect();
        serde_json::json!({
            "experiment": self.experiment,
            "metadata": self.metadata,
            "cells": cells,
        })
    }
}

/// One header row, then one row per cell of every report in order.
pub fn reports_to_csv(reports: &[ExperimentReport]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("writing to memory");
    for report in reports {
        for row in report.csv_rows() {
            w.write_record(&row).expect("writing to memory");
        }
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV fields are UTF-8")
}

/// `{"schema_version": 1, "sweeps": {name: {experiment, metadata, cells}}}`.
pub fn reports_to_json(reports: &[ExperimentReport]) -> serde_json::Value {
    let sweeps: serde_json::Map<String, serde_json::Value> =
        reports.iter().map(|r| (r.sweep.clone(), r.to_json_value())).collect();
    serde_json::json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "sweeps": sweeps,
    })
}

/// Pools replicate-level observations from reports over the same grid.
///
/// Observations are re-sorted by replicate index, so the result does not
/// depend on the order of `reports` and equals a single run over the union of
/// their replicates.
pub fn aggregate(reports: Vec<ExperimentReport>) -> Result<ExperimentReport> {
    let mut iter = reports.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::SchemaMismatch("no reports to aggregate".into()))?;
    for report in iter {
        if report.sweep != merged.sweep || report.experiment != merged.experiment {
            return Err(Error::SchemaMismatch(format!(
                "cannot pool sweep `{}` ({}) with `{}` ({})",
                report.sweep,
                report.experiment.as_str(),
                merged.sweep,
                merged.experiment.as_str()
            )));
        }
        if report.metadata != merged.metadata {
            return Err(Error::SchemaMismatch("report metadata differs".into()));
        }
        if report.cells.len() != merged.cells.len() {
            return Err(Error::SchemaMismatch("reports cover different grids".into()));
        }
        for (into, from) in merged.cells.iter_mut().zip(report.cells) {
            let same_cell = into.n == from.n
                && into.k == from.k
                && into.query == from.query
                && into.point == from.point
                && into.target.map(f64::to_bits) == from.target.map(f64::to_bits);
            if !same_cell {
                return Err(Error::SchemaMismatch(format!(
                    "cell (n = {}, query = {}) does not match (n = {}, query = {})",
                    into.n, into.query, from.n, from.query
                )));
            }
            into.observations.extend(from.observations);
        }
    }
    for cell in &mut merged.cells {
        cell.observations.sort_by_key(|o| o.replicate);
        if cell.observations.windows(2).any(|w| w[0].replicate == w[1].replicate) {
            return Err(Error::SchemaMismatch(format!(
                "replicate indices overlap in cell (n = {}, query = {})",
                cell.n, cell.query
            )));
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(rep: u32, w: f64) -> Observation {
        Observation::new(rep, w, 0.1)
    }

    fn report(reps: &[u32]) -> ExperimentReport {
        ExperimentReport {
            sweep: "s".into(),
            experiment: ExperimentKind::TrustLimit,
            metadata: ReportMetadata {
                master_seed: 1,
                scenario_hash: "00".into(),
                num_labels: 2,
                lipschitz: 1.0,
                zeta: 0.0,
                delta: 0.3,
                bandwidth: 1.0,
            },
            cells: vec![Cell {
                n: 10,
                k: 3,
                query: 0,
                point: vec![0.0],
                target: Some(1.0),
                observations: reps.iter().map(|&r| obs(r, 0.5 + f64::from(r) / 10.0)).collect(),
            }],
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(vec![report(&[0, 1, 2])]).unwrap(), report(&[0, 1, 2]));
        let pooled = aggregate(vec![report(&[3, 1]), report(&[0, 2])]).unwrap();
        assert_eq!(pooled, report(&[0, 1, 2, 3]));
        let swapped = aggregate(vec![report(&[0, 2]), report(&[3, 1])]).unwrap();
        assert_eq!(pooled.to_csv(), swapped.to_csv());
        assert!(matches!(aggregate(vec![]), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn aggregate_rejects_mismatches() {
        assert!(aggregate(vec![report(&[0]), report(&[0])]).is_err());
        let mut other = report(&[1]);
        other.cells[0].n = 11;
        assert!(aggregate(vec![report(&[0]), other]).is_err());
        let mut other = report(&[1]);
        other.metadata.master_seed = 2;
        assert!(aggregate(vec![report(&[0]), other]).is_err());
    }

    #[test]
    fn summary_statistics() {
        let s = report(&[0, 2]).cells[0].summary(&report(&[]).metadata);
        assert_eq!(s.reps, 2);
        assert!((s.w_fact_mean - 0.6).abs() < 1e-15);
        // values 0.5 and 0.7
        assert!((s.w_fact_std - 0.02_f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.dev_mean, None);
        assert_eq!(s.hoeffding_bound, None);
    }

    #[test]
    fn csv_header_is_pinned() {
        let csv = report(&[0]).to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "sweep,experiment,n,k,query,reps,target,w_fact_mean,w_fact_std,radius_mean,\
             dev_mean,dev_std,mode_error_rate,dev_exceed_rate,radius_tail_rate,hoeffding_bound,\
             delta_h_mean,delta_h_std,delta_h_se,delta_x_mean,sign_agreement_rate,\
             regime_a_rate,regime_b_rate,regime_c_rate,l1_mean,l1_std"
        );
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("s,trust_limit,10,3,0,1,1.0000000000000000e0,5.0000000000000000e-1,"));
        assert_eq!(row.split(',').count(), CSV_COLUMNS.len());
    }
}
