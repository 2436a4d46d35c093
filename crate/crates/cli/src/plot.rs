//! Hand-written SVG line charts of one report column against `n`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use knnrag::experiments::{ExperimentKind, CSV_COLUMNS};

use crate::{write_file, CliError, CliResult};

#[derive(Args)]
pub struct PlotArgs {
    /// report.csv written by `knnrag simulate`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report column to draw (default: the sweep's headline metric).
    #[arg(long)]
    metric: Option<String>,
    /// Sweep to draw when the report holds several (default: the first).
    #[arg(long)]
    sweep: Option<String>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

struct Series {
    points: Vec<(f64, f64)>,
    target: Option<f64>,
}

pub struct Chart {
    title: String,
    metric: String,
    series: BTreeMap<usize, Series>,
}

fn parse_f64(field: &str, column: &str, line: u64) -> CliResult<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| CliError::input(format!("line {line}: `{field}` in column {column} is not a number")))
}

/// Collects the chart data for `metric` from CSV text.
pub fn chart_from_csv(text: &str, metric: Option<&str>, sweep: Option<&str>) -> CliResult<Chart> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::input(format!("unreadable report: {e}")))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| CliError::input(format!("report has no `{name}` column"));
    let (sweep_col, exp_col, n_col, query_col, target_col) = (
        column("sweep").ok_or_else(|| missing("sweep"))?,
        column("experiment").ok_or_else(|| missing("experiment"))?,
        column("n").ok_or_else(|| missing("n"))?,
        column("query").ok_or_else(|| missing("query"))?,
        column("target").ok_or_else(|| missing("target"))?,
    );

    let mut rows = vec![];
    for record in reader.records() {
        rows.push(record.map_err(|e| CliError::input(format!("unreadable report: {e}")))?);
    }
    let first = rows.first().ok_or_else(|| CliError::input("report has no data rows"))?;
    let sweep = sweep.unwrap_or(&first[sweep_col]).to_string();
    let rows: Vec<_> = rows.into_iter().filter(|r| r[sweep_col] == sweep).collect();
    let kind_name = rows.first().ok_or_else(|| CliError::input(format!("report has no sweep `{sweep}`")))?[exp_col].to_string();
    let kind = ExperimentKind::parse(&kind_name);

    let metric = match metric {
        Some(m) => m.to_string(),
        None => kind.map(ExperimentKind::headline_metric).unwrap_or("w_fact_mean").to_string(),
    };
    // Only the statistic columns, not the cell keys, can be plotted.
    let metric_col = match column(&metric) {
        Some(c) if CSV_COLUMNS[7..].contains(&metric.as_str()) => c,
        _ => {
            return Err(CliError::input(format!(
                "unknown metric `{metric}`; choose one of {}",
                CSV_COLUMNS[7..].join(", ")
            )))
        }
    };
    let draws_target = kind.is_some_and(|k| k.headline_metric() == metric);

    let mut series: BTreeMap<usize, Series> = BTreeMap::new();
    for row in &rows {
        let line = row.position().map_or(0, |p| p.line());
        let n = parse_f64(&row[n_col], "n", line)?.ok_or_else(|| CliError::input(format!("line {line}: empty n")))?;
        let query: usize = row[query_col]
            .parse()
            .map_err(|_| CliError::input(format!("line {line}: bad query index `{}`", &row[query_col])))?;
        let entry = series.entry(query).or_insert(Series { points: vec![], target: None });
        if draws_target {
            entry.target = parse_f64(&row[target_col], "target", line)?;
        }
        if let Some(v) = parse_f64(&row[metric_col], &metric, line)? {
            entry.points.push((n, v));
        }
    }
    if series.values().all(|s| s.points.is_empty()) {
        return Err(CliError::input(format!("column `{metric}` is empty for sweep `{sweep}`")));
    }
    for s in series.values_mut() {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(Chart { title: format!("{sweep} ({kind_name}): {metric} vs n"), metric, series })
}

fn padded(lo: f64, hi: f64, pad: f64) -> (f64, f64) {
    if hi > lo {
        let margin = (hi - lo) * pad;
        (lo - margin, hi + margin)
    } else {
        let margin = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - margin, hi + margin)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let xs: Vec<f64> = self.series.values().flat_map(|s| s.points.iter().map(|p| p.0.log10())).collect();
        let ys: Vec<f64> = self
            .series
            .values()
            .flat_map(|s| s.points.iter().map(|p| p.1).chain(s.target))
            .collect();
        let fold = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let (x0, x1) = fold(&xs);
        let (x0, x1) = if x1 > x0 { padded(x0, x1, 0.05) } else { (x0 - 0.5, x1 + 0.5) };
        let (y0, y1) = fold(&ys);
        let (y0, y1) = padded(y0, y1, 0.08);
        let plot_w = WIDTH - LEFT - RIGHT;
        let plot_h = HEIGHT - TOP - BOTTOM;
        let sx = |logn: f64| LEFT + (logn - x0) / (x1 - x0) * plot_w;
        let sy = |v: f64| TOP + (y1 - v) / (y1 - y0) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let (bx, by) = (LEFT, TOP + plot_h);
        let _ = writeln!(svg, r#"<line x1="{bx}" y1="{by}" x2="{}" y2="{by}" stroke="black"/>"#, LEFT + plot_w);
        let _ = writeln!(svg, r#"<line x1="{bx}" y1="{TOP}" x2="{bx}" y2="{by}" stroke="black"/>"#);

        let mut ns: Vec<f64> = self.series.values().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        for n in &ns {
            let x = sx(n.log10());
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, by + 5.0);
            let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, by + 20.0);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">n (log scale)</text>"#,
            LEFT + plot_w / 2.0,
            HEIGHT - 15.0
        );
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * f64::from(i) / 4.0;
            let y = sy(v);
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{bx}" y2="{y:.2}" stroke="black"/>"#, bx - 5.0);
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.4}</text>"#, bx - 8.0, y + 4.0);
        }
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0,
            escape(&self.metric)
        );

        for (i, (query, s)) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if let Some(t) = s.target {
                let y = sy(t);
                let _ = writeln!(
                    svg,
                    r#"<line class="target" x1="{bx}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#,
                    LEFT + plot_w
                );
            }
            let path: Vec<String> = s.points.iter().map(|&(n, v)| format!("{:.2},{:.2}", sx(n.log10()), sy(v))).collect();
            if path.len() > 1 {
                let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
            }
            for &(n, v) in &s.points {
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, sx(n.log10()), sy(v));
            }
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let lx = LEFT + plot_w + 15.0;
            let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{}">query {query}</text>"#, lx + 26.0, ly + 4.0);
        }
        svg.push_str("</svg>\n");
        svg
    }
}

pub fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    let text = crate::read_text(&args.report)?;
    let chart = chart_from_csv(&text, args.metric.as_deref(), args.sweep.as_deref())?;
    write_file(&args.out, chart.to_svg().as_bytes())
}
